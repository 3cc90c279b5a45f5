//! Dense feed-forward Q-network with ReLU hidden layers, a mean-squared TD
//! loss on the taken action, an Adam optimizer, and full-copy target syncs.
//!
//! Parameters live in one flat vector laid out layer by layer, weights
//! row-major (`weights[out][in]`) followed by biases. Snapshots, the
//! optimizer moments, and the finite-difference oracle in the tests all use
//! this same layout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrnError};

/// Snapshot format version written by [`QNetwork::snapshot`].
pub const SNAPSHOT_VERSION: u32 = 1;

/// One experience viewed by the trainer; borrowed from the replay memory.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Action-value network: affine + ReLU per hidden layer, affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

fn layer_specs(layer_sizes: &[usize]) -> Result<(Vec<LayerSpec>, usize)> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(SrnError::InvalidConfig(
            "a network needs at least an input and an output layer, all widths positive".into(),
        ));
    }
    let mut specs = Vec::with_capacity(layer_sizes.len() - 1);
    let mut offset = 0;
    for w in layer_sizes.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        specs.push(LayerSpec {
            in_dim,
            out_dim,
            weight_offset: offset,
            bias_offset: offset + in_dim * out_dim,
        });
        offset += in_dim * out_dim + out_dim;
    }
    Ok((specs, offset))
}

impl QNetwork {
    /// Fresh network with scaled-uniform weights in
    /// `+-sqrt(6 / (fan_in + fan_out))` and zero biases, drawn layer by
    /// layer in the flat parameter order.
    pub fn new(layer_sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &net.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for i in 0..layer.in_dim * layer.out_dim {
                net.params[layer.weight_offset + i] = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero network of the given shape.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        let (layers, num_params) = layer_specs(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            params: vec![0.0; num_params],
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn affine(&self, layer: &LayerSpec, input: &[f64], output: &mut [f64]) {
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.params
                [layer.weight_offset + o * layer.in_dim..layer.weight_offset + (o + 1) * layer.in_dim];
            let mut acc = self.params[layer.bias_offset + o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out = acc;
        }
    }

    /// Q-values for `state`; pure and deterministic.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.input_dim() {
            return Err(SrnError::Contract(format!(
                "input of length {} fed to a network expecting {}",
                state.len(),
                self.input_dim()
            )));
        }
        let mut current = state.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            self.affine(layer, &current, &mut next);
            if i != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Forward pass keeping every layer's post-activation output;
    /// `acts[0]` is the input, `acts.last()` the Q-values.
    fn forward_trace(&self, state: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(state.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            self.affine(layer, acts.last().unwrap(), &mut next);
            if i != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(next);
        }
        acts
    }

    /// Serializable copy of the parameters in the documented flat layout.
    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            version: SNAPSHOT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_snapshot(snapshot: &NetworkSnapshot) -> Result<Self> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(SrnError::InvalidConfig(format!(
                "unsupported network snapshot version {}",
                snapshot.version
            )));
        }
        let mut net = Self::zeros(&snapshot.layer_sizes)?;
        if snapshot.params.len() != net.params.len() {
            return Err(SrnError::InvalidConfig(
                "snapshot parameter count does not match its layer sizes".into(),
            ));
        }
        net.params.copy_from_slice(&snapshot.params);
        Ok(net)
    }
}

/// Versioned parameter dump: layers in order, weights row-major, then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// TD target `y = r + gamma * max_a' Q(s', a'; target)`. The task is
/// continuing, so there is no terminal branch.
pub fn td_target(reward: f64, next_state: &[f64], target: &QNetwork, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SrnError::Domain(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let q_next = target.forward(next_state)?;
    let best = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(reward + gamma * best)
}

/// Copies the online parameters into the target: a full snapshot sync.
pub fn sync_target(net: &QNetwork, target: &mut QNetwork) -> Result<()> {
    if net.layer_sizes != target.layer_sizes {
        return Err(SrnError::Contract(
            "target network shape differs from the online network".into(),
        ));
    }
    target.params.copy_from_slice(&net.params);
    Ok(())
}

/// Mean-squared TD loss over the batch and its gradient in the flat
/// parameter layout. Only the taken action's output unit carries error.
pub fn minibatch_gradients(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[Transition<'_>],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(SrnError::Domain("minibatch must hold at least one experience".into()));
    }
    let mut grads = vec![0.0; net.num_params()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for t in batch {
        if t.action >= net.output_dim() {
            return Err(SrnError::Contract(format!(
                "action {} outside the {}-unit output layer",
                t.action,
                net.output_dim()
            )));
        }
        let acts = net.forward_trace(t.state);
        let q = acts.last().unwrap()[t.action];
        let y = td_target(t.reward, t.next_state, target, gamma)?;
        let err = q - y;
        loss += scale * err * err;

        // Seed the output delta on the taken action only, then walk the
        // layers backwards.
        let mut delta = vec![0.0; net.output_dim()];
        delta[t.action] = 2.0 * scale * err;
        for (i, layer) in net.layers.iter().enumerate().rev() {
            let input = &acts[i];
            for o in 0..layer.out_dim {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let w_row = layer.weight_offset + o * layer.in_dim;
                for (k, &x) in input.iter().enumerate() {
                    grads[w_row + k] += d * x;
                }
                grads[layer.bias_offset + o] += d;
            }
            if i == 0 {
                break;
            }
            // Propagate through the previous ReLU: its output is zero
            // exactly where the rectifier was inactive.
            let mut prev = vec![0.0; layer.in_dim];
            for (k, p) in prev.iter_mut().enumerate() {
                if input[k] <= 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for (o, &d) in delta.iter().enumerate() {
                    acc += net.params[layer.weight_offset + o * layer.in_dim + k] * d;
                }
                *p = acc;
            }
            delta = prev;
        }
    }
    Ok((loss, grads))
}

/// Adam optimizer state; moment vectors mirror the flat parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-3,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One training step: mean-squared TD loss over the batch, optional global
/// gradient-norm clip, one Adam update. Returns the pre-step loss.
pub fn train_minibatch(
    net: &mut QNetwork,
    target: &QNetwork,
    adam: &mut AdamState,
    batch: &[Transition<'_>],
    gamma: f64,
    grad_clip_norm: Option<f64>,
) -> Result<f64> {
    let (loss, mut grads) = minibatch_gradients(net, target, batch, gamma)?;
    if !loss.is_finite() {
        return Err(SrnError::NonFinite {
            context: format!("minibatch loss at adam step {}", adam.step_count() + 1),
        });
    }
    if let Some(max_norm) = grad_clip_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for g in &mut grads {
                *g *= scale;
            }
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(SrnError::NonFinite {
            context: format!("minibatch gradient at adam step {}", adam.step_count() + 1),
        });
    }
    adam.apply(net.params_mut(), &grads);
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(SrnError::NonFinite {
            context: format!("network parameters after adam step {}", adam.step_count()),
        });
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual} (tol {tol})"
        );
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[4, 8, 3]).unwrap();
        let out = net.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut net = QNetwork::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            net.params_mut()[i * 3 + i] = 1.0;
        }
        let input = [0.3, -1.7, 2.2];
        assert_eq!(net.forward(&input).unwrap(), input.to_vec());
    }

    #[test]
    fn forward_matches_independent_matrix_arithmetic() {
        // Naive recomputation straight from the flat layout.
        fn naive(net: &QNetwork, input: &[f64]) -> Vec<f64> {
            let sizes = net.layer_sizes();
            let p = net.params();
            let mut x = input.to_vec();
            let mut off = 0;
            for l in 0..sizes.len() - 1 {
                let (nin, nout) = (sizes[l], sizes[l + 1]);
                let mut z = vec![0.0; nout];
                for (o, zo) in z.iter_mut().enumerate() {
                    let mut acc = p[off + nin * nout + o];
                    for (k, &xk) in x.iter().enumerate() {
                        acc += p[off + o * nin + k] * xk;
                    }
                    *zo = acc;
                }
                if l + 2 < sizes.len() {
                    for v in &mut z {
                        *v = v.max(0.0);
                    }
                }
                off += nin * nout + nout;
                x = z;
            }
            x
        }

        let mut rng = stream_rng(60, "nn");
        let net = QNetwork::new(&[5, 7, 6, 4], &mut rng).unwrap();
        for _ in 0..20 {
            let input: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = net.forward(&input).unwrap();
            let slow = naive(&net, &input);
            for (a, b) in fast.iter().zip(&slow) {
                assert_close(*a, *b, 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = stream_rng(61, "nn");
        let net = QNetwork::new(&[4, 6, 2], &mut rng).unwrap();
        let input = [0.1, 0.4, -0.2, 0.9];
        assert_eq!(net.forward(&input).unwrap(), net.forward(&input).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = QNetwork::zeros(&[4, 2]).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn network_shape_validation() {
        let mut rng = stream_rng(62, "nn");
        assert!(QNetwork::new(&[4], &mut rng).is_err());
        assert!(QNetwork::new(&[4, 0, 2], &mut rng).is_err());
    }

    #[test]
    fn td_target_examples() {
        let mut rng = stream_rng(63, "nn");
        let target = QNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        let s = [0.2, 0.5, 0.8];
        // gamma = 0 discards the future entirely.
        assert_eq!(td_target(1.7, &s, &target, 0.0).unwrap(), 1.7);
        // A zero target network contributes nothing.
        let zero = QNetwork::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(td_target(0.9, &s, &zero, 0.5).unwrap(), 0.9);
        // r = 1, gamma = 0.3, max target Q = 2 -> 1.6.
        let mut fixed = QNetwork::zeros(&[3, 2]).unwrap();
        fixed.params_mut()[3 * 2] = 1.0; // bias of unit 0
        fixed.params_mut()[3 * 2 + 1] = 2.0; // bias of unit 1
        assert_close(td_target(1.0, &s, &fixed, 0.3).unwrap(), 1.6, 1e-15);
        assert!(td_target(1.0, &s, &fixed, 1.5).is_err());
    }

    #[test]
    fn sync_makes_target_agree_everywhere() {
        let mut rng = stream_rng(64, "nn");
        let net = QNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        let mut target = QNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        sync_target(&net, &mut target).unwrap();
        for _ in 0..10 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(net.forward(&s).unwrap(), target.forward(&s).unwrap());
        }
        let other = QNetwork::zeros(&[4, 9, 3]).unwrap();
        let mut target_bad = other.clone();
        assert!(sync_target(&net, &mut target_bad).is_err());
    }

    #[test]
    fn perfect_predictions_leave_parameters_untouched() {
        let mut rng = stream_rng(65, "nn");
        let mut net = QNetwork::new(&[3, 6, 2], &mut rng).unwrap();
        let target = net.clone();
        let mut adam = AdamState::new(net.num_params(), 0.01);

        // gamma = 0 and reward equal to the current prediction: zero TD error.
        let states: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let rewards: Vec<f64> = states.iter().map(|s| net.forward(s).unwrap()[1]).collect();
        let batch: Vec<Transition> = states
            .iter()
            .zip(&rewards)
            .map(|(s, &r)| Transition {
                state: s,
                action: 1,
                reward: r,
                next_state: s,
            })
            .collect();
        let before = net.params().to_vec();
        let loss = train_minibatch(&mut net, &target, &mut adam, &batch, 0.0, None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn single_experience_loss_is_the_squared_td_error() {
        let mut rng = stream_rng(66, "nn");
        let mut net = QNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        let target = QNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        let mut adam = AdamState::new(net.num_params(), 0.001);
        let s = [0.4, -0.3, 0.9];
        let s2 = [0.1, 0.2, 0.3];
        let q = net.forward(&s).unwrap()[0];
        let y = td_target(0.7, &s2, &target, 0.3).unwrap();
        let batch = [Transition {
            state: &s,
            action: 0,
            reward: 0.7,
            next_state: &s2,
        }];
        let loss = train_minibatch(&mut net, &target, &mut adam, &batch, 0.3, None).unwrap();
        assert_close(loss, (q - y) * (q - y), 1e-12);
        assert!(train_minibatch(&mut net, &target, &mut adam, &[], 0.3, None).is_err());
    }

    #[test]
    fn action_outside_output_layer_is_a_contract_error() {
        let mut rng = stream_rng(67, "nn");
        let net = QNetwork::new(&[2, 3], &mut rng).unwrap();
        let target = net.clone();
        let s = [0.1, 0.2];
        let batch = [Transition {
            state: &s,
            action: 3,
            reward: 0.0,
            next_state: &s,
        }];
        assert!(minibatch_gradients(&net, &target, &batch, 0.3).is_err());
    }

    /// Mean batch loss as a pure function of the parameters, for finite
    /// differences.
    fn batch_loss(net: &QNetwork, target: &QNetwork, batch: &[Transition<'_>], gamma: f64) -> f64 {
        batch
            .iter()
            .map(|t| {
                let q = net.forward(t.state).unwrap()[t.action];
                let y = td_target(t.reward, t.next_state, target, gamma).unwrap();
                (q - y) * (q - y)
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        gradient_check_on(&[4, 4, 2], stream_rng(68, "nn"));
    }

    #[test]
    fn gradient_check_covers_three_hidden_layers() {
        // Width-reduced versions of the two production architectures.
        gradient_check_on(&[9, 16, 8, 4, 27], stream_rng(72, "nn"));
        gradient_check_on(&[9, 8, 4, 2, 3], stream_rng(73, "nn"));
    }

    /// Hidden-layer pre-activations recomputed from the flat layout.
    fn pre_activations(net: &QNetwork, input: &[f64]) -> Vec<f64> {
        let sizes = net.layer_sizes();
        let p = net.params();
        let mut pre = Vec::new();
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            let mut z = vec![0.0; nout];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = p[off + nin * nout + o];
                for (k, &xk) in x.iter().enumerate() {
                    acc += p[off + o * nin + k] * xk;
                }
                *zo = acc;
            }
            off += nin * nout + nout;
            if l + 2 < sizes.len() {
                pre.extend_from_slice(&z);
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            x = z;
        }
        pre
    }

    fn gradient_check_on(sizes: &[usize], mut rng: ChaCha8Rng) {
        let gamma = 0.3;
        let step = 1e-5;
        let input_dim = sizes[0];
        let actions = *sizes.last().unwrap();

        // Pick a configuration whose pre-activations stay clear of the ReLU
        // kink so the finite-difference quotient is valid.
        let (mut net, batch_data) = loop {
            let candidate = QNetwork::new(sizes, &mut rng).unwrap();
            let data: Vec<(Vec<f64>, usize, f64, Vec<f64>)> = (0..6)
                .map(|i| {
                    (
                        (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        i % actions,
                        rng.random_range(-1.0..1.0),
                        (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    )
                })
                .collect();
            let clear = data.iter().all(|(s, _, _, s2)| {
                pre_activations(&candidate, s)
                    .iter()
                    .chain(pre_activations(&candidate, s2).iter())
                    .all(|&z| z.abs() > 1e-3)
            });
            if clear {
                break (candidate, data);
            }
        };
        let target = QNetwork::new(sizes, &mut rng).unwrap();
        let batch: Vec<Transition> = batch_data
            .iter()
            .map(|(s, a, r, s2)| Transition {
                state: s,
                action: *a,
                reward: *r,
                next_state: s2,
            })
            .collect();

        let (_, analytic) = minibatch_gradients(&net, &target, &batch, gamma).unwrap();
        let mut max_rel = 0.0f64;
        #[allow(clippy::needless_range_loop)]
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + step;
            let plus = batch_loss(&net, &target, &batch, gamma);
            net.params_mut()[i] = orig - step;
            let minus = batch_loss(&net, &target, &batch, gamma);
            net.params_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn adam_descends_on_a_fixed_regression_batch() {
        let mut rng = stream_rng(69, "nn");
        let mut net = QNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        let target = QNetwork::zeros(&[4, 8, 3]).unwrap();
        let mut adam = AdamState::new(net.num_params(), 0.01);

        let data: Vec<(Vec<f64>, usize, f64)> = (0..16)
            .map(|i| {
                (
                    (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    i % 3,
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let zero_next = [0.0; 4];
        let batch: Vec<Transition> = data
            .iter()
            .map(|(s, a, r)| Transition {
                state: s,
                action: *a,
                reward: *r,
                next_state: &zero_next,
            })
            .collect();

        // gamma = 0 turns this into plain regression onto the rewards.
        let mut prev = f64::INFINITY;
        let mut descents = 0;
        for _ in 0..100 {
            let loss = train_minibatch(&mut net, &target, &mut adam, &batch, 0.0, None).unwrap();
            if loss < prev {
                descents += 1;
            }
            prev = loss;
        }
        assert!(descents >= 95, "only {descents} of 100 steps descended");
    }

    #[test]
    fn gradient_clipping_bounds_the_update_direction() {
        let mut rng = stream_rng(70, "nn");
        let net = QNetwork::new(&[3, 4, 2], &mut rng).unwrap();
        let target = QNetwork::zeros(&[3, 4, 2]).unwrap();
        let s = [0.5, 0.5, 0.5];
        let batch = [Transition {
            state: &s,
            action: 0,
            reward: 100.0, // large TD error
            next_state: &s,
        }];
        let (_, grads) = minibatch_gradients(&net, &target, &batch, 0.0).unwrap();
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 1.0);

        let mut clipped = net.clone();
        let mut adam = AdamState::new(clipped.num_params(), 0.01);
        train_minibatch(&mut clipped, &target, &mut adam, &batch, 0.0, Some(1.0)).unwrap();
        // The step still happened.
        assert_ne!(clipped.params(), net.params());
    }

    #[test]
    fn snapshot_round_trips_bitwise() {
        let mut rng = stream_rng(71, "nn");
        let net = QNetwork::new(&[6, 5, 4], &mut rng).unwrap();
        let json = serde_json::to_string(&net.snapshot()).unwrap();
        let restored =
            QNetwork::from_snapshot(&serde_json::from_str::<NetworkSnapshot>(&json).unwrap())
                .unwrap();
        assert_eq!(net, restored);

        let mut bad = net.snapshot();
        bad.version = 99;
        assert!(QNetwork::from_snapshot(&bad).is_err());
        let mut truncated = net.snapshot();
        truncated.params.pop();
        assert!(QNetwork::from_snapshot(&truncated).is_err());
    }
}
