//! Replay memory, the epsilon-greedy schedule, and the two learning agents.
//!
//! The centralized agent picks one joint action indexing all `M^N`
//! associations from the global gain history. The distributed agent runs one
//! conceptual unit per device, every unit sharing a single network, replay
//! memory, and schedule; a unit sees only its own device's local state and
//! picks that device's user. Sharing the network makes the weight broadcast
//! of centralized-training/distributed-execution a no-op and keeps every
//! unit's greedy action computed from bitwise-identical parameters.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{centralized_reward, distributed_reward, Association, SrnEnv};
use crate::error::{Result, SrnError};
use crate::nn::{sync_target, train_minibatch, AdamState, NetworkSnapshot, QNetwork, Transition};

/// Snapshot format version written by the agents.
pub const AGENT_SNAPSHOT_VERSION: u32 = 1;

// ============================================================================
// Hyper-parameters
// ============================================================================

/// Learning hyper-parameters shared by both agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHyperParams {
    /// Discount factor.
    pub gamma: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Minibatch size Z; also the warmup experience count.
    pub batch_size: usize,
    /// Replay memory capacity.
    pub replay_capacity: usize,
    /// Training steps between target-network syncs.
    pub target_sync_period: u64,
    /// Initial exploration probability.
    pub epsilon_initial: f64,
    /// Exploration floor.
    pub epsilon_min: f64,
    /// Per-frame multiplicative decay rate.
    pub epsilon_decay: f64,
    /// Hidden layer widths of the centralized network.
    pub centralized_hidden: Vec<usize>,
    /// Hidden layer widths of the distributed network.
    pub distributed_hidden: Vec<usize>,
    /// Optional global gradient-norm clip.
    pub grad_clip_norm: Option<f64>,
}

impl Default for AgentHyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            learning_rate: 0.01,
            batch_size: 64,
            replay_capacity: 800,
            target_sync_period: 100,
            epsilon_initial: 0.2,
            epsilon_min: 0.005,
            epsilon_decay: 0.005,
            centralized_hidden: vec![256, 128, 64],
            distributed_hidden: vec![128, 64, 32],
            grad_clip_norm: None,
        }
    }
}

impl AgentHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SrnError::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(SrnError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(SrnError::InvalidConfig(
                "need batch_size >= 1 and replay_capacity >= batch_size".into(),
            ));
        }
        if self.target_sync_period == 0 {
            return Err(SrnError::InvalidConfig("target_sync_period must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_initial)
            || !(0.0..=1.0).contains(&self.epsilon_min)
            || self.epsilon_min > self.epsilon_initial
            || !(0.0..=1.0).contains(&self.epsilon_decay)
        {
            return Err(SrnError::InvalidConfig("epsilon schedule out of range".into()));
        }
        if self.centralized_hidden.is_empty() || self.distributed_hidden.is_empty() {
            return Err(SrnError::InvalidConfig("hidden layer lists must be non-empty".into()));
        }
        Ok(())
    }
}

// ============================================================================
// Replay memory and exploration
// ============================================================================

/// One stored interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity FIFO experience store.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    buf: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Inserts, evicting the oldest experience at capacity.
    pub fn push(&mut self, exp: Experience) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(exp);
    }

    /// Uniform sample of `amount` distinct experiences.
    pub fn sample(&self, amount: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Experience>> {
        if amount == 0 || amount > self.buf.len() {
            return Err(SrnError::Contract(format!(
                "cannot sample {amount} experiences from a replay of {}",
                self.buf.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.buf.len(), amount)
            .iter()
            .map(|i| &self.buf[i])
            .collect())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.buf.iter()
    }
}

/// Multiplicative exploration decay with a floor:
/// `eps <- max(eps_min, (1 - decay) * eps)`, applied once per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    epsilon: f64,
    epsilon_min: f64,
    decay: f64,
}

impl EpsilonSchedule {
    pub fn new(initial: f64, min: f64, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&initial) || !(0.0..=1.0).contains(&min) || min > initial {
            return Err(SrnError::InvalidConfig(
                "epsilon schedule requires 0 <= min <= initial <= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(SrnError::InvalidConfig("epsilon decay must lie in [0, 1]".into()));
        }
        Ok(Self {
            epsilon: initial,
            epsilon_min: min,
            decay,
        })
    }

    pub fn value(&self) -> f64 {
        self.epsilon
    }

    pub fn floor(&self) -> f64 {
        self.epsilon_min
    }

    pub fn decay_step(&mut self) {
        self.epsilon = self.epsilon_min.max((1.0 - self.decay) * self.epsilon);
    }

    fn set_value(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(self.epsilon_min, 1.0);
    }
}

/// Index of the largest Q-value, lowest index on ties.
pub fn argmax(q_values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &q) in q_values.iter().enumerate().skip(1) {
        if q > q_values[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, greedy otherwise.
/// Always draws the exploration coin first; the action draw only happens on
/// an exploring frame, which keeps the stream order documented and fixed.
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// Decodes a joint-action index into per-device user choices (base-M digit
/// expansion, last device least significant). Bijective over `0..M^N`.
pub fn action_decode(index: u64, num_users: usize, num_devices: usize) -> Result<Association> {
    Association::from_index(index, num_users, num_devices)
}

// ============================================================================
// Frame logs and snapshots
// ============================================================================

/// What one agent frame reports to the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub association: Association,
    pub sum_rate: f64,
    pub epsilon: f64,
    /// Minibatch loss; absent during warmup.
    pub loss: Option<f64>,
}

/// Resumable agent state: frame index, schedule position, networks,
/// optimizer moments, and optionally the replay contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub version: u32,
    pub kind: String,
    pub frame: u64,
    pub epsilon: f64,
    pub train_steps: u64,
    pub net: NetworkSnapshot,
    pub target: NetworkSnapshot,
    pub adam: AdamState,
    pub replay: Option<Vec<Experience>>,
}

// ============================================================================
// Centralized agent
// ============================================================================

/// One joint decision per frame over all `M^N` associations.
#[derive(Debug, Clone)]
pub struct CentralizedAgent {
    hp: AgentHyperParams,
    num_users: usize,
    num_devices: usize,
    num_actions: usize,
    net: QNetwork,
    target: QNetwork,
    adam: AdamState,
    replay: ReplayMemory,
    eps: EpsilonSchedule,
    train_steps: u64,
}

impl CentralizedAgent {
    /// `action_cap` bounds the joint action space; beyond it the network
    /// output layer would be unbuildable and the agent refuses to start.
    pub fn new(
        num_users: usize,
        num_devices: usize,
        hp: AgentHyperParams,
        action_cap: u64,
        init_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        hp.validate()?;
        let count = (num_users as u128)
            .checked_pow(num_devices as u32)
            .filter(|&c| c <= u128::from(action_cap))
            .ok_or_else(|| {
                SrnError::InvalidConfig(format!(
                    "centralized action space {num_users}^{num_devices} exceeds the cap of {action_cap}"
                ))
            })?;
        let num_actions = count as usize;
        let mut sizes = vec![num_users * num_devices];
        sizes.extend_from_slice(&hp.centralized_hidden);
        sizes.push(num_actions);
        let net = QNetwork::new(&sizes, init_rng)?;
        let target = net.clone();
        let adam = AdamState::new(net.num_params(), hp.learning_rate);
        let replay = ReplayMemory::new(hp.replay_capacity);
        let eps = EpsilonSchedule::new(hp.epsilon_initial, hp.epsilon_min, hp.epsilon_decay)?;
        Ok(Self {
            hp,
            num_users,
            num_devices,
            num_actions,
            net,
            target,
            adam,
            replay,
            eps,
            train_steps: 0,
        })
    }

    /// One frame: observe, act (random until the replay holds a full batch),
    /// step the environment, store the experience, train, sync, decay.
    pub fn step(
        &mut self,
        env: &mut SrnEnv,
        channel_rng: &mut ChaCha8Rng,
        agent_rng: &mut ChaCha8Rng,
    ) -> Result<StepLog> {
        if env.active_devices() != self.num_devices || env.num_users() != self.num_users {
            return Err(SrnError::NotScalable);
        }
        let state = env.centralized_state();
        let warmup = self.replay.len() < self.hp.batch_size;
        let action = if warmup {
            agent_rng.random_range(0..self.num_actions)
        } else {
            let q = self.net.forward(&state)?;
            epsilon_greedy(&q, self.eps.value(), agent_rng)
        };
        let assoc = action_decode(action as u64, self.num_users, self.num_devices)?;

        env.advance_frame(channel_rng);
        let outcome = env.evaluate(&assoc)?;
        env.commit(&assoc, &outcome);
        let reward = centralized_reward(&outcome);
        let next_state = env.centralized_state();
        self.replay.push(Experience {
            state,
            action,
            reward,
            next_state,
        });

        let mut loss = None;
        if !warmup {
            loss = Some(self.train(agent_rng)?);
            self.eps.decay_step();
        }
        Ok(StepLog {
            association: assoc,
            sum_rate: outcome.sum_rate,
            epsilon: self.eps.value(),
            loss,
        })
    }

    fn train(&mut self, agent_rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = self.replay.sample(self.hp.batch_size, agent_rng)?;
        let transitions: Vec<Transition> = batch
            .iter()
            .map(|e| Transition {
                state: &e.state,
                action: e.action,
                reward: e.reward,
                next_state: &e.next_state,
            })
            .collect();
        let loss = train_minibatch(
            &mut self.net,
            &self.target,
            &mut self.adam,
            &transitions,
            self.hp.gamma,
            self.hp.grad_clip_norm,
        )?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.hp.target_sync_period) {
            sync_target(&self.net, &mut self.target)?;
        }
        Ok(loss)
    }

    pub fn epsilon(&self) -> f64 {
        self.eps.value()
    }

    pub fn replay(&self) -> &ReplayMemory {
        &self.replay
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn snapshot(&self, frame: u64, include_replay: bool) -> AgentSnapshot {
        AgentSnapshot {
            version: AGENT_SNAPSHOT_VERSION,
            kind: "centralized".into(),
            frame,
            epsilon: self.eps.value(),
            train_steps: self.train_steps,
            net: self.net.snapshot(),
            target: self.target.snapshot(),
            adam: self.adam.clone(),
            replay: include_replay.then(|| self.replay.iter().cloned().collect()),
        }
    }

    /// Restores networks, optimizer, schedule position, and (when present)
    /// replay contents from a snapshot taken by an agent of equal shape.
    pub fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()> {
        if snapshot.version != AGENT_SNAPSHOT_VERSION || snapshot.kind != "centralized" {
            return Err(SrnError::InvalidConfig(
                "snapshot version or agent kind mismatch".into(),
            ));
        }
        let net = QNetwork::from_snapshot(&snapshot.net)?;
        if net.layer_sizes() != self.net.layer_sizes() {
            return Err(SrnError::InvalidConfig("snapshot network shape mismatch".into()));
        }
        self.net = net;
        self.target = QNetwork::from_snapshot(&snapshot.target)?;
        self.adam = snapshot.adam.clone();
        self.train_steps = snapshot.train_steps;
        self.eps.set_value(snapshot.epsilon);
        if let Some(replay) = &snapshot.replay {
            self.replay = ReplayMemory::new(self.hp.replay_capacity);
            for e in replay {
                self.replay.push(e.clone());
            }
        }
        Ok(())
    }
}

// ============================================================================
// Distributed agent
// ============================================================================

/// One decision per device per frame from a single shared network.
///
/// The input width `2M + 3` does not depend on the device count, so the
/// device set can grow or shrink mid-run without rebuilding anything.
#[derive(Debug, Clone)]
pub struct DistributedAgent {
    hp: AgentHyperParams,
    num_users: usize,
    net: QNetwork,
    target: QNetwork,
    adam: AdamState,
    replay: ReplayMemory,
    eps: EpsilonSchedule,
    train_steps: u64,
}

impl DistributedAgent {
    pub fn new(num_users: usize, hp: AgentHyperParams, init_rng: &mut ChaCha8Rng) -> Result<Self> {
        hp.validate()?;
        let mut sizes = vec![2 * num_users + 3];
        sizes.extend_from_slice(&hp.distributed_hidden);
        sizes.push(num_users);
        let net = QNetwork::new(&sizes, init_rng)?;
        let target = net.clone();
        let adam = AdamState::new(net.num_params(), hp.learning_rate);
        let replay = ReplayMemory::new(hp.replay_capacity);
        let eps = EpsilonSchedule::new(hp.epsilon_initial, hp.epsilon_min, hp.epsilon_decay)?;
        Ok(Self {
            hp,
            num_users,
            net,
            target,
            adam,
            replay,
            eps,
            train_steps: 0,
        })
    }

    /// One frame: every active device observes its local state and picks a
    /// user (device order, shared schedule), the joint association is
    /// evaluated once, each device's experience is stored, and one shared
    /// minibatch step runs.
    pub fn step(
        &mut self,
        env: &mut SrnEnv,
        channel_rng: &mut ChaCha8Rng,
        agent_rng: &mut ChaCha8Rng,
    ) -> Result<StepLog> {
        if env.num_users() != self.num_users {
            return Err(SrnError::Contract(
                "environment user count differs from the agent's".into(),
            ));
        }
        let n_active = env.active_devices();
        let states: Vec<Vec<f64>> = (0..n_active).map(|n| env.distributed_state(n)).collect();
        let warmup = self.replay.len() < self.hp.batch_size;
        let mut actions = Vec::with_capacity(n_active);
        for state in &states {
            let a = if warmup {
                agent_rng.random_range(0..self.num_users)
            } else {
                let q = self.net.forward(state)?;
                epsilon_greedy(&q, self.eps.value(), agent_rng)
            };
            actions.push(a);
        }
        let assoc = Association::from_user_assignments(actions.clone(), self.num_users)?;

        env.advance_frame(channel_rng);
        let outcome = env.evaluate(&assoc)?;
        env.commit(&assoc, &outcome);
        for (n, state) in states.into_iter().enumerate() {
            let reward = distributed_reward(&outcome, env.gains(), &assoc, env.params(), n);
            let next_state = env.distributed_state(n);
            self.replay.push(Experience {
                state,
                action: actions[n],
                reward,
                next_state,
            });
        }

        let mut loss = None;
        if !warmup {
            loss = Some(self.train(agent_rng)?);
            self.eps.decay_step();
        }
        Ok(StepLog {
            association: assoc,
            sum_rate: outcome.sum_rate,
            epsilon: self.eps.value(),
            loss,
        })
    }

    fn train(&mut self, agent_rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = self.replay.sample(self.hp.batch_size, agent_rng)?;
        let transitions: Vec<Transition> = batch
            .iter()
            .map(|e| Transition {
                state: &e.state,
                action: e.action,
                reward: e.reward,
                next_state: &e.next_state,
            })
            .collect();
        let loss = train_minibatch(
            &mut self.net,
            &self.target,
            &mut self.adam,
            &transitions,
            self.hp.gamma,
            self.hp.grad_clip_norm,
        )?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.hp.target_sync_period) {
            sync_target(&self.net, &mut self.target)?;
        }
        Ok(loss)
    }

    pub fn epsilon(&self) -> f64 {
        self.eps.value()
    }

    pub fn replay(&self) -> &ReplayMemory {
        &self.replay
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn snapshot(&self, frame: u64, include_replay: bool) -> AgentSnapshot {
        AgentSnapshot {
            version: AGENT_SNAPSHOT_VERSION,
            kind: "distributed".into(),
            frame,
            epsilon: self.eps.value(),
            train_steps: self.train_steps,
            net: self.net.snapshot(),
            target: self.target.snapshot(),
            adam: self.adam.clone(),
            replay: include_replay.then(|| self.replay.iter().cloned().collect()),
        }
    }

    pub fn restore(&mut self, snapshot: &AgentSnapshot) -> Result<()> {
        if snapshot.version != AGENT_SNAPSHOT_VERSION || snapshot.kind != "distributed" {
            return Err(SrnError::InvalidConfig(
                "snapshot version or agent kind mismatch".into(),
            ));
        }
        let net = QNetwork::from_snapshot(&snapshot.net)?;
        if net.layer_sizes() != self.net.layer_sizes() {
            return Err(SrnError::InvalidConfig("snapshot network shape mismatch".into()));
        }
        self.net = net;
        self.target = QNetwork::from_snapshot(&snapshot.target)?;
        self.adam = snapshot.adam.clone();
        self.train_steps = snapshot.train_steps;
        self.eps.set_value(snapshot.epsilon);
        if let Some(replay) = &snapshot.replay {
            self.replay = ReplayMemory::new(self.hp.replay_capacity);
            for e in replay {
                self.replay.push(e.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{init_small_scale, sample_topology, TopologyConfig};
    use crate::env::{StateNormalizer, SystemParams};
    use crate::seeds::stream_rng;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol,
            "expected {expected}, got {actual} (tol {tol})"
        );
    }

    fn tiny_env(m: usize, n: usize, rho: f64, seed: u64) -> SrnEnv {
        let cfg = TopologyConfig {
            num_users: m,
            num_devices: n,
            ..TopologyConfig::default()
        };
        let params = SystemParams::uniform(10.0, 10f64.powf(-14.4), 0.8, 50, n);
        let (_, large) = sample_topology(&cfg, &mut stream_rng(seed, "topology")).unwrap();
        let small = init_small_scale(m, n, rho, &mut stream_rng(seed, "channel")).unwrap();
        let norm = StateNormalizer::new(&large, &params).unwrap();
        SrnEnv::new(large, small, params, norm, n).unwrap()
    }

    fn small_hp() -> AgentHyperParams {
        AgentHyperParams {
            batch_size: 8,
            replay_capacity: 32,
            centralized_hidden: vec![16, 8],
            distributed_hidden: vec![16, 8],
            ..AgentHyperParams::default()
        }
    }

    #[test]
    fn epsilon_greedy_zero_epsilon_is_argmax() {
        let mut rng = stream_rng(80, "agent");
        let q = [0.1, 0.9, 0.3];
        for _ in 0..50 {
            assert_eq!(epsilon_greedy(&q, 0.0, &mut rng), 1);
        }
        // Equal values: lowest index wins.
        assert_eq!(epsilon_greedy(&[0.5, 0.5, 0.5], 0.0, &mut rng), 0);
    }

    #[test]
    fn epsilon_greedy_full_exploration_is_uniform() {
        let mut rng = stream_rng(81, "agent");
        let q = [0.0, 10.0, 0.0, 0.0];
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[epsilon_greedy(&q, 1.0, &mut rng)] += 1;
        }
        for &c in &counts {
            assert_close(c as f64 / draws as f64, 0.25, 0.01);
        }
    }

    #[test]
    fn epsilon_schedule_examples() {
        let mut sched = EpsilonSchedule::new(0.2, 0.005, 0.005).unwrap();
        sched.decay_step();
        assert_close(sched.value(), 0.199, 1e-12);

        let mut at_floor = EpsilonSchedule::new(0.005, 0.005, 0.005).unwrap();
        at_floor.decay_step();
        assert_eq!(at_floor.value(), 0.005);
    }

    #[test]
    fn epsilon_schedule_closed_form_and_monotonicity() {
        let mut sched = EpsilonSchedule::new(0.2, 0.005, 0.005).unwrap();
        let mut prev = sched.value();
        for t in 1..=2000u32 {
            sched.decay_step();
            let expected = (0.2 * 0.995f64.powi(t as i32)).max(0.005);
            assert_close(sched.value(), expected, 1e-9);
            assert!(sched.value() <= prev);
            prev = sched.value();
        }
        assert_eq!(sched.value(), 0.005);
    }

    #[test]
    fn action_decode_lists_the_two_by_two_space_in_order() {
        let decoded: Vec<Vec<usize>> = (0..4)
            .map(|i| {
                let a = action_decode(i, 2, 2).unwrap();
                (0..2).map(|n| a.user_of(n)).collect()
            })
            .collect();
        // One-based tuples (1,1),(1,2),(2,1),(2,2).
        assert_eq!(decoded, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn action_decode_round_trips_exhaustively() {
        for index in 0..27u64 {
            let assoc = action_decode(index, 3, 3).unwrap();
            assert_eq!(assoc.to_index(), index);
        }
        assert!(action_decode(27, 3, 3).is_err());
        // Single user: every device on user 0.
        let a = action_decode(0, 1, 4).unwrap();
        assert!((0..4).all(|n| a.user_of(n) == 0));
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut replay = ReplayMemory::new(3);
        for i in 0..5 {
            replay.push(Experience {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![],
            });
        }
        assert_eq!(replay.len(), 3);
        let kept: Vec<f64> = replay.iter().map(|e| e.state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn replay_samples_without_replacement() {
        let mut replay = ReplayMemory::new(16);
        for i in 0..16 {
            replay.push(Experience {
                state: vec![i as f64],
                action: 0,
                reward: 0.0,
                next_state: vec![],
            });
        }
        let mut rng = stream_rng(82, "agent");
        for _ in 0..100 {
            let batch = replay.sample(8, &mut rng).unwrap();
            let mut ids: Vec<i64> = batch.iter().map(|e| e.state[0] as i64).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 8);
        }
        assert!(replay.sample(17, &mut rng).is_err());
    }

    #[test]
    fn centralized_warmup_is_exact() {
        let hp = small_hp();
        let z = hp.batch_size;
        let mut env = tiny_env(2, 2, 0.9, 90);
        let mut agent =
            CentralizedAgent::new(2, 2, hp.clone(), 1000, &mut stream_rng(90, "init:c")).unwrap();
        let mut ch = stream_rng(90, "channel:run");
        let mut ag = stream_rng(90, "agent:c");

        for frame in 1..=(z + 3) {
            let log = agent.step(&mut env, &mut ch, &mut ag).unwrap();
            if frame <= z {
                // Warmup: no gradient step, schedule untouched.
                assert!(log.loss.is_none(), "trained during warmup at frame {frame}");
                assert_eq!(log.epsilon, hp.epsilon_initial);
                assert_eq!(agent.train_steps(), 0);
            } else {
                assert!(log.loss.is_some());
                assert!(log.epsilon < hp.epsilon_initial);
            }
            assert_eq!(agent.replay().len(), frame.min(hp.replay_capacity));
        }
        // Stored centralized states all have length M*N.
        assert!(agent.replay().iter().all(|e| e.state.len() == 4));
    }

    #[test]
    fn replay_capacity_saturates() {
        let hp = AgentHyperParams {
            batch_size: 4,
            replay_capacity: 10,
            centralized_hidden: vec![8],
            ..AgentHyperParams::default()
        };
        let mut env = tiny_env(2, 2, 0.5, 91);
        let mut agent =
            CentralizedAgent::new(2, 2, hp, 1000, &mut stream_rng(91, "init:c")).unwrap();
        let mut ch = stream_rng(91, "channel:run");
        let mut ag = stream_rng(91, "agent:c");
        for _ in 0..30 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        assert_eq!(agent.replay().len(), 10);
    }

    #[test]
    fn centralized_rejects_resized_environments() {
        let mut env = tiny_env(2, 3, 0.5, 92);
        let mut agent =
            CentralizedAgent::new(2, 3, small_hp(), 1000, &mut stream_rng(92, "init:c")).unwrap();
        env.set_active_devices(2).unwrap();
        let err = agent
            .step(&mut env, &mut stream_rng(92, "ch"), &mut stream_rng(92, "ag"))
            .unwrap_err();
        assert!(matches!(err, SrnError::NotScalable));
    }

    #[test]
    fn centralized_action_space_cap_is_enforced() {
        let err = CentralizedAgent::new(8, 8, small_hp(), 1_000_000, &mut stream_rng(93, "i"));
        assert!(err.is_err());
    }

    #[test]
    fn distributed_shapes_and_replay_growth() {
        let hp = small_hp();
        let mut env = tiny_env(3, 2, 0.5, 94);
        let mut agent = DistributedAgent::new(3, hp.clone(), &mut stream_rng(94, "init:d")).unwrap();
        let mut ch = stream_rng(94, "channel:run");
        let mut ag = stream_rng(94, "agent:d");

        agent.step(&mut env, &mut ch, &mut ag).unwrap();
        // Two devices store two experiences per frame until capacity.
        assert_eq!(agent.replay().len(), 2);
        agent.step(&mut env, &mut ch, &mut ag).unwrap();
        assert_eq!(agent.replay().len(), 4);
        // Distributed states all have length 2M + 3.
        assert!(agent.replay().iter().all(|e| e.state.len() == 2 * 3 + 3));
    }

    #[test]
    fn distributed_survives_device_count_changes() {
        let hp = small_hp();
        let mut env = tiny_env(3, 3, 0.0, 95);
        env.set_active_devices(2).unwrap();
        let mut agent = DistributedAgent::new(3, hp, &mut stream_rng(95, "init:d")).unwrap();
        let mut ch = stream_rng(95, "channel:run");
        let mut ag = stream_rng(95, "agent:d");
        for _ in 0..10 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        let params_before = agent.network().params().to_vec();
        env.set_active_devices(3).unwrap();
        // No reconstruction: same network object keeps stepping and training.
        for _ in 0..10 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        assert_eq!(agent.network().params().len(), params_before.len());
        assert!(agent.replay().iter().all(|e| e.state.len() == 2 * 3 + 3));
    }

    #[test]
    fn seeded_runs_replay_identically() {
        for kind in ["centralized", "distributed"] {
            let run = |seed: u64| -> Vec<f64> {
                let mut env = tiny_env(2, 2, 0.9, seed);
                let mut ch = stream_rng(seed, "channel:run");
                let mut ag = stream_rng(seed, "agent");
                let mut init = stream_rng(seed, "init");
                let mut rates = Vec::new();
                if kind == "centralized" {
                    let mut agent =
                        CentralizedAgent::new(2, 2, small_hp(), 1000, &mut init).unwrap();
                    for _ in 0..40 {
                        rates.push(agent.step(&mut env, &mut ch, &mut ag).unwrap().sum_rate);
                    }
                } else {
                    let mut agent = DistributedAgent::new(2, small_hp(), &mut init).unwrap();
                    for _ in 0..40 {
                        rates.push(agent.step(&mut env, &mut ch, &mut ag).unwrap().sum_rate);
                    }
                }
                rates
            };
            assert_eq!(run(7), run(7), "{kind} run diverged under equal seeds");
        }
    }

    #[test]
    fn target_sync_counts_match_training_steps() {
        let hp = AgentHyperParams {
            batch_size: 4,
            replay_capacity: 64,
            target_sync_period: 5,
            centralized_hidden: vec![8],
            ..AgentHyperParams::default()
        };
        let mut env = tiny_env(2, 2, 0.9, 96);
        let mut agent =
            CentralizedAgent::new(2, 2, hp, 1000, &mut stream_rng(96, "init:c")).unwrap();
        let mut ch = stream_rng(96, "channel:run");
        let mut ag = stream_rng(96, "agent:c");

        // Before any sync the target still equals the initial copy.
        let initial_target = agent.target_network().clone();
        for _ in 0..4 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        assert_eq!(agent.target_network(), &initial_target);

        // 9 training steps: one sync at step 5, none since; target holds the
        // step-5 parameters which differ from both the init copy and the net.
        for _ in 0..9 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        assert_eq!(agent.train_steps(), 9);
        assert_ne!(agent.target_network(), &initial_target);
        assert_ne!(agent.target_network(), agent.network());
    }

    #[test]
    fn snapshot_restores_the_full_learning_state() {
        let hp = small_hp();
        let mut env = tiny_env(2, 2, 0.9, 97);
        let mut agent =
            CentralizedAgent::new(2, 2, hp.clone(), 1000, &mut stream_rng(97, "init:c")).unwrap();
        let mut ch = stream_rng(97, "channel:run");
        let mut ag = stream_rng(97, "agent:c");
        for _ in 0..20 {
            agent.step(&mut env, &mut ch, &mut ag).unwrap();
        }
        let snap = agent.snapshot(20, true);
        let json = serde_json::to_string(&snap).unwrap();
        let parsed: AgentSnapshot = serde_json::from_str(&json).unwrap();

        let mut restored =
            CentralizedAgent::new(2, 2, hp, 1000, &mut stream_rng(98, "init:other")).unwrap();
        restored.restore(&parsed).unwrap();
        assert_eq!(restored.network(), agent.network());
        assert_eq!(restored.epsilon(), agent.epsilon());
        assert_eq!(restored.train_steps(), agent.train_steps());
        assert_eq!(restored.replay().len(), agent.replay().len());

        // Restored agent keeps stepping from where the original stood.
        let log = restored.step(&mut env, &mut ch, &mut ag).unwrap();
        assert!(log.sum_rate.is_finite());

        // Kind mismatch is rejected.
        let mut dist = DistributedAgent::new(2, small_hp(), &mut stream_rng(99, "init:d")).unwrap();
        assert!(dist.restore(&parsed).is_err());
    }
}
