//! Backscatter link environment: gains, SIC-ordered SINRs, rates, and the
//! observations and rewards consumed by the learning agents.
//!
//! Within one user's time slot the receiver decodes backscatter signals
//! strongest-first. When device `n` is decoded at user `m`, every *weaker*
//! device in the same slot is still undecoded and interferes with `n`; every
//! *stronger* device was decoded earlier and saw `n` as interference. Ties in
//! gain are broken by device index: the lower index counts as stronger, so
//! the decode order is always total and deterministic.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{evolve_small_scale, ChannelState, LargeScaleGains, SmallScaleState};
use crate::error::{Result, SrnError};

// ============================================================================
// Domain types
// ============================================================================

/// Assignment of each device to exactly one user's slot.
///
/// Stored as one user index per device, which makes the one-user-per-device
/// constraint unrepresentable to violate; the binary-matrix view is available
/// through [`Association::indicator`] and [`Association::matrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    users: Vec<usize>,
    num_users: usize,
}

impl Association {
    /// Builds an association from `users[n] = m` assignments.
    pub fn from_user_assignments(users: Vec<usize>, num_users: usize) -> Result<Self> {
        if users.is_empty() || num_users == 0 {
            return Err(SrnError::Contract(
                "association requires at least one device and one user".into(),
            ));
        }
        if let Some(&bad) = users.iter().find(|&&m| m >= num_users) {
            return Err(SrnError::Contract(format!(
                "device assigned to user {bad} but only {num_users} users exist"
            )));
        }
        Ok(Self { users, num_users })
    }

    /// Builds an association from an `M x N` binary matrix, rejecting any
    /// column whose sum is not exactly one.
    pub fn from_matrix(matrix: &[Vec<u8>]) -> Result<Self> {
        let num_users = matrix.len();
        let num_devices = matrix.first().map_or(0, Vec::len);
        if num_users == 0 || num_devices == 0 {
            return Err(SrnError::Contract("association matrix must be non-empty".into()));
        }
        let mut users = vec![usize::MAX; num_devices];
        for (m, row) in matrix.iter().enumerate() {
            if row.len() != num_devices {
                return Err(SrnError::Contract("ragged association matrix".into()));
            }
            for (n, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(SrnError::Contract("association entries must be 0 or 1".into()));
                }
                if a == 1 {
                    if users[n] != usize::MAX {
                        return Err(SrnError::Contract(format!(
                            "device {n} associated with more than one user"
                        )));
                    }
                    users[n] = m;
                }
            }
        }
        if let Some(n) = users.iter().position(|&m| m == usize::MAX) {
            return Err(SrnError::Contract(format!(
                "device {n} not associated with any user"
            )));
        }
        Ok(Self { users, num_users })
    }

    /// Decodes a joint-action index into an association: the index is the
    /// base-M expansion of the per-device user choices with the last device
    /// as the least-significant digit.
    pub fn from_index(index: u64, num_users: usize, num_devices: usize) -> Result<Self> {
        let total = (num_users as u128).checked_pow(num_devices as u32);
        match total {
            Some(t) if (index as u128) < t => {}
            _ => {
                return Err(SrnError::Contract(format!(
                    "action index {index} out of range for {num_users}^{num_devices} associations"
                )))
            }
        }
        let mut users = vec![0usize; num_devices];
        let mut rem = index;
        for n in (0..num_devices).rev() {
            users[n] = (rem % num_users as u64) as usize;
            rem /= num_users as u64;
        }
        Self::from_user_assignments(users, num_users)
    }

    /// Inverse of [`Association::from_index`].
    pub fn to_index(&self) -> u64 {
        self.users
            .iter()
            .fold(0u64, |acc, &m| acc * self.num_users as u64 + m as u64)
    }

    pub fn user_of(&self, device: usize) -> usize {
        self.users[device]
    }

    /// The binary indicator `a_{m,n}`.
    pub fn indicator(&self, m: usize, n: usize) -> bool {
        self.users[n] == m
    }

    pub fn matrix(&self) -> Vec<Vec<u8>> {
        (0..self.num_users)
            .map(|m| self.users.iter().map(|&u| u8::from(u == m)).collect())
            .collect()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_devices(&self) -> usize {
        self.users.len()
    }

    /// Devices assigned to user `m`, in index order.
    pub fn devices_of(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.users
            .iter()
            .enumerate()
            .filter_map(move |(n, &u)| (u == m).then_some(n))
    }
}

/// Transmit-side and receive-side constants of the radio system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// BS transmit power in watts.
    pub tx_power_w: f64,
    /// Receiver noise power in watts.
    pub noise_w: f64,
    /// Reflection-coefficient magnitude per device, each in (0, 1].
    pub alpha: Vec<f64>,
    /// Spreading factor K: BS symbol periods per device symbol.
    pub spreading: u32,
}

impl SystemParams {
    /// Uniform reflection coefficient across `num_devices` devices.
    pub fn uniform(tx_power_w: f64, noise_w: f64, alpha: f64, spreading: u32, num_devices: usize) -> Self {
        Self {
            tx_power_w,
            noise_w,
            alpha: vec![alpha; num_devices],
            spreading,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tx_power_w.is_finite() && self.tx_power_w > 0.0)
            || !(self.noise_w.is_finite() && self.noise_w > 0.0)
        {
            return Err(SrnError::InvalidConfig(
                "transmit and noise power must be positive".into(),
            ));
        }
        if self.spreading == 0 {
            return Err(SrnError::InvalidConfig("spreading factor must be at least 1".into()));
        }
        if self.alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(SrnError::InvalidConfig(
                "reflection magnitudes must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The `K * p` factor that weights every backscatter power term.
    pub fn kp(&self) -> f64 {
        f64::from(self.spreading) * self.tx_power_w
    }
}

/// Effective backscatter power gains `h_{m,n} = |alpha_n f_n g_{m,n}|^2`,
/// indexed `[m][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    pub h: Vec<Vec<f64>>,
}

impl LinkGains {
    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    pub fn num_devices(&self) -> usize {
        self.h.first().map_or(0, Vec::len)
    }
}

/// Everything measured in one evaluated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    /// SINR per (user, device); zero where unassociated.
    pub sinr: Vec<Vec<f64>>,
    /// Rate per (user, device) in bits/frame/Hz; zero where unassociated.
    pub rate: Vec<Vec<f64>>,
    /// Sum of all device rates.
    pub sum_rate: f64,
    /// Received interference power onto each device while it was decoded, in
    /// watts (spreading-weighted, matching the SINR denominator).
    pub interferer_power: Vec<f64>,
    /// Power each device contributed as interference to earlier-decoded
    /// devices in its slot, in watts.
    pub interfered_power: Vec<f64>,
}

/// Stale per-link knowledge available at the BS: the last gain observed for
/// each (user, device) pair plus each device's previous action and measured
/// interference. Entry `(m, n)` only refreshes in a frame where device `n`
/// actually transmitted in user `m`'s slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryStore {
    /// Last observed `h_{m,n}`; 0.0 means never observed.
    pub h_last: Vec<Vec<f64>>,
    /// User chosen by each device in the previous frame.
    pub last_action: Vec<Option<usize>>,
    /// Last measured interferer power per device, watts.
    pub last_interferer_w: Vec<f64>,
    /// Last measured interfered power per device, watts.
    pub last_interfered_w: Vec<f64>,
}

impl HistoryStore {
    pub fn new(num_users: usize, num_devices: usize) -> Self {
        Self {
            h_last: vec![vec![0.0; num_devices]; num_users],
            last_action: vec![None; num_devices],
            last_interferer_w: vec![0.0; num_devices],
            last_interfered_w: vec![0.0; num_devices],
        }
    }

    pub fn num_users(&self) -> usize {
        self.h_last.len()
    }

    pub fn num_devices(&self) -> usize {
        self.last_action.len()
    }
}

// ============================================================================
// Core operations
// ============================================================================

/// Effective backscatter gain of every link from the full (large x small)
/// channel coefficients.
pub fn backscatter_gain(channel: &ChannelState, params: &SystemParams) -> LinkGains {
    backscatter_gain_for(channel, params, channel.num_devices())
}

fn backscatter_gain_for(channel: &ChannelState, params: &SystemParams, num_devices: usize) -> LinkGains {
    let m_count = channel.num_users();
    let h = (0..m_count)
        .map(|m| {
            (0..num_devices)
                .map(|n| {
                    let a2 = params.alpha[n] * params.alpha[n];
                    a2 * channel.f_dev(n).norm_sqr() * channel.g_link(m, n).norm_sqr()
                })
                .collect()
        })
        .collect();
    LinkGains { h }
}

/// `true` when device `l` decodes before device `n` in user `m`'s slot.
fn decodes_before(gains: &LinkGains, m: usize, l: usize, n: usize) -> bool {
    let hl = gains.h[m][l];
    let hn = gains.h[m][n];
    hl > hn || (hl == hn && l < n)
}

/// Interferer and interfered index sets for device `n` at its user `m`.
///
/// The first set holds devices weaker than `n` on row `m` (they interfere
/// with `n`); the second holds stronger devices (`n` interferes with them).
/// Membership is by gain comparison only; association masks are applied when
/// power sums are formed.
pub fn interference_sets(
    gains: &LinkGains,
    assoc: &Association,
    n: usize,
    m: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !assoc.indicator(m, n) {
        return Err(SrnError::Contract(format!(
            "interference sets requested for device {n} at user {m}, but it is associated with user {}",
            assoc.user_of(n)
        )));
    }
    let mut interferers = Vec::new();
    let mut interfered = Vec::new();
    for l in 0..gains.num_devices() {
        if l == n {
            continue;
        }
        if decodes_before(gains, m, l, n) {
            interfered.push(l);
        } else {
            interferers.push(l);
        }
    }
    Ok((interferers, interfered))
}

/// Spreading-weighted interference power received while decoding device `n`
/// at user `m`: the sum of `K*p*h_{m,l}` over weaker devices in the slot.
fn interferer_power_w(gains: &LinkGains, assoc: &Association, params: &SystemParams, m: usize, n: usize) -> f64 {
    let kp = params.kp();
    (0..gains.num_devices())
        .filter(|&l| l != n && assoc.indicator(m, l) && !decodes_before(gains, m, l, n))
        .map(|l| kp * gains.h[m][l])
        .sum()
}

/// SINR of device `n` decoded at user `m` under successive interference
/// cancellation; zero when the pair is not associated.
pub fn sinr(gains: &LinkGains, assoc: &Association, params: &SystemParams, m: usize, n: usize) -> f64 {
    if !assoc.indicator(m, n) {
        return 0.0;
    }
    let signal = params.kp() * gains.h[m][n];
    signal / (interferer_power_w(gains, assoc, params, m, n) + params.noise_w)
}

/// Achievable rate in bits/frame/Hz: `(1/K) * a * log2(1 + sinr)`.
pub fn rate(sinr: f64, associated: bool, spreading: u32) -> f64 {
    if !associated {
        return 0.0;
    }
    (1.0 + sinr).log2() / f64::from(spreading)
}

/// Evaluates one frame: all SINRs and rates plus the per-device interference
/// power sums fed back to the agents.
pub fn evaluate_frame(gains: &LinkGains, assoc: &Association, params: &SystemParams) -> Result<FrameOutcome> {
    let m_count = gains.num_users();
    let n_count = gains.num_devices();
    if assoc.num_users() != m_count || assoc.num_devices() != n_count {
        return Err(SrnError::Contract(format!(
            "association is {}x{} but gains are {m_count}x{n_count}",
            assoc.num_users(),
            assoc.num_devices()
        )));
    }
    let kp = params.kp();
    let mut sinr_mat = vec![vec![0.0; n_count]; m_count];
    let mut rate_mat = vec![vec![0.0; n_count]; m_count];
    let mut interferer_power = vec![0.0; n_count];
    let mut interfered_power = vec![0.0; n_count];
    let mut sum_rate = 0.0;

    for n in 0..n_count {
        let m = assoc.user_of(n);
        let g = sinr(gains, assoc, params, m, n);
        let r = rate(g, true, params.spreading);
        sinr_mat[m][n] = g;
        rate_mat[m][n] = r;
        sum_rate += r;
        interferer_power[n] = interferer_power_w(gains, assoc, params, m, n);
        interfered_power[n] = (0..n_count)
            .filter(|&l| l != n && assoc.indicator(m, l) && decodes_before(gains, m, l, n))
            .map(|l| kp * gains.h[m][l])
            .sum();
    }

    Ok(FrameOutcome {
        sinr: sinr_mat,
        rate: rate_mat,
        sum_rate,
        interferer_power,
        interfered_power,
    })
}

/// Rate device `l` would have achieved at user `m` had device `n` not been
/// transmitting: `n`'s term is removed from `l`'s interference sum.
pub fn counterfactual_rate(
    gains: &LinkGains,
    assoc: &Association,
    params: &SystemParams,
    m: usize,
    l: usize,
    excluded: usize,
) -> f64 {
    if !assoc.indicator(m, l) {
        return 0.0;
    }
    let kp = params.kp();
    let residual: f64 = (0..gains.num_devices())
        .filter(|&i| i != l && i != excluded && assoc.indicator(m, i) && !decodes_before(gains, m, i, l))
        .map(|i| kp * gains.h[m][i])
        .sum();
    let g = kp * gains.h[m][l] / (residual + params.noise_w);
    rate(g, true, params.spreading)
}

/// Per-device reward: own rate minus the rate loss `n` inflicted on the
/// stronger devices it shares a slot with.
pub fn distributed_reward(
    outcome: &FrameOutcome,
    gains: &LinkGains,
    assoc: &Association,
    params: &SystemParams,
    n: usize,
) -> f64 {
    let m = assoc.user_of(n);
    let penalty: f64 = (0..gains.num_devices())
        .filter(|&l| l != n && assoc.indicator(m, l) && decodes_before(gains, m, l, n))
        .map(|l| counterfactual_rate(gains, assoc, params, m, l, n) - outcome.rate[m][l])
        .sum();
    outcome.rate[m][n] - penalty
}

/// Sum-rate reward of the joint action.
pub fn centralized_reward(outcome: &FrameOutcome) -> f64 {
    outcome.sum_rate
}

/// Refreshes the history with everything observed this frame: each device's
/// gain at its chosen user, its action, and its interference feedback. All
/// other entries keep their stale values.
pub fn update_history(
    history: &mut HistoryStore,
    assoc: &Association,
    gains: &LinkGains,
    outcome: &FrameOutcome,
) {
    for n in 0..assoc.num_devices() {
        let m = assoc.user_of(n);
        history.h_last[m][n] = gains.h[m][n];
        history.last_action[n] = Some(m);
        history.last_interferer_w[n] = outcome.interferer_power[n];
        history.last_interfered_w[n] = outcome.interfered_power[n];
    }
}

// ============================================================================
// State construction
// ============================================================================

/// Affine log-domain mapping of gains and powers into [0, 1] network inputs.
///
/// Backscatter gains span ten-plus orders of magnitude, so raw values starve
/// the network. The bounds hug the sampled topology's weakest and strongest
/// large-scale link gains with a fixed margin for small-scale fading, which
/// keeps the per-user contrast a device must discriminate large. Unobserved
/// or zero entries map to the floor 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNormalizer {
    log_gain_lo: f64,
    log_gain_hi: f64,
    log_power_lo: f64,
    log_power_hi: f64,
}

// Margin for the random |f~|^2 |g~|^2 factor, in decades; roughly 2% of
// draws fall below the lower margin and clamp to the floor.
const SMALL_SCALE_LOG_LO: f64 = -2.5;
const SMALL_SCALE_LOG_HI: f64 = 1.5;

impl StateNormalizer {
    pub fn new(large: &LargeScaleGains, params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let mut base_lo = f64::INFINITY;
        let mut base_hi = 0.0f64;
        for row in &large.lambda_link {
            for (n, &lambda_link) in row.iter().enumerate() {
                let base = params.alpha[n] * params.alpha[n] * large.lambda_dev[n] * lambda_link;
                base_lo = base_lo.min(base);
                base_hi = base_hi.max(base);
            }
        }
        if !(base_lo.is_finite() && base_lo > 0.0) || !base_hi.is_finite() {
            return Err(SrnError::Contract(
                "topology produced non-positive large-scale link gains".into(),
            ));
        }
        let log_gain_lo = base_lo.log10() + SMALL_SCALE_LOG_LO;
        let log_gain_hi = base_hi.log10() + SMALL_SCALE_LOG_HI;
        let log_kp = params.kp().log10();
        let max_terms = (params.alpha.len().max(2) as f64).log10();
        Ok(Self {
            log_gain_lo,
            log_gain_hi,
            log_power_lo: log_kp + log_gain_lo,
            log_power_hi: log_kp + log_gain_hi + max_terms,
        })
    }

    /// Normalized backscatter gain; 0 for unobserved entries.
    pub fn gain(&self, h: f64) -> f64 {
        if !(h.is_finite() && h > 0.0) {
            return 0.0;
        }
        ((h.log10() - self.log_gain_lo) / (self.log_gain_hi - self.log_gain_lo)).clamp(0.0, 1.0)
    }

    /// Normalized interference power; 0 for an empty interference set.
    pub fn power(&self, watts: f64) -> f64 {
        if !(watts.is_finite() && watts > 0.0) {
            return 0.0;
        }
        ((watts.log10() - self.log_power_lo) / (self.log_power_hi - self.log_power_lo)).clamp(0.0, 1.0)
    }
}

/// Global state: the normalized last-observed gain of every (user, device)
/// pair, flattened user-major. Length `M * N`.
pub fn centralized_state(history: &HistoryStore, norm: &StateNormalizer) -> Vec<f64> {
    history
        .h_last
        .iter()
        .flat_map(|row| row.iter().map(|&h| norm.gain(h)))
        .collect()
}

/// Local state of device `n`: its normalized gain row (M values), a one-hot
/// of its previous action (M values), its scaled identity, and its two
/// normalized interference feedback powers. Length `2M + 3`, independent of
/// the device count.
pub fn distributed_state(
    history: &HistoryStore,
    n: usize,
    n_max: usize,
    norm: &StateNormalizer,
) -> Vec<f64> {
    let m_count = history.num_users();
    let mut state = Vec::with_capacity(2 * m_count + 3);
    for m in 0..m_count {
        state.push(norm.gain(history.h_last[m][n]));
    }
    for m in 0..m_count {
        state.push(match history.last_action[n] {
            Some(a) if a == m => 1.0,
            _ => 0.0,
        });
    }
    state.push((n + 1) as f64 / n_max as f64);
    state.push(norm.power(history.last_interferer_w[n]));
    state.push(norm.power(history.last_interfered_w[n]));
    state
}

// ============================================================================
// Stateful environment
// ============================================================================

/// One policy's view of the network: the evolving channel, the current frame
/// gains, and the observation history.
///
/// The channel always carries the maximum device count the run may reach, so
/// mid-run device-count changes neither disturb the random stream nor meet a
/// cold fading state; only the active prefix of devices is evaluated.
#[derive(Debug, Clone)]
pub struct SrnEnv {
    channel: ChannelState,
    params: SystemParams,
    history: HistoryStore,
    normalizer: StateNormalizer,
    active_devices: usize,
    gains: LinkGains,
}

impl SrnEnv {
    pub fn new(
        large: LargeScaleGains,
        small: SmallScaleState,
        params: SystemParams,
        normalizer: StateNormalizer,
        active_devices: usize,
    ) -> Result<Self> {
        params.validate()?;
        let n_max = large.lambda_dev.len();
        if params.alpha.len() != n_max || small.f_dev.len() != n_max {
            return Err(SrnError::Contract(
                "channel, params, and topology disagree on the device count".into(),
            ));
        }
        if active_devices == 0 || active_devices > n_max {
            return Err(SrnError::Contract(format!(
                "active device count {active_devices} outside 1..={n_max}"
            )));
        }
        let m_count = large.lambda_user.len();
        let channel = ChannelState { large, small };
        let gains = backscatter_gain_for(&channel, &params, active_devices);
        Ok(Self {
            channel,
            params,
            history: HistoryStore::new(m_count, n_max),
            normalizer,
            active_devices,
            gains,
        })
    }

    /// Evolves the fading one frame and recomputes the active link gains.
    pub fn advance_frame(&mut self, rng: &mut ChaCha8Rng) -> &LinkGains {
        evolve_small_scale(&mut self.channel.small, rng);
        self.gains = backscatter_gain_for(&self.channel, &self.params, self.active_devices);
        &self.gains
    }

    /// Rates and interference measurements for `assoc` on the current gains.
    pub fn evaluate(&self, assoc: &Association) -> Result<FrameOutcome> {
        evaluate_frame(&self.gains, assoc, &self.params)
    }

    /// Records what this frame revealed into the history store.
    pub fn commit(&mut self, assoc: &Association, outcome: &FrameOutcome) {
        update_history(&mut self.history, assoc, &self.gains, outcome);
    }

    /// Resizes the active device set; history rows and fading state of
    /// returning devices are already in place.
    pub fn set_active_devices(&mut self, new_n: usize) -> Result<()> {
        if new_n == 0 || new_n > self.max_devices() {
            return Err(SrnError::Contract(format!(
                "cannot activate {new_n} devices; topology holds {}",
                self.max_devices()
            )));
        }
        if new_n != self.active_devices {
            self.active_devices = new_n;
            self.gains = backscatter_gain_for(&self.channel, &self.params, new_n);
        }
        Ok(())
    }

    pub fn centralized_state(&self) -> Vec<f64> {
        // The history is sized for the maximum device count; the centralized
        // agent never changes it, so the full store is its state.
        centralized_state(&self.history, &self.normalizer)
    }

    pub fn distributed_state(&self, n: usize) -> Vec<f64> {
        distributed_state(&self.history, n, self.max_devices(), &self.normalizer)
    }

    pub fn num_users(&self) -> usize {
        self.channel.num_users()
    }

    pub fn active_devices(&self) -> usize {
        self.active_devices
    }

    pub fn max_devices(&self) -> usize {
        self.channel.num_devices()
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn gains(&self) -> &LinkGains {
        &self.gains
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    pub fn normalizer(&self) -> &StateNormalizer {
        &self.normalizer
    }
}
