//! Radio topology and channel evolution.
//!
//! Each link gain is the product of a large-scale component (fixed by node
//! placement through a distance-dependent path loss) and a small-scale
//! component that stays constant within a frame and evolves between frames
//! as a first-order complex Gauss-Markov process with correlation `rho`:
//!
//! ```text
//! x(t) = rho * x(t-1) + e(t),   e(t) ~ CN(0, 1 - rho^2)
//! ```
//!
//! so the marginal of every entry stays unit-variance circularly-symmetric
//! complex Gaussian and the lag-k autocorrelation is `rho^k`.
//!
//! All power arithmetic is in linear watts; dB and dBm appear only at the
//! configuration and reporting boundary.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrnError};

/// Node placement and propagation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Cellular users served by the base station (M).
    pub num_users: usize,
    /// Backscatter IoT devices (N).
    pub num_devices: usize,
    /// Side of the square deployment region in meters.
    pub region_side_m: f64,
    /// Base-station position; defaults to the region center.
    pub bs_position_m: [f64; 2],
    /// Minimum node-to-BS distance in meters.
    pub min_dist_m: f64,
    /// Maximum node-to-BS distance in meters.
    pub max_dist_m: f64,
    /// Carrier frequency in MHz.
    pub carrier_freq_mhz: f64,
    /// Transmit antenna gain in dB.
    pub tx_gain_db: f64,
    /// Receive antenna gain in dB.
    pub rx_gain_db: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            num_users: 3,
            num_devices: 3,
            region_side_m: 100.0,
            bs_position_m: [50.0, 50.0],
            min_dist_m: 10.0,
            max_dist_m: 100.0,
            carrier_freq_mhz: 2400.0,
            tx_gain_db: 2.5,
            rx_gain_db: 2.5,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_devices == 0 {
            return Err(SrnError::InvalidConfig(
                "num_users and num_devices must be at least 1".into(),
            ));
        }
        if !(self.region_side_m.is_finite() && self.region_side_m > 0.0) {
            return Err(SrnError::InvalidConfig("region_side_m must be positive".into()));
        }
        if !(self.carrier_freq_mhz.is_finite() && self.carrier_freq_mhz > 0.0) {
            return Err(SrnError::InvalidConfig("carrier_freq_mhz must be positive".into()));
        }
        if !(self.min_dist_m.is_finite() && self.min_dist_m > 0.0 && self.min_dist_m < self.max_dist_m)
        {
            return Err(SrnError::InvalidConfig(
                "require 0 < min_dist_m < max_dist_m".into(),
            ));
        }
        Ok(())
    }

    /// Largest possible separation between a device and a user in the region.
    pub fn max_link_dist_m(&self) -> f64 {
        self.region_side_m * std::f64::consts::SQRT_2
    }
}

// Device-to-user distances are floored here to avoid a path-loss singularity
// when two sampled nodes coincide.
pub const LINK_DIST_FLOOR_M: f64 = 1.0;

/// Free-space-style path loss in dB for `freq_mhz` and `dist_km`, net of
/// antenna gains: `32.45 + 20 log10(f) + 20 log10(d) - gt - gr`.
pub fn path_loss_db(freq_mhz: f64, dist_km: f64, gt_db: f64, gr_db: f64) -> Result<f64> {
    if !(freq_mhz.is_finite() && freq_mhz > 0.0) {
        return Err(SrnError::Domain(format!(
            "path_loss_db requires a positive frequency, got {freq_mhz} MHz"
        )));
    }
    if !(dist_km.is_finite() && dist_km > 0.0) {
        return Err(SrnError::Domain(format!(
            "path_loss_db requires a positive distance, got {dist_km} km"
        )));
    }
    Ok(32.45 + 20.0 * freq_mhz.log10() + 20.0 * dist_km.log10() - gt_db - gr_db)
}

/// Linear power gain corresponding to a loss of `db` decibels.
pub fn loss_db_to_gain(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Converts a dBm level to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Linear large-scale gain of a link of length `dist_m` under `cfg`.
pub fn large_scale_gain(cfg: &TopologyConfig, dist_m: f64) -> Result<f64> {
    let db = path_loss_db(
        cfg.carrier_freq_mhz,
        dist_m / 1000.0,
        cfg.tx_gain_db,
        cfg.rx_gain_db,
    )?;
    Ok(loss_db_to_gain(db))
}

/// Sampled node coordinates in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub users: Vec<[f64; 2]>,
    pub devices: Vec<[f64; 2]>,
}

/// Distance-derived linear gains; constant for a fixed topology.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleGains {
    /// BS -> user m.
    pub lambda_user: Vec<f64>,
    /// BS -> device n.
    pub lambda_dev: Vec<f64>,
    /// Device n -> user m, indexed `[m][n]`.
    pub lambda_link: Vec<Vec<f64>>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn sample_node(cfg: &TopologyConfig, rng: &mut ChaCha8Rng) -> [f64; 2] {
    // Rejection-sample uniformly over the region until the BS-distance
    // constraint holds.
    loop {
        let p = [
            rng.random_range(0.0..cfg.region_side_m),
            rng.random_range(0.0..cfg.region_side_m),
        ];
        let d = dist(p, cfg.bs_position_m);
        if d >= cfg.min_dist_m && d <= cfg.max_dist_m {
            return p;
        }
    }
}

/// Places users then devices uniformly in the admissible annulus and derives
/// every large-scale gain. Deterministic given the generator state.
pub fn sample_topology(
    cfg: &TopologyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Positions, LargeScaleGains)> {
    cfg.validate()?;
    let users: Vec<[f64; 2]> = (0..cfg.num_users).map(|_| sample_node(cfg, rng)).collect();
    let devices: Vec<[f64; 2]> = (0..cfg.num_devices).map(|_| sample_node(cfg, rng)).collect();

    let lambda_user = users
        .iter()
        .map(|&u| large_scale_gain(cfg, dist(u, cfg.bs_position_m)))
        .collect::<Result<Vec<_>>>()?;
    let lambda_dev = devices
        .iter()
        .map(|&d| large_scale_gain(cfg, dist(d, cfg.bs_position_m)))
        .collect::<Result<Vec<_>>>()?;
    let lambda_link = users
        .iter()
        .map(|&u| {
            devices
                .iter()
                .map(|&d| large_scale_gain(cfg, dist(u, d).max(LINK_DIST_FLOOR_M)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((
        Positions { users, devices },
        LargeScaleGains {
            lambda_user,
            lambda_dev,
            lambda_link,
        },
    ))
}

/// Per-frame small-scale fading coefficients for every link.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallScaleState {
    /// BS -> user m.
    pub h_user: Vec<Complex64>,
    /// BS -> device n.
    pub f_dev: Vec<Complex64>,
    /// Device n -> user m, indexed `[m][n]`.
    pub g_link: Vec<Vec<Complex64>>,
    /// Frames elapsed since initialization.
    pub frame_index: u64,
    /// Frame-to-frame correlation in `[0, 1]`.
    pub rho: f64,
}

/// One draw of a zero-mean unit-variance circularly-symmetric complex
/// Gaussian: two independent real Gaussians with variance 1/2 each.
fn complex_gaussian(variance: f64, rng: &mut ChaCha8Rng) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// Draws the initial fading state for `m` users and `n` devices. Entries are
/// sampled in a fixed order (users, devices, then links row-major) so a
/// seeded run replays exactly.
pub fn init_small_scale(m: usize, n: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<SmallScaleState> {
    if m == 0 || n == 0 {
        return Err(SrnError::Domain(
            "small-scale state requires at least one user and one device".into(),
        ));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(SrnError::Domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    let h_user = (0..m).map(|_| complex_gaussian(1.0, rng)).collect();
    let f_dev = (0..n).map(|_| complex_gaussian(1.0, rng)).collect();
    let g_link = (0..m)
        .map(|_| (0..n).map(|_| complex_gaussian(1.0, rng)).collect())
        .collect();
    Ok(SmallScaleState {
        h_user,
        f_dev,
        g_link,
        frame_index: 0,
        rho,
    })
}

/// Advances every entry one frame: `x <- rho*x + e`, `e ~ CN(0, 1-rho^2)`,
/// drawn in the same fixed order as [`init_small_scale`].
pub fn evolve_small_scale(state: &mut SmallScaleState, rng: &mut ChaCha8Rng) {
    let innovation_var = 1.0 - state.rho * state.rho;
    let rho = state.rho;
    for h in &mut state.h_user {
        *h = rho * *h + complex_gaussian(innovation_var, rng);
    }
    for f in &mut state.f_dev {
        *f = rho * *f + complex_gaussian(innovation_var, rng);
    }
    for row in &mut state.g_link {
        for g in row {
            *g = rho * *g + complex_gaussian(innovation_var, rng);
        }
    }
    state.frame_index += 1;
}

/// Full channel state: large-scale gains plus the current small-scale draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub large: LargeScaleGains,
    pub small: SmallScaleState,
}

impl ChannelState {
    /// BS -> user coefficient `h_m = sqrt(lambda_m) * h~_m`.
    pub fn h_user(&self, m: usize) -> Complex64 {
        self.large.lambda_user[m].sqrt() * self.small.h_user[m]
    }

    /// BS -> device coefficient `f_n = sqrt(lambda_n) * f~_n`.
    pub fn f_dev(&self, n: usize) -> Complex64 {
        self.large.lambda_dev[n].sqrt() * self.small.f_dev[n]
    }

    /// Device -> user coefficient `g_{m,n} = sqrt(lambda_{m,n}) * g~_{m,n}`.
    pub fn g_link(&self, m: usize, n: usize) -> Complex64 {
        self.large.lambda_link[m][n].sqrt() * self.small.g_link[m][n]
    }

    pub fn num_users(&self) -> usize {
        self.large.lambda_user.len()
    }

    pub fn num_devices(&self) -> usize {
        self.large.lambda_dev.len()
    }
}
