//! Seeded experiment execution.
//!
//! One run executes every requested policy on the *same* channel
//! realization sequence: the topology is sampled once, and each policy gets
//! its own fading generator seeded from the shared channel substream, so the
//! per-frame gain tensors agree bit-for-bit across policies (verified by
//! hashing them). Agent exploration, network initialization, and the random
//! baseline draw from separate per-policy substreams.
//!
//! Outputs are one CSV trace (one row per frame per policy) and one
//! key=value summary per run.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::agent::{CentralizedAgent, DistributedAgent};
use crate::channel::{init_small_scale, sample_topology};
use crate::config::{ExperimentConfig, PolicyKind};
use crate::env::{LinkGains, SrnEnv, StateNormalizer};
use crate::error::{Result, SrnError};
use crate::oracle::{association_count, optimal_policy, random_policy};
use crate::seeds::{stream_rng, STREAM_CHANNEL, STREAM_TOPOLOGY};

/// Window, in frames, of the moving average reported in traces.
pub const MOVING_AVG_WINDOW: usize = 200;

// ============================================================================
// Trace and summary types
// ============================================================================

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub frame: u64,
    pub policy: PolicyKind,
    pub n_devices: usize,
    pub sum_rate: f64,
    pub moving_avg: f64,
    pub epsilon: Option<f64>,
    pub loss: Option<f64>,
}

/// Everything a run produced, frame-major with policies in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub scenario: String,
    pub seed: u64,
    pub frames: u64,
    pub policies: Vec<PolicyKind>,
    pub records: Vec<TraceRecord>,
    /// Hash of the per-frame gain tensors each policy consumed; equal values
    /// certify that the policies saw the same channel.
    pub channel_hashes: Vec<(PolicyKind, u64)>,
}

impl RunTrace {
    /// Moving-average series of one policy, in frame order.
    pub fn moving_avg_series(&self, policy: PolicyKind) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.moving_avg)
            .collect()
    }

    /// Raw sum-rate series of one policy, in frame order.
    pub fn sum_rate_series(&self, policy: PolicyKind) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.sum_rate)
            .collect()
    }
}

/// Convergence summary of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    /// Mean moving-average sum rate over the final tail of the run.
    pub tail_mean: f64,
    pub ratio_vs_optimal: Option<f64>,
    pub ratio_vs_random: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub frames: u64,
    pub policies: Vec<PolicySummary>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: RunTrace,
    pub summary: RunSummary,
    pub warnings: Vec<String>,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

// ============================================================================
// Metrics
// ============================================================================

/// Moving average with partial windows: the value at position `t` is the
/// mean of the last `min(t+1, window)` values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(SrnError::Domain("moving average window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut buf: VecDeque<f64> = VecDeque::with_capacity(window);
    for &x in series {
        if buf.len() == window {
            buf.pop_front();
        }
        buf.push_back(x);
        // Summing the window afresh keeps the result independent of any
        // running-sum rounding history.
        out.push(buf.iter().sum::<f64>() / buf.len() as f64);
    }
    Ok(out)
}

/// Per-policy tail means and ratios against the optimal and random baselines.
pub fn summarize(trace: &RunTrace, tail_fraction: f64) -> Result<RunSummary> {
    if trace.records.is_empty() {
        return Err(SrnError::Domain("cannot summarize an empty trace".into()));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(SrnError::Domain("tail_fraction must lie in (0, 1]".into()));
    }
    let tail_mean = |policy: PolicyKind| -> f64 {
        let series = trace.moving_avg_series(policy);
        let count = (((series.len() as f64) * tail_fraction) as usize).max(1);
        let tail = &series[series.len() - count..];
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let optimal = trace
        .policies
        .contains(&PolicyKind::Optimal)
        .then(|| tail_mean(PolicyKind::Optimal));
    let random = trace
        .policies
        .contains(&PolicyKind::Random)
        .then(|| tail_mean(PolicyKind::Random));
    let ratio = |mine: f64, theirs: Option<f64>| theirs.filter(|&t| t > 0.0).map(|t| mine / t);

    let policies = trace
        .policies
        .iter()
        .map(|&p| {
            let mine = tail_mean(p);
            PolicySummary {
                policy: p,
                tail_mean: mine,
                ratio_vs_optimal: ratio(mine, optimal),
                ratio_vs_random: ratio(mine, random),
            }
        })
        .collect();
    Ok(RunSummary {
        scenario: trace.scenario.clone(),
        seed: trace.seed,
        frames: trace.frames,
        policies,
    })
}

// ============================================================================
// Policy runners
// ============================================================================

enum Runner {
    Centralized(Box<CentralizedAgent>),
    Distributed(Box<DistributedAgent>),
    Optimal { enumeration_cap: u64 },
    Random,
}

struct PolicyRun {
    kind: PolicyKind,
    env: SrnEnv,
    channel_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
    runner: Runner,
    gain_hash: u64,
    sum_rates: Vec<f64>,
    epsilons: Vec<Option<f64>>,
    losses: Vec<Option<f64>>,
    device_counts: Vec<usize>,
}

fn fold_gains(mut hash: u64, gains: &LinkGains) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    for row in &gains.h {
        for &h in row {
            hash ^= h.to_bits();
            hash = hash.wrapping_mul(PRIME);
        }
    }
    hash
}

impl PolicyRun {
    fn step(&mut self, frame: u64) -> Result<()> {
        let (sum_rate, epsilon, loss) = match &mut self.runner {
            Runner::Centralized(agent) => {
                let log = agent.step(&mut self.env, &mut self.channel_rng, &mut self.agent_rng)?;
                (log.sum_rate, Some(log.epsilon), log.loss)
            }
            Runner::Distributed(agent) => {
                let log = agent.step(&mut self.env, &mut self.channel_rng, &mut self.agent_rng)?;
                (log.sum_rate, Some(log.epsilon), log.loss)
            }
            Runner::Optimal { enumeration_cap } => {
                // The oracle reads the true current gains, so it decides
                // after the channel advances.
                self.env.advance_frame(&mut self.channel_rng);
                let decision =
                    optimal_policy(self.env.gains(), self.env.params(), *enumeration_cap)?;
                let outcome = self.env.evaluate(&decision.assoc)?;
                self.env.commit(&decision.assoc, &outcome);
                (outcome.sum_rate, None, None)
            }
            Runner::Random => {
                let assoc = random_policy(
                    self.env.num_users(),
                    self.env.active_devices(),
                    &mut self.agent_rng,
                );
                self.env.advance_frame(&mut self.channel_rng);
                let outcome = self.env.evaluate(&assoc)?;
                self.env.commit(&assoc, &outcome);
                (outcome.sum_rate, None, None)
            }
        };
        if !sum_rate.is_finite() || loss.is_some_and(|l| !l.is_finite()) {
            return Err(SrnError::NonFinite {
                context: format!("{} trace at frame {frame}", self.kind),
            });
        }
        self.gain_hash = fold_gains(self.gain_hash, self.env.gains());
        self.sum_rates.push(sum_rate);
        self.epsilons.push(epsilon);
        self.losses.push(loss);
        self.device_counts.push(self.env.active_devices());
        Ok(())
    }

    /// Resizes the active device set. A no-op change is legal for every
    /// policy; an actual change is refused for the centralized agent, whose
    /// joint action space is tied to the device count.
    fn apply_n_change(&mut self, new_n: usize) -> Result<()> {
        if new_n == self.env.active_devices() {
            return Ok(());
        }
        if matches!(self.runner, Runner::Centralized(_)) {
            return Err(SrnError::NotScalable);
        }
        self.env.set_active_devices(new_n)
    }

    fn agent_snapshot(&self, frame: u64) -> Option<crate::agent::AgentSnapshot> {
        match &self.runner {
            Runner::Centralized(agent) => Some(agent.snapshot(frame, false)),
            Runner::Distributed(agent) => Some(agent.snapshot(frame, false)),
            _ => None,
        }
    }
}

// ============================================================================
// Run orchestration
// ============================================================================

/// Runs every requested policy of `cfg` on the shared channel realization.
///
/// When `output_dir` is given, the CSV trace, the summary, and any periodic
/// agent snapshots are written beneath it. An intractable optimal policy is
/// dropped with a warning; the run continues without that column.
pub fn run_experiment(cfg: &ExperimentConfig, output_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let n_max = cfg.max_devices();
    let topo = cfg.topology_config(n_max);
    let params = cfg.system_params(n_max);
    let (_positions, large) = sample_topology(&topo, &mut stream_rng(cfg.seed, STREAM_TOPOLOGY))?;
    let normalizer = StateNormalizer::new(&large, &params)?;

    let mut warnings = Vec::new();
    let mut policies = Vec::new();
    for &p in &cfg.policies {
        if p == PolicyKind::Optimal {
            let count = association_count(cfg.m, n_max);
            let tractable = count.is_some_and(|c| c <= u128::from(cfg.enumeration_cap));
            if !tractable {
                warnings.push(format!(
                    "optimal policy unavailable: {}^{} associations exceed the enumeration cap of {}",
                    cfg.m, n_max, cfg.enumeration_cap
                ));
                continue;
            }
        }
        policies.push(p);
    }
    if policies.is_empty() {
        return Err(SrnError::InvalidConfig(
            "no runnable policy left after dropping the intractable oracle".into(),
        ));
    }

    let mut runs: Vec<PolicyRun> = Vec::with_capacity(policies.len());
    for &kind in &policies {
        let mut channel_rng = stream_rng(cfg.seed, STREAM_CHANNEL);
        let small = init_small_scale(cfg.m, n_max, cfg.rho, &mut channel_rng)?;
        let env = SrnEnv::new(
            large.clone(),
            small,
            params.clone(),
            normalizer.clone(),
            cfg.n,
        )?;
        let agent_rng = stream_rng(cfg.seed, &format!("agent:{kind}"));
        let mut init_rng = stream_rng(cfg.seed, &format!("init:{kind}"));
        let runner = match kind {
            PolicyKind::Centralized => Runner::Centralized(Box::new(CentralizedAgent::new(
                cfg.m,
                cfg.n,
                cfg.agent.clone(),
                cfg.enumeration_cap,
                &mut init_rng,
            )?)),
            PolicyKind::Distributed => Runner::Distributed(Box::new(DistributedAgent::new(
                cfg.m,
                cfg.agent.clone(),
                &mut init_rng,
            )?)),
            PolicyKind::Optimal => Runner::Optimal {
                enumeration_cap: cfg.enumeration_cap,
            },
            PolicyKind::Random => Runner::Random,
        };
        runs.push(PolicyRun {
            kind,
            env,
            channel_rng,
            agent_rng,
            runner,
            gain_hash: 0xcbf2_9ce4_8422_2325,
            sum_rates: Vec::with_capacity(cfg.frames as usize),
            epsilons: Vec::with_capacity(cfg.frames as usize),
            losses: Vec::with_capacity(cfg.frames as usize),
            device_counts: Vec::with_capacity(cfg.frames as usize),
        });
    }

    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir)?;
    }

    for frame in 1..=cfg.frames {
        if let Some(change) = cfg.n_change {
            if change.frame == frame {
                for run in &mut runs {
                    run.apply_n_change(change.new_n)?;
                }
            }
        }
        for run in &mut runs {
            run.step(frame)?;
        }
        if let (Some(dir), Some(every)) = (output_dir, cfg.snapshot_every_frames) {
            if frame % every == 0 {
                for run in &runs {
                    if let Some(snap) = run.agent_snapshot(frame) {
                        let name = format!(
                            "{}-seed{}-{}-frame{frame}.snapshot.json",
                            cfg.scenario, cfg.seed, run.kind
                        );
                        std::fs::write(
                            dir.join(name),
                            serde_json::to_string(&snap)
                                .map_err(|e| SrnError::ConfigParse(e.to_string()))?,
                        )?;
                    }
                }
            }
        }
    }

    // Every policy must have consumed the identical gain sequence.
    let channel_hashes: Vec<(PolicyKind, u64)> =
        runs.iter().map(|r| (r.kind, r.gain_hash)).collect();
    if let Some(&(_, first)) = channel_hashes.first() {
        if channel_hashes.iter().any(|&(_, h)| h != first) {
            return Err(SrnError::Contract(
                "policies diverged from the shared channel stream".into(),
            ));
        }
    }

    let mut per_policy_ma = Vec::with_capacity(runs.len());
    for run in &runs {
        per_policy_ma.push(moving_average(&run.sum_rates, MOVING_AVG_WINDOW)?);
    }
    let mut records = Vec::with_capacity(runs.len() * cfg.frames as usize);
    for t in 0..cfg.frames as usize {
        for (run, ma) in runs.iter().zip(&per_policy_ma) {
            records.push(TraceRecord {
                frame: (t + 1) as u64,
                policy: run.kind,
                n_devices: run.device_counts[t],
                sum_rate: run.sum_rates[t],
                moving_avg: ma[t],
                epsilon: run.epsilons[t],
                loss: run.losses[t],
            });
        }
    }
    let trace = RunTrace {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        frames: cfg.frames,
        policies,
        records,
        channel_hashes,
    };
    let summary = if trace.records.is_empty() {
        RunSummary {
            scenario: trace.scenario.clone(),
            seed: trace.seed,
            frames: trace.frames,
            policies: Vec::new(),
        }
    } else {
        summarize(&trace, cfg.tail_fraction)?
    };

    let (mut csv_path, mut summary_path) = (None, None);
    if let Some(dir) = output_dir {
        let base = format!("{}-seed{}", cfg.scenario, cfg.seed);
        let csv = dir.join(format!("{base}.csv"));
        std::fs::write(&csv, render_csv(&trace))?;
        let sum = dir.join(format!("{base}.summary.txt"));
        std::fs::write(&sum, render_summary(&summary))?;
        csv_path = Some(csv);
        summary_path = Some(sum);
    }

    Ok(RunResult {
        trace,
        summary,
        warnings,
        csv_path,
        summary_path,
    })
}

// ============================================================================
// Rendering
// ============================================================================

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text of a trace, header included.
pub fn render_csv(trace: &RunTrace) -> String {
    let mut out = String::from("frame,policy,n_devices,sum_rate,moving_avg_200,epsilon,loss\n");
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.frame,
            r.policy,
            r.n_devices,
            r.sum_rate,
            r.moving_avg,
            opt_field(r.epsilon),
            opt_field(r.loss)
        );
    }
    out
}

/// key=value text of a summary.
pub fn render_summary(summary: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario={}", summary.scenario);
    let _ = writeln!(out, "seed={}", summary.seed);
    let _ = writeln!(out, "frames={}", summary.frames);
    for p in &summary.policies {
        let _ = writeln!(out, "{}.tail_mean={}", p.policy, p.tail_mean);
        if let Some(r) = p.ratio_vs_optimal {
            let _ = writeln!(out, "{}.ratio_vs_optimal={}", p.policy, r);
        }
        if let Some(r) = p.ratio_vs_random {
            let _ = writeln!(out, "{}.ratio_vs_random={}", p.policy, r);
        }
    }
    out
}
