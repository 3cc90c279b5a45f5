//! Command-line front end: seeded experiment runs, config sweeps,
//! single-frame oracle checks, and the built-in invariant suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use srn_sim::agent::EpsilonSchedule;
use srn_sim::channel::{evolve_small_scale, init_small_scale, sample_topology, ChannelState};
use srn_sim::config::{ExperimentConfig, NChange, PolicyKind};
use srn_sim::env::{backscatter_gain, evaluate_frame};
use srn_sim::error::{Result, SrnError};
use srn_sim::harness::{render_csv, render_summary, run_experiment};
use srn_sim::nn::{minibatch_gradients, td_target, QNetwork, Transition};
use srn_sim::oracle::{optimal_policy, random_policy, DEFAULT_ENUMERATION_CAP};
use srn_sim::seeds::{stream_rng, STREAM_CHANNEL, STREAM_TOPOLOGY};

#[derive(Parser)]
#[command(
    name = "srn",
    version,
    about = "Symbiotic radio network simulator with DRL-based user association"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; writes a CSV trace and a summary.
    Run {
        /// Path to a TOML experiment config.
        config: PathBuf,
        /// Master seed of the run (overrides the config).
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every config matching the given paths or glob patterns.
    Sweep {
        /// Config paths; unexpanded glob patterns are accepted too.
        patterns: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Single-frame optimality check: exhaustive search on one realization.
    Oracle {
        /// Cellular users.
        #[arg(long)]
        m: usize,
        /// IoT devices.
        #[arg(long)]
        n: usize,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Channel correlation of the sampled frame.
        #[arg(long, default_value_t = 0.99)]
        rho: f64,
        /// Enumeration cap.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
        cap: u64,
    },
    /// Run the built-in invariant suite.
    Check,
}

/// Flags overriding individual config fields.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    frames: Option<u64>,
    /// Comma-separated policy list.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long, requires = "n_change_new_n")]
    n_change_frame: Option<u64>,
    #[arg(long, requires = "n_change_frame")]
    n_change_new_n: Option<usize>,
    #[arg(long)]
    tail_fraction: Option<f64>,
    #[arg(long)]
    enumeration_cap: Option<u64>,
    #[arg(long)]
    snapshot_every_frames: Option<u64>,

    #[arg(long)]
    region_side_m: Option<f64>,
    /// Base-station position as `x,y` meters.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    bs_position_m: Option<Vec<f64>>,
    #[arg(long)]
    min_dist_m: Option<f64>,
    #[arg(long)]
    max_dist_m: Option<f64>,
    #[arg(long)]
    carrier_freq_mhz: Option<f64>,
    #[arg(long)]
    tx_gain_db: Option<f64>,
    #[arg(long)]
    rx_gain_db: Option<f64>,

    #[arg(long)]
    tx_power_dbm: Option<f64>,
    #[arg(long)]
    noise_dbm: Option<f64>,
    #[arg(long)]
    reflection_coeff: Option<f64>,
    #[arg(long)]
    spreading_factor: Option<u32>,

    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    target_sync_period: Option<u64>,
    #[arg(long)]
    epsilon_initial: Option<f64>,
    #[arg(long)]
    epsilon_min: Option<f64>,
    #[arg(long)]
    epsilon_decay: Option<f64>,
    /// Comma-separated hidden widths for the centralized network.
    #[arg(long, value_delimiter = ',')]
    centralized_hidden: Option<Vec<usize>>,
    /// Comma-separated hidden widths for the distributed network.
    #[arg(long, value_delimiter = ',')]
    distributed_hidden: Option<Vec<usize>>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = &$value {
                    $field = v.clone();
                }
            };
        }
        set!(cfg.scenario, self.scenario);
        set!(cfg.m, self.m);
        set!(cfg.n, self.n);
        set!(cfg.rho, self.rho);
        set!(cfg.frames, self.frames);
        if let Some(names) = &self.policies {
            cfg.policies = names
                .iter()
                .map(|s| s.parse::<PolicyKind>())
                .collect::<Result<Vec<_>>>()?;
        }
        set!(cfg.output_dir, self.output_dir);
        if let (Some(frame), Some(new_n)) = (self.n_change_frame, self.n_change_new_n) {
            cfg.n_change = Some(NChange { frame, new_n });
        }
        set!(cfg.tail_fraction, self.tail_fraction);
        set!(cfg.enumeration_cap, self.enumeration_cap);
        if self.snapshot_every_frames.is_some() {
            cfg.snapshot_every_frames = self.snapshot_every_frames;
        }

        set!(cfg.topology.region_side_m, self.region_side_m);
        if let Some(bs) = &self.bs_position_m {
            cfg.topology.bs_position_m = Some([bs[0], bs[1]]);
        }
        set!(cfg.topology.min_dist_m, self.min_dist_m);
        set!(cfg.topology.max_dist_m, self.max_dist_m);
        set!(cfg.topology.carrier_freq_mhz, self.carrier_freq_mhz);
        set!(cfg.topology.tx_gain_db, self.tx_gain_db);
        set!(cfg.topology.rx_gain_db, self.rx_gain_db);

        set!(cfg.system.tx_power_dbm, self.tx_power_dbm);
        set!(cfg.system.noise_dbm, self.noise_dbm);
        set!(cfg.system.reflection_coeff, self.reflection_coeff);
        set!(cfg.system.spreading_factor, self.spreading_factor);

        set!(cfg.agent.gamma, self.gamma);
        set!(cfg.agent.learning_rate, self.learning_rate);
        set!(cfg.agent.batch_size, self.batch_size);
        set!(cfg.agent.replay_capacity, self.replay_capacity);
        set!(cfg.agent.target_sync_period, self.target_sync_period);
        set!(cfg.agent.epsilon_initial, self.epsilon_initial);
        set!(cfg.agent.epsilon_min, self.epsilon_min);
        set!(cfg.agent.epsilon_decay, self.epsilon_decay);
        set!(cfg.agent.centralized_hidden, self.centralized_hidden);
        set!(cfg.agent.distributed_hidden, self.distributed_hidden);
        if self.grad_clip_norm.is_some() {
            cfg.agent.grad_clip_norm = self.grad_clip_norm;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            overrides,
        } => cmd_run(&config, seed, &overrides),
        Command::Sweep {
            patterns,
            overrides,
        } => cmd_sweep(&patterns, &overrides),
        Command::Oracle { m, n, seed, rho, cap } => cmd_oracle(m, n, seed, rho, cap),
        Command::Check => cmd_check(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run_one(cfg: &ExperimentConfig) -> Result<()> {
    let out_dir = cfg.output_dir.clone();
    let result = run_experiment(cfg, Some(Path::new(&out_dir)))?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_summary(&result.summary));
    if let Some(path) = &result.csv_path {
        println!("trace={}", path.display());
    }
    Ok(())
}

fn cmd_run(config: &Path, seed: u64, overrides: &Overrides) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    cfg.seed = seed;
    run_one(&cfg)
}

fn cmd_sweep(patterns: &[String], overrides: &Overrides) -> Result<()> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for pat in patterns {
        if pat.contains(['*', '?', '[']) {
            let matches = glob::glob(pat)
                .map_err(|e| SrnError::InvalidConfig(format!("bad glob '{pat}': {e}")))?;
            for entry in matches {
                paths.push(entry.map_err(|e| SrnError::Io(e.into()))?);
            }
        } else {
            paths.push(PathBuf::from(pat));
        }
    }
    if paths.is_empty() {
        return Err(SrnError::InvalidConfig("sweep matched no config files".into()));
    }
    paths.sort();
    let mut failures = 0;
    for path in &paths {
        println!("== {}", path.display());
        let run = ExperimentConfig::load(path).and_then(|mut cfg| {
            overrides.apply(&mut cfg)?;
            run_one(&cfg)
        });
        if let Err(err) = run {
            eprintln!("error in {}: {err}", path.display());
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(SrnError::InvalidConfig(format!(
            "{failures} of {} sweep runs failed",
            paths.len()
        )));
    }
    Ok(())
}

fn cmd_oracle(m: usize, n: usize, seed: u64, rho: f64, cap: u64) -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.m = m;
    cfg.n = n;
    cfg.rho = rho;
    let topo = cfg.topology_config(n);
    let params = cfg.system_params(n);
    let (_, large) = sample_topology(&topo, &mut stream_rng(seed, STREAM_TOPOLOGY))?;
    let mut channel_rng = stream_rng(seed, STREAM_CHANNEL);
    let mut small = init_small_scale(m, n, rho, &mut channel_rng)?;
    evolve_small_scale(&mut small, &mut channel_rng);
    let channel = ChannelState { large, small };
    let gains = backscatter_gain(&channel, &params);

    let decision = optimal_policy(&gains, &params, cap)?;
    println!("users={m} devices={n} seed={seed} rho={rho}");
    let users: Vec<String> = (0..n)
        .map(|dev| decision.assoc.user_of(dev).to_string())
        .collect();
    println!("optimal_association=[{}]", users.join(","));
    println!("optimal_sum_rate={}", decision.achieved_sum_rate);

    let mut baseline_rng = stream_rng(seed, "agent:random");
    let random_assoc = random_policy(m, n, &mut baseline_rng);
    let random_rate = evaluate_frame(&gains, &random_assoc, &params)?.sum_rate;
    println!("random_sum_rate={random_rate}");
    if random_rate > 0.0 {
        println!("optimal_over_random={}", decision.achieved_sum_rate / random_rate);
    }
    Ok(())
}

// ============================================================================
// Invariant suite
// ============================================================================

type Check = (&'static str, fn() -> Result<()>);

fn cmd_check() -> Result<()> {
    let checks: &[Check] = &[
        ("config-round-trip", check_config_round_trip),
        ("channel-statistics", check_channel_statistics),
        ("oracle-dominance", check_oracle_dominance),
        ("epsilon-schedule", check_epsilon_schedule),
        ("gradient-smoke", check_gradient_smoke),
        ("run-alignment-determinism", check_run_alignment),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("check {name}: PASS"),
            Err(err) => {
                println!("check {name}: FAIL ({err})");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(SrnError::Contract(format!("{failed} invariant check(s) failed")));
    }
    Ok(())
}

fn ensure(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SrnError::Contract(msg.into()))
    }
}

fn check_config_round_trip() -> Result<()> {
    let cfg = ExperimentConfig::default();
    let text = cfg.to_toml_string()?;
    let parsed = ExperimentConfig::from_toml_str(&text)?;
    ensure(parsed == cfg, "parsed config differs")?;
    ensure(
        parsed.to_toml_string()? == text,
        "serialize-parse-serialize not idempotent",
    )
}

fn check_channel_statistics() -> Result<()> {
    for rho in [0.0, 0.5, 0.99] {
        let mut rng = stream_rng(1000, STREAM_CHANNEL);
        let mut state = init_small_scale(1, 1, rho, &mut rng)?;
        let steps = 20_000;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut power = 0.0;
        let mut prev = state.g_link[0][0];
        for _ in 0..steps {
            evolve_small_scale(&mut state, &mut rng);
            let cur = state.g_link[0][0];
            num += (cur * prev.conj()).re;
            den += prev.norm_sqr();
            power += cur.norm_sqr();
            prev = cur;
        }
        let lag1 = num / den;
        let variance = power / steps as f64;
        ensure(
            (lag1 - rho).abs() < 0.05,
            &format!("lag-1 autocorrelation {lag1} too far from rho {rho}"),
        )?;
        ensure(
            (variance - 1.0).abs() < 0.1,
            &format!("variance {variance} drifted from 1 at rho {rho}"),
        )?;
    }
    Ok(())
}

fn check_oracle_dominance() -> Result<()> {
    use rand::Rng;
    let mut rng = stream_rng(1001, "check");
    let cfg = ExperimentConfig::default();
    for _ in 0..100 {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let params = cfg.system_params(n);
        let h = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| 10f64.powf(rng.random_range(-16.0..-10.0)))
                    .collect()
            })
            .collect();
        let gains = srn_sim::env::LinkGains { h };
        let best = optimal_policy(&gains, &params, 1000)?;
        let rand_assoc = random_policy(m, n, &mut rng);
        let rand_rate = evaluate_frame(&gains, &rand_assoc, &params)?.sum_rate;
        ensure(
            best.achieved_sum_rate >= rand_rate,
            "random policy beat the exhaustive optimum",
        )?;
    }
    Ok(())
}

fn check_epsilon_schedule() -> Result<()> {
    let mut sched = EpsilonSchedule::new(0.2, 0.005, 0.005)?;
    for t in 1..=1500u32 {
        sched.decay_step();
        let expected = (0.2 * 0.995f64.powi(t as i32)).max(0.005);
        ensure(
            (sched.value() - expected).abs() < 1e-9,
            "epsilon schedule diverged from its closed form",
        )?;
    }
    ensure(sched.value() == 0.005, "epsilon did not settle on its floor")
}

fn check_gradient_smoke() -> Result<()> {
    use rand::Rng;
    let mut rng = stream_rng(1002, "check");
    let net = QNetwork::new(&[5, 6, 3], &mut rng)?;
    let target = QNetwork::new(&[5, 6, 3], &mut rng)?;
    let data: Vec<(Vec<f64>, usize, f64, Vec<f64>)> = (0..4)
        .map(|i| {
            (
                (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                i % 3,
                rng.random_range(-1.0..1.0),
                (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let batch: Vec<Transition> = data
        .iter()
        .map(|(s, a, r, s2)| Transition {
            state: s,
            action: *a,
            reward: *r,
            next_state: s2,
        })
        .collect();
    let gamma = 0.3;
    let (_, grads) = minibatch_gradients(&net, &target, &batch, gamma)?;

    let loss_of = |net: &QNetwork| -> Result<f64> {
        let mut total = 0.0;
        for t in &batch {
            let q = net.forward(t.state)?[t.action];
            let y = td_target(t.reward, t.next_state, &target, gamma)?;
            total += (q - y) * (q - y);
        }
        Ok(total / batch.len() as f64)
    };
    let mut probe = net.clone();
    let h = 1e-5;
    for i in (0..probe.num_params()).step_by(7) {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = loss_of(&probe)?;
        probe.params_mut()[i] = orig - h;
        let minus = loss_of(&probe)?;
        probe.params_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-6);
        ensure(rel < 1e-3, &format!("gradient mismatch at parameter {i}: rel {rel}"))?;
    }
    Ok(())
}

fn check_run_alignment() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario = "check".into();
    cfg.m = 2;
    cfg.n = 2;
    cfg.rho = 0.9;
    cfg.frames = 200;
    cfg.seed = 11;
    cfg.agent.batch_size = 16;
    cfg.agent.replay_capacity = 128;
    cfg.agent.centralized_hidden = vec![32, 16];
    cfg.agent.distributed_hidden = vec![32, 16];

    let a = run_experiment(&cfg, None)?;
    ensure(
        a.trace.records.len() as u64 == cfg.frames * 4,
        "trace incomplete: expected one record per frame per policy",
    )?;
    let first = a.trace.channel_hashes[0].1;
    ensure(
        a.trace.channel_hashes.iter().all(|&(_, h)| h == first),
        "channel streams diverged across policies",
    )?;
    let b = run_experiment(&cfg, None)?;
    ensure(
        render_csv(&a.trace) == render_csv(&b.trace),
        "repeated run was not byte-identical",
    )
}
