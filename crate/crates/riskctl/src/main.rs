use std::path::{Path, PathBuf};
use std::process::ExitCode as ProcessExit;

use clap::{Args, Parser, Subcommand, ValueEnum};
use riskctl::config::{ExperimentConfig, ExperimentId, RiskTarget};
use riskctl::experiments::run_experiment;
use riskctl::io::{self, Manifest, Scope, SnapshotRow};
use riskctl::{CliError, ExitCode};
use riskctl_core::adversary::{
    collective_size, reported_fraction, sample_collective, Strategy, StrategySpec,
};
use riskctl_core::calibration::{
    calibrate_global, calibrate_user, empirical_risk_curve, ThresholdGrid,
};
use riskctl_core::dataset::{generate_synthetic, Dataset, SynthConfig};
use riskctl_core::metrics::evaluate_population;
use riskctl_core::recsys::SafePools;
use riskctl_core::stats::derive_seed;
use riskctl_core::{GroupId, UserId};

type Result<T> = std::result::Result<T, CliError>;

/// Conformal risk control for recommenders under adversarial "not
/// interested" reports.
#[derive(Parser)]
#[command(name = "riskctl", version, about)]
struct Cli {
    /// Worker threads; defaults to the number of cores. Output does not
    /// depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (interactions.csv, items.csv,
    /// manifest.json).
    GenData {
        /// TOML file with synthetic generator keys; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Select the filtering threshold for a risk target.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        /// Target risk in (0, 1].
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
        scope: ScopeArg,
        /// Users to calibrate with --scope user; defaults to every test
        /// user.
        #[arg(long, value_delimiter = ',')]
        users: Vec<u32>,
        /// Snapshot CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inject a collective's reports and recalibrate.
    Attack {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        /// Fraction of each member's items to report; ignored by tag.
        #[arg(long, default_value_t = 0.01)]
        gamma: f64,
        /// Target group of the tag strategy.
        #[arg(long)]
        group: Option<u32>,
        /// Fraction of calibration users in the collective.
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        /// Recalibrate at this target and report both thresholds.
        #[arg(long)]
        alpha: Option<f64>,
        /// Permit gamma above 0.1.
        #[arg(long)]
        allow_large_gamma: bool,
        /// Report-set CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve test users at a threshold and print quality and risk.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Global threshold.
        #[arg(long, conflicts_with = "snapshot")]
        lambda: Option<f64>,
        /// Calibration snapshot; user rows override the global row.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Metrics CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a study: rq1, rq2, rq3, rq4, appendix_b or validity.
    Experiment {
        name: String,
        /// TOML overrides of the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        seed: OptSeedArg,
        /// Replace the configured targets with one fixed alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Permit gamma above 0.1.
        #[arg(long)]
        allow_large_gamma: bool,
        /// Output directory; defaults to results/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize the aggregate rows of a results CSV.
    Report {
        /// Results CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Only rows whose metric starts with this prefix.
        #[arg(long)]
        metric: Option<String>,
    },
}

#[derive(Args)]
struct SeedArg {
    /// Master seed.
    #[arg(long, env = "RISKCTL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OptSeedArg {
    /// Master seed; overrides the config file.
    #[arg(long, env = "RISKCTL_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Directory with interactions.csv and items.csv.
    #[arg(long)]
    data: PathBuf,
    /// Seed of the calibration/test user split.
    #[arg(long, env = "RISKCTL_SEED", default_value_t = 0)]
    seed: u64,
    /// Fraction of users used for calibration.
    #[arg(long, default_value_t = 0.5)]
    calibration_fraction: f64,
    /// Slate size.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    User,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    Strategy::parse(s).map_err(|e| e.to_string())
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ProcessExit::from(ExitCode::Usage as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ProcessExit::from(ExitCode::Runtime as u8);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ProcessExit::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, seed, out } => gen_data(config.as_deref(), seed.seed, &out),
        Command::Calibrate {
            data,
            alpha,
            scope,
            users,
            out,
        } => calibrate(&data, alpha, scope, &users, out.as_deref()),
        Command::Attack {
            data,
            strategy,
            gamma,
            group,
            beta,
            alpha,
            allow_large_gamma,
            out,
        } => {
            let spec = match strategy {
                Strategy::Tag => StrategySpec::Tag {
                    group: GroupId(group.ok_or_else(|| {
                        CliError::Usage("--strategy tag needs --group".into())
                    })?),
                },
                s => StrategySpec::with_rate(s, gamma)?,
            };
            spec.validate(allow_large_gamma)?;
            attack(&data, spec, beta, alpha, out.as_deref())
        }
        Command::Evaluate {
            data,
            lambda,
            snapshot,
            out,
        } => evaluate(&data, lambda, snapshot.as_deref(), out.as_deref()),
        Command::Experiment {
            name,
            config,
            seed,
            alpha,
            allow_large_gamma,
            out,
        } => {
            let id: ExperimentId = name.parse()?;
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(id, p)?,
                None => ExperimentConfig::defaults(id),
            };
            if let Some(s) = seed.seed {
                cfg.seed = s;
            }
            if let Some(a) = alpha {
                cfg.targets = vec![RiskTarget::Alpha(a)];
            }
            cfg.allow_large_gamma |= allow_large_gamma;
            let out = out.unwrap_or_else(|| Path::new("results").join(id.name()));
            experiment(&cfg, &out)
        }
        Command::Report { input, metric } => report(&input, metric.as_deref()),
    }
}

fn gen_data(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg: SynthConfig = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            toml::from_str(&text).map_err(|e| CliError::Config {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    let dataset = generate_synthetic(&cfg, seed)?;
    let files = io::write_dataset(&dataset, out)?;
    Manifest::new("gen-data", seed, &cfg, &files)?.write(&out.join(io::MANIFEST_FILE))?;
    println!(
        "wrote {} interactions of {} users over {} items to {}",
        dataset.interactions().len(),
        dataset.users().len(),
        dataset.items().len(),
        out.display()
    );
    Ok(())
}

fn load_split(args: &DataArgs) -> Result<Dataset> {
    let d = io::load_dir(&args.data)?;
    Ok(d.split(args.calibration_fraction, args.seed)?)
}

fn calibrate(
    args: &DataArgs,
    alpha: f64,
    scope: ScopeArg,
    users: &[u32],
    out: Option<&Path>,
) -> Result<()> {
    let d = load_split(args)?;
    let grid = ThresholdGrid::default();
    let all: Vec<UserId> = d.users().iter().map(|u| u.id).collect();
    let pools = SafePools::build(&d, &all, &d)?;
    let rows = match scope {
        ScopeArg::Global => {
            let slates = d.slates_of_users(&d.calibration_users())?;
            let curve = empirical_risk_curve(&d, &slates, &grid, args.k, &d, &pools)?;
            let t = calibrate_global(&curve, alpha)?;
            println!("lambda_hat {} (Q = {})", t.lambda, t.samples);
            vec![SnapshotRow {
                scope: Scope::Global,
                alpha,
                lambda_hat: t.lambda,
                samples: t.samples,
                conservative: t.conservative,
            }]
        }
        ScopeArg::User => {
            let targets: Vec<UserId> = if users.is_empty() {
                d.test_users()
            } else {
                users.iter().map(|&u| UserId(u)).collect()
            };
            let mut rows = Vec::new();
            for u in targets {
                let (slates, pool) = match (d.slates_of(u), pools.get(u)) {
                    (Ok(s), Ok(p)) => (s, p.clone()),
                    _ => (&[][..], riskctl_core::recsys::SafePool::from_history(u, [])),
                };
                let t = calibrate_user(&d, u, slates, &grid, alpha, args.k, &d, &pool)?;
                rows.push(SnapshotRow {
                    scope: Scope::User(u),
                    alpha,
                    lambda_hat: t.lambda(),
                    samples: t.threshold.samples,
                    conservative: t.conservative(),
                });
            }
            let mut l: Vec<f64> = rows.iter().map(|r| r.lambda_hat).collect();
            l.sort_by(f64::total_cmp);
            let q = |p: f64| l[((l.len() - 1) as f64 * p).round() as usize];
            if !l.is_empty() {
                println!(
                    "users {}  conservative {}  lambda_hat q10 {} q50 {} q90 {}",
                    l.len(),
                    rows.iter().filter(|r| r.conservative).count(),
                    q(0.1),
                    q(0.5),
                    q(0.9)
                );
            }
            rows
        }
    };
    if let Some(out) = out {
        io::write_atomic(out, &io::snapshot_csv(&rows))?;
    }
    Ok(())
}

fn attack(
    args: &DataArgs,
    spec: StrategySpec,
    beta: f64,
    alpha: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let d = load_split(args)?;
    let cal = d.calibration_users();
    let collective = sample_collective(&cal, beta, spec, derive_seed(args.seed, 100))?;
    let reports = riskctl_core::adversary::select_reports(&collective, &d)?;
    let view = riskctl_core::adversary::inject_flags(&d, &reports)?;
    let grid = ThresholdGrid::default();
    let slates = d.slates_of_users(&cal)?;
    let all: Vec<UserId> = d.users().iter().map(|u| u.id).collect();
    let organic_pools = SafePools::build(&d, &all, &d)?;
    let mut pools = organic_pools.clone();
    for &m in &collective.members {
        pools.insert(riskctl_core::recsys::SafePool::for_user(&d, m, &view)?);
    }
    println!(
        "{}: {} members of {} calibration users, {} reports ({:.4} of calibration pairs)",
        riskctl_core::adversary::describe(&spec),
        collective.len(),
        cal.len(),
        reports.len(),
        reported_fraction(&reports, riskctl_core::adversary::distinct_pairs(&d, &cal)?)
    );
    debug_assert_eq!(collective.len(), collective_size(beta, cal.len()));
    if let Some(alpha) = alpha {
        let clean = empirical_risk_curve(&d, &slates, &grid, args.k, &d, &organic_pools)?;
        let dirty = empirical_risk_curve(&d, &slates, &grid, args.k, &view, &pools)?;
        let t0 = calibrate_global(&clean, alpha)?;
        let t1 = calibrate_global(&dirty, alpha)?;
        println!("lambda_hat without reports {}  with reports {}", t0.lambda, t1.lambda);
    }
    if let Some(out) = out {
        io::write_atomic(out, &io::reports_csv(&reports))?;
    }
    Ok(())
}

/// Global threshold and per-user thresholds.
type Snapshot = (Option<f64>, Vec<(UserId, f64)>);

fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let (mut global, mut users) = (None, Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |m: String| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let lambda: f64 = rec
            .get(3)
            .unwrap_or("")
            .parse()
            .map_err(|e| bad(format!("lambda_hat: {e}")))?;
        match rec.get(0) {
            Some("global") => global = Some(lambda),
            Some("user") => {
                let id: u32 = rec
                    .get(1)
                    .unwrap_or("")
                    .parse()
                    .map_err(|e| bad(format!("scope_id: {e}")))?;
                users.push((UserId(id), lambda));
            }
            other => return Err(bad(format!("scope must be global or user, got {other:?}"))),
        }
    }
    Ok((global, users))
}

fn evaluate(
    args: &DataArgs,
    lambda: Option<f64>,
    snapshot: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let d = load_split(args)?;
    let (global, users) = match (lambda, snapshot) {
        (Some(l), None) => (Some(l), Vec::new()),
        (None, Some(p)) => read_snapshot(p)?,
        _ => return Err(CliError::Usage("give exactly one of --lambda or --snapshot".into())),
    };
    let per_user: std::collections::BTreeMap<UserId, f64> = users.into_iter().collect();
    let fallback = global.unwrap_or(ThresholdGrid::default().max());
    let test = d.test_users();
    let slates = d.slates_of_users(&test)?;
    let all: Vec<UserId> = d.users().iter().map(|u| u.id).collect();
    let pools = SafePools::build(&d, &all, &d)?;
    let e = evaluate_population(&d, &slates, args.k, &pools, |u| {
        per_user.get(&u).copied().unwrap_or(fallback)
    })?;
    let metrics = [
        ("test_risk", e.risk()),
        ("test_risk_se", e.risk_se()),
        ("ndcg", e.ndcg()),
        ("recall", e.recall()),
        ("repeated_fraction", e.repeated_fraction()),
        ("zero_positive_slates", e.zero_positive_slates() as f64),
        ("events", e.slates() as f64),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"]).expect("in-memory write");
    for (m, v) in metrics {
        println!("{m:<22} {v}");
        w.write_record([m.to_string(), v.to_string()]).expect("in-memory write");
    }
    if let Some(out) = out {
        io::write_atomic(out, &w.into_inner().expect("in-memory flush"))?;
    }
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let started = std::time::Instant::now();
    let table = run_experiment(cfg)?;
    let csv_path = out.join(format!("{}.csv", cfg.experiment.name()));
    table.write(&csv_path)?;
    Manifest::new(
        &format!("experiment {}", cfg.experiment.name()),
        cfg.seed,
        cfg,
        std::slice::from_ref(&csv_path),
    )?
    .write(&out.join(io::MANIFEST_FILE))?;
    println!(
        "{}: {} rows in {:.1}s -> {}",
        cfg.experiment.name(),
        table.rows.len(),
        started.elapsed().as_secs_f64(),
        csv_path.display()
    );
    Ok(())
}

fn report(input: &Path, metric: Option<&str>) -> Result<()> {
    let mut rdr = csv::Reader::from_path(input).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(input, io),
        other => CliError::Runtime(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| CliError::Runtime(e.to_string()))?.clone();
    if headers.iter().ne(riskctl::results::RESULTS_HEADER) {
        return Err(CliError::Parse {
            path: input.to_path_buf(),
            line: 1,
            message: "not a results CSV".into(),
        });
    }
    println!("{:<10} {:<8} {:<10} {:<8} {:<8} {:<32} {:<16} {:>12} {:>12} {:>12}",
        "strategy", "alpha", "beta", "gamma", "k", "metric", "population", "mean", "ci_lower", "ci_upper");
    let rows: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let short = |s: &str| s.chars().take(8).collect::<String>();
    for (i, r) in rows.iter().enumerate() {
        let name = &r[8];
        let Some(base) = name.strip_suffix("_mean") else { continue };
        if r[1] != *"all" || metric.is_some_and(|m| !base.starts_with(m)) {
            continue;
        }
        let ci = |suffix: &str| {
            rows[i + 1..]
                .iter()
                .take(2)
                .find(|x| x[8] == format!("{base}_{suffix}"))
                .map_or(String::new(), |x| x[10].to_string())
        };
        println!("{:<10} {:<8} {:<10} {:<8} {:<8} {:<32} {:<16} {:>12} {:>12} {:>12}",
            &r[3], short(&r[4]), &r[5], &r[6], &r[7], base, &r[9], short(&r[10]), short(&ci("ci_lower")), short(&ci("ci_upper")));
    }
    Ok(())
}
