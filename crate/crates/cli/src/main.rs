use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctpe::advantage::{sample_state_actions, write_grid_csv, ActionBox, AdvantageEstimate, ControlAffinePolicy};
use ctpe::basis::{FourierBasis, FunctionInSpan, MultiIndex};
use ctpe::covariance::{estimate_sigma_mkv, martingale_variance_proxy};
use ctpe::diffusion::simulate_trajectory;
use ctpe::harness::{self, coeff_map, ExperimentConfig};
use ctpe::metrics::ErrorReport;
use ctpe::population::{write_coeff_csv, ValueOracle};
use ctpe::{lstd, DiscretizationScheme, Error};

const EXIT_FLAGGED: u8 = 1;
const EXIT_VALIDATION: u8 = 3;

/// Continuous-time LSTD policy evaluation experiments.
#[derive(Debug, Parser)]
#[command(name = "ctpe", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set scheme.eta=[0.1,0.05]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; every artifact path is relative to it.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Exit 0 even when some rows carry error flags.
    #[arg(long, global = true)]
    allow_flags: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trajectory and write it as CSV.
    Simulate {
        /// Also write the fine-grid states.
        #[arg(long)]
        inner: bool,
    },
    /// Fit LSTD once at the first grid point and report its errors.
    Estimate,
    /// Sweep the trajectory length and fit the statistical rate.
    SweepRate,
    /// Sweep the step size and fit the population discretization order.
    SweepDiscretization,
    /// Tabulate Tr(H1^-1 H0) against the basis size.
    TraceGrowth {
        /// Dimension (overrides trace.d).
        #[arg(short = 'd', long = "dim")]
        dim: Option<usize>,
        /// Lattice degrees (overrides trace.n).
        #[arg(short = 'n', long = "degree", value_delimiter = ',')]
        degree: Vec<usize>,
    },
    /// Estimate lag covariances, the Markovian variance and the martingale proxy.
    DiagnoseCovariance,
    /// Fit a value function and tabulate the plug-in advantage on a grid.
    AdvantageDemo,
    /// Write the closed-form value oracles.
    Oracle,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<bool, Failure>;

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = out.join(name);
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(out: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(out.join(name), text)?;
    Ok(())
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig, Failure> {
    let base = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.with_overrides(&global.overrides)?)
}

fn first<T: Copy>(v: &[T], name: &str) -> Result<T, Failure> {
    v.first()
        .copied()
        .ok_or_else(|| Error::Config(format!("{name} must not be empty")).into())
}

fn simulate(cfg: &ExperimentConfig, out: &Path, inner: bool) -> Outcome {
    let traj = simulate_trajectory(
        &cfg.model,
        &cfg.reward_spec()?,
        first(&cfg.trajectory.total_time, "trajectory.T")?,
        first(&cfg.scheme.eta, "scheme.eta")?,
        cfg.trajectory.substeps,
        cfg.replication.seed_base,
        inner,
    )?;
    traj.write_csv(create(out, "trajectory.csv")?)?;
    if inner {
        traj.write_inner_csv(create(out, "trajectory_inner.csv")?)?;
    }
    Ok(false)
}

fn estimate(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    cfg.validate()?;
    let d = cfg.model.dimension();
    let eta = first(&cfg.scheme.eta, "scheme.eta")?;
    let scheme = DiscretizationScheme::new(first(&cfg.scheme.nu, "scheme.nu")?, eta, cfg.scheme.beta)?;
    let basis = FourierBasis::build(d, first(&cfg.basis.n, "basis.n")?)?;
    let traj = simulate_trajectory(
        &cfg.model,
        &cfg.reward_spec()?,
        first(&cfg.trajectory.total_time, "trajectory.T")?,
        eta,
        cfg.trajectory.substeps,
        cfg.replication.seed_base,
        false,
    )?;
    let est = lstd::estimate(&traj, &basis, &scheme, cfg.solver)?;
    let mut doc = serde_json::json!({ "estimate": est.to_json() });
    if cfg.model.has_spectrum() {
        let oracle = ValueOracle::new(&cfg.model, &cfg.reward_map(), &scheme)?;
        let projected = basis.to_coeff_map(&oracle.theta_bar(&basis));
        let report = ErrorReport::new(&basis.to_coeff_map(&est.theta), &projected, &oracle.true_coeffs);
        doc["report"] = serde_json::to_value(report).map_err(Error::from)?;
    }
    write_json(out, "estimate.json", &doc)?;
    Ok(!est.flags().is_empty())
}

fn sweep_rate(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let rows = harness::run_experiment(cfg)?;
    harness::write_rows_csv(&rows, create(out, &cfg.output.results)?)?;
    write_json(out, &cfg.output.summary, &harness::rate_summary(&rows))?;
    Ok(rows.iter().any(|r| r.is_flagged()))
}

fn sweep_discretization(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let sweep = harness::discretization_sweep(
        &cfg.model,
        &cfg.reward_map(),
        cfg.scheme.beta,
        &cfg.discretization.nu,
        &cfg.discretization.eta,
    )?;
    sweep.write_csv(create(out, "discretization.csv")?)?;
    write_json(out, &cfg.output.summary, &sweep.summary_json())?;
    Ok(false)
}

fn trace_growth(cfg: &ExperimentConfig, out: &Path, dim: Option<usize>, degree: &[usize]) -> Outcome {
    let d = dim.unwrap_or(cfg.trace.d);
    let ns = if degree.is_empty() { &cfg.trace.n[..] } else { degree };
    let rows = harness::trace_growth(d, ns)?;
    harness::write_trace_csv(&rows, create(out, "trace.csv")?)?;
    write_json(out, "trace_summary.json", &harness::trace_summary(&rows))?;
    Ok(false)
}

fn diagnose_covariance(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let d = cfg.model.dimension();
    let c = &cfg.covariance;
    let mut first_mode = vec![0; d];
    first_mode[0] = -1;
    let f_map = if c.f.is_empty() {
        [(MultiIndex(first_mode), 1.0)].into_iter().collect()
    } else {
        coeff_map(&c.f)
    };
    let g_map = if c.g.is_empty() {
        [(MultiIndex::zero(d), 1.0)].into_iter().collect()
    } else {
        coeff_map(&c.g)
    };
    let mut indices: Vec<MultiIndex> = f_map.keys().chain(g_map.keys()).cloned().collect();
    indices.sort();
    indices.dedup();
    let test_basis = FourierBasis::from_indices(d, indices)?;
    let f = FunctionInSpan::from_coeff_map(&test_basis, &f_map);
    let g = FunctionInSpan::from_coeff_map(&test_basis, &g_map);

    let eta = first(&cfg.scheme.eta, "scheme.eta")?;
    let scheme = DiscretizationScheme::new(first(&cfg.scheme.nu, "scheme.nu")?, eta, cfg.scheme.beta)?;
    let traj = simulate_trajectory(
        &cfg.model,
        &cfg.reward_spec()?,
        c.total_time,
        eta,
        c.substeps,
        cfg.replication.seed_base,
        true,
    )?;
    let mut diag = estimate_sigma_mkv(&traj, &f, &g, &cfg.model, &scheme, c.k_max, c.window)?;
    if cfg.model.has_spectrum() {
        let basis = FourierBasis::build(d, first(&cfg.basis.n, "basis.n")?)?;
        let oracle = ValueOracle::new(&cfg.model, &cfg.reward_map(), &scheme)?;
        let f_bar = FunctionInSpan::new(&basis, oracle.theta_bar(&basis))?;
        diag.martingale_proxy = Some(martingale_variance_proxy(&traj, &f_bar, &basis, &cfg.model, &scheme)?.estimate);
    }
    diag.write_csv(create(out, "covariance.csv")?)?;
    let mut summary = diag.summary_json();
    summary["f"] = diag.f_desc.clone().into();
    summary["g"] = diag.g_desc.clone().into();
    write_json(out, "covariance.json", &summary)?;
    Ok(!diag.stable)
}

fn advantage_demo(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let d = cfg.model.dimension();
    let a = &cfg.advantage;
    let eta = first(&cfg.scheme.eta, "scheme.eta")?;
    let scheme = DiscretizationScheme::new(first(&cfg.scheme.nu, "scheme.nu")?, eta, cfg.scheme.beta)?;
    let basis = FourierBasis::build(d, first(&cfg.basis.n, "basis.n")?)?;
    let traj = simulate_trajectory(
        &cfg.model,
        &cfg.reward_spec()?,
        first(&cfg.trajectory.total_time, "trajectory.T")?,
        eta,
        cfg.trajectory.substeps,
        cfg.replication.seed_base,
        false,
    )?;
    let est = lstd::estimate(&traj, &basis, &scheme, cfg.solver)?;
    let actions = ActionBox::symmetric(d, a.half_width)?;
    let mean = if a.mean.is_empty() { vec![0.0; d] } else { a.mean.clone() };
    let policy = ControlAffinePolicy::constant_mean(actions.clone(), mean.clone())?;
    let value = FunctionInSpan::new(&basis, est.theta.clone())?;
    let adv = AdvantageEstimate::new(value, policy.clone())?;

    let states: Vec<Vec<f64>> = (0..a.states.max(1))
        .map(|i| {
            let mut x = vec![0.0; d];
            x[0] = i as f64 / a.states.max(1) as f64;
            x
        })
        .collect();
    let grid_actions: Vec<Vec<f64>> = (0..a.actions.max(2))
        .map(|j| {
            let mut u = mean.clone();
            u[0] = -a.half_width + 2.0 * a.half_width * j as f64 / (a.actions.max(2) - 1) as f64;
            u
        })
        .collect();
    write_grid_csv(&adv.grid(&states, &grid_actions)?, create(out, "advantage.csv")?)?;

    let mut summary = serde_json::json!({ "diameter": policy.diameter() });
    if cfg.model.has_spectrum() {
        let oracle = ValueOracle::new(&cfg.model, &cfg.reward_map(), &scheme)?;
        let samples = sample_state_actions(&actions, 10_000, cfg.replication.seed_base);
        let report = ctpe::advantage::advantage_error_bound_check(
            &basis.to_coeff_map(&est.theta),
            &oracle.true_coeffs,
            &policy,
            &samples,
        )?;
        summary["bound"] = serde_json::to_value(report).map_err(Error::from)?;
    }
    write_json(out, "advantage.json", &summary)?;
    Ok(!est.flags().is_empty())
}

fn oracle(cfg: &ExperimentConfig, out: &Path) -> Outcome {
    let d = cfg.model.dimension();
    let scheme = DiscretizationScheme::new(
        first(&cfg.scheme.nu, "scheme.nu")?,
        first(&cfg.scheme.eta, "scheme.eta")?,
        cfg.scheme.beta,
    )?;
    let reward = cfg.reward_map();
    cfg.reward_spec()?;
    let oracle = ValueOracle::new(&cfg.model, &reward, &scheme)?;
    let basis = FourierBasis::build(d, first(&cfg.basis.n, "basis.n")?)?;
    write_coeff_csv(&oracle.true_coeffs, d, create(out, "oracle_true.csv")?)?;
    write_coeff_csv(&oracle.discretized_coeffs, d, create(out, "oracle_discretized.csv")?)?;
    let theta_bar = basis.to_coeff_map(&oracle.theta_bar(&basis));
    write_coeff_csv(&theta_bar, d, create(out, "oracle_theta_bar.csv")?)?;
    Ok(false)
}

fn dispatch(cli: &Cli) -> Outcome {
    let cfg = load_config(&cli.global)?;
    let out = cli.global.out.as_path();
    fs::create_dir_all(out)?;
    match &cli.command {
        Command::Simulate { inner } => simulate(&cfg, out, *inner),
        Command::Estimate => estimate(&cfg, out),
        Command::SweepRate => sweep_rate(&cfg, out),
        Command::SweepDiscretization => sweep_discretization(&cfg, out),
        Command::TraceGrowth { dim, degree } => trace_growth(&cfg, out, *dim, degree),
        Command::DiagnoseCovariance => diagnose_covariance(&cfg, out),
        Command::AdvantageDemo => advantage_demo(&cfg, out),
        Command::Oracle => oracle(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) if cli.global.allow_flags => ExitCode::SUCCESS,
        Ok(true) => {
            log::error!("some rows carry error flags");
            ExitCode::from(EXIT_FLAGGED)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
