//! Experiment configuration, seeded sweeps and result tables.
//!
//! A sweep simulates one trajectory per `(T, η, seed)` and reuses it for
//! every basis size and discretization order, so comparisons across `n` and
//! `ν` share random numbers. Rows are emitted in canonical order regardless
//! of completion order.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{CoeffMap, FourierBasis, MultiIndex};
use crate::diffusion::{simulate_trajectory, DiffusionModel, RewardSpec};
use crate::discretization::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::lstd::{self, SolverPolicy};
use crate::metrics::{fit_line, fit_rate, sobolev_norm, trace_ratio, ErrorReport, LineFit, SobolevOrder};
use crate::population::ValueOracle;
use crate::rng::replicate_seed;

pub const WORKERS_ENV: &str = "CTPE_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffEntry {
    pub alpha: Vec<i32>,
    pub value: f64,
}

pub fn coeff_map(entries: &[CoeffEntry]) -> CoeffMap {
    let mut map = CoeffMap::new();
    for e in entries {
        *map.entry(MultiIndex(e.alpha.clone())).or_insert(0.0) += e.value;
    }
    map
}

fn check_entries(entries: &[CoeffEntry], dim: usize, what: &str) -> Result<()> {
    match entries.iter().find(|e| e.alpha.len() != dim) {
        Some(e) => Err(Error::Config(format!(
            "{what}: index {:?} does not have dimension {dim}",
            e.alpha
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub coeffs: Vec<CoeffEntry>,
    pub noise: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            coeffs: vec![CoeffEntry {
                alpha: vec![0],
                value: 0.5,
            }],
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeGrid {
    pub nu: Vec<usize>,
    pub eta: Vec<f64>,
    pub beta: f64,
}

impl Default for SchemeGrid {
    fn default() -> Self {
        SchemeGrid {
            nu: vec![2],
            eta: vec![0.05],
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisGrid {
    pub n: Vec<usize>,
}

impl Default for BasisGrid {
    fn default() -> Self {
        BasisGrid { n: vec![2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryGrid {
    #[serde(rename = "T")]
    pub total_time: Vec<f64>,
    pub substeps: usize,
}

impl Default for TrajectoryGrid {
    fn default() -> Self {
        TrajectoryGrid {
            total_time: vec![64.0],
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replication {
    pub seed_base: u64,
    pub num_seeds: usize,
}

impl Default for Replication {
    fn default() -> Self {
        Replication {
            seed_base: 0,
            num_seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub results: String,
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            results: "results.csv".into(),
            summary: "summary.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub d: usize,
    pub n: Vec<usize>,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            d: 2,
            n: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub nu: Vec<usize>,
    pub eta: Vec<f64>,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            nu: vec![2],
            eta: vec![0.08, 0.04, 0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceConfig {
    /// Test function `f`; defaults to the first cosine mode.
    pub f: Vec<CoeffEntry>,
    /// Test function `g`; defaults to the constant 1.
    pub g: Vec<CoeffEntry>,
    pub k_max: usize,
    /// Window length in observation intervals.
    pub window: usize,
    pub substeps: usize,
    #[serde(rename = "T")]
    pub total_time: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        CovarianceConfig {
            f: Vec::new(),
            g: Vec::new(),
            k_max: 10,
            window: 1,
            substeps: 16,
            total_time: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvantageConfig {
    pub half_width: f64,
    pub mean: Vec<f64>,
    pub states: usize,
    pub actions: usize,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        AdvantageConfig {
            half_width: 1.0,
            mean: Vec::new(),
            states: 21,
            actions: 11,
        }
    }
}

/// One experiment document (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: DiffusionModel,
    pub reward: RewardConfig,
    pub scheme: SchemeGrid,
    pub basis: BasisGrid,
    pub trajectory: TrajectoryGrid,
    pub replication: Replication,
    pub solver: SolverPolicy,
    pub output: OutputConfig,
    /// Record wall-clock time per row; off by default so reruns are byte-identical.
    pub timing: bool,
    /// Constant `c₀` in the step-size warning `η > c₀ m^{−4/d}`.
    pub stepsize_constant: f64,
    pub trace: TraceConfig,
    pub discretization: DiscretizationConfig,
    pub covariance: CovarianceConfig,
    pub advantage: AdvantageConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: DiffusionModel::TorusBrownian { d: 1, sigma: 1.0 },
            reward: RewardConfig::default(),
            scheme: SchemeGrid::default(),
            basis: BasisGrid::default(),
            trajectory: TrajectoryGrid::default(),
            replication: Replication::default(),
            solver: SolverPolicy::default(),
            output: OutputConfig::default(),
            timing: false,
            stepsize_constant: 1.0,
            trace: TraceConfig::default(),
            discretization: DiscretizationConfig::default(),
            covariance: CovarianceConfig::default(),
            advantage: AdvantageConfig::default(),
        }
    }
}

fn nonempty<T>(v: &[T], name: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::Config(format!("{name} must not be empty")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    /// Applies `key=value` overrides with dotted keys. Values parse as JSON
    /// and fall back to plain strings; unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn reward_map(&self) -> CoeffMap {
        coeff_map(&self.reward.coeffs)
    }

    pub fn reward_spec(&self) -> Result<RewardSpec> {
        RewardSpec::fourier(self.reward_map(), self.reward.noise)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        nonempty(&self.scheme.nu, "scheme.nu")?;
        nonempty(&self.scheme.eta, "scheme.eta")?;
        nonempty(&self.basis.n, "basis.n")?;
        nonempty(&self.trajectory.total_time, "trajectory.T")?;
        if self.replication.num_seeds == 0 {
            return Err(Error::Config("replication.num_seeds must be >= 1".into()));
        }
        check_entries(&self.reward.coeffs, self.model.dimension(), "reward.coeffs")?;
        self.reward_spec()?;
        for &nu in &self.scheme.nu {
            for &eta in &self.scheme.eta {
                DiscretizationScheme::new(nu, eta, self.scheme.beta)?;
            }
        }
        for &n in &self.basis.n {
            FourierBasis::build(self.model.dimension(), n)?;
        }
        Ok(())
    }

    /// Grid points violating `η ≤ c₀ m^{−4/d}`.
    pub fn stepsize_warnings(&self) -> Vec<String> {
        let d = self.model.dimension();
        let mut out = Vec::new();
        for &n in &self.basis.n {
            let m = crate::basis::lattice_count(d, n) as f64;
            let limit = self.stepsize_constant * m.powf(-4.0 / d as f64);
            for &eta in &self.scheme.eta {
                if eta > limit {
                    out.push(format!("eta={eta} exceeds {limit:.3e} for n={n} (m={m})"));
                }
            }
        }
        out
    }
}

fn set_path(doc: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("bad override key `{key}`")));
        }
        if cur.is_null() {
            *cur = serde_json::Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}` descends into a non-table")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
    }
    Ok(())
}

/// One `(grid point, seed)` outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub d: usize,
    pub sigma: f64,
    pub n: usize,
    pub m: usize,
    pub nu: usize,
    pub eta: f64,
    pub beta: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub seed: u64,
    pub l2_err: f64,
    pub h1_err: f64,
    pub h2_err: f64,
    pub approx_h1: f64,
    pub stat_h1: f64,
    pub cond: f64,
    pub flag: String,
    pub wall_ms: f64,
}

pub const CSV_HEADER: &str =
    "model,d,sigma,n,m,nu,eta,beta,T,seed,l2_err,h1_err,h2_err,approx_h1,stat_h1,cond,flag,wall_ms";

impl ResultRow {
    pub fn is_flagged(&self) -> bool {
        !self.flag.is_empty()
    }

    fn csv_line(&self) -> String {
        let flag = self.flag.replace([',', '\n'], ";");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.d,
            fmt_f64(self.sigma),
            self.n,
            self.m,
            self.nu,
            fmt_f64(self.eta),
            fmt_f64(self.beta),
            fmt_f64(self.total_time),
            self.seed,
            fmt_f64(self.l2_err),
            fmt_f64(self.h1_err),
            fmt_f64(self.h2_err),
            fmt_f64(self.approx_h1),
            fmt_f64(self.stat_h1),
            fmt_f64(self.cond),
            flag,
            fmt_f64(self.wall_ms),
        )
    }

    fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.total_time
            .total_cmp(&other.total_time)
            .then(self.eta.total_cmp(&other.eta))
            .then(self.nu.cmp(&other.nu))
            .then(self.n.cmp(&other.n))
            .then(self.seed.cmp(&other.seed))
    }
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Worker count from `CTPE_WORKERS`, if set to a positive integer.
pub fn worker_limit() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `op` on a pool capped by `CTPE_WORKERS`, or the global pool.
pub fn with_workers<T: Send>(op: impl FnOnce() -> T + Send) -> T {
    match worker_limit().and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(op),
        None => op(),
    }
}

struct Task {
    total_time: f64,
    eta: f64,
    seed: u64,
}

/// Simulates, fits and scores every `(grid point, seed)`.
///
/// Only configuration problems are errors; failures at a grid point become
/// rows with a non-empty `flag`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    for w in config.stepsize_warnings() {
        log::warn!("step-size condition: {w}");
    }
    let d = config.model.dimension();
    let reward = config.reward_spec()?;
    let reward_map = config.reward_map();
    let bases: Vec<(usize, FourierBasis)> = config
        .basis
        .n
        .iter()
        .map(|&n| Ok((n, FourierBasis::build(d, n)?)))
        .collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    for &total_time in &config.trajectory.total_time {
        for &eta in &config.scheme.eta {
            for i in 0..config.replication.num_seeds {
                tasks.push(Task {
                    total_time,
                    eta,
                    seed: replicate_seed(config.replication.seed_base, i as u64),
                });
            }
        }
    }

    let run_task = |task: &Task| -> Vec<ResultRow> {
        let base_row = |n: usize, m: usize, nu: usize| ResultRow {
            model: config.model.name().to_string(),
            d,
            sigma: config.model.sigma(),
            n,
            m,
            nu,
            eta: task.eta,
            beta: config.scheme.beta,
            total_time: task.total_time,
            seed: task.seed,
            l2_err: f64::NAN,
            h1_err: f64::NAN,
            h2_err: f64::NAN,
            approx_h1: f64::NAN,
            stat_h1: f64::NAN,
            cond: f64::NAN,
            flag: String::new(),
            wall_ms: 0.0,
        };
        let start = Instant::now();
        let traj = simulate_trajectory(
            &config.model,
            &reward,
            task.total_time,
            task.eta,
            config.trajectory.substeps,
            task.seed,
            false,
        );
        let mut rows = Vec::new();
        for &nu in &config.scheme.nu {
            let scheme = DiscretizationScheme::new(nu, task.eta, config.scheme.beta).expect("validated");
            let oracle = ValueOracle::new(&config.model, &reward_map, &scheme);
            for (n, basis) in &bases {
                let fit_start = Instant::now();
                let mut row = base_row(*n, basis.len(), nu);
                match (&traj, &oracle) {
                    (Err(e), _) => row.flag = format!("simulate: {e}"),
                    (Ok(traj), oracle) => match lstd::estimate(traj, basis, &scheme, config.solver) {
                        Err(e) => row.flag = format!("solve: {e}"),
                        Ok(est) => {
                            row.cond = est.condition;
                            row.flag = est.flags().join(";");
                            match oracle {
                                Err(e) => {
                                    let msg = format!("oracle: {e}");
                                    row.flag = if row.flag.is_empty() { msg } else { format!("{};{msg}", row.flag) };
                                }
                                Ok(oracle) => {
                                    let projected = basis.to_coeff_map(&oracle.theta_bar(basis));
                                    let fitted = basis.to_coeff_map(&est.theta);
                                    let report = ErrorReport::new(&fitted, &projected, &oracle.true_coeffs);
                                    row.l2_err = report.l2_error;
                                    row.h1_err = report.h1_error;
                                    row.h2_err = report.h2_error;
                                    row.approx_h1 = report.approximation;
                                    row.stat_h1 = report.statistical;
                                }
                            }
                        }
                    },
                }
                if config.timing {
                    let shared = if rows.is_empty() { start.elapsed() } else { Default::default() };
                    row.wall_ms = (shared + fit_start.elapsed()).as_secs_f64() * 1e3;
                }
                rows.push(row);
            }
        }
        rows
    };

    let mut rows: Vec<ResultRow> = with_workers(|| tasks.par_iter().flat_map_iter(run_task).collect());
    rows.sort_by(|a, b| a.canonical_cmp(b));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    #[serde(rename = "T")]
    TotalTime,
    Eta,
    M,
    N,
}

impl GroupKey {
    fn of(&self, r: &ResultRow) -> f64 {
        match self {
            GroupKey::TotalTime => r.total_time,
            GroupKey::Eta => r.eta,
            GroupKey::M => r.m as f64,
            GroupKey::N => r.n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    L2Err,
    H1Err,
    H2Err,
    ApproxH1,
    StatH1,
}

impl Response {
    fn of(&self, r: &ResultRow) -> f64 {
        match self {
            Response::L2Err => r.l2_err,
            Response::H1Err => r.h1_err,
            Response::H2Err => r.h2_err,
            Response::ApproxH1 => r.approx_h1,
            Response::StatH1 => r.stat_h1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRms {
    pub key: f64,
    pub rms: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateFit {
    pub group_by: GroupKey,
    pub response: Response,
    pub groups: Vec<GroupRms>,
    pub fit: LineFit,
}

/// RMS of `response` within each `group_by` value, then a log-log fit.
/// Rows with non-finite responses are skipped.
pub fn aggregate_and_fit(rows: &[ResultRow], group_by: GroupKey, response: Response) -> Result<AggregateFit> {
    let mut groups: Vec<GroupRms> = Vec::new();
    for r in rows {
        let v = response.of(r);
        if !v.is_finite() {
            continue;
        }
        let key = group_by.of(r);
        let g = match groups.iter_mut().find(|g| g.key == key) {
            Some(g) => g,
            None => {
                groups.push(GroupRms {
                    key,
                    rms: 0.0,
                    count: 0,
                });
                groups.last_mut().expect("just pushed")
            }
        };
        g.rms += v * v;
        g.count += 1;
    }
    if groups.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 groups, got {}",
            groups.len()
        )));
    }
    groups.sort_by(|a, b| a.key.total_cmp(&b.key));
    for g in &mut groups {
        g.rms = (g.rms / g.count as f64).sqrt();
    }
    let xs: Vec<f64> = groups.iter().map(|g| g.key).collect();
    let ys: Vec<f64> = groups.iter().map(|g| g.rms).collect();
    let fit = fit_rate(&xs, &ys)?;
    Ok(AggregateFit {
        group_by,
        response,
        groups,
        fit,
    })
}

/// Rate fits in `T` of the statistical and total errors for every
/// `(n, ν, η)` slice with at least three horizons.
pub fn rate_summary(rows: &[ResultRow]) -> serde_json::Value {
    let mut slices: Vec<(usize, usize, f64)> = rows.iter().map(|r| (r.n, r.nu, r.eta)).collect();
    slices.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    slices.dedup();
    let fits: Vec<serde_json::Value> = slices
        .into_iter()
        .filter_map(|(n, nu, eta)| {
            let slice: Vec<ResultRow> = rows
                .iter()
                .filter(|r| r.n == n && r.nu == nu && r.eta == eta)
                .cloned()
                .collect();
            let stat = aggregate_and_fit(&slice, GroupKey::TotalTime, Response::StatH1).ok()?;
            let total = aggregate_and_fit(&slice, GroupKey::TotalTime, Response::H1Err).ok();
            Some(serde_json::json!({
                "n": n,
                "nu": nu,
                "eta": eta,
                "stat_h1": stat,
                "h1_err": total,
            }))
        })
        .collect();
    serde_json::json!({
        "rows": rows.len(),
        "flagged": rows.iter().filter(|r| r.is_flagged()).count(),
        "fits": fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationRow {
    pub nu: usize,
    pub eta: f64,
    pub h1_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSweep {
    pub rows: Vec<DiscretizationRow>,
    /// Log-log slope of `‖f̄(η) − f*‖_{H¹}` against `η`, per order.
    pub fits: Vec<(usize, LineFit)>,
}

/// Population fixed-point error over a grid of steps for each order.
pub fn discretization_sweep(
    model: &DiffusionModel,
    reward: &CoeffMap,
    discount: f64,
    orders: &[usize],
    steps: &[f64],
) -> Result<DiscretizationSweep> {
    nonempty(orders, "discretization.nu")?;
    nonempty(steps, "discretization.eta")?;
    let truth = crate::population::true_value_coeffs(model, reward, discount)?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &nu in orders {
        let mut errs = Vec::new();
        for &eta in steps {
            let scheme = DiscretizationScheme::new(nu, eta, discount)?;
            let bar = crate::population::discretized_fixed_point_coeffs(&scheme, model, reward)?;
            let err = sobolev_norm(&crate::basis::coeff_diff(&bar, &truth), SobolevOrder::H1);
            errs.push(err);
            rows.push(DiscretizationRow { nu, eta, h1_err: err });
        }
        if steps.len() >= 3 {
            fits.push((nu, fit_rate(steps, &errs)?));
        }
    }
    Ok(DiscretizationSweep { rows, fits })
}

impl DiscretizationSweep {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "nu,eta,h1_err")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.nu, fmt_f64(r.eta), fmt_f64(r.h1_err))?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let fits: Vec<serde_json::Value> = self
            .fits
            .iter()
            .map(|(nu, f)| serde_json::json!({"nu": nu, "slope": f.slope, "intercept": f.intercept, "r2": f.r2}))
            .collect();
        serde_json::json!({ "fits": fits })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub trace: f64,
}

pub fn trace_growth(d: usize, degrees: &[usize]) -> Result<Vec<TraceRow>> {
    nonempty(degrees, "trace.n")?;
    degrees
        .iter()
        .map(|&n| {
            let basis = FourierBasis::build(d, n)?;
            Ok(TraceRow {
                d,
                n,
                m: basis.len(),
                trace: trace_ratio(&basis),
            })
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "d,n,m,trace")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.d, r.n, r.m, fmt_f64(r.trace))?;
    }
    Ok(())
}

/// Increase over the table, affine fit in `ln m` and power-law fit in `m`.
pub fn trace_summary(rows: &[TraceRow]) -> serde_json::Value {
    let increase = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b.trace - a.trace,
        _ => f64::NAN,
    };
    let ms: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.trace).collect();
    let ln_m: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
    serde_json::json!({
        "increase": increase,
        "log_fit": fit_line(&ln_m, &ts).ok(),
        "power_fit": fit_rate(&ms, &ts).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            reward: RewardConfig {
                coeffs: vec![
                    CoeffEntry {
                        alpha: vec![0],
                        value: 0.3,
                    },
                    CoeffEntry {
                        alpha: vec![-1],
                        value: 0.2,
                    },
                ],
                noise: 0.1,
            },
            trajectory: TrajectoryGrid {
                total_time: vec![8.0],
                substeps: 1,
            },
            replication: Replication {
                seed_base: 11,
                num_seeds: 2,
            },
            ..Default::default()
        }
    }

    #[test]
    fn two_seeds_two_rows() {
        let rows = run_experiment(&small_config()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_ne!(rows[0].stat_h1, rows[1].stat_h1);
        assert_eq!(rows[0].approx_h1, rows[1].approx_h1);
        assert!(rows.iter().all(|r| !r.is_flagged() && r.wall_ms == 0.0));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = small_config();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_rows_csv(&run_experiment(&cfg).unwrap(), &mut a).unwrap();
        write_rows_csv(&run_experiment(&cfg).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn grid_and_rate_fit() {
        let mut cfg = small_config();
        cfg.trajectory.total_time = vec![4.0, 8.0, 16.0];
        cfg.replication.num_seeds = 5;
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 15);
        let fit = aggregate_and_fit(&rows, GroupKey::TotalTime, Response::StatH1).unwrap();
        assert_eq!(fit.groups.len(), 3);
        assert!(fit.groups.iter().all(|g| g.count == 5));
        let xs: Vec<f64> = fit.groups.iter().map(|g| g.key).collect();
        let ys: Vec<f64> = fit.groups.iter().map(|g| g.rms).collect();
        assert_eq!(fit_rate(&xs, &ys).unwrap(), fit.fit);
        let manual = (rows[..5].iter().map(|r| r.stat_h1 * r.stat_h1).sum::<f64>() / 5.0).sqrt();
        assert!((fit.groups[0].rms - manual).abs() < 1e-15);
    }

    #[test]
    fn too_few_groups() {
        let rows = run_experiment(&small_config()).unwrap();
        assert!(aggregate_and_fit(&rows, GroupKey::TotalTime, Response::StatH1).is_err());
    }

    #[test]
    fn failures_become_flagged_rows() {
        let mut cfg = small_config();
        // duplicate-free basis but a trajectory too short for ν = 8 blocks
        cfg.scheme.nu = vec![2, 8];
        cfg.scheme.eta = vec![0.5];
        cfg.trajectory.total_time = vec![3.0];
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().any(|r| r.is_flagged() && r.nu == 8));
        assert!(rows.iter().any(|r| !r.is_flagged() && r.nu == 2));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.basis.n.clear();
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.reward.coeffs[0].alpha = vec![0, 0];
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn toml_overrides_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            model = { kind = "torus_brownian", d = 1, sigma = 0.5 }
            [scheme]
            nu = [2, 3]
            eta = [0.1]
            beta = 1.0
            [trajectory]
            T = [10.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scheme.nu, vec![2, 3]);
        assert_eq!(cfg.trajectory.total_time, vec![10.0]);
        let cfg = cfg.with_overrides(&["scheme.beta=2", "trace.n=[1,2]", "model.sigma=0.25"]).unwrap();
        assert_eq!(cfg.scheme.beta, 2.0);
        assert_eq!(cfg.trace.n, vec![1, 2]);
        assert_eq!(cfg.model.sigma(), 0.25);
        assert!(cfg.with_overrides(&["scheme.gamma=1"]).is_err());
        assert!(cfg.with_overrides(&["nonsense"]).is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_json(r#"{"scheme": {"nu": [2], "zeta": 1}}"#).is_err());
    }

    #[test]
    fn stepsize_warning_fires_for_large_bases() {
        let mut cfg = small_config();
        cfg.basis.n = vec![1, 8];
        cfg.scheme.eta = vec![0.01];
        let w = cfg.stepsize_warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("n=8"));
    }

    #[test]
    fn discretization_sweep_orders() {
        let model = DiffusionModel::torus_brownian(1, 1.0).unwrap();
        let reward = coeff_map(&[CoeffEntry {
            alpha: vec![-1],
            value: std::f64::consts::FRAC_1_SQRT_2,
        }]);
        let s = discretization_sweep(&model, &reward, 1.0, &[2], &[0.08, 0.04, 0.02, 0.01]).unwrap();
        assert_eq!(s.rows.len(), 4);
        assert!((s.fits[0].1.slope - 2.0).abs() < 0.3);
    }

    #[test]
    fn trace_table() {
        let rows = trace_growth(1, &[1]).unwrap();
        assert_eq!(rows[0].m, 3);
        assert!((rows[0].trace - 1.0494).abs() < 1e-4);
        let rows = trace_growth(2, &[8, 16, 32, 64]).unwrap();
        let s = trace_summary(&rows);
        assert!(s["log_fit"]["r2"].as_f64().unwrap() > 0.95);
    }
}
