//! Diffusion models, reward models and stationary trajectory simulation.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{CoeffMap, MultiIndex};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::rng::{self, Purpose};

pub const DEFAULT_SUBSTEPS: usize = 16;
pub const DEFAULT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpace {
    Torus,
    Euclidean,
}

/// `dX_t = b(X_t) dt + Λ(X_t)^{1/2} dB_t` with isotropic `Λ = σ² I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionModel {
    /// Brownian motion on `[0,1)^d`; uniform stationary law, closed-form
    /// spectrum `λ_α = (σ²/2)(2π)²‖α‖₂²`.
    TorusBrownian { d: usize, sigma: f64 },
    /// Overdamped Langevin dynamics on the torus with potential
    /// `U(x) = amplitude · Σ_j cos(2π x_j)`, drift `−∇U`.
    ///
    /// Started from uniform and burned in for `burn_in` time units; the
    /// default is `10 / (σ² · poincare_hint)`.
    TorusLangevin {
        d: usize,
        sigma: f64,
        amplitude: f64,
        poincare_hint: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        burn_in: Option<f64>,
    },
    /// `dX = −θ X dt + σ dB` on `R^d`, stationary law `N(0, σ²/(2θ) I)`.
    OrnsteinUhlenbeck { d: usize, theta: f64, sigma: f64 },
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Reduces a coordinate into `[0,1)`.
pub fn wrap_unit(v: f64) -> f64 {
    let w = v.rem_euclid(1.0);
    // rem_euclid rounds tiny negatives up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl DiffusionModel {
    pub fn torus_brownian(d: usize, sigma: f64) -> Result<Self> {
        let m = DiffusionModel::TorusBrownian { d, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn torus_langevin(d: usize, sigma: f64, amplitude: f64, poincare_hint: f64) -> Result<Self> {
        let m = DiffusionModel::TorusLangevin {
            d,
            sigma,
            amplitude,
            poincare_hint,
            burn_in: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn ornstein_uhlenbeck(d: usize, theta: f64, sigma: f64) -> Result<Self> {
        let m = DiffusionModel::OrnsteinUhlenbeck { d, theta, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension() == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        check_positive("sigma", self.sigma())?;
        match *self {
            DiffusionModel::TorusBrownian { .. } => Ok(()),
            DiffusionModel::TorusLangevin {
                amplitude,
                poincare_hint,
                burn_in,
                ..
            } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidArgument("amplitude must be finite".into()));
                }
                check_positive("poincare_hint", poincare_hint)?;
                if let Some(b) = burn_in {
                    if !(b.is_finite() && b >= 0.0) {
                        return Err(Error::InvalidArgument(format!("burn_in must be >= 0, got {b}")));
                    }
                }
                Ok(())
            }
            DiffusionModel::OrnsteinUhlenbeck { theta, .. } => check_positive("theta", theta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiffusionModel::TorusBrownian { .. } => "torus_brownian",
            DiffusionModel::TorusLangevin { .. } => "torus_langevin",
            DiffusionModel::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
        }
    }

    pub fn dimension(&self) -> usize {
        match *self {
            DiffusionModel::TorusBrownian { d, .. }
            | DiffusionModel::TorusLangevin { d, .. }
            | DiffusionModel::OrnsteinUhlenbeck { d, .. } => d,
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            DiffusionModel::TorusBrownian { sigma, .. }
            | DiffusionModel::TorusLangevin { sigma, .. }
            | DiffusionModel::OrnsteinUhlenbeck { sigma, .. } => sigma,
        }
    }

    pub fn state_space(&self) -> StateSpace {
        match self {
            DiffusionModel::OrnsteinUhlenbeck { .. } => StateSpace::Euclidean,
            _ => StateSpace::Torus,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        match *self {
            DiffusionModel::TorusBrownian { d, .. } => vec![0.0; d],
            DiffusionModel::TorusLangevin { amplitude, .. } => x
                .iter()
                .map(|&xi| amplitude * 2.0 * PI * (2.0 * PI * xi).sin())
                .collect(),
            DiffusionModel::OrnsteinUhlenbeck { theta, .. } => x.iter().map(|&xi| -theta * xi).collect(),
        }
    }

    pub fn diffusion_sqrt(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dimension(), self.dimension()) * self.sigma()
    }

    /// `Λ(x) = Λ^{1/2}(x) Λ^{1/2}(x)ᵀ`.
    pub fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        let s = self.diffusion_sqrt(x);
        &s * s.transpose()
    }

    /// `(λ_min, λ_max)` bounds on the spectrum of `Λ`.
    pub fn ellipticity(&self) -> (f64, f64) {
        let s2 = self.sigma() * self.sigma();
        (s2, s2)
    }

    /// Generator eigenvalue `λ_α ≥ 0` on the Fourier mode `α`, when known.
    pub fn spectrum(&self, alpha: &MultiIndex) -> Option<f64> {
        match *self {
            DiffusionModel::TorusBrownian { sigma, .. } => {
                Some(0.5 * sigma * sigma * (2.0 * PI).powi(2) * alpha.l2_squared())
            }
            _ => None,
        }
    }

    pub fn has_spectrum(&self) -> bool {
        matches!(self, DiffusionModel::TorusBrownian { .. })
    }

    /// Whether increments are sampled exactly rather than by Euler–Maruyama.
    pub fn exact_increments(&self) -> bool {
        matches!(self, DiffusionModel::TorusBrownian { .. })
    }

    pub fn burn_in_time(&self) -> f64 {
        match *self {
            DiffusionModel::TorusLangevin {
                sigma,
                poincare_hint,
                burn_in,
                ..
            } => burn_in.unwrap_or(10.0 / (sigma * sigma * poincare_hint)),
            _ => 0.0,
        }
    }

    /// Initial draw: exact from the stationary law for Brownian and OU
    /// models, uniform (before burn-in) for Langevin.
    pub fn sample_initial<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dimension();
        match *self {
            DiffusionModel::TorusBrownian { .. } | DiffusionModel::TorusLangevin { .. } => {
                (0..d).map(|_| rng.random::<f64>()).collect()
            }
            DiffusionModel::OrnsteinUhlenbeck { theta, sigma, .. } => {
                let sd = sigma / (2.0 * theta).sqrt();
                (0..d)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }

    fn advance<R: Rng>(&self, x: &mut [f64], dt: f64, rng: &mut R, noise: &mut [f64]) {
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let sqrt_dt = dt.sqrt();
        if self.exact_increments() {
            let s = self.sigma() * sqrt_dt;
            for (xi, z) in x.iter_mut().zip(noise.iter()) {
                *xi += s * z;
            }
        } else {
            let drift = self.drift(x);
            let root = self.diffusion_sqrt(x);
            let kick = root * DVector::from_column_slice(noise);
            for ((xi, b), k) in x.iter_mut().zip(&drift).zip(kick.iter()) {
                *xi += b * dt + sqrt_dt * k;
            }
        }
        if self.state_space() == StateSpace::Torus {
            x.iter_mut().for_each(|xi| *xi = wrap_unit(*xi));
        }
    }
}

/// Conditional mean of the observed reward.
#[derive(Clone)]
pub enum MeanReward {
    /// `r(x) = Σ_α r̂_α ψ_α(x)` in the real Fourier encoding (torus only).
    Fourier(CoeffMap),
    /// Arbitrary bounded function with a declared `sup |r|`.
    Custom {
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        sup_bound: f64,
    },
}

impl fmt::Debug for MeanReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanReward::Fourier(c) => f.debug_tuple("Fourier").field(c).finish(),
            MeanReward::Custom { sup_bound, .. } => f
                .debug_struct("Custom")
                .field("sup_bound", sup_bound)
                .finish_non_exhaustive(),
        }
    }
}

/// Reward observation model: `R = r(X) + Uniform(−ε, ε)`.
#[derive(Debug, Clone)]
pub struct RewardSpec {
    mean: MeanReward,
    noise_half_width: f64,
}

/// Upper bound on `sup_x |Σ r̂_α ψ_α(x)|`, pairing each cosine/sine couple.
pub fn fourier_sup_bound(coeffs: &CoeffMap) -> f64 {
    let mut total = 0.0;
    for (a, &c) in coeffs {
        if a.is_zero() {
            total += c.abs();
        } else if a.is_cosine() {
            let s = coeffs.get(&a.neg()).copied().unwrap_or(0.0);
            total += std::f64::consts::SQRT_2 * c.hypot(s);
        } else if !coeffs.contains_key(&a.neg()) {
            total += std::f64::consts::SQRT_2 * c.abs();
        }
    }
    total
}

impl RewardSpec {
    pub fn fourier(coeffs: CoeffMap, noise_half_width: f64) -> Result<Self> {
        let spec = RewardSpec {
            mean: MeanReward::Fourier(coeffs),
            noise_half_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(dim: usize, value: f64, noise_half_width: f64) -> Result<Self> {
        let mut coeffs = CoeffMap::new();
        coeffs.insert(MultiIndex::zero(dim), value);
        Self::fourier(coeffs, noise_half_width)
    }

    pub fn custom<F>(f: F, sup_bound: f64, noise_half_width: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let spec = RewardSpec {
            mean: MeanReward::Custom {
                f: Arc::new(f),
                sup_bound,
            },
            noise_half_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let eps = self.noise_half_width;
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "noise half-width must lie in [0,1), got {eps}"
            )));
        }
        let bound = self.sup_bound() + eps;
        if !(bound <= 1.0) {
            return Err(Error::RewardNotAdmissible { bound });
        }
        Ok(())
    }

    pub fn sup_bound(&self) -> f64 {
        match &self.mean {
            MeanReward::Fourier(c) => fourier_sup_bound(c),
            MeanReward::Custom { sup_bound, .. } => *sup_bound,
        }
    }

    pub fn noise_half_width(&self) -> f64 {
        self.noise_half_width
    }

    pub fn fourier_coeffs(&self) -> Option<&CoeffMap> {
        match &self.mean {
            MeanReward::Fourier(c) => Some(c),
            MeanReward::Custom { .. } => None,
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match &self.mean {
            MeanReward::Fourier(c) => crate::basis::eval_coeff_map(c, x),
            MeanReward::Custom { f, .. } => f(x),
        }
    }

    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> f64 {
        let r = self.mean(x);
        if self.noise_half_width == 0.0 {
            r
        } else {
            r + self.noise_half_width * (2.0 * rng.random::<f64>() - 1.0)
        }
    }
}

/// Stationary path observed every `step` time units, with optional states on
/// the finer `step / substeps` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    step: f64,
    substeps: usize,
    total_time: f64,
    seed: u64,
    states: Vec<f64>,
    rewards: Vec<f64>,
    inner: Option<Vec<f64>>,
}

/// Number of observation intervals `floor(T/η)`, tolerant to round-off.
pub fn interval_count(total_time: f64, step: f64) -> usize {
    (total_time / step * (1.0 + 1e-12)).floor() as usize
}

/// Simulates a stationary trajectory and its noisy rewards.
///
/// Observations are taken at `kη` for `k = 0..=floor(T/η)`. The state is
/// advanced on the `η / substeps` grid.
pub fn simulate_trajectory(
    model: &DiffusionModel,
    reward: &RewardSpec,
    total_time: f64,
    step: f64,
    substeps: usize,
    seed: u64,
    keep_inner: bool,
) -> Result<Trajectory> {
    model.validate()?;
    check_positive("total time", total_time)?;
    check_positive("step", step)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be >= 1".into()));
    }
    reward.validate()?;
    if let (MeanReward::Fourier(_), StateSpace::Euclidean) = (&reward.mean, model.state_space()) {
        return Err(Error::InvalidArgument(
            "Fourier rewards require a torus state space".into(),
        ));
    }
    let d = model.dimension();
    if let Some(bad) = reward.fourier_coeffs().and_then(|c| c.keys().find(|a| a.dim() != d)) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }

    let intervals = interval_count(total_time, step);
    let dt = step / substeps as f64;

    let mut init_rng = rng::stream(seed, Purpose::InitialState);
    let mut inc_rng = rng::stream(seed, Purpose::Increments);
    let mut noise_rng = rng::stream(seed, Purpose::RewardNoise);

    let mut x = model.sample_initial(&mut init_rng);
    let mut z = vec![0.0; d];

    let burn = model.burn_in_time();
    if burn > 0.0 {
        let mut burn_rng = rng::stream(seed, Purpose::BurnIn);
        let burn_steps = (burn / dt).ceil() as usize;
        for _ in 0..burn_steps {
            model.advance(&mut x, dt, &mut burn_rng, &mut z);
        }
    }

    let mut states = Vec::with_capacity((intervals + 1) * d);
    let mut rewards = Vec::with_capacity(intervals + 1);
    let mut inner = keep_inner.then(|| Vec::with_capacity((intervals * substeps + 1) * d));

    states.extend_from_slice(&x);
    rewards.push(reward.sample(&x, &mut noise_rng));
    if let Some(v) = inner.as_mut() {
        v.extend_from_slice(&x);
    }
    for _ in 0..intervals {
        for _ in 0..substeps {
            model.advance(&mut x, dt, &mut inc_rng, &mut z);
            if let Some(v) = inner.as_mut() {
                v.extend_from_slice(&x);
            }
        }
        states.extend_from_slice(&x);
        rewards.push(reward.sample(&x, &mut noise_rng));
    }

    Ok(Trajectory {
        dim: d,
        step,
        substeps,
        total_time,
        seed,
        states,
        rewards,
        inner,
    })
}

impl Trajectory {
    /// Builds a trajectory from raw observations (no inner states).
    pub fn from_observations(dim: usize, step: f64, states: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.len() != rewards.len() * dim || rewards.is_empty() {
            return Err(Error::InvalidArgument("inconsistent observation arrays".into()));
        }
        check_positive("step", step)?;
        let total_time = (rewards.len() - 1) as f64 * step;
        Ok(Trajectory {
            dim,
            step,
            substeps: 1,
            total_time,
            seed: 0,
            states,
            rewards,
            inner: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of observations `floor(T/η) + 1`.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn reward(&self, k: usize) -> f64 {
        self.rewards[k]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn has_inner(&self) -> bool {
        self.inner.is_some()
    }

    pub fn inner_len(&self) -> usize {
        self.inner.as_ref().map_or(0, |v| v.len() / self.dim)
    }

    pub fn inner_state(&self, j: usize) -> &[f64] {
        let v = self.inner.as_ref().expect("inner states not retained");
        &v[j * self.dim..(j + 1) * self.dim]
    }

    pub fn inner_states(&self) -> Option<impl Iterator<Item = &[f64]>> {
        self.inner.as_ref().map(|v| v.chunks_exact(self.dim))
    }

    /// Inner time step `η / substeps`.
    pub fn inner_step(&self) -> f64 {
        self.step / self.substeps as f64
    }

    /// Drops the first `count` observations (and matching inner states).
    pub fn skip(&self, count: usize) -> Result<Trajectory> {
        if count >= self.len() {
            return Err(Error::TrajectoryTooShort {
                observations: self.len(),
                needed: count + 1,
            });
        }
        let d = self.dim;
        Ok(Trajectory {
            dim: d,
            step: self.step,
            substeps: self.substeps,
            total_time: self.total_time - count as f64 * self.step,
            seed: self.seed,
            states: self.states[count * d..].to_vec(),
            rewards: self.rewards[count..].to_vec(),
            inner: self
                .inner
                .as_ref()
                .map(|v| v[count * self.substeps * d..].to_vec()),
        })
    }

    /// Writes `k,t,x_0..x_{d-1},reward`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "k,t")?;
        for i in 0..self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w, ",reward")?;
        for k in 0..self.len() {
            write!(w, "{k},{}", fmt_f64(k as f64 * self.step))?;
            for &xi in self.state(k) {
                write!(w, ",{}", fmt_f64(xi))?;
            }
            writeln!(w, ",{}", fmt_f64(self.rewards[k]))?;
        }
        Ok(())
    }

    /// Writes `j,t,x_0..x_{d-1}` for the inner grid.
    pub fn write_inner_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if !self.has_inner() {
            return Err(Error::MissingInnerStates);
        }
        write!(w, "j,t")?;
        for i in 0..self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        let h = self.inner_step();
        for j in 0..self.inner_len() {
            write!(w, "{j},{}", fmt_f64(j as f64 * h))?;
            for &xi in self.inner_state(j) {
                write!(w, ",{}", fmt_f64(xi))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Trapezoidal rule for `∫ e^{−βt} φ(t) dt` over samples `values` spaced by `dt`,
/// with `t = 0` at the first sample.
pub fn trapezoid_discounted(values: &[f64], dt: f64, discount: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let last = values.len() - 1;
    let weighted = |j: usize| (-discount * j as f64 * dt).exp() * values[j];
    let interior: f64 = (1..last).map(weighted).sum();
    dt * (0.5 * (weighted(0) + weighted(last)) + interior)
}

fn integrate_strided<F: Fn(&[f64]) -> f64>(
    traj: &Trajectory,
    phi: F,
    start: usize,
    window: usize,
    discount: f64,
    stride: usize,
) -> Result<f64> {
    if !traj.has_inner() {
        return Err(Error::MissingInnerStates);
    }
    if start + window > traj.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "window [{start}, {}] exceeds {} observations",
            start + window,
            traj.len()
        )));
    }
    let s = traj.substeps();
    if stride == 0 || s % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} must divide substeps {s}"
        )));
    }
    let j0 = start * s;
    let j1 = (start + window) * s;
    let values: Vec<f64> = (j0..=j1)
        .step_by(stride)
        .map(|j| phi(traj.inner_state(j)))
        .collect();
    Ok(trapezoid_discounted(&values, traj.inner_step() * stride as f64, discount))
}

/// `∫₀^{wη} e^{−βt} φ(X_{kη+t}) dt` by the trapezoidal rule on the inner grid,
/// where `k = start` and `w = window` observation intervals.
pub fn integrate_path_functional<F: Fn(&[f64]) -> f64>(
    traj: &Trajectory,
    phi: F,
    start: usize,
    window: usize,
    discount: f64,
) -> Result<f64> {
    integrate_strided(traj, phi, start, window, discount, 1)
}
