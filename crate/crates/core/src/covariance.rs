//! Empirical diagnostics for the noise structure of the estimator.
//!
//! For span functions `f, g` the path functional
//! `U_k = f(X_kη) · η⁻¹ ∫₀^η e^{−βt} (β − A) g(X_{kη+t}) dt`
//! has lag-`k` covariance `μ_k(f, g)`; the Markovian variance is the series
//! `σ*_Mkv(f, g)² = η μ₀ + 2η Σ_{k≥1} μ_k`. Covariances are estimated from
//! disjoint tiles of the trajectory with standard errors from the spread
//! across tiles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::basis::{FourierBasis, FunctionInSpan};
use crate::diffusion::{integrate_path_functional, DiffusionModel, Trajectory};
use crate::discretization::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::fmt_f64;

pub const MIN_WINDOW_PAIRS: usize = 30;
pub const MIN_DIAGNOSTIC_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEstimate {
    pub lag: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub pairs: usize,
}

fn check_diagnostic_inputs(traj: &Trajectory, dims: &[usize]) -> Result<()> {
    if !traj.has_inner() {
        return Err(Error::MissingInnerStates);
    }
    if traj.substeps() < MIN_DIAGNOSTIC_SUBSTEPS {
        return Err(Error::InvalidArgument(format!(
            "diagnostics need at least {MIN_DIAGNOSTIC_SUBSTEPS} substeps, got {}",
            traj.substeps()
        )));
    }
    if let Some(&bad) = dims.iter().find(|&&d| d != traj.dim()) {
        return Err(Error::DimensionMismatch {
            expected: traj.dim(),
            got: bad,
        });
    }
    Ok(())
}

/// `U_k` for every start `k` with a full window of `window` intervals.
pub fn residual_functionals(
    traj: &Trajectory,
    f: &FunctionInSpan<'_>,
    g: &FunctionInSpan<'_>,
    model: &DiffusionModel,
    discount: f64,
    window: usize,
) -> Result<Vec<f64>> {
    check_diagnostic_inputs(traj, &[f.basis.dim(), g.basis.dim(), model.dimension()])?;
    if window == 0 || window >= traj.len() {
        return Err(Error::InvalidArgument(format!("window {window} out of range")));
    }
    let eta = traj.step();
    let resolvent = |x: &[f64]| discount * g.value(x) - g.generator(model, x);
    (0..traj.len() - window)
        .map(|k| {
            let fx = f.value(traj.state(k));
            if fx == 0.0 {
                return Ok(0.0);
            }
            let integral = integrate_path_functional(traj, resolvent, k, window, discount)?;
            Ok(fx * integral / eta)
        })
        .collect()
}

/// Lag-`lag` sample covariance of a functional series from disjoint tiles
/// of length `lag + window`.
pub fn mu_from_functionals(values: &[f64], lag: usize, window: usize) -> Result<MuEstimate> {
    let tile = (lag + window).max(1);
    let pairs: Vec<(f64, f64)> = (0..)
        .map(|j| j * tile)
        .take_while(|&s| s + lag < values.len())
        .map(|s| (values[s], values[s + lag]))
        .collect();
    let n = pairs.len();
    if n < MIN_WINDOW_PAIRS {
        return Err(Error::InsufficientWindows {
            available: n,
            needed: MIN_WINDOW_PAIRS,
        });
    }
    let nf = n as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let products: Vec<f64> = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).collect();
    let estimate = products.iter().sum::<f64>() / (nf - 1.0);
    let mp = products.iter().sum::<f64>() / nf;
    let var = products.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(MuEstimate {
        lag,
        estimate,
        stderr: (var / nf).sqrt(),
        pairs: n,
    })
}

/// `μ̂_lag(f, g)` with its standard error.
pub fn estimate_mu_k(
    traj: &Trajectory,
    f: &FunctionInSpan<'_>,
    g: &FunctionInSpan<'_>,
    model: &DiffusionModel,
    scheme: &DiscretizationScheme,
    lag: usize,
    window: usize,
) -> Result<MuEstimate> {
    let u = residual_functionals(traj, f, g, model, scheme.discount(), window)?;
    mu_from_functionals(&u, lag, window)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceDiagnostics {
    /// `μ̂_k` for `k = 0..=2·K_max`.
    pub mu: Vec<MuEstimate>,
    pub sigma_mkv: f64,
    pub sigma_stderr: f64,
    pub k_max: usize,
    pub stable: bool,
    pub martingale_proxy: Option<f64>,
    pub f_desc: String,
    pub g_desc: String,
}

fn truncated_series(mu: &[MuEstimate], eta: f64, upto: usize) -> (f64, f64) {
    let head = mu[0];
    let tail = &mu[1..=upto];
    let value = eta * head.estimate + 2.0 * eta * tail.iter().map(|m| m.estimate).sum::<f64>();
    let var = head.stderr.powi(2) + 4.0 * tail.iter().map(|m| m.stderr.powi(2)).sum::<f64>();
    (value, eta * var.sqrt())
}

fn describe(f: &FunctionInSpan<'_>) -> String {
    let terms: Vec<String> = f
        .to_coeff_map()
        .iter()
        .map(|(a, c)| format!("{c:.6e}*psi{a}"))
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

/// Truncated `σ*_Mkv(f, g)²` at `K_max`, with a tail-stability flag comparing
/// the partial sums at `K_max` and `2·K_max`.
pub fn estimate_sigma_mkv(
    traj: &Trajectory,
    f: &FunctionInSpan<'_>,
    g: &FunctionInSpan<'_>,
    model: &DiffusionModel,
    scheme: &DiscretizationScheme,
    k_max: usize,
    window: usize,
) -> Result<CovarianceDiagnostics> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("K_max must be >= 1".into()));
    }
    let u = residual_functionals(traj, f, g, model, scheme.discount(), window)?;
    let mu = (0..=2 * k_max)
        .map(|k| mu_from_functionals(&u, k, window))
        .collect::<Result<Vec<_>>>()?;
    let eta = traj.step();
    let (sigma, se) = truncated_series(&mu, eta, k_max);
    let (sigma_long, se_long) = truncated_series(&mu, eta, 2 * k_max);
    let gap = (sigma_long - sigma).abs();
    let stable = gap == 0.0 || gap < 3.0 * se_long;
    Ok(CovarianceDiagnostics {
        mu,
        sigma_mkv: sigma,
        sigma_stderr: se,
        k_max,
        stable,
        martingale_proxy: None,
        f_desc: describe(f),
        g_desc: describe(g),
    })
}

impl CovarianceDiagnostics {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,mu_hat,stderr")?;
        for m in &self.mu {
            writeln!(w, "{},{},{}", m.lag, fmt_f64(m.estimate), fmt_f64(m.stderr))?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "sigma_mkv": self.sigma_mkv,
            "K_max": self.k_max,
            "stable": self.stable,
            "martingale_proxy": self.martingale_proxy,
        })
    }
}

/// Standard error of a mean from `⌊√n⌋` contiguous batches.
pub fn batch_means_stderr(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub windows: usize,
}

/// Window average of
/// `‖H₁^{−1/2} ψ(X_kη)‖² · η⁻¹ ∫₀^η e^{−2βt} ∇f̄ᵀ Λ ∇f̄ (X_{kη+t}) dt`,
/// the quantity driving the martingale part of the statistical error.
pub fn martingale_variance_proxy(
    traj: &Trajectory,
    f_bar: &FunctionInSpan<'_>,
    basis: &FourierBasis,
    model: &DiffusionModel,
    scheme: &DiscretizationScheme,
) -> Result<ProxyEstimate> {
    check_diagnostic_inputs(traj, &[f_bar.basis.dim(), basis.dim(), model.dimension()])?;
    let eta = traj.step();
    let quad = |x: &[f64]| {
        let g = f_bar.gradient(x);
        let lam = model.diffusion(x);
        let mut s = 0.0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                s += g[i] * lam[(i, j)] * g[j];
            }
        }
        s
    };
    let mut psi = vec![0.0; basis.len()];
    let values = (0..traj.len() - 1)
        .map(|k| {
            basis.features_into(traj.state(k), &mut psi);
            let weight: f64 = psi.iter().zip(basis.h1_diag()).map(|(p, w)| p * p / w).sum();
            let integral = integrate_path_functional(traj, quad, k, 1, 2.0 * scheme.discount())?;
            Ok(weight * integral / eta)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = values.len();
    Ok(ProxyEstimate {
        estimate: values.iter().sum::<f64>() / n as f64,
        stderr: batch_means_stderr(&values),
        windows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{simulate_trajectory, RewardSpec};
    use nalgebra::DVector;

    fn setup(total: f64, substeps: usize) -> (DiffusionModel, Trajectory) {
        let model = DiffusionModel::torus_brownian(1, 1.0).unwrap();
        let r = RewardSpec::constant(1, 0.0, 0.0).unwrap();
        let t = simulate_trajectory(&model, &r, total, 0.05, substeps, 21, true).unwrap();
        (model, t)
    }

    #[test]
    fn zero_test_function_gives_exact_zero() {
        let (model, t) = setup(20.0, 16);
        let basis = FourierBasis::build(1, 1).unwrap();
        let s = DiscretizationScheme::new(2, 0.05, 1.0).unwrap();
        let f = FunctionInSpan::zero(&basis);
        let g = FunctionInSpan::new(&basis, DVector::from_vec(vec![0.3, 1.0, -0.5])).unwrap();
        for lag in 0..3 {
            let mu = estimate_mu_k(&t, &f, &g, &model, &s, lag, 1).unwrap();
            assert_eq!(mu.estimate, 0.0);
        }
        let diag = estimate_sigma_mkv(&t, &f, &g, &model, &s, 3, 1).unwrap();
        assert_eq!(diag.sigma_mkv, 0.0);
        assert!(diag.stable);
    }

    #[test]
    fn requires_inner_states_and_resolution() {
        let model = DiffusionModel::torus_brownian(1, 1.0).unwrap();
        let r = RewardSpec::constant(1, 0.0, 0.0).unwrap();
        let basis = FourierBasis::build(1, 1).unwrap();
        let s = DiscretizationScheme::new(2, 0.05, 1.0).unwrap();
        let f = FunctionInSpan::zero(&basis);
        let t = simulate_trajectory(&model, &r, 5.0, 0.05, 16, 1, false).unwrap();
        assert!(matches!(
            estimate_mu_k(&t, &f, &f, &model, &s, 1, 1),
            Err(Error::MissingInnerStates)
        ));
        let t = simulate_trajectory(&model, &r, 5.0, 0.05, 4, 1, true).unwrap();
        assert!(estimate_mu_k(&t, &f, &f, &model, &s, 1, 1).is_err());
        let t = simulate_trajectory(&model, &r, 1.0, 0.05, 16, 1, true).unwrap();
        assert!(matches!(
            estimate_mu_k(&t, &f, &f, &model, &s, 1, 1),
            Err(Error::InsufficientWindows { .. })
        ));
    }

    #[test]
    fn tiles_are_disjoint() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let mu = mu_from_functionals(&v, 2, 1).unwrap();
        assert_eq!(mu.pairs, 33);
        assert!(mu_from_functionals(&v[..50], 2, 1).is_err());
    }

    #[test]
    fn independent_surrogate_has_no_lag_correlation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        for lag in 1..4 {
            let mu = mu_from_functionals(&v, lag, 1).unwrap();
            assert!(mu.estimate.abs() < 3.0 * mu.stderr, "lag={lag} {mu:?}");
        }
    }

    #[test]
    fn constant_value_function_has_zero_proxy() {
        let (model, t) = setup(5.0, 16);
        let basis = FourierBasis::build(1, 2).unwrap();
        let s = DiscretizationScheme::new(2, 0.05, 1.0).unwrap();
        let mut theta = DVector::zeros(basis.len());
        theta[0] = 2.0;
        let f = FunctionInSpan::new(&basis, theta).unwrap();
        let p = martingale_variance_proxy(&t, &f, &basis, &model, &s).unwrap();
        assert_eq!(p.estimate, 0.0);
    }

    #[test]
    fn csv_and_summary() {
        let (model, t) = setup(20.0, 16);
        let basis = FourierBasis::build(1, 1).unwrap();
        let s = DiscretizationScheme::new(2, 0.05, 1.0).unwrap();
        let f = FunctionInSpan::new(&basis, DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        let g = FunctionInSpan::new(&basis, DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let diag = estimate_sigma_mkv(&t, &f, &g, &model, &s, 2, 1).unwrap();
        let mut buf = Vec::new();
        diag.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,mu_hat,stderr\n"));
        assert_eq!(text.lines().count(), 1 + 5);
        let j = diag.summary_json();
        assert_eq!(j["K_max"], 2);
        assert!(j["sigma_mkv"].is_number());
    }
}
