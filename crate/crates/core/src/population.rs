//! Closed-form value-function oracles for spectrum-bearing torus models.
//!
//! The semigroup acts diagonally on Fourier modes, `P_t ψ_α = e^{−λ_α t} ψ_α`,
//! so the elliptic equation, the discretized Bellman fixed point and the
//! projected linear system all decouple mode by mode.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{CoeffMap, FourierBasis, MultiIndex};
use crate::diffusion::{DiffusionModel, RewardSpec};
use crate::discretization::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::lstd;

fn check_discount(discount: f64) -> Result<()> {
    if discount.is_finite() && discount > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "oracles need a positive discount, got {discount}"
        )))
    }
}

fn eigenvalue(model: &DiffusionModel, alpha: &MultiIndex) -> Result<f64> {
    model.spectrum(alpha).ok_or(Error::NoSpectrum)
}

/// `c*_α = r̂_α / (β + λ_α)`, the mode-wise solution of `(β − A) f* = r`.
pub fn true_value_coeffs(model: &DiffusionModel, reward: &CoeffMap, discount: f64) -> Result<CoeffMap> {
    check_discount(discount)?;
    reward
        .iter()
        .map(|(a, &r)| Ok((a.clone(), r / (discount + eigenvalue(model, a)?))))
        .collect()
}

/// Reward-side node integrals `∫₀^{(ν−1)η} e^{−βs} W_i(s) ds · e^{−λ iη}` summed over `i`.
fn reward_integral(scheme: &DiscretizationScheme, lambda: f64) -> f64 {
    let eta = scheme.step();
    scheme
        .kappas()
        .iter()
        .enumerate()
        .map(|(i, k)| eta * k * (-lambda * i as f64 * eta).exp())
        .sum()
}

/// Mode-wise fixed point of the order-ν discretized Bellman operator:
/// `c̄_α = r̂_α Σ_i η κ_i e^{−λ_α iη} / (1 − e^{−(β+λ_α)(ν−1)η})`.
pub fn discretized_fixed_point_coeffs(
    scheme: &DiscretizationScheme,
    model: &DiffusionModel,
    reward: &CoeffMap,
) -> Result<CoeffMap> {
    check_discount(scheme.discount())?;
    let horizon = scheme.horizon();
    reward
        .iter()
        .map(|(a, &r)| {
            let lambda = eigenvalue(model, a)?;
            let denom = 1.0 - (-(scheme.discount() + lambda) * horizon).exp();
            Ok((a.clone(), r * reward_integral(scheme, lambda) / denom))
        })
        .collect()
}

/// `Ā = E[A_k] = η⁻¹ (I − e^{−β(ν−1)η} diag(e^{−λ_α(ν−1)η}))` under the uniform law.
pub fn population_a_bar(
    basis: &FourierBasis,
    scheme: &DiscretizationScheme,
    model: &DiffusionModel,
) -> Result<DMatrix<f64>> {
    let horizon = scheme.horizon();
    let gamma = scheme.block_discount();
    let diag = basis
        .indices()
        .iter()
        .map(|a| Ok((1.0 - gamma * (-eigenvalue(model, a)? * horizon).exp()) / scheme.step()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DMatrix::from_diagonal(&DVector::from_vec(diag)))
}

/// `b̄ = E[b_k]`, with entries `Σ_i κ_i e^{−λ_α iη} r̂_α`.
pub fn population_b_bar(
    basis: &FourierBasis,
    scheme: &DiscretizationScheme,
    model: &DiffusionModel,
    reward: &CoeffMap,
) -> Result<DVector<f64>> {
    let r = basis.project(reward);
    let entries = basis
        .indices()
        .iter()
        .zip(r.iter())
        .map(|(a, &ra)| Ok(ra * reward_integral(scheme, eigenvalue(model, a)?) / scheme.step()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(entries))
}

/// Solves the projected fixed-point system `Ā θ̄ = b̄` in closed form.
pub fn population_theta_bar(
    basis: &FourierBasis,
    scheme: &DiscretizationScheme,
    model: &DiffusionModel,
    reward: &CoeffMap,
) -> Result<DVector<f64>> {
    check_discount(scheme.discount())?;
    let a = population_a_bar(basis, scheme, model)?;
    let b = population_b_bar(basis, scheme, model, reward)?;
    let theta = a.lu().solve(&b);
    assert!(theta.is_some(), "population system is singular for β > 0");
    Ok(theta.unwrap_or_else(|| DVector::zeros(basis.len())))
}

/// All closed-form oracles for one (model, reward, scheme) triple.
#[derive(Debug, Clone)]
pub struct ValueOracle {
    pub true_coeffs: CoeffMap,
    pub discretized_coeffs: CoeffMap,
}

impl ValueOracle {
    pub fn new(model: &DiffusionModel, reward: &CoeffMap, scheme: &DiscretizationScheme) -> Result<Self> {
        Ok(ValueOracle {
            true_coeffs: true_value_coeffs(model, reward, scheme.discount())?,
            discretized_coeffs: discretized_fixed_point_coeffs(scheme, model, reward)?,
        })
    }

    /// `θ̄` on an estimation basis: the truncated discretized fixed point.
    pub fn theta_bar(&self, basis: &FourierBasis) -> DVector<f64> {
        basis.project(&self.discretized_coeffs)
    }
}

/// Writes `alpha_0..alpha_{d-1},value` rows in canonical order.
pub fn write_coeff_csv<W: Write>(coeffs: &CoeffMap, dim: usize, mut w: W) -> Result<()> {
    for i in 0..dim {
        write!(w, "alpha_{i},")?;
    }
    writeln!(w, "value")?;
    for (a, &c) in coeffs {
        for v in &a.0 {
            write!(w, "{v},")?;
        }
        writeln!(w, "{}", fmt_f64(c))?;
    }
    Ok(())
}

/// Replicate averages of the assembled LSTD objects.
#[derive(Debug, Clone)]
pub struct MonteCarloPopulation {
    pub replicates: usize,
    pub a_mean: DMatrix<f64>,
    pub a_stderr: DMatrix<f64>,
    pub b_mean: DVector<f64>,
    pub b_stderr: DVector<f64>,
    /// `(mean Â)⁻¹ (mean b̂)`.
    pub theta: DVector<f64>,
    /// Delta-method standard error of `theta`.
    pub theta_stderr: DVector<f64>,
}

/// Monte-Carlo estimate of `Ā`, `b̄` and `θ̄` from independent trajectories.
///
/// This is the fallback oracle for models without a closed-form spectrum.
pub fn monte_carlo_population(
    model: &DiffusionModel,
    reward: &RewardSpec,
    basis: &FourierBasis,
    scheme: &DiscretizationScheme,
    total_time: f64,
    substeps: usize,
    replicates: usize,
    seed_base: u64,
) -> Result<MonteCarloPopulation> {
    use rayon::prelude::*;
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least two replicates".into()));
    }
    let assembled = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = crate::rng::replicate_seed(seed_base, r);
            let traj = crate::diffusion::simulate_trajectory(
                model, reward, total_time, scheme.step(), substeps, seed, false,
            )?;
            lstd::assemble(&traj, basis, scheme)
        })
        .collect::<Result<Vec<_>>>()?;

    let m = basis.len();
    let n = replicates as f64;
    let a_mean = assembled.iter().fold(DMatrix::zeros(m, m), |acc, s| acc + &s.a_hat) / n;
    let b_mean = assembled.iter().fold(DVector::zeros(m), |acc, s| acc + &s.b_hat) / n;
    let a_var = assembled.iter().fold(DMatrix::zeros(m, m), |acc, s| {
        acc + (&s.a_hat - &a_mean).map(|v| v * v)
    }) / (n - 1.0);
    let b_var = assembled.iter().fold(DVector::zeros(m), |acc, s| {
        acc + (&s.b_hat - &b_mean).map(|v| v * v)
    }) / (n - 1.0);

    let lu = a_mean.clone().lu();
    let theta = lu.solve(&b_mean).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
        limit: lstd::STRICT_CONDITION_LIMIT,
    })?;
    // influence of each replicate on the ratio estimator
    let influences: Vec<DVector<f64>> = assembled
        .iter()
        .map(|s| lu.solve(&(&s.b_hat - &s.a_hat * &theta)).unwrap_or_else(|| DVector::zeros(m)))
        .collect();
    let theta_var = influences
        .iter()
        .fold(DVector::zeros(m), |acc, u| acc + u.map(|v| v * v))
        / (n - 1.0);

    Ok(MonteCarloPopulation {
        replicates,
        a_stderr: a_var.map(|v| (v / n).sqrt()),
        b_stderr: b_var.map(|v| (v / n).sqrt()),
        theta_stderr: theta_var.map(|v| (v / n).sqrt()),
        a_mean,
        b_mean,
        theta,
    })
}
