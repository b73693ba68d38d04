//! Error measurement: exact Sobolev norms of span functions, the complexity
//! functional `Tr(H₁⁻¹H₀)` and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::basis::{coeff_diff, CoeffMap, FourierBasis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SobolevOrder {
    L2,
    H1,
    H2,
}

/// Norm of `Σ c_α ψ_α` under the uniform law, computed from coefficients.
///
/// Weights per mode: `1` (L²), `1 + (2π)²‖α‖²` (H¹), plus the Hessian
/// Frobenius weight `(2π)⁴‖α‖⁴` (H²).
pub fn sobolev_norm(coeffs: &CoeffMap, order: SobolevOrder) -> f64 {
    coeffs
        .iter()
        .map(|(a, c)| {
            let w = match order {
                SobolevOrder::L2 => 1.0,
                SobolevOrder::H1 => a.h1_weight(),
                SobolevOrder::H2 => a.h2_weight(),
            };
            w * c * c
        })
        .sum::<f64>()
        .sqrt()
}

/// `Tr(H₁⁻¹H₀) = Σ_α 1 / (1 + (2π)²‖α‖₂²)`.
pub fn trace_ratio(basis: &FourierBasis) -> f64 {
    basis.h1_diag().iter().map(|w| 1.0 / w).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LineFit { slope, intercept, r2 })
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if let Some(bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive finite inputs, got {bad}"
        )));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

/// H¹ error decomposition of one fit, plus total errors in L², H¹, H².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub l2_error: f64,
    pub h1_error: f64,
    pub h2_error: f64,
    /// `‖f̄ − f*‖_{H¹}`
    pub approximation: f64,
    /// `‖f̂ − f̄‖_{H¹}`
    pub statistical: f64,
    /// `‖f̂ − f*‖_{H¹}`
    pub total: f64,
}

impl ErrorReport {
    /// `estimate`, `projected` and `truth` are coefficient maps of `f̂`, `f̄`, `f*`.
    pub fn new(estimate: &CoeffMap, projected: &CoeffMap, truth: &CoeffMap) -> Self {
        let total_diff = coeff_diff(estimate, truth);
        let total = sobolev_norm(&total_diff, SobolevOrder::H1);
        ErrorReport {
            l2_error: sobolev_norm(&total_diff, SobolevOrder::L2),
            h1_error: total,
            h2_error: sobolev_norm(&total_diff, SobolevOrder::H2),
            approximation: sobolev_norm(&coeff_diff(projected, truth), SobolevOrder::H1),
            statistical: sobolev_norm(&coeff_diff(estimate, projected), SobolevOrder::H1),
            total,
        }
    }

    pub fn satisfies_triangle(&self) -> bool {
        self.total <= self.approximation + self.statistical + 1e-10
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndex;
    use std::f64::consts::PI;

    fn idx(v: &[i32]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    #[test]
    fn constant_mode_all_orders() {
        let c: CoeffMap = [(idx(&[0, 0]), 3.0)].into_iter().collect();
        for o in [SobolevOrder::L2, SobolevOrder::H1, SobolevOrder::H2] {
            assert_eq!(sobolev_norm(&c, o), 3.0);
        }
    }

    #[test]
    fn single_cosine_h1() {
        let c: CoeffMap = [(idx(&[-1]), 1.0)].into_iter().collect();
        let v = sobolev_norm(&c, SobolevOrder::H1);
        assert!((v - (1.0 + 4.0 * PI * PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn trace_three_terms() {
        let b = FourierBasis::build(1, 1).unwrap();
        let t = trace_ratio(&b);
        assert!((t - (1.0 + 2.0 / (1.0 + 4.0 * PI * PI))).abs() < 1e-15);
        assert!((t - 1.0494).abs() < 1e-4);
    }

    #[test]
    fn trace_bounded_in_one_dimension() {
        let t16 = trace_ratio(&FourierBasis::build(1, 16).unwrap());
        let t64 = trace_ratio(&FourierBasis::build(1, 64).unwrap());
        assert!(t64 - t16 < 0.05 && t64 > t16);
    }

    #[test]
    fn exact_power_laws() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.powf(-0.5)).collect();
        let f = fit_rate(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.r2 - 1.0).abs() < 1e-14);
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        let f = fit_rate(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-13 && (f.intercept - 3f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn fit_errors() {
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0, -1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, 0.0, 3.0]).is_err());
        assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_decomposition() {
        let truth: CoeffMap = [(idx(&[0]), 1.0), (idx(&[-1]), 0.2), (idx(&[-3]), 0.01)]
            .into_iter()
            .collect();
        let projected: CoeffMap = [(idx(&[0]), 1.0), (idx(&[-1]), 0.19)].into_iter().collect();
        let estimate: CoeffMap = [(idx(&[0]), 1.02), (idx(&[-1]), 0.18), (idx(&[1]), 0.01)]
            .into_iter()
            .collect();
        let r = ErrorReport::new(&estimate, &projected, &truth);
        assert!(r.satisfies_triangle());
        assert!(r.l2_error <= r.h1_error && r.h1_error <= r.h2_error);
        assert_eq!(r.total, r.h1_error);
    }
}
