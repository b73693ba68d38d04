//! Plug-in advantage estimates for control-affine diffusions.
//!
//! With drift `b(x) + a` and a policy whose mean action is `m(x)`, the
//! advantage of action `a` is `q(x, a) = ⟨∇f(x), a − m(x)⟩`.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;

use crate::basis::{CoeffMap, FunctionInSpan};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::rng::{stream, Purpose};

pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Axis-aligned action box `[low, high]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                expected: low.len(),
                got: high.len(),
            });
        }
        if low.is_empty() || low.iter().zip(&high).any(|(l, h)| !(l <= h && l.is_finite() && h.is_finite())) {
            return Err(Error::InvalidArgument("action box needs finite low <= high".into()));
        }
        Ok(ActionBox { low, high })
    }

    /// The cube `[−half_width, half_width]^d`.
    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        ActionBox::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.low.iter().zip(&self.high)).all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Euclidean diameter `‖high − low‖`.
    pub fn diameter(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// Drift `b(x) + a` with actions drawn from a policy with mean `m(x)`.
#[derive(Clone)]
pub struct ControlAffinePolicy {
    pub actions: ActionBox,
    pub mean_action: VectorField,
    pub base_drift: VectorField,
}

impl std::fmt::Debug for ControlAffinePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffinePolicy")
            .field("actions", &self.actions)
            .finish_non_exhaustive()
    }
}

impl ControlAffinePolicy {
    pub fn new(actions: ActionBox, mean_action: VectorField, base_drift: VectorField) -> Self {
        ControlAffinePolicy {
            actions,
            mean_action,
            base_drift,
        }
    }

    /// Constant mean action and zero base drift.
    pub fn constant_mean(actions: ActionBox, mean: Vec<f64>) -> Result<Self> {
        if !actions.contains(&mean) {
            return Err(Error::ActionOutOfBounds);
        }
        let d = actions.dim();
        Ok(ControlAffinePolicy::new(
            actions,
            Arc::new(move |_| mean.clone()),
            Arc::new(move |_| vec![0.0; d]),
        ))
    }

    pub fn diameter(&self) -> f64 {
        self.actions.diameter()
    }

    pub fn mean_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = (self.mean_action)(x);
        if self.actions.contains(&m) {
            Ok(m)
        } else {
            Err(Error::InvalidArgument(format!("mean action {m:?} leaves the action box")))
        }
    }

    /// `b(x) + a`.
    pub fn controlled_drift(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        (self.base_drift)(x).iter().zip(a).map(|(b, a)| b + a).collect()
    }

    /// `b(x) + m(x)`.
    pub fn policy_drift(&self, x: &[f64]) -> Vec<f64> {
        self.controlled_drift(x, &(self.mean_action)(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct AdvantageEstimate<'a> {
    pub value: FunctionInSpan<'a>,
    pub policy: ControlAffinePolicy,
}

impl<'a> AdvantageEstimate<'a> {
    pub fn new(value: FunctionInSpan<'a>, policy: ControlAffinePolicy) -> Result<Self> {
        if value.basis.dim() != policy.actions.dim() {
            return Err(Error::DimensionMismatch {
                expected: value.basis.dim(),
                got: policy.actions.dim(),
            });
        }
        Ok(AdvantageEstimate { value, policy })
    }

    /// `q̂(x, a) = ⟨∇f̂(x), a − m(x)⟩`.
    pub fn advantage(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        if !self.policy.actions.contains(a) {
            return Err(Error::ActionOutOfBounds);
        }
        let m = self.policy.mean_at(x)?;
        let disp: Vec<f64> = a.iter().zip(&m).map(|(a, m)| a - m).collect();
        Ok(dot(&self.value.gradient(x), &disp))
    }

    /// `q̂` on a product grid of states and actions.
    pub fn grid(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
        let mut out = Vec::with_capacity(states.len() * actions.len());
        for x in states {
            for a in actions {
                out.push((x.clone(), a.clone(), self.advantage(x, a)?));
            }
        }
        Ok(out)
    }
}

/// `⟨∇f(x), g(x, a) − b^π(x)⟩` for a general controlled drift `g` and
/// policy-averaged drift `b^π`.
pub fn advantage_general(
    value: &FunctionInSpan<'_>,
    x: &[f64],
    a: &[f64],
    controlled_drift: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    policy_drift: &dyn Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let g = controlled_drift(x, a);
    let b = policy_drift(x);
    let disp: Vec<f64> = g.iter().zip(&b).map(|(g, b)| g - b).collect();
    dot(&value.gradient(x), &disp)
}

/// Writes `x,a,q_hat` rows (first coordinates of state and action).
pub fn write_grid_csv<W: Write>(rows: &[(Vec<f64>, Vec<f64>, f64)], mut w: W) -> Result<()> {
    writeln!(w, "x,a,q_hat")?;
    for (x, a, q) in rows {
        writeln!(w, "{},{},{}", fmt_f64(x[0]), fmt_f64(a[0]), fmt_f64(*q))?;
    }
    Ok(())
}

fn coeff_gradient(coeffs: &CoeffMap, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut g = vec![0.0; x.len()];
    for (alpha, c) in coeffs {
        alpha.feature_gradient(x, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o += c * gi;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AdvantageBoundReport {
    pub samples: usize,
    /// `max |q̂ − q|²` over the samples.
    pub max_lhs: f64,
    /// Mean of `|q̂ − q|²` over the samples.
    pub mean_lhs: f64,
    /// `diam(A)² ‖f̂ − f‖²_{H¹}`.
    pub rhs: f64,
    /// `max_lhs ≤ rhs`.
    pub holds: bool,
    /// `mean_lhs ≤ rhs`.
    pub holds_in_mean: bool,
}

/// Compares `|q̂ − q|²` at the sampled pairs with `diam(A)²·‖f̂ − f‖²_{H¹}`.
pub fn advantage_error_bound_check(
    f_hat: &CoeffMap,
    f_true: &CoeffMap,
    policy: &ControlAffinePolicy,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<AdvantageBoundReport> {
    let diff = crate::basis::coeff_diff(f_hat, f_true);
    let h1 = crate::metrics::sobolev_norm(&diff, crate::metrics::SobolevOrder::H1);
    let rhs = policy.diameter().powi(2) * h1 * h1;
    let mut max_lhs: f64 = 0.0;
    let mut sum = 0.0;
    for (x, a) in samples {
        if !policy.actions.contains(a) {
            return Err(Error::ActionOutOfBounds);
        }
        let m = policy.mean_at(x)?;
        let disp: Vec<f64> = a.iter().zip(&m).map(|(a, m)| a - m).collect();
        let lhs = dot(&coeff_gradient(&diff, x), &disp).powi(2);
        max_lhs = max_lhs.max(lhs);
        sum += lhs;
    }
    let mean_lhs = if samples.is_empty() { 0.0 } else { sum / samples.len() as f64 };
    let slack = 1e-12 * rhs;
    Ok(AdvantageBoundReport {
        samples: samples.len(),
        max_lhs,
        mean_lhs,
        rhs,
        holds: max_lhs <= rhs + slack,
        holds_in_mean: mean_lhs <= rhs + slack,
    })
}

/// Uniform states on the torus paired with uniform actions in the box.
pub fn sample_state_actions(actions: &ActionBox, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = stream(seed, Purpose::Auxiliary);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..actions.dim()).map(|_| rng.random::<f64>()).collect();
            let a = actions.sample(&mut rng);
            (x, a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{FourierBasis, MultiIndex};
    use nalgebra::DVector;
    use std::f64::consts::{PI, SQRT_2};

    fn cosine_estimate(basis: &FourierBasis, c1: f64) -> FunctionInSpan<'_> {
        let mut theta = DVector::zeros(basis.len());
        theta[basis.position(&MultiIndex(vec![-1])).unwrap()] = c1;
        FunctionInSpan::new(basis, theta).unwrap()
    }

    #[test]
    fn zero_at_mean_action() {
        let basis = FourierBasis::build(2, 2).unwrap();
        let theta = DVector::from_fn(basis.len(), |i, _| (i as f64 * 0.37).sin());
        let f = FunctionInSpan::new(&basis, theta).unwrap();
        let policy = ControlAffinePolicy::new(
            ActionBox::symmetric(2, 1.0).unwrap(),
            Arc::new(|x: &[f64]| vec![0.5 * (2.0 * PI * x[0]).sin(), 0.2]),
            Arc::new(|_: &[f64]| vec![0.0, 0.0]),
        );
        let est = AdvantageEstimate::new(f, policy).unwrap();
        for x in [[0.1, 0.7], [0.55, 0.2]] {
            let m = est.policy.mean_at(&x).unwrap();
            assert_eq!(est.advantage(&x, &m).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_cosine_gradient() {
        let basis = FourierBasis::build(1, 1).unwrap();
        let c1 = 0.3;
        let policy = ControlAffinePolicy::constant_mean(ActionBox::symmetric(1, 1.0).unwrap(), vec![0.0]).unwrap();
        let est = AdvantageEstimate::new(cosine_estimate(&basis, c1), policy).unwrap();
        let q = est.advantage(&[0.25], &[1.0]).unwrap();
        assert!((q - (-2.0 * PI * SQRT_2 * c1)).abs() < 1e-14);
    }

    #[test]
    fn linear_in_displacement() {
        let basis = FourierBasis::build(2, 2).unwrap();
        let theta = DVector::from_fn(basis.len(), |i, _| 1.0 / (1.0 + i as f64));
        let f = FunctionInSpan::new(&basis, theta).unwrap();
        let policy = ControlAffinePolicy::constant_mean(ActionBox::symmetric(2, 2.0).unwrap(), vec![0.1, -0.2]).unwrap();
        let est = AdvantageEstimate::new(f, policy).unwrap();
        let x = [0.3, 0.8];
        let a1 = [0.5, 0.1];
        let a2 = [-0.4, 0.6];
        let sum = [a1[0] + a2[0] - 0.1, a1[1] + a2[1] + 0.2];
        let lhs = est.advantage(&x, &sum).unwrap();
        let rhs = est.advantage(&x, &a1).unwrap() + est.advantage(&x, &a2).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_rejected() {
        let basis = FourierBasis::build(1, 1).unwrap();
        let policy = ControlAffinePolicy::constant_mean(ActionBox::symmetric(1, 1.0).unwrap(), vec![0.0]).unwrap();
        let est = AdvantageEstimate::new(cosine_estimate(&basis, 1.0), policy).unwrap();
        assert!(matches!(est.advantage(&[0.1], &[1.5]), Err(Error::ActionOutOfBounds)));
        assert!(ControlAffinePolicy::constant_mean(ActionBox::symmetric(1, 1.0).unwrap(), vec![2.0]).is_err());
        assert!(ActionBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn general_callback_matches_control_affine() {
        let basis = FourierBasis::build(1, 2).unwrap();
        let f = cosine_estimate(&basis, 0.7);
        let policy = ControlAffinePolicy::new(
            ActionBox::symmetric(1, 1.0).unwrap(),
            Arc::new(|x: &[f64]| vec![0.3 * x[0]]),
            Arc::new(|x: &[f64]| vec![(2.0 * PI * x[0]).cos()]),
        );
        let est = AdvantageEstimate::new(f.clone(), policy.clone()).unwrap();
        let x = [0.4];
        let a = [0.9];
        let q = advantage_general(&f, &x, &a, &|x, a| policy.controlled_drift(x, a), &|x| policy.policy_drift(x));
        assert!((q - est.advantage(&x, &a).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn bound_check_exact_and_scaling() {
        let truth: CoeffMap = [(MultiIndex(vec![0]), 0.5), (MultiIndex(vec![-1]), 0.1)].into_iter().collect();
        let policy = ControlAffinePolicy::constant_mean(ActionBox::symmetric(1, 1.0).unwrap(), vec![0.0]).unwrap();
        let samples = sample_state_actions(&policy.actions, 10_000, 3);
        let r = advantage_error_bound_check(&truth, &truth, &policy, &samples).unwrap();
        assert_eq!((r.max_lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);

        let perturbed = |delta: f64| {
            let mut m = truth.clone();
            *m.get_mut(&MultiIndex(vec![-1])).unwrap() += delta;
            m
        };
        let r1 = advantage_error_bound_check(&perturbed(0.01), &truth, &policy, &samples).unwrap();
        let r2 = advantage_error_bound_check(&perturbed(0.02), &truth, &policy, &samples).unwrap();
        assert!(r1.holds && r2.holds && r1.holds_in_mean);
        assert!((r2.rhs / r1.rhs - 4.0).abs() < 1e-9);
        assert!((r2.max_lhs / r1.max_lhs - 4.0).abs() < 1e-9);
    }

    #[test]
    fn grid_csv() {
        let basis = FourierBasis::build(1, 1).unwrap();
        let policy = ControlAffinePolicy::constant_mean(ActionBox::symmetric(1, 1.0).unwrap(), vec![0.0]).unwrap();
        let est = AdvantageEstimate::new(cosine_estimate(&basis, 1.0), policy).unwrap();
        let rows = est.grid(&[vec![0.0], vec![0.5]], &[vec![-1.0], vec![1.0]]).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("x,a,q_hat\n"));
    }
}
