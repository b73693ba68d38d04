//! Single-trajectory LSTD estimator.
//!
//! With `N = floor(T/η) − ν + 1` overlapping blocks,
//!
//! ```text
//! Â_N = (Nη)⁻¹ Σ_k ψ(X_kη) (ψ(X_kη) − e^{−β(ν−1)η} ψ(X_{(k+ν−1)η}))ᵀ
//! b̂_N = N⁻¹  Σ_k Σ_i κ_i R_{(k+i)η} ψ(X_kη)
//! ```
//!
//! and `θ̂ = Â_N⁻¹ b̂_N`. The normalisation keeps both objects `O(1)` in `T`
//! and cancels in the solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{FourierBasis, FunctionInSpan};
use crate::diffusion::Trajectory;
use crate::discretization::DiscretizationScheme;
use crate::error::{Error, Result};

pub const STRICT_CONDITION_LIMIT: f64 = 1e12;
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

/// Assembled empirical system.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    /// Number of blocks `N`.
    pub samples: usize,
}

/// Feature matrix with one row per observation in `0..rows`.
fn feature_rows(traj: &Trajectory, basis: &FourierBasis, rows: usize) -> DMatrix<f64> {
    let m = basis.len();
    let mut psi = DMatrix::zeros(rows, m);
    let mut buf = vec![0.0; m];
    for k in 0..rows {
        basis.features_into(traj.state(k), &mut buf);
        for (j, &v) in buf.iter().enumerate() {
            psi[(k, j)] = v;
        }
    }
    psi
}

pub fn block_count(traj: &Trajectory, order: usize) -> Option<usize> {
    let intervals = traj.len() - 1;
    (intervals >= order).then(|| intervals - order + 1)
}

pub fn assemble(traj: &Trajectory, basis: &FourierBasis, scheme: &DiscretizationScheme) -> Result<Assembled> {
    if traj.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: traj.dim(),
        });
    }
    if (traj.step() - scheme.step()).abs() > 1e-12 * scheme.step() {
        return Err(Error::InvalidArgument(format!(
            "trajectory step {} differs from scheme step {}",
            traj.step(),
            scheme.step()
        )));
    }
    let order = scheme.order();
    let n = block_count(traj, order).ok_or(Error::TrajectoryTooShort {
        observations: traj.len(),
        needed: order + 1,
    })?;
    let lag = order - 1;
    let psi = feature_rows(traj, basis, n + lag);
    let head = psi.rows(0, n);
    let tail = psi.rows(lag, n);
    let gamma = scheme.block_discount();

    let diff = &head - &tail * gamma;
    let a_hat = head.transpose() * diff / (n as f64 * scheme.step());

    let kappas = scheme.kappas();
    let rewards = traj.rewards();
    let weights = DVector::from_iterator(
        n,
        (0..n).map(|k| kappas.iter().enumerate().map(|(i, c)| c * rewards[k + i]).sum::<f64>()),
    );
    let b_hat = head.transpose() * weights / n as f64;

    Ok(Assembled {
        a_hat,
        b_hat,
        samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPolicy {
    /// Direct solve; fails above [`STRICT_CONDITION_LIMIT`].
    #[default]
    Strict,
    /// Solves `(Â + λ I) θ = b̂`; `None` picks `λ = 1e-8 · tr(Â) / m`.
    Ridge(Option<f64>),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub theta: DVector<f64>,
    /// 2-norm condition estimate of the unregularised matrix.
    pub condition: f64,
    /// Ridge penalty, when one was applied.
    pub ridge: Option<f64>,
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, policy: SolverPolicy) -> Result<Solution> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "system matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let condition = condition_number(a);
    match policy {
        SolverPolicy::Strict => {
            if !(condition <= STRICT_CONDITION_LIMIT) {
                return Err(Error::IllConditioned {
                    condition,
                    limit: STRICT_CONDITION_LIMIT,
                });
            }
            let theta = a.clone().lu().solve(b).ok_or(Error::IllConditioned {
                condition: f64::INFINITY,
                limit: STRICT_CONDITION_LIMIT,
            })?;
            Ok(Solution {
                theta,
                condition,
                ridge: None,
            })
        }
        SolverPolicy::Ridge(lambda) => {
            let m = a.nrows();
            let lambda = lambda.unwrap_or_else(|| DEFAULT_RIDGE_SCALE * a.trace().abs() / m as f64);
            let reg = a + DMatrix::identity(m, m) * lambda;
            let theta = reg.lu().solve(b).ok_or(Error::IllConditioned {
                condition: f64::INFINITY,
                limit: STRICT_CONDITION_LIMIT,
            })?;
            Ok(Solution {
                theta,
                condition,
                ridge: Some(lambda),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRef {
    pub d: usize,
    pub n: Option<usize>,
    pub m: usize,
}

/// A fitted value function with the system it came from.
#[derive(Debug, Clone)]
pub struct LstdEstimate {
    pub theta: DVector<f64>,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub samples: usize,
    pub condition: f64,
    pub ridge: Option<f64>,
    pub scheme: DiscretizationScheme,
    pub basis: BasisRef,
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    theta: Vec<f64>,
    #[serde(rename = "N")]
    n: usize,
    cond: f64,
    scheme: &'a DiscretizationScheme,
    basis_ref: &'a BasisRef,
    flags: Vec<String>,
}

impl LstdEstimate {
    pub fn flags(&self) -> Vec<String> {
        self.ridge.map(|l| format!("ridge={l:e}")).into_iter().collect()
    }

    /// Residual `‖Â θ̂ − b̂‖`.
    pub fn residual(&self) -> f64 {
        (&self.a_hat * &self.theta - &self.b_hat).norm()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(EstimateJson {
            theta: self.theta.iter().copied().collect(),
            n: self.samples,
            cond: self.condition,
            scheme: &self.scheme,
            basis_ref: &self.basis,
            flags: self.flags(),
        })
        .expect("estimate serialises")
    }
}

/// Assembles and solves in one go.
pub fn estimate(
    traj: &Trajectory,
    basis: &FourierBasis,
    scheme: &DiscretizationScheme,
    policy: SolverPolicy,
) -> Result<LstdEstimate> {
    let sys = assemble(traj, basis, scheme)?;
    let sol = solve(&sys.a_hat, &sys.b_hat, policy)?;
    Ok(LstdEstimate {
        theta: sol.theta,
        a_hat: sys.a_hat,
        b_hat: sys.b_hat,
        samples: sys.samples,
        condition: sol.condition,
        ridge: sol.ridge,
        scheme: scheme.clone(),
        basis: BasisRef {
            d: basis.dim(),
            n: basis.degree(),
            m: basis.len(),
        },
    })
}

/// `f̂(x) = ⟨θ̂, ψ(x)⟩`.
pub fn estimate_value<'a>(theta: &DVector<f64>, basis: &'a FourierBasis) -> Result<FunctionInSpan<'a>> {
    FunctionInSpan::new(basis, theta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndex;
    use crate::diffusion::{simulate_trajectory, DiffusionModel, RewardSpec};

    fn brownian() -> DiffusionModel {
        DiffusionModel::torus_brownian(1, 1.0).unwrap()
    }

    #[test]
    fn block_bookkeeping() {
        let r = RewardSpec::constant(1, 0.2, 0.0).unwrap();
        let t = simulate_trajectory(&brownian(), &r, 1.0, 0.1, 4, 1, false).unwrap();
        let basis = FourierBasis::build(1, 1).unwrap();
        let s = DiscretizationScheme::new(2, 0.1, 1.0).unwrap();
        assert_eq!(assemble(&t, &basis, &s).unwrap().samples, 9);
        let s8 = DiscretizationScheme::new(8, 0.1, 1.0).unwrap();
        assert_eq!(assemble(&t, &basis, &s8).unwrap().samples, 3);
        let short = simulate_trajectory(&brownian(), &r, 0.3, 0.1, 4, 1, false).unwrap();
        assert!(matches!(
            assemble(&short, &basis, &s8),
            Err(Error::TrajectoryTooShort { .. })
        ));
    }

    #[test]
    fn constant_only_basis_is_exact() {
        let basis = FourierBasis::from_indices(1, vec![MultiIndex::zero(1)]).unwrap();
        for order in [2, 3] {
            for beta in [0.5, 1.0] {
                let r = RewardSpec::constant(1, 0.3, 0.0).unwrap();
                let s = DiscretizationScheme::new(order, 0.1, beta).unwrap();
                let t = simulate_trajectory(&brownian(), &r, 5.0, 0.1, 2, 4, false).unwrap();
                let est = estimate(&t, &basis, &s, SolverPolicy::Strict).unwrap();
                assert!((est.theta[0] - 0.3 / beta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_diagonal_solves() {
        let b = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let sol = solve(&DMatrix::identity(3, 3), &b, SolverPolicy::Strict).unwrap();
        assert_eq!(sol.theta, b);
        assert!((sol.condition - 1.0).abs() < 1e-12);

        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let sol = solve(&a, &DVector::from_vec(vec![2.0, 8.0]), SolverPolicy::Strict).unwrap();
        assert!((sol.theta[0] - 1.0).abs() < 1e-15 && (sol.theta[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn duplicated_column_strict_vs_ridge() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.2, 0.5, 0.5, 0.1, 0.3, 0.3, 2.0]);
        let b = DVector::from_vec(vec![1.0, 0.5, 0.7]);
        assert!(matches!(
            solve(&a, &b, SolverPolicy::Strict),
            Err(Error::IllConditioned { .. })
        ));
        let sol = solve(&a, &b, SolverPolicy::Ridge(None)).unwrap();
        assert!(sol.theta.iter().all(|v| v.is_finite()));
        let lambda = sol.ridge.unwrap();
        assert!((lambda - 1e-8 * 3.5 / 3.0).abs() < 1e-20);
        assert!(solve(&DMatrix::zeros(2, 3), &b, SolverPolicy::Strict).is_err());
    }

    #[test]
    fn estimate_json_fields() {
        let r = RewardSpec::constant(1, 0.2, 0.1).unwrap();
        let t = simulate_trajectory(&brownian(), &r, 5.0, 0.1, 2, 1, false).unwrap();
        let basis = FourierBasis::build(1, 1).unwrap();
        let s = DiscretizationScheme::new(2, 0.1, 1.0).unwrap();
        let est = estimate(&t, &basis, &s, SolverPolicy::Strict).unwrap();
        assert!(est.residual() <= 1e-10 * est.b_hat.norm());
        let v = est.to_json();
        assert_eq!(v["theta"].as_array().unwrap().len(), 3);
        assert_eq!(v["N"], 49);
        assert_eq!(v["basis_ref"]["m"], 3);
        assert_eq!(v["scheme"]["nu"], 2);
        assert!(v["flags"].as_array().unwrap().is_empty());
    }

    #[test]
    fn value_wrapping() {
        let basis = FourierBasis::build(1, 2).unwrap();
        let mut theta = DVector::zeros(basis.len());
        theta[0] = 1.0;
        let f = estimate_value(&theta, &basis).unwrap();
        for x in [0.0, 0.3, 0.9] {
            assert!((f.value(&[x]) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn policy_serde() {
        assert_eq!(
            serde_json::from_str::<SolverPolicy>("\"strict\"").unwrap(),
            SolverPolicy::Strict
        );
        assert_eq!(
            serde_json::from_str::<SolverPolicy>("{\"ridge\":0.01}").unwrap(),
            SolverPolicy::Ridge(Some(0.01))
        );
    }
}
