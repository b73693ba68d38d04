//! Real Fourier features on the unit torus `[0,1)^d`.
//!
//! Features are indexed by multi-indices `α ∈ Z^d` with `‖α‖₁ ≤ n`. The
//! complex mode `exp(2πi⟨α,x⟩)` is replaced by a real pair: for every
//! `{α, −α}` the member whose first nonzero entry is negative carries
//! `√2·cos(2π⟨α,x⟩)` and the other member carries `√2·sin(2π⟨α,x⟩)`. The
//! constant feature sits at `α = 0`. Under the uniform law the features are
//! orthonormal and their gradients are orthogonal, so both Gram matrices are
//! diagonal.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_CAP: usize = 20_000;

const TWO_PI: f64 = 2.0 * PI;

/// A multi-index `α ∈ Z^d`.
///
/// Ordered canonically: by `‖α‖₁`, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<i32>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> u64 {
        self.0.iter().map(|a| a.unsigned_abs() as u64).sum()
    }

    pub fn l2_squared(&self) -> f64 {
        self.0.iter().map(|&a| (a as f64) * (a as f64)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn neg(&self) -> Self {
        MultiIndex(self.0.iter().map(|a| -a).collect())
    }

    /// True for the member of `{α, −α}` that carries the cosine feature.
    pub fn is_cosine(&self) -> bool {
        matches!(self.0.iter().find(|&&a| a != 0), Some(&a) if a < 0)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        MultiIndex(perm.iter().map(|&p| self.0[p]).collect())
    }

    fn phase(&self, x: &[f64]) -> f64 {
        TWO_PI * self.0.iter().zip(x).map(|(&a, &xi)| a as f64 * xi).sum::<f64>()
    }

    /// Value of the real feature attached to this index.
    pub fn feature(&self, x: &[f64]) -> f64 {
        if self.is_zero() {
            return 1.0;
        }
        let phase = self.phase(x);
        if self.is_cosine() {
            SQRT_2 * phase.cos()
        } else {
            SQRT_2 * phase.sin()
        }
    }

    /// Writes the feature gradient into `out` (length `d`).
    pub fn feature_gradient(&self, x: &[f64], out: &mut [f64]) {
        if self.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let phase = self.phase(x);
        let scale = if self.is_cosine() {
            -SQRT_2 * TWO_PI * phase.sin()
        } else {
            SQRT_2 * TWO_PI * phase.cos()
        };
        for (o, &a) in out.iter_mut().zip(&self.0) {
            *o = scale * a as f64;
        }
    }

    /// `1 + (2π)²‖α‖₂²`, the H¹ weight of a unit-coefficient mode.
    pub fn h1_weight(&self) -> f64 {
        1.0 + TWO_PI * TWO_PI * self.l2_squared()
    }

    /// H² weight: adds the squared Frobenius norm `(2π)⁴‖α‖₂⁴` of the Hessian.
    pub fn h2_weight(&self) -> f64 {
        let q = self.l2_squared();
        self.h1_weight() + TWO_PI.powi(4) * q * q
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.l1()
            .cmp(&other.l1())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Finitely supported function in the real Fourier encoding, keyed by α.
pub type CoeffMap = BTreeMap<MultiIndex, f64>;

/// Evaluates `Σ c_α ψ_α(x)` for a coefficient map.
pub fn eval_coeff_map(coeffs: &CoeffMap, x: &[f64]) -> f64 {
    coeffs.iter().map(|(a, c)| c * a.feature(x)).sum()
}

/// `a − b` over the union of supports.
pub fn coeff_diff(a: &CoeffMap, b: &CoeffMap) -> CoeffMap {
    let mut out = a.clone();
    for (k, v) in b {
        *out.entry(k.clone()).or_insert(0.0) -= v;
    }
    out
}

/// Number of `α ∈ Z^d` with `‖α‖₁ ≤ n`: `Σ_k 2^k C(d,k) C(n,k)`.
pub fn lattice_count(dim: usize, degree: usize) -> u128 {
    fn binom(n: usize, k: usize) -> u128 {
        (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
    }
    (0..=dim.min(degree))
        .map(|k| (1u128 << k) * binom(dim, k) * binom(degree, k))
        .sum()
}

fn enumerate_l1_ball(dim: usize, degree: usize) -> Vec<MultiIndex> {
    fn rec(prefix: &mut Vec<i32>, dim: usize, budget: i32, out: &mut Vec<MultiIndex>) {
        if prefix.len() == dim {
            out.push(MultiIndex(prefix.clone()));
            return;
        }
        for a in -budget..=budget {
            prefix.push(a);
            rec(prefix, dim, budget - a.abs(), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(dim), dim, degree as i32, &mut out);
    out.sort();
    out
}

/// Real Fourier feature map with closed-form Gram matrices under the
/// uniform stationary law.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    dim: usize,
    degree: Option<usize>,
    indices: Vec<MultiIndex>,
    h1: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BasisDescriptor {
    pub d: usize,
    pub n: Option<usize>,
    pub ordering: Vec<MultiIndex>,
}

impl FourierBasis {
    /// All modes with `‖α‖₁ ≤ degree`, under the default feature cap.
    pub fn build(dim: usize, degree: usize) -> Result<Self> {
        Self::build_with_cap(dim, degree, DEFAULT_FEATURE_CAP)
    }

    pub fn build_with_cap(dim: usize, degree: usize, cap: usize) -> Result<Self> {
        if dim == 0 || degree == 0 {
            return Err(Error::InvalidArgument(format!(
                "basis needs d >= 1 and n >= 1, got d={dim}, n={degree}"
            )));
        }
        let m = lattice_count(dim, degree);
        if m > cap as u128 {
            return Err(Error::BasisTooLarge {
                m: m.min(usize::MAX as u128) as usize,
                cap,
            });
        }
        let indices = enumerate_l1_ball(dim, degree);
        debug_assert_eq!(indices.len() as u128, m);
        let mut basis = Self::from_sorted(dim, indices);
        basis.degree = Some(degree);
        Ok(basis)
    }

    /// Basis on an explicit index set (sorted and deduplicated).
    pub fn from_indices(dim: usize, mut indices: Vec<MultiIndex>) -> Result<Self> {
        if dim == 0 || indices.is_empty() {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        if let Some(bad) = indices.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        indices.sort();
        indices.dedup();
        Ok(Self::from_sorted(dim, indices))
    }

    fn from_sorted(dim: usize, indices: Vec<MultiIndex>) -> Self {
        let h1 = indices.iter().map(MultiIndex::h1_weight).collect();
        FourierBasis {
            dim,
            degree: None,
            indices,
            h1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> Option<usize> {
        self.degree
    }

    /// Number of features `m`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.binary_search(alpha).ok()
    }

    /// Diagonal of `H₁`: `1 + (2π)²‖α‖₂²`.
    pub fn h1_diag(&self) -> &[f64] {
        &self.h1
    }

    pub fn gram_h0(&self) -> DMatrix<f64> {
        DMatrix::identity(self.len(), self.len())
    }

    pub fn gram_h1(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.h1))
    }

    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for (o, a) in out.iter_mut().zip(&self.indices) {
            *o = a.feature(x);
        }
    }

    pub fn features(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.indices.iter().map(|a| a.feature(x)))
    }

    /// Features `ψ(x)` and their gradients as an `m × d` matrix.
    pub fn eval_features(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let psi = self.features(x);
        let mut grad = DMatrix::zeros(self.len(), self.dim);
        let mut row = vec![0.0; self.dim];
        for (j, a) in self.indices.iter().enumerate() {
            a.feature_gradient(x, &mut row);
            for (k, &g) in row.iter().enumerate() {
                grad[(j, k)] = g;
            }
        }
        (psi, grad)
    }

    /// Generator applied to each feature,
    /// `(Aψ)_j(x) = ⟨b(x), ∇ψ_j(x)⟩ + ½ Tr(Λ(x) ∇²ψ_j(x))`.
    ///
    /// Models with a closed-form spectrum use `(Aψ)_j = −λ_α ψ_j`.
    pub fn generator_action(&self, model: &DiffusionModel, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        self.generator_action_into(model, x, out.as_mut_slice());
        out
    }

    pub fn generator_action_into(&self, model: &DiffusionModel, x: &[f64], out: &mut [f64]) {
        if model.has_spectrum() {
            for (o, a) in out.iter_mut().zip(&self.indices) {
                let lambda = model.spectrum(a).unwrap_or(0.0);
                *o = -lambda * a.feature(x);
            }
            return;
        }
        let drift = model.drift(x);
        let lambda = model.diffusion(x);
        let mut grad = vec![0.0; self.dim];
        for (o, a) in out.iter_mut().zip(&self.indices) {
            a.feature_gradient(x, &mut grad);
            let transport: f64 = drift.iter().zip(&grad).map(|(b, g)| b * g).sum();
            // ∇²ψ = −(2π)² α αᵀ ψ
            let alpha = DVector::from_iterator(self.dim, a.0.iter().map(|&v| v as f64));
            let quad = alpha.dot(&(&lambda * &alpha));
            *o = transport - 0.5 * TWO_PI * TWO_PI * quad * a.feature(x);
        }
    }

    /// Reconstructs `exp(2πi⟨α,x⟩)` as `(re, im)` from the real features of
    /// the pair `{α, −α}`. Returns `None` when the pair is not in the basis.
    pub fn complex_mode(&self, alpha: &MultiIndex, x: &[f64]) -> Option<(f64, f64)> {
        if alpha.is_zero() {
            return self.position(alpha).map(|_| (1.0, 0.0));
        }
        let partner = alpha.neg();
        self.position(alpha)?;
        self.position(&partner)?;
        let (cos_member, sin_member) = if alpha.is_cosine() {
            (alpha, &partner)
        } else {
            (&partner, alpha)
        };
        let re = cos_member.feature(x) / SQRT_2;
        // sin(2π⟨α,x⟩) relative to the sine member's own index
        let sign = if sin_member == alpha { 1.0 } else { -1.0 };
        let im = sign * sin_member.feature(x) / SQRT_2;
        Some((re, im))
    }

    /// Coefficient vector → coefficient map (drops exact zeros).
    pub fn to_coeff_map(&self, theta: &DVector<f64>) -> CoeffMap {
        self.indices
            .iter()
            .zip(theta.iter())
            .filter(|(_, &c)| c != 0.0)
            .map(|(a, &c)| (a.clone(), c))
            .collect()
    }

    /// Coefficient map → coefficient vector. Modes outside the basis are
    /// dropped, which is the L²(uniform) projection.
    pub fn project(&self, coeffs: &CoeffMap) -> DVector<f64> {
        let mut theta = DVector::zeros(self.len());
        for (a, &c) in coeffs {
            if let Some(j) = self.position(a) {
                theta[j] = c;
            }
        }
        theta
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor {
            d: self.dim,
            n: self.degree,
            ordering: self.indices.clone(),
        }
    }

    /// Grid estimate of the boundedness constant `D_m`:
    /// `D_m² = sup_x ‖H₁^{-1/2}ψ(x)‖ · sup_y (‖H₁^{-1/2}ψ(y)‖ + ‖H₁^{-1/2}∇ψ(y)‖_F + ‖H₁^{-1/2}Aψ(y)‖)`.
    ///
    /// This is a numerical sup over a regular grid, not a certified bound.
    pub fn bounded_feature_constant(&self, model: &DiffusionModel, points_per_axis: usize) -> f64 {
        let total = points_per_axis.pow(self.dim as u32);
        let mut x = vec![0.0; self.dim];
        let mut psi = vec![0.0; self.len()];
        let mut gen = vec![0.0; self.len()];
        let mut grad = vec![0.0; self.dim];
        let (mut sup_a, mut sup_b) = (0.0f64, 0.0f64);
        for flat in 0..total {
            let mut rem = flat;
            for xi in x.iter_mut() {
                *xi = (rem % points_per_axis) as f64 / points_per_axis as f64;
                rem /= points_per_axis;
            }
            self.features_into(&x, &mut psi);
            self.generator_action_into(model, &x, &mut gen);
            let mut a2 = 0.0;
            let mut g2 = 0.0;
            let mut gen2 = 0.0;
            for (j, alpha) in self.indices.iter().enumerate() {
                let w = self.h1[j];
                a2 += psi[j] * psi[j] / w;
                gen2 += gen[j] * gen[j] / w;
                alpha.feature_gradient(&x, &mut grad);
                g2 += grad.iter().map(|g| g * g).sum::<f64>() / w;
            }
            let a = a2.sqrt();
            sup_a = sup_a.max(a);
            sup_b = sup_b.max(a + g2.sqrt() + gen2.sqrt());
        }
        (sup_a * sup_b).sqrt()
    }
}

/// A function `f = θᵀψ` in the span of a basis.
#[derive(Debug, Clone)]
pub struct FunctionInSpan<'a> {
    pub basis: &'a FourierBasis,
    pub coeffs: DVector<f64>,
}

impl<'a> FunctionInSpan<'a> {
    pub fn new(basis: &'a FourierBasis, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        Ok(FunctionInSpan { basis, coeffs })
    }

    pub fn zero(basis: &'a FourierBasis) -> Self {
        FunctionInSpan {
            basis,
            coeffs: DVector::zeros(basis.len()),
        }
    }

    pub fn from_coeff_map(basis: &'a FourierBasis, coeffs: &CoeffMap) -> Self {
        FunctionInSpan {
            basis,
            coeffs: basis.project(coeffs),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.basis
            .indices()
            .iter()
            .zip(self.coeffs.iter())
            .filter(|(_, &c)| c != 0.0)
            .map(|(a, c)| c * a.feature(x))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.basis.dim();
        let mut out = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (a, &c) in self.basis.indices().iter().zip(self.coeffs.iter()) {
            if c == 0.0 {
                continue;
            }
            a.feature_gradient(x, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += c * gi;
            }
        }
        out
    }

    /// `(Af)(x)` through the basis generator action.
    pub fn generator(&self, model: &DiffusionModel, x: &[f64]) -> f64 {
        self.basis.generator_action(model, x).dot(&self.coeffs)
    }

    /// `‖f‖_{L²} = √(θᵀH₀θ)`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.norm()
    }

    /// `‖f‖_{H¹} = √(θᵀH₁θ)`.
    pub fn h1_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(self.basis.h1_diag())
            .map(|(c, w)| w * c * c)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_coeff_map(&self) -> CoeffMap {
        self.basis.to_coeff_map(&self.coeffs)
    }
}
