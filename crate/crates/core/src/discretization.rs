//! Order-ν time discretization of the Bellman equation.
//!
//! The reward integral over one block `[0, (ν−1)η]` is approximated by
//! interpolating the reward on the equispaced nodes `0, η, …, (ν−1)η` with
//! Lagrange polynomials `W_i` and integrating against `e^{−βs}`. The reward
//! coefficients are `κ_i = (1/η) ∫₀^{(ν−1)η} e^{−βs} W_i(s) ds`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 8;

/// Dense polynomial in the monomial basis, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    /// Multiplies in place by `(s − root)`.
    fn mul_linear(&mut self, root: f64) {
        let mut next = vec![0.0; self.coeffs.len() + 1];
        for (k, &c) in self.coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= root * c;
        }
        self.coeffs = next;
    }

    fn scale(&mut self, factor: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= factor);
    }
}

fn check_order(order: usize) -> Result<()> {
    if (2..=MAX_ORDER).contains(&order) {
        Ok(())
    } else {
        Err(Error::UnsupportedOrder(order))
    }
}

fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step must be positive, got {step}")))
    }
}

/// Lagrange polynomials on the integer nodes `0, 1, …, order−1`.
fn unit_lagrange(order: usize) -> Vec<Polynomial> {
    shifted_lagrange(order, 0.0)
}

/// Lagrange polynomials in `v = u − shift` on the nodes `j − shift`.
fn shifted_lagrange(order: usize, shift: f64) -> Vec<Polynomial> {
    (0..order)
        .map(|i| {
            let mut p = Polynomial::new(vec![1.0]);
            let mut denom = 1.0;
            for j in (0..order).filter(|&j| j != i) {
                p.mul_linear(j as f64 - shift);
                denom *= i as f64 - j as f64;
            }
            p.scale(1.0 / denom);
            p
        })
        .collect()
}

/// Lagrange weight polynomials `W_i(s)` on the nodes `0, η, …, (ν−1)η`,
/// expressed in the physical variable `s`.
pub fn lagrange_weights(order: usize, step: f64) -> Result<Vec<Polynomial>> {
    check_order(order)?;
    check_step(step)?;
    Ok(unit_lagrange(order)
        .into_iter()
        .map(|p| {
            let coeffs = p
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| c / step.powi(k as i32))
                .collect();
            Polynomial::new(coeffs)
        })
        .collect())
}

/// Exponential moments `J_k = ∫₀^L e^{−c u} u^k du` for `k = 0..=max_k`.
///
/// For moderate `cL` the moments are summed from the all-positive series
/// `J_k = L^{k+1} e^{−cL} Σ_p (cL)^p k!/(k+1+p)!`; for large `cL` the
/// forward recurrence `J_k = (k J_{k−1} − L^k e^{−cL}) / c` is stable.
pub fn exponential_moments(rate: f64, length: f64, max_k: usize) -> Vec<f64> {
    if rate == 0.0 {
        return (0..=max_k)
            .map(|k| length.powi(k as i32 + 1) / (k + 1) as f64)
            .collect();
    }
    let x = rate * length;
    let tail = (-x).exp();
    if x > 30.0 {
        let mut out = Vec::with_capacity(max_k + 1);
        let mut prev = (1.0 - tail) / rate;
        out.push(prev);
        for k in 1..=max_k {
            prev = (k as f64 * prev - length.powi(k as i32) * tail) / rate;
            out.push(prev);
        }
        return out;
    }
    (0..=max_k)
        .map(|k| {
            let mut term = 1.0 / (k + 1) as f64;
            let mut sum = term;
            let mut p = 0usize;
            while term > 1e-18 * sum {
                term *= x / (k + 2 + p) as f64;
                sum += term;
                p += 1;
            }
            length.powi(k as i32 + 1) * tail * sum
        })
        .collect()
}

/// `∫_{−c}^{c} e^{−r(c+v)} v^k dv` for `k = 0..=max_k`, assuming `rc` is moderate.
fn centred_moments(rate: f64, half: f64, max_k: usize) -> Vec<f64> {
    if rate == 0.0 {
        return (0..=max_k)
            .map(|k| if k % 2 == 0 { 2.0 * half.powi(k as i32 + 1) / (k + 1) as f64 } else { 0.0 })
            .collect();
    }
    let x = rate * half;
    let damp = (-x).exp();
    let left = exponential_moments(rate, half, max_k);
    (0..=max_k)
        .map(|k| {
            // ∫₀^c e^{rv} v^k dv = c^{k+1} Σ_p (rc)^p / (p! (k+1+p))
            let mut term = 1.0;
            let mut sum = 1.0 / (k + 1) as f64;
            let mut p = 0usize;
            loop {
                p += 1;
                term *= x / p as f64;
                let add = term / (k + 1 + p) as f64;
                sum += add;
                if add < 1e-18 * sum {
                    break;
                }
            }
            let right = half.powi(k as i32 + 1) * sum;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            damp * left[k] + sign * damp * right
        })
        .collect()
}

/// `κ_i = (1/η) ∫₀^{(ν−1)η} e^{−βs} W_i(s) ds` for `i = 0..ν`.
pub fn kappa_coefficients(order: usize, step: f64, discount: f64) -> Result<Vec<f64>> {
    check_order(order)?;
    check_step(step)?;
    if !(discount.is_finite() && discount >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discount must be >= 0, got {discount}"
        )));
    }
    // substitute s = ηu: κ_i = ∫₀^{ν−1} e^{−βη u} ℓ_i(u) du
    let rate = discount * step;
    let length = (order - 1) as f64;
    let (polys, moments) = if rate * length <= 30.0 {
        // expanding about the midpoint keeps the monomial coefficients small
        let half = 0.5 * length;
        (shifted_lagrange(order, half), centred_moments(rate, half, order - 1))
    } else {
        (unit_lagrange(order), exponential_moments(rate, length, order - 1))
    };
    Ok(polys
        .iter()
        .map(|p| p.coeffs.iter().zip(&moments).map(|(c, j)| c * j).sum())
        .collect())
}

/// Complete order-ν discretization: node weights and reward coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationScheme {
    #[serde(rename = "nu")]
    order: usize,
    #[serde(rename = "eta")]
    step: f64,
    #[serde(rename = "beta")]
    discount: f64,
    #[serde(skip)]
    weights: Vec<Polynomial>,
    kappas: Vec<f64>,
}

#[derive(Deserialize)]
struct SchemeRepr {
    nu: usize,
    eta: f64,
    beta: f64,
}

impl<'de> Deserialize<'de> for DiscretizationScheme {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Full {
            #[serde(flatten)]
            repr: SchemeRepr,
            #[allow(dead_code)]
            kappas: Option<Vec<f64>>,
        }
        let full = Full::deserialize(de)?;
        DiscretizationScheme::new(full.repr.nu, full.repr.eta, full.repr.beta)
            .map_err(serde::de::Error::custom)
    }
}

impl DiscretizationScheme {
    pub fn new(order: usize, step: f64, discount: f64) -> Result<Self> {
        let weights = lagrange_weights(order, step)?;
        let kappas = kappa_coefficients(order, step, discount)?;
        Ok(DiscretizationScheme {
            order,
            step,
            discount,
            weights,
            kappas,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn weights(&self) -> &[Polynomial] {
        &self.weights
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    /// Block length `(ν−1)η`.
    pub fn horizon(&self) -> f64 {
        (self.order - 1) as f64 * self.step
    }

    /// `e^{−β(ν−1)η}`.
    pub fn block_discount(&self) -> f64 {
        (-self.discount * self.horizon()).exp()
    }

    /// `Σ_i κ_i`, which equals `(1 − e^{−β(ν−1)η})/(βη)` (or `ν−1` at β = 0).
    pub fn kappa_sum(&self) -> f64 {
        self.kappas.iter().sum()
    }
}
