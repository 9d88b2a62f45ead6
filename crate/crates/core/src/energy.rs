//! Discrete energies on a [`KernelWeights`] kernel.
//!
//! All pair sums run over ordered pairs `(i, j)`, `i ≠ j`, in `R^N × R^N`;
//! because the kernel is symmetric each stored pair is counted twice, and
//! each interior/exterior coupling is counted twice as well (`(x, y)` and
//! `(y, x)`). With this convention
//!
//! ```text
//! [u]        = Σ_{i≠j} w_ij |u_i - u_j| + 2 Σ_i b_i |u_i|
//! Φ_p(u)     = 1/(2p) [ Σ_{i≠j} v² (|u_i - u_j| / d_ij^{N+s})^p + 2 Σ_i t_i(p) |u_i|^p ]
//! J_p(u)     = (4/h) Φ_p(u) + v Σ_i ((u_i - u⁰_i)/h - f_i)²
//! ```
//!
//! `Φ_p` uses the continuation family `s_p = N + s - N/p`, whose kernel
//! exponent is `N + s_p p = p (N + s)`: every pair weight becomes
//! `v² d^{-p(N+s)}` and the exterior coupling `t_i(p)` is the same
//! quadrature as `b_i` with exponent `p (N + s)`. At `p = 1` everything
//! reduces to the `s` kernel and `J_1 = (2/h) [u] + fidelity`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::KernelWeights;

/// One value per interior cell; the exterior is implicitly zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Field(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `sqrt(v Σ u_i²)`
    pub fn l2_norm(&self, volume: f64) -> f64 {
        (volume * self.0.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    pub fn l2_distance(&self, other: &Field, volume: f64) -> f64 {
        (volume
            * self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
        .sqrt()
    }

    pub fn max_distance(&self, other: &Field) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, factor: f64) -> Field {
        Field(self.0.iter().map(|x| factor * x).collect())
    }

    /// `(1 - θ) self + θ other`
    pub fn lerp(&self, other: &Field, theta: f64) -> Field {
        Field(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

/// Data of one implicit step: previous state, averaged source, step size.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub u_prev: Field,
    pub f_step: Field,
    pub h: f64,
}

impl StepData {
    pub fn new(u_prev: Field, f_step: Field, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {h}"
            )));
        }
        if u_prev.len() != f_step.len() {
            return Err(Error::ShapeMismatch {
                expected: u_prev.len(),
                got: f_step.len(),
            });
        }
        Ok(StepData { u_prev, f_step, h })
    }

    pub fn len(&self) -> usize {
        self.u_prev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_prev.is_empty()
    }

    /// Implicit-Euler target `u⁰ + h f`.
    pub fn target(&self) -> Field {
        Field(
            self.u_prev
                .0
                .iter()
                .zip(&self.f_step.0)
                .map(|(u, f)| u + self.h * f)
                .collect(),
        )
    }

    /// Size of the data in the units of `u_t`: `max(1, ‖u⁰‖_∞ / h + ‖f‖_∞)`.
    pub fn rate_scale(&self) -> f64 {
        (self.u_prev.max_abs() / self.h + self.f_step.max_abs()).max(1.0)
    }

    /// Size of the data in the units of `u`: `max(1, ‖u⁰‖_∞ + h ‖f‖_∞)`.
    pub fn value_scale(&self) -> f64 {
        (self.u_prev.max_abs() + self.h * self.f_step.max_abs()).max(1.0)
    }

    pub(crate) fn check(&self, kernel: &KernelWeights) -> Result<()> {
        check_len(kernel, &self.u_prev)?;
        check_len(kernel, &self.f_step)
    }
}

pub(crate) fn check_len(kernel: &KernelWeights, u: &Field) -> Result<()> {
    if u.len() != kernel.len() {
        return Err(Error::ShapeMismatch {
            expected: kernel.len(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Kernel coefficients of `Φ_p` for one `p`: pair factors `v² d^{-p(N+s)}`
/// (same order as [`KernelWeights::pairs`]) and exterior couplings `t_i(p)`.
#[derive(Debug, Clone)]
pub struct PowerFamily {
    p: f64,
    pair: Vec<f64>,
    tail: Vec<f64>,
}

impl PowerFamily {
    pub fn new(kernel: &KernelWeights, p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
        }
        if p == 1.0 {
            return Ok(PowerFamily {
                p,
                pair: kernel.pairs().iter().map(|w| w.weight).collect(),
                tail: kernel.exterior_weights().to_vec(),
            });
        }
        let v2 = kernel.volume() * kernel.volume();
        let pair = kernel
            .pairs()
            .iter()
            .map(|w| v2 * w.kernel.powf(p))
            .collect();
        let tail = kernel
            .exterior_quadrature()
            .couplings(p * kernel.exponent());
        Ok(PowerFamily { p, pair, tail })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn pair_coefficients(&self) -> &[f64] {
        &self.pair
    }

    pub fn exterior_coefficients(&self) -> &[f64] {
        &self.tail
    }

    pub fn phi(&self, u: &Field, kernel: &KernelWeights) -> f64 {
        let p = self.p;
        let x = u.values();
        let pairs: f64 = kernel
            .pairs()
            .iter()
            .zip(&self.pair)
            .map(|(w, c)| c * (x[w.i] - x[w.j]).abs().powf(p))
            .sum();
        let ext: f64 = x
            .iter()
            .zip(&self.tail)
            .map(|(ui, t)| t * ui.abs().powf(p))
            .sum();
        // unordered pairs appear twice in the ordered sum
        (2.0 * pairs + 2.0 * ext) / (2.0 * p)
    }

    /// `∂Φ_p/∂u_i = Σ_j c_ij |u_i - u_j|^{p-1} sgn(u_i - u_j) + t_i |u_i|^{p-1} sgn(u_i)`.
    pub fn phi_gradient(&self, u: &Field, kernel: &KernelWeights) -> Vec<f64> {
        let p = self.p;
        let x = u.values();
        let mut g: Vec<f64> = x
            .iter()
            .zip(&self.tail)
            .map(|(ui, t)| t * signed_pow(*ui, p - 1.0))
            .collect();
        for (w, c) in kernel.pairs().iter().zip(&self.pair) {
            let flux = c * signed_pow(x[w.i] - x[w.j], p - 1.0);
            g[w.i] += flux;
            g[w.j] -= flux;
        }
        g
    }
}

/// `sgn(t) |t|^e`, with `sgn(0) = 0`.
pub(crate) fn signed_pow(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.signum() * t.abs().powf(e)
    }
}

/// `v Σ ((u - u⁰)/h - f)²`
pub fn fidelity(u: &Field, step: &StepData, volume: f64) -> f64 {
    let h = step.h;
    volume
        * u.0
            .iter()
            .zip(&step.u_prev.0)
            .zip(&step.f_step.0)
            .map(|((u, u0), f)| ((u - u0) / h - f).powi(2))
            .sum::<f64>()
}

/// Fractional `W^{s,1}` seminorm of the zero extension of `u`.
pub fn seminorm_s1(u: &Field, kernel: &KernelWeights) -> Result<f64> {
    check_len(kernel, u)?;
    let x = u.values();
    let pairs: f64 = kernel
        .pairs()
        .iter()
        .map(|w| w.weight * (x[w.i] - x[w.j]).abs())
        .sum();
    let ext: f64 = x
        .iter()
        .zip(kernel.exterior_weights())
        .map(|(ui, b)| b * ui.abs())
        .sum();
    Ok(2.0 * pairs + 2.0 * ext)
}

pub fn phi_sp(u: &Field, kernel: &KernelWeights, p: f64) -> Result<f64> {
    check_len(kernel, u)?;
    Ok(PowerFamily::new(kernel, p)?.phi(u, kernel))
}

pub fn j_sp(u: &Field, step: &StepData, kernel: &KernelWeights, p: f64) -> Result<f64> {
    check_len(kernel, u)?;
    step.check(kernel)?;
    let phi = PowerFamily::new(kernel, p)?.phi(u, kernel);
    Ok(4.0 / step.h * phi + fidelity(u, step, kernel.volume()))
}

/// `J_1`, the objective of one implicit step.
pub fn j_s1(u: &Field, step: &StepData, kernel: &KernelWeights) -> Result<f64> {
    step.check(kernel)?;
    Ok(2.0 / step.h * seminorm_s1(u, kernel)? + fidelity(u, step, kernel.volume()))
}

/// Gradient of `J_p` for `p > 1`:
/// `(4/h) ∂Φ_p/∂u_i + (2v/h) ((u_i - u⁰_i)/h - f_i)`.
pub fn grad_j_sp(u: &Field, step: &StepData, kernel: &KernelWeights, p: f64) -> Result<Field> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gradient needs p > 1, got {p}"
        )));
    }
    check_len(kernel, u)?;
    step.check(kernel)?;
    let family = PowerFamily::new(kernel, p)?;
    Ok(Field(j_gradient(&family, u, step, kernel)))
}

pub(crate) fn j_gradient(
    family: &PowerFamily,
    u: &Field,
    step: &StepData,
    kernel: &KernelWeights,
) -> Vec<f64> {
    let h = step.h;
    let v = kernel.volume();
    family
        .phi_gradient(u, kernel)
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            4.0 / h * d + 2.0 * v / h * ((u.0[i] - step.u_prev.0[i]) / h - step.f_step.0[i])
        })
        .collect()
}
