//! One implicit step: minimise
//! `J(u) = (2/h) [u] + v Σ ((u - u⁰)/h - f)²`
//! over cell values with zero exterior data.
//!
//! Dividing by `4/h` and writing `c = u⁰ + h f`, `λ = v / (2h)` gives the
//! weighted graph total-variation problem
//! `min Σ_{i<j} w_ij |u_i - u_j| + Σ_i b_i |u_i| + (λ/2) ‖u - c‖²`,
//! whose dual variable is the sign field `Z`.

mod continuation;
mod dual;
mod primal_dual;

use serde::{Deserialize, Serialize};

use crate::energy::{check_len, j_s1, Field, StepData};
use crate::error::{Error, Result};
use crate::grid::KernelWeights;

pub use continuation::{solve_step_continuation, solve_step_p};
pub use primal_dual::{solve_step_primal_dual, solve_step_primal_dual_from};

/// Tolerance on `|Z| ≤ 1` for dual feasibility.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Decreasing exponents `p > 1` of the continuation.
    pub p_schedule: Vec<f64>,
    /// Stationarity tolerance of each `p`-subproblem, relative to the data scale.
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    /// Certified max-norm error of the primal-dual answer, relative to the data scale.
    pub pd_tol: f64,
    pub max_pd_iters: usize,
    /// Step balances `r` of the primal-dual chains run side by side:
    /// `τ = r / ‖K‖`, `σ = 1 / (r ‖K‖)`.
    pub pd_step_ratios: Vec<f64>,
    /// Differences below `delta_sign · scale` count as ties.
    pub delta_sign: f64,
    pub eps_sign: f64,
    /// Acceptance threshold of the normalised weak residual.
    pub residual_tol: f64,
    /// Smoothing length of `|t|^p` in the continuation, relative to the data scale.
    pub smoothing: f64,
    /// Re-solve every time step by continuation and compare.
    pub cross_check: bool,
    /// Allowed max-norm disagreement of the two solvers, relative to the data scale.
    pub cross_check_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            p_schedule: vec![
                1.5, 1.25, 1.1, 1.05, 1.01, 1.005, 1.001, 1.0005, 1.0001, 1.00005, 1.00001,
            ],
            inner_tol: 1e-10,
            max_inner_iters: 5_000,
            pd_tol: 1e-8,
            max_pd_iters: 200_000,
            pd_step_ratios: vec![0.001, 0.003, 0.01, 0.03, 0.1],
            delta_sign: 1e-9,
            eps_sign: 1e-9,
            residual_tol: 1e-6,
            smoothing: 1e-10,
            cross_check: false,
            cross_check_tol: 1e-4,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.p_schedule.is_empty() {
            return bad("p_schedule is empty".into());
        }
        if self.p_schedule.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
            return bad(format!(
                "p_schedule entries must exceed 1: {:?}",
                self.p_schedule
            ));
        }
        if self.p_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!(
                "p_schedule must be strictly decreasing: {:?}",
                self.p_schedule
            ));
        }
        if self.pd_step_ratios.is_empty()
            || self
                .pd_step_ratios
                .iter()
                .any(|r| !(*r > 0.0 && r.is_finite()))
        {
            return bad(format!(
                "pd_step_ratios must be a non-empty list of positive numbers: {:?}",
                self.pd_step_ratios
            ));
        }
        let tols = [
            ("inner_tol", self.inner_tol),
            ("pd_tol", self.pd_tol),
            ("delta_sign", self.delta_sign),
            ("eps_sign", self.eps_sign),
            ("residual_tol", self.residual_tol),
            ("smoothing", self.smoothing),
            ("cross_check_tol", self.cross_check_tol),
        ];
        for (name, t) in tols {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("{name} must be positive, got {t}"));
            }
        }
        if self.max_inner_iters == 0 || self.max_pd_iters == 0 {
            return bad("iteration limits must be positive".into());
        }
        Ok(())
    }
}

/// Antisymmetric dual field. `pair_values[k]` is `Z_ij` for the `k`-th
/// stored pair `i < j`; `Z_ji = -Z_ij` is implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignField {
    pub pair_values: Vec<f64>,
    pub exterior_values: Vec<f64>,
}

impl SignField {
    pub fn zeros(kernel: &KernelWeights) -> Self {
        SignField {
            pair_values: vec![0.0; kernel.pairs().len()],
            exterior_values: vec![0.0; kernel.len()],
        }
    }

    /// Builds the field from ordered values `z(i, j)`, antisymmetrising as
    /// `(z(i, j) - z(j, i)) / 2`.
    pub fn from_ordered(
        kernel: &KernelWeights,
        z: impl Fn(usize, usize) -> f64,
        zeta: Vec<f64>,
    ) -> Result<Self> {
        if zeta.len() != kernel.len() {
            return Err(Error::ShapeMismatch {
                expected: kernel.len(),
                got: zeta.len(),
            });
        }
        let pair_values = kernel
            .pairs()
            .iter()
            .map(|w| 0.5 * (z(w.i, w.j) - z(w.j, w.i)))
            .collect();
        Ok(SignField {
            pair_values,
            exterior_values: zeta,
        })
    }

    /// Ordered value `Z_ij`; zero on the diagonal.
    pub fn get(&self, kernel: &KernelWeights, i: usize, j: usize) -> f64 {
        match kernel.pair_index(i, j) {
            Some(k) if i < j => self.pair_values[k],
            Some(k) => -self.pair_values[k],
            None => 0.0,
        }
    }

    pub fn check_shape(&self, kernel: &KernelWeights) -> Result<()> {
        if self.pair_values.len() != kernel.pairs().len() {
            return Err(Error::ShapeMismatch {
                expected: kernel.pairs().len(),
                got: self.pair_values.len(),
            });
        }
        if self.exterior_values.len() != kernel.len() {
            return Err(Error::ShapeMismatch {
                expected: kernel.len(),
                got: self.exterior_values.len(),
            });
        }
        Ok(())
    }

    /// Largest excess of `|Z|` or `|ζ|` over one.
    pub fn infeasibility(&self) -> f64 {
        self.pair_values
            .iter()
            .chain(&self.exterior_values)
            .map(|z| {
                if z.is_nan() {
                    f64::INFINITY
                } else {
                    z.abs() - 1.0
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest deviation from `sgn(u_i - u_j)` (and `sgn(u_i)`) where the
    /// difference exceeds `delta`.
    pub fn sign_mismatch(&self, u: &Field, kernel: &KernelWeights, delta: f64) -> f64 {
        let x = u.values();
        let pairs = kernel
            .pairs()
            .iter()
            .zip(&self.pair_values)
            .filter(|(w, _)| (x[w.i] - x[w.j]).abs() > delta)
            .map(|(w, z)| (z - (x[w.i] - x[w.j]).signum()).abs());
        let ext = x
            .iter()
            .zip(&self.exterior_values)
            .filter(|(ui, _)| ui.abs() > delta)
            .map(|(ui, z)| (z - ui.signum()).abs());
        pairs.chain(ext).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Continuation,
    PrimalDual,
}

impl std::fmt::Display for SolverTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverTag::Continuation => "continuation",
            SolverTag::PrimalDual => "primal_dual",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub u: Field,
    pub z: SignField,
    /// `J(u)`
    pub objective: f64,
    pub weak_residual: f64,
    pub iterations: usize,
    pub solver_tag: SolverTag,
    /// Certified `ℓ²` distance to the exact minimiser (primal-dual only).
    pub error_bound: Option<f64>,
    /// `(p, u_p)` along the continuation schedule.
    pub p_iterates: Vec<(f64, Field)>,
}

/// Exact minimiser of `(4b/h)|u| + (v/h²)(u - c)²`:
/// `sgn(c) max(|c| - 2bh/v, 0)`.
///
/// Zero lies in the subdifferential `(4b/h)[-1, 1] + (2v/h²)(u - c)` at
/// `u = 0` iff `|c| ≤ 2bh/v`; otherwise the minimiser has the sign of `c`
/// and solves `4b/h + (2v/h²)(|u| - |c|) = 0`.
pub fn soft_threshold_oracle(c: f64, b: f64, h: f64, v: f64) -> Result<f64> {
    if !(b > 0.0 && h > 0.0 && v > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "soft threshold needs b, h, v > 0, got b = {b}, h = {h}, v = {v}"
        )));
    }
    let tau = 2.0 * b * h / v;
    Ok(if c.abs() <= tau {
        0.0
    } else {
        c.signum() * (c.abs() - tau)
    })
}

/// Projects a raw dual onto the admissible set and pins it to the sign of
/// `u` away from ties.
pub fn extract_sign_field(
    u: &Field,
    z_raw: &SignField,
    kernel: &KernelWeights,
    opts: &SolverOptions,
    scale: f64,
) -> Result<SignField> {
    check_len(kernel, u)?;
    z_raw.check_shape(kernel)?;
    let delta = opts.delta_sign * scale;
    let x = u.values();
    let pair_values = kernel
        .pairs()
        .iter()
        .zip(&z_raw.pair_values)
        .map(|(w, z)| {
            let d = x[w.i] - x[w.j];
            if d.abs() > delta {
                d.signum()
            } else {
                z.clamp(-1.0, 1.0)
            }
        })
        .collect();
    let exterior_values = x
        .iter()
        .zip(&z_raw.exterior_values)
        .map(|(ui, z)| {
            if ui.abs() > delta {
                ui.signum()
            } else {
                z.clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok(SignField {
        pair_values,
        exterior_values,
    })
}

/// Weak-form residuals against the cell indicators, per unit volume:
/// `r_i = (u_i - u⁰_i)/h - f_i + (2/v)(Σ_j w_ij Z_ij + b_i ζ_i)`.
pub fn residual_vector(
    u: &Field,
    z: &SignField,
    step: &StepData,
    kernel: &KernelWeights,
) -> Result<Vec<f64>> {
    check_len(kernel, u)?;
    step.check(kernel)?;
    z.check_shape(kernel)?;
    let flux = dual_divergence(z, kernel);
    let v = kernel.volume();
    Ok(u.values()
        .iter()
        .zip(&flux)
        .zip(step.u_prev.values().iter().zip(step.f_step.values()))
        .map(|((ui, q), (u0, f))| (ui - u0) / step.h - f + 2.0 / v * q)
        .collect())
}

/// `max_i |r_i|` normalised by the rate scale of the data.
pub fn weak_residual(
    u: &Field,
    z: &SignField,
    step: &StepData,
    kernel: &KernelWeights,
) -> Result<f64> {
    let r = residual_vector(u, z, step, kernel)?;
    Ok(r.iter().fold(0.0_f64, |m, x| m.max(x.abs())) / step.rate_scale())
}

/// `Σ_{ordered} w_ij (|u_i - u_j| - Z_ij (u_i - u_j)) + 2 Σ_i b_i (|u_i| - ζ_i u_i)`.
pub fn complementary_slackness(u: &Field, z: &SignField, kernel: &KernelWeights) -> Result<f64> {
    check_len(kernel, u)?;
    z.check_shape(kernel)?;
    Ok(2.0 * slackness_terms(u.values(), z, kernel))
}

pub(crate) fn slackness_terms(x: &[f64], z: &SignField, kernel: &KernelWeights) -> f64 {
    let pairs: f64 = kernel
        .pairs()
        .iter()
        .zip(&z.pair_values)
        .map(|(w, zij)| {
            let d = x[w.i] - x[w.j];
            w.weight * (d.abs() - zij * d)
        })
        .sum();
    let ext: f64 = x
        .iter()
        .zip(kernel.exterior_weights())
        .zip(&z.exterior_values)
        .map(|((ui, b), zi)| b * (ui.abs() - zi * ui))
        .sum();
    pairs + ext
}

/// `(Kᵀz)_i = Σ_j w_ij Z_ij + b_i ζ_i`.
pub(crate) fn dual_divergence(z: &SignField, kernel: &KernelWeights) -> Vec<f64> {
    let mut q: Vec<f64> = kernel
        .exterior_weights()
        .iter()
        .zip(&z.exterior_values)
        .map(|(b, zi)| b * zi)
        .collect();
    for (w, zij) in kernel.pairs().iter().zip(&z.pair_values) {
        let t = w.weight * zij;
        q[w.i] += t;
        q[w.j] -= t;
    }
    q
}

pub(crate) fn finish(
    u: Field,
    z: SignField,
    step: &StepData,
    kernel: &KernelWeights,
    iterations: usize,
    solver_tag: SolverTag,
) -> Result<StepSolution> {
    let objective = j_s1(&u, step, kernel)?;
    let weak_residual = weak_residual(&u, &z, step, kernel)?;
    Ok(StepSolution {
        u,
        z,
        objective,
        weak_residual,
        iterations,
        solver_tag,
        error_bound: None,
        p_iterates: Vec::new(),
    })
}
