use log::{debug, trace};
use nalgebra::{DMatrix, DVector};

use super::dual::{complete_dual, Problem};
use super::{extract_sign_field, finish, SignField, SolverOptions, SolverTag, StepSolution};
use crate::energy::{check_len, Field, PowerFamily, StepData};
use crate::error::{Error, Result};
use crate::grid::KernelWeights;

const MAX_BACKTRACKS: usize = 40;

/// Smoothed `p`-problem in the scaled form
/// `E(u) = (1/p) [Σ_{i<j} c_ij ρ(u_i - u_j) + Σ_i t_i ρ(u_i)] + (λ/2) ‖u - c‖²`
/// with `ρ(t) = (t² + ε²)^{p/2} - ε^p`, `E = (h/4) J_p` at `ε = 0`.
struct Smoothed<'a> {
    family: PowerFamily,
    kernel: &'a KernelWeights,
    target: Vec<f64>,
    lambda: f64,
    eps2: f64,
}

impl Smoothed<'_> {
    fn rho(&self, t: f64) -> f64 {
        let p = self.family.p();
        (t * t + self.eps2).powf(0.5 * p) - self.eps2.powf(0.5 * p)
    }

    /// `ρ'(t) / t`
    fn slope(&self, t: f64) -> f64 {
        (t * t + self.eps2).powf(0.5 * self.family.p() - 1.0)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let pairs: f64 = self
            .kernel
            .pairs()
            .iter()
            .zip(self.family.pair_coefficients())
            .map(|(w, c)| c * self.rho(x[w.i] - x[w.j]))
            .sum();
        let ext: f64 = x
            .iter()
            .zip(self.family.exterior_coefficients())
            .map(|(xi, t)| t * self.rho(*xi))
            .sum();
        let fid: f64 = x
            .iter()
            .zip(&self.target)
            .map(|(xi, ci)| (xi - ci).powi(2))
            .sum();
        (pairs + ext) / self.family.p() + 0.5 * self.lambda * fid
    }

    /// `ρ''(t)`, up to the factor `p`
    fn curvature(&self, t: f64) -> f64 {
        let t2 = t * t;
        self.slope(t) * ((self.family.p() - 1.0) * t2 + self.eps2) / (t2 + self.eps2)
    }

    /// Hessian weights, laid out like [`Smoothed::weights`].
    fn curvatures(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pair = self
            .kernel
            .pairs()
            .iter()
            .zip(self.family.pair_coefficients())
            .map(|(w, c)| c * self.curvature(x[w.i] - x[w.j]))
            .collect();
        let ext = x
            .iter()
            .zip(self.family.exterior_coefficients())
            .map(|(xi, t)| t * self.curvature(*xi))
            .collect();
        (pair, ext)
    }

    /// Lagged weights `ω_ij = c_ij ρ'(Δ)/Δ` and `ω_i = t_i ρ'(u_i)/u_i`.
    fn weights(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let pair = self
            .kernel
            .pairs()
            .iter()
            .zip(self.family.pair_coefficients())
            .map(|(w, c)| c * self.slope(x[w.i] - x[w.j]))
            .collect();
        let ext = x
            .iter()
            .zip(self.family.exterior_coefficients())
            .map(|(xi, t)| t * self.slope(*xi))
            .collect();
        (pair, ext)
    }

    fn gradient(&self, x: &[f64], pair_w: &[f64], ext_w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x
            .iter()
            .zip(ext_w)
            .zip(&self.target)
            .map(|((xi, wi), ci)| wi * xi + self.lambda * (xi - ci))
            .collect();
        for (w, om) in self.kernel.pairs().iter().zip(pair_w) {
            let flux = om * (x[w.i] - x[w.j]);
            g[w.i] += flux;
            g[w.j] -= flux;
        }
        g
    }

    /// Solves `(L_ω + D_ω + λ I) d = -∇E`. With the lagged weights `u + d`
    /// minimises the quadratic majoriser at `u` when `p ≤ 2`; with the
    /// curvatures it is the Newton step.
    fn weighted_step(&self, pair_w: &[f64], ext_w: &[f64], g: &[f64]) -> Option<Vec<f64>> {
        let n = self.target.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = ext_w[i] + self.lambda;
        }
        for (w, om) in self.kernel.pairs().iter().zip(pair_w) {
            a[(w.i, w.i)] += om;
            a[(w.j, w.j)] += om;
            a[(w.i, w.j)] -= om;
            a[(w.j, w.i)] -= om;
        }
        let rhs = DVector::from_iterator(n, g.iter().map(|t| -t));
        let y = a.cholesky()?.solve(&rhs);
        y.iter()
            .all(|t| t.is_finite())
            .then(|| y.iter().copied().collect())
    }
}

/// Backtracking line search. Decreases below the resolution of `E` are
/// rejected so that the search cannot stall on rounding noise.
fn armijo(
    problem: &Smoothed,
    x: &[f64],
    value: f64,
    g: &[f64],
    d: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let slope: f64 = d.iter().zip(g).map(|(di, gi)| di * gi).sum();
    if slope >= 0.0 {
        return None;
    }
    let noise = 64.0 * f64::EPSILON * value.abs();
    let mut alpha = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = x.iter().zip(d).map(|(a, di)| a + alpha * di).collect();
        let tv = problem.value(&trial);
        if tv <= value + 1e-4 * alpha * slope && value - tv > noise {
            return Some((trial, tv));
        }
        alpha *= 0.5;
    }
    None
}

/// Full Newton step, accepted when it halves the gradient without raising
/// `E` above its resolution.
fn newton_full(
    problem: &Smoothed,
    x: &[f64],
    value: f64,
    grad_norm: f64,
    d: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let trial: Vec<f64> = x.iter().zip(d).map(|(a, di)| a + di).collect();
    let tv = problem.value(&trial);
    if tv > value + 64.0 * f64::EPSILON * value.abs() {
        return None;
    }
    let (pw, ew) = problem.weights(&trial);
    let g = problem.gradient(&trial, &pw, &ew);
    (g.iter().fold(0.0_f64, |m, t| m.max(t.abs())) <= 0.5 * grad_norm).then_some((trial, tv))
}

pub(crate) struct PSolve {
    pub u: Field,
    pub iterations: usize,
    pub stationarity: f64,
    pair_w: Vec<f64>,
    ext_w: Vec<f64>,
}

fn minimise_p(
    p: f64,
    step: &StepData,
    kernel: &KernelWeights,
    warm_start: &Field,
    opts: &SolverOptions,
) -> Result<PSolve> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "p-step needs p > 1, got {p}"
        )));
    }
    opts.validate()?;
    step.check(kernel)?;
    check_len(kernel, warm_start)?;
    let scale = step.value_scale();
    let eps = opts.smoothing * scale;
    let problem = Smoothed {
        family: PowerFamily::new(kernel, p)?,
        kernel,
        target: step.target().0,
        lambda: kernel.volume() / (2.0 * step.h),
        eps2: eps * eps,
    };
    let grad_tol = opts.inner_tol * problem.lambda * scale;
    let step_tol = opts.inner_tol * scale;

    let mut x = warm_start.0.clone();
    let mut value = problem.value(&x);
    let mut stationarity = f64::INFINITY;
    for it in 0..opts.max_inner_iters {
        let (pair_w, ext_w) = problem.weights(&x);
        let g = problem.gradient(&x, &pair_w, &ext_w);
        let grad_norm = g.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
        let direction: Vec<f64> = match problem.weighted_step(&pair_w, &ext_w, &g) {
            Some(d) => d,
            None => g.iter().map(|t| -t / problem.lambda).collect(),
        };
        let newton = if p <= 2.0 {
            let (hp, he) = problem.curvatures(&x);
            problem.weighted_step(&hp, &he, &g)
        } else {
            None
        };
        // preconditioned stationarity, in the units of u
        stationarity = direction.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        trace!("p = {p}: iteration {it}, gradient {grad_norm:.3e}, step {stationarity:.3e}");
        if grad_norm <= grad_tol || stationarity <= step_tol {
            return Ok(PSolve {
                u: Field(x),
                iterations: it,
                stationarity,
                pair_w,
                ext_w,
            });
        }
        if let Some(d) = newton {
            if let Some(next) = newton_full(&problem, &x, value, grad_norm, &d) {
                (x, value) = next;
                continue;
            }
            if let Some(next) = armijo(&problem, &x, value, &g, &d) {
                (x, value) = next;
                continue;
            }
        }
        if p <= 2.0 {
            // the majoriser step decreases E in exact arithmetic; near the
            // minimiser the decrease is below the resolution of E itself
            x.iter_mut().zip(&direction).for_each(|(a, d)| *a += d);
            value = problem.value(&x);
            continue;
        }
        match armijo(&problem, &x, value, &g, &direction) {
            Some(next) => (x, value) = next,
            None => break,
        }
    }
    Err(Error::InnerNotConverged {
        p,
        iterations: opts.max_inner_iters,
        residual: stationarity / problem.lambda,
    })
}

/// Minimises the `p`-energy `J_p` from `warm_start` by damped Newton steps,
/// falling back to majorise-minimise descent (lagged diffusivity).
pub fn solve_step_p(
    p: f64,
    step: &StepData,
    kernel: &KernelWeights,
    warm_start: &Field,
    opts: &SolverOptions,
) -> Result<Field> {
    minimise_p(p, step, kernel, warm_start, opts).map(|s| s.u)
}

/// Follows the minimisers `u_p` down `opts.p_schedule` and reads the sign
/// field off the last `p`-flux `(|Δu| / d^{N+s})^{p-1} sgn(Δu)`.
pub fn solve_step_continuation(
    step: &StepData,
    kernel: &KernelWeights,
    opts: &SolverOptions,
) -> Result<StepSolution> {
    opts.validate()?;
    step.check(kernel)?;
    let mut u = step.target();
    let mut iterates = Vec::with_capacity(opts.p_schedule.len());
    let mut iterations = 0;
    let mut last = None;
    for &p in &opts.p_schedule {
        let solved = minimise_p(p, step, kernel, &u, opts)?;
        debug!(
            "p = {p}: {} iterations, stationarity {:.3e}",
            solved.iterations, solved.stationarity
        );
        iterations += solved.iterations;
        u = solved.u.clone();
        iterates.push((p, solved.u.clone()));
        last = Some(solved);
    }
    let last = last.expect("non-empty schedule");
    let pair_values = kernel
        .pairs()
        .iter()
        .zip(&last.pair_w)
        .map(|(w, om)| om * (u.0[w.i] - u.0[w.j]) / w.weight)
        .collect();
    let exterior_values = u
        .values()
        .iter()
        .zip(&last.ext_w)
        .zip(kernel.exterior_weights())
        .map(|((ui, om), b)| if *b > 0.0 { om * ui / b } else { 0.0 })
        .collect();
    let raw = SignField {
        pair_values,
        exterior_values,
    };
    let scale = step.value_scale();
    let completed = complete_dual(
        &Problem::new(step, kernel),
        u.values(),
        &raw,
        opts.delta_sign * scale,
    );
    let z = extract_sign_field(&u, &completed, kernel, opts, scale)?;
    let mut sol = finish(u, z, step, kernel, iterations, SolverTag::Continuation)?;
    sol.p_iterates = iterates;
    Ok(sol)
}
