use log::{debug, trace};

use super::dual::{certify, Problem};
use super::{dual_divergence, extract_sign_field, finish, SignField};
use super::{SolverOptions, SolverTag, StepSolution};
use crate::energy::{Field, StepData};
use crate::error::{Error, Result};
use crate::grid::KernelWeights;

/// Number of tie thresholds `delta_sign · 10^k` tried when certifying.
const MERGE_LEVELS: i32 = 8;

/// One Chambolle–Pock chain with its own step balance.
struct Chain {
    tau: f64,
    sigma: f64,
    z: SignField,
    x: Vec<f64>,
    x_bar: Vec<f64>,
    iterations: usize,
    next_check: usize,
}

impl Chain {
    fn new(problem: &Problem, z: SignField, ratio: f64) -> Self {
        let norm = problem.kernel.op_norm_estimate().max(f64::MIN_POSITIVE);
        let x = problem.induced(&z);
        Chain {
            tau: ratio / norm,
            sigma: 1.0 / (ratio * norm),
            z,
            x_bar: x.clone(),
            x,
            iterations: 0,
            next_check: 10,
        }
    }

    fn iterate(&mut self, problem: &Problem) {
        let kernel = problem.kernel;
        let (tau, sigma, lambda) = (self.tau, self.sigma, problem.lambda);
        let x_bar = &self.x_bar;
        for (w, zk) in kernel.pairs().iter().zip(self.z.pair_values.iter_mut()) {
            *zk = (*zk + sigma * w.weight * (x_bar[w.i] - x_bar[w.j])).clamp(-1.0, 1.0);
        }
        for ((zi, b), xi) in self
            .z
            .exterior_values
            .iter_mut()
            .zip(kernel.exterior_weights())
            .zip(x_bar)
        {
            *zi = (*zi + sigma * b * xi).clamp(-1.0, 1.0);
        }
        let q = dual_divergence(&self.z, kernel);
        for (i, (xi, xb)) in self.x.iter_mut().zip(self.x_bar.iter_mut()).enumerate() {
            let old = *xi;
            *xi = (old - tau * q[i] + tau * lambda * problem.target[i]) / (1.0 + tau * lambda);
            *xb = 2.0 * *xi - old;
        }
        self.iterations += 1;
    }
}

/// Chambolle–Pock iterations on
/// `min_u ‖K u‖₁ + (λ/2) ‖u - c‖²`, `K u = (w_ij (u_i - u_j), b_i u_i)`,
/// with `τ σ ‖K‖² = 1`.
///
/// One chain per entry of `opts.pd_step_ratios` advances in turn; dual
/// iterates are periodically certified (see `certify`) and the first chain
/// whose certified distance to the exact minimiser is below
/// `pd_tol · scale` returns. `iterations` counts all chains together.
pub fn solve_step_primal_dual(
    step: &StepData,
    kernel: &KernelWeights,
    opts: &SolverOptions,
) -> Result<StepSolution> {
    solve_step_primal_dual_from(step, kernel, opts, None)
}

/// Same as [`solve_step_primal_dual`], starting every chain from the dual `z0`.
pub fn solve_step_primal_dual_from(
    step: &StepData,
    kernel: &KernelWeights,
    opts: &SolverOptions,
    z0: Option<&SignField>,
) -> Result<StepSolution> {
    opts.validate()?;
    step.check(kernel)?;
    let problem = Problem::new(step, kernel);
    let scale = step.value_scale();
    let tol = opts.pd_tol * scale;

    let start = match z0 {
        Some(z0) => {
            z0.check_shape(kernel)?;
            let mut z = z0.clone();
            z.pair_values
                .iter_mut()
                .for_each(|t| *t = t.clamp(-1.0, 1.0));
            z.exterior_values
                .iter_mut()
                .for_each(|t| *t = t.clamp(-1.0, 1.0));
            z
        }
        None => SignField::zeros(kernel),
    };
    let mut chains: Vec<Chain> = opts
        .pd_step_ratios
        .iter()
        .map(|r| Chain::new(&problem, start.clone(), *r))
        .collect();
    let mut best = f64::INFINITY;
    let mut total = 0;
    while total < opts.max_pd_iters {
        for (index, chain) in chains.iter_mut().enumerate() {
            if total >= opts.max_pd_iters {
                break;
            }
            chain.iterate(&problem);
            total += 1;
            let last = total == opts.max_pd_iters;
            if chain.iterations != chain.next_check && !last {
                continue;
            }
            let it = chain.iterations;
            chain.next_check = it + (it / 8).max(10);
            for level in 0..MERGE_LEVELS {
                let merge = opts.delta_sign * scale * 10f64.powi(level);
                let cert = certify(&problem, &chain.z, merge);
                best = best.min(cert.bound);
                if cert.bound > tol {
                    continue;
                }
                let u = Field(cert.u);
                let z_out = extract_sign_field(&u, &cert.z, kernel, opts, scale)?;
                let mut sol = finish(u, z_out, step, kernel, total, SolverTag::PrimalDual)?;
                if sol.weak_residual > opts.residual_tol {
                    trace!(
                        "certified at merge {merge:.1e} but residual {:.3e}",
                        sol.weak_residual
                    );
                    continue;
                }
                sol.error_bound = Some(cert.bound);
                debug!(
                    "primal-dual certified after {total} iterations (ratio {}, merge {merge:.1e}, bound {:.3e}, residual {:.3e})",
                    opts.pd_step_ratios[index], cert.bound, sol.weak_residual
                );
                return Ok(sol);
            }
            trace!("chain {index}, iteration {it}: best certified bound {best:.3e}");
        }
    }
    Err(Error::PrimalDualNotConverged {
        iterations: opts.max_pd_iters,
        gap: best,
    })
}
