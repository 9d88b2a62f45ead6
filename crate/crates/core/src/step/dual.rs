use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{dual_divergence, slackness_terms, SignField};
use crate::energy::StepData;
use crate::grid::KernelWeights;

const MAX_REPIN: usize = 4;
const COMPLETION_SWEEPS: usize = 50;

/// `min_u ‖K u‖₁ + (λ/2) ‖u - c‖²`
pub(super) struct Problem<'a> {
    pub kernel: &'a KernelWeights,
    pub target: Vec<f64>,
    pub lambda: f64,
}

impl<'a> Problem<'a> {
    pub fn new(step: &StepData, kernel: &'a KernelWeights) -> Self {
        Problem {
            kernel,
            target: step.target().0,
            lambda: kernel.volume() / (2.0 * step.h),
        }
    }

    /// `ũ = c - Kᵀz / λ`, the primal point induced by a dual iterate.
    pub fn induced(&self, z: &SignField) -> Vec<f64> {
        dual_divergence(z, self.kernel)
            .iter()
            .zip(&self.target)
            .map(|(q, c)| c - q / self.lambda)
            .collect()
    }

    /// `ρ = λ (u - c) + Kᵀz`
    pub fn residual(&self, u: &[f64], z: &SignField) -> Vec<f64> {
        dual_divergence(z, self.kernel)
            .iter()
            .zip(u.iter().zip(&self.target))
            .map(|(q, (ui, c))| self.lambda * (ui - c) + q)
            .collect()
    }
}

pub(super) struct Certified {
    pub u: Vec<f64>,
    pub z: SignField,
    /// Bound on `‖u - u*‖₂`.
    pub bound: f64,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut j = i;
        while self.0[j] != root {
            j = std::mem::replace(&mut self.0[j], root);
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
        true
    }
}

/// `z ← sgn(Δu)` where `|Δu| > tol`, clipped to `[-1, 1]` elsewhere.
pub(super) fn pin(u: &[f64], z: &mut SignField, kernel: &KernelWeights, tol: f64) {
    for (w, zk) in kernel.pairs().iter().zip(z.pair_values.iter_mut()) {
        let d = u[w.i] - u[w.j];
        *zk = if d.abs() > tol {
            d.signum()
        } else {
            zk.clamp(-1.0, 1.0)
        };
    }
    for (ui, zi) in u.iter().zip(z.exterior_values.iter_mut()) {
        *zi = if ui.abs() > tol {
            ui.signum()
        } else {
            zi.clamp(-1.0, 1.0)
        };
    }
}

/// One pass of tie merging: pairs with `0 < |Δu| ≤ tol` and cells with
/// `0 < |u| ≤ tol` (joined to the extra node `n`).
fn merge_ties(u: &[f64], kernel: &KernelWeights, uf: &mut UnionFind, tol: f64) -> bool {
    let n = kernel.len();
    let mut changed = false;
    for w in kernel.pairs() {
        let d = (u[w.i] - u[w.j]).abs();
        if d > 0.0 && d <= tol {
            changed |= uf.union(w.i, w.j);
        }
    }
    for (i, ui) in u.iter().enumerate() {
        if *ui != 0.0 && ui.abs() <= tol {
            changed |= uf.union(i, n);
        }
    }
    changed
}

/// Corrects the free dual entries so that `ρ = λ (u - c) + Kᵀz` vanishes
/// on every cluster where that is possible.
///
/// Inside a cluster the pair values (and, on the cluster attached to zero,
/// the exterior values of cells at zero) are free. Alternates the Euclidean
/// projection onto `{z : ρ_C = 0}`, a shift by `w_ij (φ_i - φ_j)` and
/// `b_i φ_i` with `φ` solving the weighted graph Laplacian system
/// `A φ = -ρ_C`, with clipping to `[-1, 1]`.
fn complete(problem: &Problem, u: &[f64], z: &mut SignField, uf: &mut UnionFind, tol: f64) {
    let kernel = problem.kernel;
    let n = kernel.len();
    z.pair_values
        .iter_mut()
        .for_each(|t| *t = t.clamp(-1.0, 1.0));
    z.exterior_values
        .iter_mut()
        .for_each(|t| *t = t.clamp(-1.0, 1.0));
    let mut rho = problem.residual(u, z);
    let zero_root = uf.find(n);
    let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        members.entry(uf.find(i)).or_default().push(i);
    }
    let mut internal: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, w) in kernel.pairs().iter().enumerate() {
        if (u[w.i] - u[w.j]).abs() <= tol {
            let r = uf.find(w.i);
            if r == uf.find(w.j) {
                internal.entry(r).or_default().push(k);
            }
        }
    }
    let b = kernel.exterior_weights();
    let scale = problem.target.iter().fold(1.0_f64, |m, c| m.max(c.abs())) * problem.lambda;
    for (root, cells) in &members {
        let at_zero = *root == zero_root;
        if cells.len() == 1 && !at_zero {
            continue;
        }
        let local: HashMap<usize, usize> = cells.iter().enumerate().map(|(a, &i)| (i, a)).collect();
        let m = cells.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        let edges = internal.get(root).map(Vec::as_slice).unwrap_or(&[]);
        for &k in edges {
            let w = &kernel.pairs()[k];
            let (p, q) = (local[&w.i], local[&w.j]);
            let w2 = w.weight * w.weight;
            a[(p, p)] += w2;
            a[(q, q)] += w2;
            a[(p, q)] -= w2;
            a[(q, p)] -= w2;
        }
        let free_exterior: Vec<bool> = cells
            .iter()
            .map(|&i| at_zero && u[i].abs() <= tol)
            .collect();
        for (p, &i) in cells.iter().enumerate() {
            if free_exterior[p] {
                a[(p, p)] += b[i] * b[i];
            }
        }
        if !free_exterior.iter().any(|f| *f) {
            // fixes the additive constant; the cluster residual sums to zero
            a[(0, 0)] += a[(0, 0)].max(1.0);
        }
        let Some(chol) = a.cholesky() else { continue };
        for _ in 0..COMPLETION_SWEEPS {
            let rhs = DVector::from_iterator(m, cells.iter().map(|&i| -rho[i]));
            if rhs.amax() <= f64::EPSILON * scale {
                break;
            }
            let phi = chol.solve(&rhs);
            for &k in edges {
                let w = &kernel.pairs()[k];
                let (i, j) = (w.i, w.j);
                let old = z.pair_values[k];
                let new = (old + w.weight * (phi[local[&i]] - phi[local[&j]])).clamp(-1.0, 1.0);
                z.pair_values[k] = new;
                let d = w.weight * (new - old);
                rho[i] += d;
                rho[j] -= d;
            }
            for (p, &i) in cells.iter().enumerate() {
                if free_exterior[p] {
                    let old = z.exterior_values[i];
                    let new = (old + b[i] * phi[p]).clamp(-1.0, 1.0);
                    z.exterior_values[i] = new;
                    rho[i] += b[i] * (new - old);
                }
            }
        }
    }
}

/// Turns a dual iterate into an exactly complementary pair `(u, z)`.
///
/// Cells whose induced values lie within `merge` of each other (or of zero)
/// are fused into clusters with a common value, `z` is pinned to the signs
/// of the fused `u`, and the free entries are completed (see `complete`).
/// The result is `prox(c + ρ/λ)` exactly, so `‖u - u*‖₂ ≤ ‖ρ‖₂ / λ` for the
/// remaining residual `ρ`.
pub(super) fn certify(problem: &Problem, z_iter: &SignField, merge: f64) -> Certified {
    let kernel = problem.kernel;
    let n = kernel.len();
    let induced = problem.induced(z_iter);
    let mut u = induced.clone();
    let mut uf = UnionFind::new(n + 1);

    let cluster_values = |uf: &mut UnionFind, source: &[f64], u: &mut [f64]| {
        let mut sum = vec![0.0; n + 1];
        let mut count = vec![0usize; n + 1];
        for (i, x) in source.iter().enumerate() {
            let r = uf.find(i);
            sum[r] += x;
            count[r] += 1;
        }
        let zero_root = uf.find(n);
        for (i, ui) in u.iter_mut().enumerate() {
            let r = uf.find(i);
            *ui = if r == zero_root {
                0.0
            } else {
                sum[r] / count[r] as f64
            };
        }
    };
    while merge_ties(&u, kernel, &mut uf, merge) {
        cluster_values(&mut uf, &induced, &mut u);
    }

    // cluster values consistent with the pinned boundary signs; interior
    // dual entries cancel in the cluster sums
    let mut z = z_iter.clone();
    for _ in 0..MAX_REPIN {
        pin(&u, &mut z, kernel, 0.0);
        let consistent = problem.induced(&z);
        let before = u.clone();
        cluster_values(&mut uf, &consistent, &mut u);
        if before == u {
            break;
        }
    }
    pin(&u, &mut z, kernel, 0.0);
    complete(problem, &u, &mut z, &mut uf, 0.0);

    let rho = problem.residual(&u, &z);
    let norm = rho.iter().map(|r| r * r).sum::<f64>().sqrt();
    // zero after pinning; kept so the bound never relies on it
    let cs = slackness_terms(&u, &z, kernel).max(0.0);
    let bound = norm / problem.lambda + (2.0 * cs / problem.lambda).sqrt();
    Certified { u, z, bound }
}

/// Best dual for a fixed primal `u`: pins signs where `|Δu| > tol` and
/// completes the remaining entries on the tie clusters of `u`.
pub(super) fn complete_dual(
    problem: &Problem,
    u: &[f64],
    z_raw: &SignField,
    tol: f64,
) -> SignField {
    let kernel = problem.kernel;
    let mut uf = UnionFind::new(kernel.len() + 1);
    merge_ties(u, kernel, &mut uf, tol);
    let mut z = z_raw.clone();
    pin(u, &mut z, kernel, tol);
    complete(problem, u, &mut z, &mut uf, tol);
    z
}
