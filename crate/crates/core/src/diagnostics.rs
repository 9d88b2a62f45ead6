//! A priori estimates of the Rothe scheme, evaluated on computed trajectories.
//!
//! Testing the step equation with `u_k - u_{k-1}` and with `u_k` gives
//!
//! ```text
//! [u_k] ≤ [u_{k-1}] + (1/4) ∫_{(k-1)h}^{kh} ‖f‖²
//! ‖u_k‖² ≤ ‖u_0‖² + 2 h Σ_{j≤k} ⟨[f]_h((j-1)h), u_j⟩
//! ```
//!
//! and the ledger records the slack of both as margins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{seminorm_s1, Field};
use crate::error::{Error, Result};
use crate::grid::{Grid, KernelWeights};
use crate::rothe::{interpolate_u, run_rothe, SourceSpec, TimeGrid, Trajectory};
use crate::step::SolverOptions;

/// Interior sample points per time interval for sup and Hölder checks.
pub const INTERIOR_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LedgerRow {
    pub k: usize,
    pub t: f64,
    /// `[u_k]`
    pub seminorm: f64,
    /// `‖u_k‖`
    pub l2_norm: f64,
    /// `‖u_k - u_{k-1}‖`
    pub increment_l2: f64,
    /// `∫_{(k-1)h}^{kh} ‖f‖²`
    pub source_energy: f64,
    /// `[u_{k-1}] + source_energy / 4 - [u_k]`
    pub margin_seminorm: f64,
    /// `‖u_0‖² + 2h Σ_{j≤k} ⟨f_j, u_j⟩ - ‖u_k‖²`
    pub margin_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Rows `k = 0, …, m`; row 0 has zero increment, source and margins.
    pub rows: Vec<LedgerRow>,
}

impl EnergyLedger {
    /// `max(1, max_k [u_k], max_k ‖u_k‖², Σ_k source_energy)`
    pub fn scale(&self) -> f64 {
        let total: f64 = self.rows.iter().map(|r| r.source_energy).sum();
        self.rows
            .iter()
            .map(|r| r.seminorm.max(r.l2_norm * r.l2_norm))
            .fold(total.max(1.0), f64::max)
    }

    pub fn min_margin_seminorm(&self) -> f64 {
        self.rows
            .iter()
            .skip(1)
            .map(|r| r.margin_seminorm)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_margin_l2(&self) -> f64 {
        self.rows
            .iter()
            .skip(1)
            .map(|r| r.margin_l2)
            .fold(f64::INFINITY, f64::min)
    }

    /// `min_k ([u_0] + (1/4) Σ_{j≤k} source_energy_j - [u_k])`
    pub fn cumulative_margin(&self) -> f64 {
        let Some(first) = self.rows.first() else {
            return f64::INFINITY;
        };
        let mut budget = first.seminorm;
        let mut worst = f64::INFINITY;
        for r in &self.rows[1..] {
            budget += 0.25 * r.source_energy;
            worst = worst.min(budget - r.seminorm);
        }
        worst
    }

    /// Every margin is at least `-tol · scale`.
    pub fn passes(&self, tol: f64) -> bool {
        let floor = -tol * self.scale();
        self.min_margin_seminorm() >= floor
            && self.min_margin_l2() >= floor
            && self.cumulative_margin() >= floor
    }

    /// `[u_k] ≤ [u_{k-1}] + slack` for every `k`.
    pub fn seminorm_nonincreasing(&self, slack: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].seminorm <= w[0].seminorm + slack)
    }
}

/// Evaluates both energy inequalities step by step.
pub fn check_energy_chain(traj: &Trajectory, kernel: &KernelWeights) -> Result<EnergyLedger> {
    if traj.volume != kernel.volume() {
        return Err(Error::Incompatible(format!(
            "trajectory cell volume {} differs from the kernel's {}",
            traj.volume,
            kernel.volume()
        )));
    }
    let v = traj.volume;
    let h = traj.h();
    let seminorms = traj
        .snapshots
        .iter()
        .map(|u| seminorm_s1(u, kernel))
        .collect::<Result<Vec<_>>>()?;
    let u0_sq = traj.snapshots[0].l2_norm(v).powi(2);
    let mut work = 0.0;
    let mut rows = vec![LedgerRow {
        k: 0,
        t: 0.0,
        seminorm: seminorms[0],
        l2_norm: u0_sq.sqrt(),
        ..LedgerRow::default()
    }];
    for k in 1..=traj.steps() {
        let u = &traj.snapshots[k];
        let l2 = u.l2_norm(v);
        let energy = traj.source_energy[k - 1];
        work += 2.0 * h * v * dot(&traj.sources[k - 1], u);
        rows.push(LedgerRow {
            k,
            t: traj.time_grid.time(k),
            seminorm: seminorms[k],
            l2_norm: l2,
            increment_l2: u.l2_distance(&traj.snapshots[k - 1], v),
            source_energy: energy,
            margin_seminorm: seminorms[k - 1] + 0.25 * energy - seminorms[k],
            margin_l2: u0_sq + work - l2 * l2,
        });
    }
    Ok(EnergyLedger { rows })
}

fn dot(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// All knots `kh` plus `per_interval` equally spaced interior points per interval.
pub fn sample_times(tg: &TimeGrid, per_interval: usize) -> Vec<f64> {
    let h = tg.h();
    let mut out = Vec::with_capacity(tg.steps * (per_interval + 1) + 1);
    out.push(0.0);
    for k in 1..=tg.steps {
        let start = tg.time(k - 1);
        for j in 1..=per_interval {
            out.push(start + h * j as f64 / (per_interval + 1) as f64);
        }
        out.push(tg.time(k));
    }
    out
}

/// `sup_t ‖u^m(t)‖² + [u^m(t)]` over [`sample_times`].
pub fn check_sup_bound(traj: &Trajectory, kernel: &KernelWeights) -> Result<f64> {
    let mut sup = 0.0_f64;
    for t in sample_times(&traj.time_grid, INTERIOR_SAMPLES) {
        let u = interpolate_u(traj, t)?;
        sup = sup.max(u.l2_norm(traj.volume).powi(2) + seminorm_s1(&u, kernel)?);
    }
    Ok(sup)
}

/// `∫_0^T ‖∂_t u^m‖² = (1/h) Σ_k ‖u_k - u_{k-1}‖²`
pub fn time_derivative_norm(traj: &Trajectory) -> f64 {
    let v = traj.volume;
    traj.snapshots
        .windows(2)
        .map(|w| w[1].l2_distance(&w[0], v).powi(2))
        .sum::<f64>()
        / traj.h()
}

/// `max ‖u^m(t_1) - u^m(t_2)‖ / |t_1 - t_2|^{1/2}` over all pairs of the
/// knots and `samples` equally spaced times in `[0, T]`.
pub fn holder_quotient(traj: &Trajectory, samples: usize) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two sample times, got {samples}"
        )));
    }
    let tg = &traj.time_grid;
    let mut times: Vec<f64> = (0..=tg.steps).map(|k| tg.time(k)).collect();
    times.extend((0..samples).map(|j| tg.horizon * j as f64 / (samples - 1) as f64));
    times.sort_by(f64::total_cmp);
    times.dedup();
    let fields = times
        .iter()
        .map(|t| interpolate_u(traj, *t))
        .collect::<Result<Vec<_>>>()?;
    let v = traj.volume;
    let worst = (0..times.len())
        .into_par_iter()
        .map(|a| {
            (a + 1..times.len())
                .map(|b| fields[a].l2_distance(&fields[b], v) / (times[b] - times[a]).sqrt())
                .fold(0.0_f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `‖u_{a,k} - u_{b,k}‖` for `k = 0, …, m`.
    pub gaps: Vec<f64>,
    /// `max_k gaps[k] - gaps[0]`
    pub max_growth: f64,
    /// `max_k gaps[k] - gaps[k-1]`
    pub max_step_increase: f64,
}

/// Compares two runs with the same source, kernel and time grid.
pub fn contraction_check(a: &Trajectory, b: &Trajectory) -> Result<ContractionReport> {
    if a.time_grid != b.time_grid {
        return Err(Error::Incompatible(format!(
            "time grids differ: {:?} vs {:?}",
            a.time_grid, b.time_grid
        )));
    }
    if a.volume != b.volume || a.snapshots[0].len() != b.snapshots[0].len() {
        return Err(Error::Incompatible("spatial grids differ".into()));
    }
    if a.sources != b.sources {
        return Err(Error::Incompatible("sources differ".into()));
    }
    let gaps: Vec<f64> = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| x.l2_distance(y, a.volume))
        .collect();
    let max_growth = gaps
        .iter()
        .map(|g| g - gaps[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let max_step_increase = gaps
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionReport {
        gaps,
        max_growth,
        max_step_increase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub m: usize,
    /// `max_t ‖u^{m'}(t) - u^m(t)‖` over the shared sample times, with `m'`
    /// the next entry of the list; absent on the last row.
    pub difference: Option<f64>,
    /// Root mean square of the same distances.
    pub difference_rms: Option<f64>,
    /// `(t, ‖u^{m'}(t) - u^m(t)‖)` at the shared sample times.
    pub profile: Vec<(f64, f64)>,
    pub sup_energy: f64,
    pub time_derivative: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub rows: Vec<RefinementRow>,
}

impl RefinementStudy {
    pub fn differences(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.difference).collect()
    }

    /// Relative spread `(max - min) / max` of a column.
    pub fn spread(column: impl Iterator<Item = f64>) -> f64 {
        let (lo, hi) = column.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        if hi <= 0.0 {
            0.0
        } else {
            (hi - lo) / hi
        }
    }
}

pub fn check_nested(m_list: &[usize]) -> Result<()> {
    if m_list.len() < 2 {
        return Err(Error::InvalidParameter(
            "m_list needs at least two entries".into(),
        ));
    }
    if m_list[0] == 0
        || m_list
            .windows(2)
            .any(|w| !(w[1] > w[0] && w[1] % w[0] == 0))
    {
        return Err(Error::InvalidParameter(format!(
            "m_list must be increasing with each entry dividing the next: {m_list:?}"
        )));
    }
    Ok(())
}

/// Runs the scheme for every `m` (concurrently) and compares the
/// interpolants of consecutive members at the shared sample times: the
/// [`sample_times`] of the finest member.
pub fn refinement_study(
    u0: &Field,
    src: &SourceSpec,
    horizon: f64,
    m_list: &[usize],
    grid: &Grid,
    kernel: &KernelWeights,
    opts: &SolverOptions,
) -> Result<RefinementStudy> {
    check_nested(m_list)?;
    let runs = m_list
        .par_iter()
        .map(|&m| run_rothe(u0, src, &TimeGrid::new(horizon, m)?, grid, kernel, opts))
        .collect::<Result<Vec<_>>>()?;
    let finest = TimeGrid::new(horizon, m_list[m_list.len() - 1])?;
    let samples = sample_times(&finest, INTERIOR_SAMPLES);
    let mut rows = Vec::with_capacity(runs.len());
    for (idx, traj) in runs.iter().enumerate() {
        let mut profile = Vec::new();
        if let Some(fine) = runs.get(idx + 1) {
            for &t in &samples {
                let d = interpolate_u(fine, t)?.l2_distance(&interpolate_u(traj, t)?, traj.volume);
                profile.push((t, d));
            }
        }
        let difference =
            (!profile.is_empty()).then(|| profile.iter().map(|p| p.1).fold(0.0_f64, f64::max));
        let difference_rms = (!profile.is_empty()).then(|| {
            (profile.iter().map(|p| p.1 * p.1).sum::<f64>() / profile.len() as f64).sqrt()
        });
        rows.push(RefinementRow {
            m: traj.steps(),
            difference,
            difference_rms,
            profile,
            sup_energy: check_sup_bound(traj, kernel)?,
            time_derivative: time_derivative_norm(traj),
            iterations: traj.steps.iter().map(|s| s.iterations).sum(),
        });
    }
    Ok(RefinementStudy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_kernel, build_grid, GridSpec, TailMode};
    use crate::step::soft_threshold_oracle;

    fn line(cells: usize) -> (Grid, KernelWeights) {
        let spec = GridSpec::new_1d(cells, 1.0 / cells as f64, 2.0, TailMode::Analytic);
        let grid = build_grid(&spec).unwrap();
        let kernel = assemble_kernel(&grid, 0.5, &spec).unwrap();
        (grid, kernel)
    }

    fn run(
        u0: Vec<f64>,
        src: &SourceSpec,
        horizon: f64,
        m: usize,
        cells: usize,
    ) -> (Trajectory, KernelWeights) {
        let (grid, kernel) = line(cells);
        let tg = TimeGrid::new(horizon, m).unwrap();
        let traj = run_rothe(
            &Field(u0),
            src,
            &tg,
            &grid,
            &kernel,
            &SolverOptions::default(),
        )
        .unwrap();
        (traj, kernel)
    }

    /// Single cell, `u_0 = 1`, `f = 0`, threshold `τ = 2bh/v`.
    fn shrinkage(m: usize) -> (Trajectory, KernelWeights, f64) {
        let (traj, kernel) = run(vec![1.0], &SourceSpec::Zero, 1.0, m, 1);
        let tau = 2.0 * kernel.exterior_weights()[0] * traj.h() / kernel.volume();
        (traj, kernel, tau)
    }

    #[test]
    fn zero_trajectory_margins_are_the_source_budget() {
        let src = SourceSpec::Zero;
        let (traj, _) = run(vec![0.0; 3], &src, 0.5, 4, 3);
        for r in &traj.ledger.rows {
            assert_eq!((r.margin_seminorm, r.margin_l2), (0.0, 0.0));
        }
        assert_eq!(check_sup_bound(&traj, &line(3).1).unwrap(), 0.0);
        assert_eq!(time_derivative_norm(&traj), 0.0);
        assert_eq!(holder_quotient(&traj, 9).unwrap(), 0.0);
    }

    #[test]
    fn shrinkage_ledger_matches_closed_form() {
        let (traj, kernel, tau) = shrinkage(8);
        let b = kernel.exterior_weights()[0];
        for r in &traj.ledger.rows {
            let want = 2.0 * b * (1.0 - r.k as f64 * tau).max(0.0);
            assert!((r.seminorm - want).abs() <= 1e-8 * 2.0 * b, "k = {}", r.k);
        }
        assert!(traj.ledger.seminorm_nonincreasing(0.0));
        assert!(traj.ledger.passes(1e-9));
    }

    #[test]
    fn time_derivative_of_shrinkage() {
        let (traj, kernel, tau) = shrinkage(16);
        let v = kernel.volume();
        let h = traj.h();
        let mut u = 1.0_f64;
        let mut want = 0.0;
        for _ in 0..16 {
            let next = soft_threshold_oracle(u, kernel.exterior_weights()[0], h, v).unwrap();
            want += v * (u - next).powi(2) / h;
            u = next;
        }
        let got = time_derivative_norm(&traj);
        assert!((got - want).abs() <= 1e-7 * want, "{got} vs {want}");
        let active = (1.0 / tau).floor();
        assert!(got >= v * tau * tau * active / h * (1.0 - 1e-7));
    }

    #[test]
    fn holder_quotient_of_one_segment() {
        // one step, u_0 = 0, u_1 = h w for a constant source: u(t) = t w on [0, h]
        let (grid, kernel) = line(1);
        let b = kernel.exterior_weights()[0];
        let v = kernel.volume();
        let h = 0.01;
        // large source so the cell leaves zero: u_1 = h (a - 2b/v)
        let a = 10.0 * b / v;
        let tg = TimeGrid::new(h, 1).unwrap();
        let src = SourceSpec::Constant { amplitude: a };
        let traj = run_rothe(
            &Field::zeros(1),
            &src,
            &tg,
            &grid,
            &kernel,
            &SolverOptions::default(),
        )
        .unwrap();
        let w = traj.snapshots[1].values()[0] / h;
        let q = holder_quotient(&traj, 5).unwrap();
        let want = w.abs() * v.sqrt() * h.sqrt();
        assert!((q - want).abs() <= 1e-12 * want, "{q} vs {want}");
        assert!(q * q <= time_derivative_norm(&traj) * (1.0 + 1e-12));
    }

    #[test]
    fn holder_bound_on_shrinkage() {
        let (traj, _, _) = shrinkage(8);
        let q = holder_quotient(&traj, 33).unwrap();
        assert!(q * q <= time_derivative_norm(&traj) + 1e-12);
        assert!(holder_quotient(&traj, 1).is_err());
    }

    #[test]
    fn sup_of_a_decaying_run_is_the_initial_energy() {
        let (grid, kernel) = line(4);
        let u0 = Field(vec![0.3, 1.0, 0.8, 0.1]);
        let tg = TimeGrid::new(0.2, 8).unwrap();
        let opts = SolverOptions::default();
        let traj = run_rothe(&u0, &SourceSpec::Zero, &tg, &grid, &kernel, &opts).unwrap();
        let sup = check_sup_bound(&traj, &kernel).unwrap();
        let at_zero = u0.l2_norm(kernel.volume()).powi(2) + seminorm_s1(&u0, &kernel).unwrap();
        assert_eq!(sup, at_zero);
        let double = run_rothe(
            &u0.scaled(2.0),
            &SourceSpec::Zero,
            &tg,
            &grid,
            &kernel,
            &opts,
        )
        .unwrap();
        assert!(check_sup_bound(&double, &kernel).unwrap() >= 2.0 * sup);
    }

    #[test]
    fn identical_runs_do_not_separate() {
        let src = SourceSpec::Constant { amplitude: 0.7 };
        let (a, _) = run(vec![0.5, -0.2, 0.9], &src, 0.1, 5, 3);
        let (b, _) = run(vec![0.5, -0.2, 0.9], &src, 0.1, 5, 3);
        let report = contraction_check(&a, &b).unwrap();
        assert!(report.gaps.iter().all(|g| *g == 0.0));
        let (c, _) = run(vec![0.5, -0.2, 0.9], &src, 0.1, 4, 3);
        assert!(matches!(
            contraction_check(&a, &c),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn single_cell_gap_is_constant_until_extinction() {
        let (a, kernel) = run(vec![1.0], &SourceSpec::Zero, 1.0, 10, 1);
        let (b, _) = run(vec![0.8], &SourceSpec::Zero, 1.0, 10, 1);
        let tau = 2.0 * kernel.exterior_weights()[0] * a.h() / kernel.volume();
        let report = contraction_check(&a, &b).unwrap();
        let sv = kernel.volume().sqrt();
        for (k, gap) in report.gaps.iter().enumerate() {
            let want = ((1.0 - k as f64 * tau).max(0.0) - (0.8 - k as f64 * tau).max(0.0)) * sv;
            assert!((gap - want).abs() <= 1e-8, "k = {k}: {gap} vs {want}");
        }
        assert!(report.max_growth <= 1e-8);
    }

    #[test]
    fn perturbed_start_gap_is_nonincreasing() {
        let u0 = vec![0.4, 0.9, 0.6, 0.2];
        let mut u1 = u0.clone();
        u1[2] += 0.05;
        let (a, _) = run(u0, &SourceSpec::Zero, 0.3, 10, 4);
        let (b, _) = run(u1, &SourceSpec::Zero, 0.3, 10, 4);
        let report = contraction_check(&a, &b).unwrap();
        assert!(report.max_step_increase <= 1e-8, "{report:?}");
    }

    #[test]
    fn nested_lists() {
        assert!(check_nested(&[8, 16, 32]).is_ok());
        assert!(check_nested(&[8, 24]).is_ok());
        assert!(check_nested(&[8, 12]).is_err());
        assert!(check_nested(&[16, 8]).is_err());
        assert!(check_nested(&[8]).is_err());
    }

    #[test]
    fn refinement_of_zero_data() {
        let (grid, kernel) = line(3);
        let study = refinement_study(
            &Field::zeros(3),
            &SourceSpec::Zero,
            0.2,
            &[2, 4, 8],
            &grid,
            &kernel,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(study.differences(), vec![0.0, 0.0]);
        assert!(study.rows[2].difference.is_none());
    }

    #[test]
    fn single_cell_refinement_with_aligned_thresholds() {
        // h = 1/m with τ = 2bh/v: each coarse step equals two fine steps
        // until extinction, so knots of m agree with knots of 2m
        let (grid, kernel) = line(1);
        let b = kernel.exterior_weights()[0];
        let v = kernel.volume();
        // u_0 = multiple of the coarsest threshold so no step is partial
        let horizon = 0.5;
        let u0 = 2.0 * b * (horizon / 4.0) / v * 3.0;
        let study = refinement_study(
            &Field(vec![u0]),
            &SourceSpec::Zero,
            horizon,
            &[4, 8, 16],
            &grid,
            &kernel,
            &SolverOptions::default(),
        )
        .unwrap();
        for d in study.differences() {
            assert!(d <= 1e-8, "{d}");
        }
    }
}
