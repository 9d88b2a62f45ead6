//! Rothe time stepping: `(u_k - u_{k-1})/h + (-Δ)^s_1 u_k = [f]_h((k-1)h)`.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_energy_chain, EnergyLedger};
use crate::energy::{Field, StepData};
use crate::error::{Error, Result};
use crate::grid::{Grid, KernelWeights};
use crate::step::{
    extract_sign_field, solve_step_continuation, solve_step_primal_dual_from, SignField,
    SolverOptions, FEASIBILITY_SLACK,
};

/// Simpson panels for time integrals of the source.
pub const SIMPSON_PANELS: usize = 16;

/// Uniform time grid `t_k = k T / m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let tg = TimeGrid { horizon, steps };
        tg.validate()?;
        Ok(tg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter(
                "need at least one time step".into(),
            ));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }
}

/// Spatial factor of a separable source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialProfile {
    Uniform,
    /// `Π_d sin(π x_d / L_d)`
    SineBump,
}

impl SpatialProfile {
    pub fn evaluate(&self, grid: &Grid) -> Field {
        match self {
            SpatialProfile::Uniform => Field::constant(grid.len(), 1.0),
            SpatialProfile::SineBump => Field(
                (0..grid.len())
                    .map(|i| {
                        grid.coords(i)
                            .iter()
                            .enumerate()
                            .map(|(d, x)| (std::f64::consts::PI * x / grid.extent(d)).sin())
                            .product()
                    })
                    .collect(),
            ),
        }
    }
}

/// Time factor of a separable source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalProfile {
    Constant,
    /// `g(t) = t`
    Linear,
    /// `g(t) = sin(ω t + φ)`
    Sine {
        frequency: f64,
        phase: f64,
    },
}

impl TemporalProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TemporalProfile::Constant => 1.0,
            TemporalProfile::Linear => t,
            TemporalProfile::Sine { frequency, phase } => (frequency * t + phase).sin(),
        }
    }

    /// `(1/h) ∫_t^{t+h} g`
    pub fn mean(&self, h: f64, t: f64) -> f64 {
        match *self {
            TemporalProfile::Constant => 1.0,
            TemporalProfile::Linear => t + 0.5 * h,
            TemporalProfile::Sine { frequency, phase } => {
                if frequency == 0.0 {
                    phase.sin()
                } else {
                    let a = frequency * t + phase;
                    ((a).cos() - (a + frequency * h).cos()) / (frequency * h)
                }
            }
        }
    }
}

/// Right-hand side `f(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Zero,
    Constant {
        amplitude: f64,
    },
    /// `amplitude · spatial(x) · temporal(t)`
    SeparableAnalytic {
        amplitude: f64,
        spatial: SpatialProfile,
        temporal: TemporalProfile,
    },
    /// Fields at increasing `times`, linear in between.
    GriddedSeries {
        times: Vec<f64>,
        fields: Vec<Field>,
    },
}

impl SourceSpec {
    pub fn validate(&self, cells: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            SourceSpec::Zero => Ok(()),
            SourceSpec::Constant { amplitude }
            | SourceSpec::SeparableAnalytic { amplitude, .. }
                if !amplitude.is_finite() =>
            {
                bad(format!("source amplitude must be finite, got {amplitude}"))
            }
            SourceSpec::SeparableAnalytic {
                temporal: TemporalProfile::Sine { frequency, phase },
                ..
            } if !(frequency.is_finite() && phase.is_finite()) => {
                bad("source frequency and phase must be finite".into())
            }
            SourceSpec::Constant { .. } | SourceSpec::SeparableAnalytic { .. } => Ok(()),
            SourceSpec::GriddedSeries { times, fields } => {
                if times.len() < 2 || times.len() != fields.len() {
                    return bad(format!(
                        "gridded source needs at least two times and one field per time (got {} and {})",
                        times.len(),
                        fields.len()
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite())
                {
                    return bad("gridded source times must be finite and increasing".into());
                }
                for f in fields {
                    if f.len() != cells {
                        return Err(Error::ShapeMismatch {
                            expected: cells,
                            got: f.len(),
                        });
                    }
                    if !f.is_finite() {
                        return bad("gridded source values must be finite".into());
                    }
                }
                Ok(())
            }
        }
    }

    fn check_coverage(&self, start: f64, end: f64) -> Result<()> {
        if let SourceSpec::GriddedSeries { times, .. } = self {
            let (first, last) = (times[0], times[times.len() - 1]);
            let slack = 1e-12 * last.abs().max(1.0);
            if start < first - slack || end > last + slack {
                return Err(Error::SourceCoverage {
                    start,
                    end,
                    available: last,
                });
            }
        }
        Ok(())
    }

    /// `f(·, t)`
    pub fn value_at(&self, t: f64, grid: &Grid) -> Result<Field> {
        self.check_coverage(t, t)?;
        Ok(match self {
            SourceSpec::Zero => Field::zeros(grid.len()),
            SourceSpec::Constant { amplitude } => Field::constant(grid.len(), *amplitude),
            SourceSpec::SeparableAnalytic {
                amplitude,
                spatial,
                temporal,
            } => spatial.evaluate(grid).scaled(amplitude * temporal.value(t)),
            SourceSpec::GriddedSeries { times, fields } => {
                let k = times.partition_point(|s| *s <= t).clamp(1, times.len() - 1);
                let theta = ((t - times[k - 1]) / (times[k] - times[k - 1])).clamp(0.0, 1.0);
                fields[k - 1].lerp(&fields[k], theta)
            }
        })
    }

    /// `∫_t^{t+h} ‖f(·, τ)‖²_{L²} dτ`
    pub fn energy(&self, h: f64, t: f64, grid: &Grid) -> Result<f64> {
        self.check_coverage(t, t + h)?;
        let v = grid.volume();
        let mut total = 0.0;
        for (tau, weight) in simpson_nodes(h, t) {
            let f = self.value_at(tau, grid)?;
            total += weight * f.l2_norm(v).powi(2);
        }
        Ok(h * total)
    }
}

/// Composite Simpson nodes on `[t, t+h]` with weights summing to one.
fn simpson_nodes(h: f64, t: f64) -> impl Iterator<Item = (f64, f64)> {
    let n = SIMPSON_PANELS;
    (0..=n).map(move |j| {
        let w = match j {
            0 => 1.0,
            _ if j == n => 1.0,
            _ if j % 2 == 1 => 4.0,
            _ => 2.0,
        };
        let tau = if j == n {
            t + h
        } else {
            t + h * j as f64 / n as f64
        };
        (tau, w / (3.0 * n as f64))
    })
}

/// `[f]_h(·, t) = (1/h) ∫_t^{t+h} f(·, τ) dτ`; closed form for the analytic
/// kinds, composite Simpson for a gridded series.
pub fn steklov_average(src: &SourceSpec, h: f64, t: f64, grid: &Grid) -> Result<Field> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "averaging window must be positive, got {h}"
        )));
    }
    src.check_coverage(t, t + h)?;
    Ok(match src {
        SourceSpec::Zero => Field::zeros(grid.len()),
        SourceSpec::Constant { amplitude } => Field::constant(grid.len(), *amplitude),
        SourceSpec::SeparableAnalytic {
            amplitude,
            spatial,
            temporal,
        } => spatial
            .evaluate(grid)
            .scaled(amplitude * temporal.mean(h, t)),
        SourceSpec::GriddedSeries { .. } => {
            let mut acc = vec![0.0; grid.len()];
            for (tau, weight) in simpson_nodes(h, t) {
                let f = src.value_at(tau, grid)?;
                for (a, x) in acc.iter_mut().zip(f.values()) {
                    *a += weight * x;
                }
            }
            Field(acc)
        }
    })
}

/// Per-step solver record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub k: usize,
    pub iterations: usize,
    pub objective: f64,
    pub weak_residual: f64,
    pub error_bound: Option<f64>,
    /// Max-norm distance to the continuation answer, when cross-checked.
    pub cross_check: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time_grid: TimeGrid,
    /// Cell volume of the underlying grid.
    pub volume: f64,
    /// `u_0, …, u_m`
    pub snapshots: Vec<Field>,
    /// `Z_0, …, Z_m`
    pub sign_fields: Vec<SignField>,
    /// `[f]_h((k-1)h)` for `k = 1, …, m`.
    pub sources: Vec<Field>,
    /// `∫_{(k-1)h}^{kh} ‖f‖²_{L²}` for `k = 1, …, m`.
    pub source_energy: Vec<f64>,
    pub steps: Vec<StepReport>,
    pub ledger: EnergyLedger,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.time_grid.steps
    }

    pub fn h(&self) -> f64 {
        self.time_grid.h()
    }

    pub fn step_data(&self, k: usize) -> Result<StepData> {
        if k == 0 || k > self.steps() {
            return Err(Error::InvalidParameter(format!("no step {k}")));
        }
        StepData::new(
            self.snapshots[k - 1].clone(),
            self.sources[k - 1].clone(),
            self.h(),
        )
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.time_grid.horizon;
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let m = self.steps();
        let x = t / self.h();
        let k = (x.ceil() as usize).clamp(1, m);
        if t == self.time_grid.time(k) {
            return Ok((k, 1.0));
        }
        Ok((k, (x - (k - 1) as f64).clamp(0.0, 1.0)))
    }
}

/// Solves the step chain with the primal-dual solver, warm-starting each
/// dual from the previous step.
pub fn run_rothe(
    u0: &Field,
    src: &SourceSpec,
    tg: &TimeGrid,
    grid: &Grid,
    kernel: &KernelWeights,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    tg.validate()?;
    opts.validate()?;
    src.validate(kernel.len())?;
    if u0.len() != kernel.len() || grid.len() != kernel.len() {
        return Err(Error::ShapeMismatch {
            expected: kernel.len(),
            got: if grid.len() != kernel.len() {
                grid.len()
            } else {
                u0.len()
            },
        });
    }
    if !u0.is_finite() {
        return Err(Error::InvalidParameter(
            "initial datum is not finite".into(),
        ));
    }
    let h = tg.h();
    let m = tg.steps;
    let z0 = extract_sign_field(
        u0,
        &SignField::zeros(kernel),
        kernel,
        opts,
        u0.max_abs().max(1.0),
    )?;
    let mut snapshots = vec![u0.clone()];
    let mut sign_fields = vec![z0];
    let mut sources = Vec::with_capacity(m);
    let mut source_energy = Vec::with_capacity(m);
    let mut steps = Vec::with_capacity(m);

    for k in 1..=m {
        let t = tg.time(k - 1);
        let f = steklov_average(src, h, t, grid)?;
        source_energy.push(src.energy(h, t, grid)?);
        let step = StepData::new(snapshots[k - 1].clone(), f.clone(), h)?;
        let wrap = |e: Error| Error::StepFailed {
            step: k,
            source: Box::new(e),
        };
        let warm = (k > 1).then(|| &sign_fields[k - 1]);
        let sol = solve_step_primal_dual_from(&step, kernel, opts, warm).map_err(wrap)?;
        check_certificate(k, &sol.u, &sol.z, sol.weak_residual, &step, kernel, opts)?;

        let cross_check = if opts.cross_check {
            let other = solve_step_continuation(&step, kernel, opts).map_err(wrap)?;
            let gap = other.u.max_distance(&sol.u);
            if gap > opts.cross_check_tol * step.value_scale() {
                return Err(Error::CertificateViolation {
                    step: k,
                    detail: format!("solvers disagree by {gap:.3e} in max norm"),
                });
            }
            Some(gap)
        } else {
            None
        };
        debug!(
            "step {k}/{m}: {} iterations, residual {:.3e}",
            sol.iterations, sol.weak_residual
        );
        steps.push(StepReport {
            k,
            iterations: sol.iterations,
            objective: sol.objective,
            weak_residual: sol.weak_residual,
            error_bound: sol.error_bound,
            cross_check,
        });
        sources.push(f);
        snapshots.push(sol.u);
        sign_fields.push(sol.z);
    }
    info!(
        "rothe run finished: {m} steps, {} primal-dual iterations",
        steps.iter().map(|s| s.iterations).sum::<usize>()
    );
    let mut traj = Trajectory {
        time_grid: *tg,
        volume: kernel.volume(),
        snapshots,
        sign_fields,
        sources,
        source_energy,
        steps,
        ledger: EnergyLedger::default(),
    };
    traj.ledger = check_energy_chain(&traj, kernel)?;
    Ok(traj)
}

fn check_certificate(
    k: usize,
    u: &Field,
    z: &SignField,
    residual: f64,
    step: &StepData,
    kernel: &KernelWeights,
    opts: &SolverOptions,
) -> Result<()> {
    let fail = |detail: String| Err(Error::CertificateViolation { step: k, detail });
    if z.infeasibility() > FEASIBILITY_SLACK {
        return fail(format!("|Z| exceeds 1 by {:.3e}", z.infeasibility()));
    }
    let mismatch = z.sign_mismatch(u, kernel, opts.delta_sign * step.value_scale());
    if mismatch > opts.eps_sign {
        return fail(format!("Z deviates from sgn(Δu) by {mismatch:.3e}"));
    }
    if residual > opts.residual_tol {
        return fail(format!("weak residual {residual:.3e}"));
    }
    Ok(())
}

/// `u^m(t)`, linear between the bracketing snapshots.
pub fn interpolate_u(traj: &Trajectory, t: f64) -> Result<Field> {
    let (k, theta) = traj.locate(t)?;
    if theta == 1.0 {
        return Ok(traj.snapshots[k].clone());
    }
    if theta == 0.0 {
        return Ok(traj.snapshots[k - 1].clone());
    }
    Ok(traj.snapshots[k - 1].lerp(&traj.snapshots[k], theta))
}

/// `Z^m(t)`, linear between the bracketing sign fields.
pub fn interpolate_z(traj: &Trajectory, t: f64) -> Result<SignField> {
    let (k, theta) = traj.locate(t)?;
    let (a, b) = (&traj.sign_fields[k - 1], &traj.sign_fields[k]);
    if theta == 1.0 {
        return Ok(b.clone());
    }
    if theta == 0.0 {
        return Ok(a.clone());
    }
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(p, q)| (1.0 - theta) * p + theta * q)
            .collect()
    };
    Ok(SignField {
        pair_values: mix(&a.pair_values, &b.pair_values),
        exterior_values: mix(&a.exterior_values, &b.exterior_values),
    })
}
