//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;

use fractv::config::InitialDatum;
use fractv::diagnostics::{
    check_energy_chain, contraction_check, holder_quotient, refinement_study, time_derivative_norm,
};
use fractv::energy::{grad_j_sp, j_sp, phi_sp};
use fractv::rothe::{run_rothe, SourceSpec, SpatialProfile, TemporalProfile, TimeGrid, Trajectory};
use fractv::step::{solve_step_continuation, solve_step_primal_dual, SignField, SolverOptions};
use fractv::{
    assemble_kernel, build_grid, Field, Grid, GridSpec, KernelWeights, StepData, TailMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;
const HOLDER_SAMPLES: usize = 41;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("step oracle", step_oracle),
        ("dual certificate", dual_certificate),
        ("cross-solver agreement", cross_solver),
        ("energy chain", energy_chain),
        ("uniform bounds", uniform_bounds),
        ("holder continuity", holder),
        ("contraction and determinism", contraction),
        ("refinement", refinement),
        ("functional analytics", functionals),
        ("extinction", extinction),
    ];
    let mut failures = 0;
    for (idx, (name, run)) in criteria.iter().enumerate() {
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failures += 1;
        }
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {status}  {}", idx + 1, v.detail);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- fixtures

fn line(cells: usize, dx: f64, s: f64) -> (Grid, KernelWeights) {
    let spec = GridSpec::new_1d(cells, dx, 2.0, TailMode::Analytic);
    let grid = build_grid(&spec).unwrap();
    let kernel = assemble_kernel(&grid, s, &spec).unwrap();
    (grid, kernel)
}

fn square(n: usize, s: f64) -> (Grid, KernelWeights) {
    let spec = GridSpec::new_2d(n, n, 1.0 / n as f64, 2.0, TailMode::Analytic);
    let grid = build_grid(&spec).unwrap();
    let kernel = assemble_kernel(&grid, s, &spec).unwrap();
    (grid, kernel)
}

fn datum(d: InitialDatum, grid: &Grid, seed: u64) -> Field {
    d.build(grid, seed, Path::new(".")).unwrap()
}

struct Fixture {
    name: &'static str,
    kernel: KernelWeights,
    traj: Trajectory,
    source_free: bool,
}

/// Smooth data: a sine bump of height 5 driven by `100 · bump · sin(2πt/T + 1/2)`.
const SMOOTH_T: f64 = 0.05;

fn smooth_source() -> SourceSpec {
    SourceSpec::SeparableAnalytic {
        amplitude: 100.0,
        spatial: SpatialProfile::SineBump,
        temporal: TemporalProfile::Sine {
            frequency: 2.0 * PI / SMOOTH_T,
            phase: 0.5,
        },
    }
}

fn smooth_initial(grid: &Grid) -> Field {
    datum(InitialDatum::Bump { amplitude: 5.0 }, grid, 0)
}

fn run(
    u0: &Field,
    src: &SourceSpec,
    horizon: f64,
    m: usize,
    grid: &Grid,
    kernel: &KernelWeights,
) -> Trajectory {
    run_rothe(
        u0,
        src,
        &TimeGrid::new(horizon, m).unwrap(),
        grid,
        kernel,
        &SolverOptions::default(),
    )
    .unwrap()
}

fn corpus() -> Vec<Fixture> {
    let mut out = Vec::new();
    let mut push =
        |name, grid: Grid, kernel: KernelWeights, u0: Field, src: SourceSpec, horizon, m| {
            let traj = run(&u0, &src, horizon, m, &grid, &kernel);
            out.push(Fixture {
                name,
                source_free: src == SourceSpec::Zero,
                kernel,
                traj,
            });
        };

    let (g, k) = line(16, 1.0 / 16.0, 0.5);
    let u0 = datum(InitialDatum::Bump { amplitude: 1.0 }, &g, 0);
    push("line bump", g, k, u0, SourceSpec::Zero, 0.1, 16);

    let (g, k) = square(8, 0.3);
    let u0 = datum(
        InitialDatum::Checker {
            amplitude: 1.0,
            block: 2,
        },
        &g,
        0,
    );
    push("checker", g, k, u0, SourceSpec::Zero, 0.05, 16);

    let (g, k) = square(8, 0.5);
    let u0 = smooth_initial(&g);
    push("smooth", g, k, u0, smooth_source(), SMOOTH_T, 32);

    let (g, k) = square(6, 0.7);
    let u0 = datum(InitialDatum::Random { amplitude: 1.0 }, &g, 11);
    push(
        "random",
        g,
        k,
        u0,
        SourceSpec::Constant { amplitude: 3.0 },
        0.05,
        16,
    );

    let (g, k) = line(1, 1.0, 0.5);
    push(
        "single cell",
        g,
        k,
        Field(vec![1.0]),
        SourceSpec::Zero,
        1.0,
        16,
    );

    let (g, k) = line(8, 0.125, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let fields = (0..3)
        .map(|_| Field((0..8).map(|_| rng.random_range(-4.0..4.0)).collect()))
        .collect();
    let src = SourceSpec::GriddedSeries {
        times: vec![0.0, 0.05, 0.1],
        fields,
    };
    let u0 = datum(InitialDatum::Random { amplitude: 0.5 }, &g, 5);
    push("gridded", g, k, u0, src, 0.1, 10);
    out
}

// ----------------------------------------------------------------- oracles

/// `J(u) = (2/h) [u] + v Σ ((u - u⁰)/h - f)²`, `[u] = 2 Σ_{i<j} w |Δ| + 2 Σ b |u|`.
fn objective(u: &[f64], step: &StepData, kernel: &KernelWeights) -> f64 {
    let (h, v) = (step.h, kernel.volume());
    let u0 = step.u_prev.values();
    let f = step.f_step.values();
    (2.0 / h) * seminorm(u, kernel)
        + v * (0..u.len())
            .map(|i| ((u[i] - u0[i]) / h - f[i]).powi(2))
            .sum::<f64>()
}

fn seminorm(u: &[f64], kernel: &KernelWeights) -> f64 {
    let pairs: f64 = kernel
        .pairs()
        .iter()
        .map(|p| p.weight * (u[p.i] - u[p.j]).abs())
        .sum();
    let ext: f64 = kernel
        .exterior_weights()
        .iter()
        .zip(u)
        .map(|(b, x)| b * x.abs())
        .sum();
    2.0 * pairs + 2.0 * ext
}

/// Coarse-to-fine grid search over `[-2, 2]^n`.
fn grid_search(n: usize, j: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut best = vec![0.0; n];
    let mut step = 0.02;
    let mut radius: usize = 100;
    while step > 1e-6 {
        let centre = best.clone();
        let mut best_val = f64::INFINITY;
        let side = 2 * radius + 1;
        let mut x = vec![0.0; n];
        for flat in 0..side.pow(n as u32) {
            let mut r = flat;
            for d in 0..n {
                let offset = (r % side) as f64 - radius as f64;
                r /= side;
                x[d] = (centre[d] + offset * step).clamp(-2.0, 2.0);
            }
            let val = j(&x);
            if val < best_val {
                best_val = val;
                best.clone_from(&x);
            }
        }
        step /= 10.0;
        radius = 30;
    }
    best
}

/// Single cell: `J = (4b/h)|u| + (v/h²)(u - c)²`.
fn shrink(c: f64, b: f64, h: f64, v: f64) -> f64 {
    let tau = 2.0 * b * h / v;
    if c.abs() <= tau {
        0.0
    } else {
        c - tau * c.signum()
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn l2(a: &[f64], b: &[f64], v: f64) -> f64 {
    (v * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}

fn spread(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    (hi - lo) / hi
}

fn nonincreasing(xs: &[f64], slack: f64) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + slack)
}

fn sci(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

// --------------------------------------------------------------- criteria

fn step_oracle() -> Verdict {
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_pd, mut worst_ct, mut active) = (0.0_f64, 0.0_f64, 0);
    for idx in 0..25 {
        let n = 1 + idx % 3;
        let (_, kernel) = line(n, rng.random_range(0.3..1.0), rng.random_range(0.2..0.8));
        // h sets the largest shrinkage 2h(b_i + Σ_j w_ij)/v to a fraction of the data
        let coupling = (0..n)
            .map(|i| {
                kernel.exterior_weights()[i] + (0..n).map(|j| kernel.weight(i, j)).sum::<f64>()
            })
            .fold(0.0, f64::max);
        let h = rng.random_range(0.05..0.6) * kernel.volume() / (2.0 * coupling);
        let u0 = Field((0..n).map(|_| rng.random_range(-1.5..1.5)).collect());
        let f = Field((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let step = StepData::new(u0, f, h).unwrap();
        let want = grid_search(n, |x| objective(x, &step, &kernel));
        if want.iter().any(|x| x.abs() > 1e-3) {
            active += 1;
        }
        let pd = solve_step_primal_dual(&step, &kernel, &opts).unwrap();
        let ct = solve_step_continuation(&step, &kernel, &opts).unwrap();
        worst_pd = worst_pd.max(max_diff(pd.u.values(), &want));
        worst_ct = worst_ct.max(max_diff(ct.u.values(), &want));
    }

    let (mut single_pd, mut single_ct) = (0.0_f64, 0.0_f64);
    for (dx, s) in [(1.0, 0.5), (0.5, 0.3), (0.25, 0.8)] {
        let (_, kernel) = line(1, dx, s);
        let (b, v) = (kernel.exterior_weights()[0], kernel.volume());
        for (u0, f, h) in [
            (1.0, 0.0, 0.01),
            (-0.3, 2.0, 0.05),
            (0.01, 0.0, 0.1),
            (2.0, -5.0, 0.2),
        ] {
            let step = StepData::new(Field(vec![u0]), Field(vec![f]), h).unwrap();
            let want = shrink(u0 + h * f, b, h, v);
            let pd = solve_step_primal_dual(&step, &kernel, &opts).unwrap();
            let ct = solve_step_continuation(&step, &kernel, &opts).unwrap();
            single_pd = single_pd.max((pd.u.values()[0] - want).abs());
            single_ct = single_ct.max((ct.u.values()[0] - want).abs());
        }
    }
    verdict(
        worst_pd <= 1e-3 && worst_ct <= 1e-3 && single_pd <= 1e-8 && single_ct <= 1e-4,
        format!(
            "search: pd {worst_pd:.2e}, continuation {worst_ct:.2e} ({active}/25 nonzero); \
             single cell: pd {single_pd:.2e}, continuation {single_ct:.2e}"
        ),
    )
}

/// Residual per unit volume, `(u - u⁰)/h - f + (2/v)(Σ_j w_ij Z_ij + b_i ζ_i)`,
/// over the rate scale `max(1, ‖u⁰‖_∞/h + ‖f‖_∞)`.
fn residual(u: &[f64], z: &SignField, step: &StepData, kernel: &KernelWeights) -> f64 {
    let v = kernel.volume();
    let mut flux: Vec<f64> = kernel
        .exterior_weights()
        .iter()
        .zip(&z.exterior_values)
        .map(|(b, zeta)| b * zeta)
        .collect();
    for (p, zij) in kernel.pairs().iter().zip(&z.pair_values) {
        flux[p.i] += p.weight * zij;
        flux[p.j] -= p.weight * zij;
    }
    let u0 = step.u_prev.values();
    let f = step.f_step.values();
    let worst = (0..u.len())
        .map(|i| ((u[i] - u0[i]) / step.h - f[i] + 2.0 / v * flux[i]).abs())
        .fold(0.0, f64::max);
    let rate = (step.u_prev.max_abs() / step.h + step.f_step.max_abs()).max(1.0);
    worst / rate
}

fn slackness(u: &[f64], z: &SignField, kernel: &KernelWeights) -> f64 {
    let pairs: f64 = kernel
        .pairs()
        .iter()
        .zip(&z.pair_values)
        .map(|(p, zij)| {
            let d = u[p.i] - u[p.j];
            p.weight * (d.abs() - zij * d)
        })
        .sum();
    let ext: f64 = kernel
        .exterior_weights()
        .iter()
        .zip(&z.exterior_values)
        .zip(u)
        .map(|((b, zeta), x)| b * (x.abs() - zeta * x))
        .sum();
    2.0 * pairs + 2.0 * ext
}

fn dual_certificate() -> Verdict {
    let (mut infeasible, mut antisym, mut cs, mut res, mut steps) =
        (0.0_f64, true, 0.0_f64, 0.0_f64, 0);
    for fx in corpus() {
        let kernel = &fx.kernel;
        for k in 1..=fx.traj.steps() {
            let u = fx.traj.snapshots[k].values();
            let z = &fx.traj.sign_fields[k];
            let step = fx.traj.step_data(k).unwrap();
            let all = z.pair_values.iter().chain(&z.exterior_values);
            infeasible = infeasible.max(all.map(|x| x.abs() - 1.0).fold(0.0, f64::max));
            antisym &= kernel
                .pairs()
                .iter()
                .all(|p| z.get(kernel, p.i, p.j).to_bits() == (-z.get(kernel, p.j, p.i)).to_bits());
            cs = cs.max(slackness(u, z, kernel) / seminorm(u, kernel).max(1.0));
            res = res.max(residual(u, z, &step, kernel));
            steps += 1;
        }
    }
    verdict(
        infeasible <= 1e-10 && antisym && cs <= TOL && res <= TOL,
        format!(
            "{steps} steps: |Z| - 1 <= {infeasible:.1e}, antisymmetric {antisym}, \
             slackness {cs:.2e}, residual {res:.2e}"
        ),
    )
}

fn cross_solver() -> Verdict {
    let (_, kernel) = square(4, 0.5);
    let opts = SolverOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst, mut monotone) = (0.0_f64, 0);
    for _ in 0..20 {
        let h = rng.random_range(0.02..0.2);
        let u0 = Field((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let f = Field((0..16).map(|_| rng.random_range(-2.0..2.0)).collect());
        let step = StepData::new(u0, f, h).unwrap();
        let pd = solve_step_primal_dual(&step, &kernel, &opts).unwrap();
        let ct = solve_step_continuation(&step, &kernel, &opts).unwrap();
        worst = worst.max(max_diff(ct.u.values(), pd.u.values()));
        let d: Vec<f64> = ct
            .p_iterates
            .iter()
            .map(|(_, u)| l2(u.values(), pd.u.values(), kernel.volume()))
            .collect();
        if nonincreasing(&d, 0.0) {
            monotone += 1;
        }
    }
    verdict(
        worst <= 1e-4 && monotone == 20,
        format!("max-norm gap {worst:.2e}; monotone approach on {monotone}/20"),
    )
}

fn energy_chain() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for fx in corpus() {
        let ledger = check_energy_chain(&fx.traj, &fx.kernel).unwrap();
        let scale = ledger.scale();
        let snaps = &fx.traj.snapshots;
        let v = fx.traj.volume;
        let h = fx.traj.h();
        let semi: Vec<f64> = snaps
            .iter()
            .map(|u| seminorm(u.values(), &fx.kernel))
            .collect();
        let norm0 = v * snaps[0].values().iter().map(|x| x * x).sum::<f64>();
        let (mut worst, mut work) = (f64::INFINITY, 0.0);
        for k in 1..snaps.len() {
            let e = fx.traj.source_energy[k - 1];
            let f = fx.traj.sources[k - 1].values();
            work += 2.0
                * h
                * v
                * f.iter()
                    .zip(snaps[k].values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            let norm = v * snaps[k].values().iter().map(|x| x * x).sum::<f64>();
            worst = worst
                .min(semi[k - 1] + 0.25 * e - semi[k])
                .min(norm0 + work - norm);
        }
        let ok = worst >= -TOL * scale;
        let mono = !fx.source_free || nonincreasing(&semi, 0.0);
        pass &= ok && mono;
        notes.push(format!(
            "{} {:.1e}{}",
            fx.name,
            worst / scale,
            if fx.source_free {
                if mono {
                    " mono"
                } else {
                    " NOT mono"
                }
            } else {
                ""
            }
        ));
    }
    verdict(pass, format!("min margin / scale: {}", notes.join("; ")))
}

fn smooth_study() -> fractv::diagnostics::RefinementStudy {
    let (grid, kernel) = square(8, 0.5);
    refinement_study(
        &smooth_initial(&grid),
        &smooth_source(),
        SMOOTH_T,
        &[8, 16, 32, 64],
        &grid,
        &kernel,
        &SolverOptions::default(),
    )
    .unwrap()
}

fn uniform_bounds() -> Verdict {
    let study = smooth_study();
    let sup: Vec<f64> = study.rows.iter().map(|r| r.sup_energy).collect();
    let w: Vec<f64> = study.rows.iter().map(|r| r.time_derivative).collect();
    let (ss, ws) = (spread(&sup), spread(&w));
    verdict(
        ss < 0.1 && ws < 0.1,
        format!(
            "m = 8..64: sup {} (spread {ss:.3}); W {} (spread {ws:.3})",
            sci(&sup),
            sci(&w)
        ),
    )
}

fn holder() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for fx in corpus() {
        let q = holder_quotient(&fx.traj, HOLDER_SAMPLES).unwrap();
        let w = time_derivative_norm(&fx.traj);
        let scale = fx.traj.ledger.scale();
        pass &= q * q <= w + TOL * scale;
        notes.push(format!(
            "{} {:.3}",
            fx.name,
            q * q / w.max(f64::MIN_POSITIVE)
        ));
    }
    verdict(pass, format!("q^2 / W: {}", notes.join("; ")))
}

fn contraction() -> Verdict {
    let (grid, kernel) = square(8, 0.5);
    let src = smooth_source();
    let a0 = smooth_initial(&grid);
    let mut b0 = a0.clone();
    b0.values_mut()[27] += 0.5;
    let c0 = datum(InitialDatum::Random { amplitude: 3.0 }, &grid, 9);
    let a = run(&a0, &src, SMOOTH_T, 32, &grid, &kernel);
    let b = run(&b0, &src, SMOOTH_T, 32, &grid, &kernel);
    let c = run(&c0, &src, SMOOTH_T, 32, &grid, &kernel);
    let v = kernel.volume();
    let mut growth = f64::NEG_INFINITY;
    let mut step_increase = f64::NEG_INFINITY;
    for (x, y) in [(&a, &b), (&a, &c)] {
        let scale = x.ledger.scale().max(y.ledger.scale());
        let report = contraction_check(x, y).unwrap();
        let gaps: Vec<f64> = x
            .snapshots
            .iter()
            .zip(&y.snapshots)
            .map(|(p, q)| l2(p.values(), q.values(), v))
            .collect();
        let g = gaps
            .iter()
            .map(|g| g - gaps[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let si = gaps
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        growth = growth.max(g.max(report.max_growth) / scale);
        step_increase = step_increase.max(si / scale);
    }
    let again = run(&a0, &src, SMOOTH_T, 32, &grid, &kernel);
    let bits = |t: &Trajectory| -> Vec<u64> {
        t.snapshots
            .iter()
            .flat_map(|u| u.values().to_vec())
            .chain(
                t.sign_fields
                    .iter()
                    .flat_map(|z| z.pair_values.iter().chain(&z.exterior_values).copied()),
            )
            .map(f64::to_bits)
            .collect()
    };
    let identical = bits(&a) == bits(&again);
    verdict(
        growth <= TOL && identical,
        format!(
            "max gap growth / scale {growth:.2e}, max per-step increase / scale {step_increase:.2e}; \
             rerun bit-identical {identical}"
        ),
    )
}

fn refinement() -> Verdict {
    let study = smooth_study();
    let d = study.differences();
    let rms: Vec<f64> = study.rows.iter().filter_map(|r| r.difference_rms).collect();
    verdict(
        d.len() == 3 && nonincreasing(&d, 0.0),
        format!("m = 8, 16, 32 vs 2m: max {}; rms {}", sci(&d), sci(&rms)),
    )
}

fn functionals() -> Verdict {
    let (grid, kernel) = square(8, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut random = |n: usize, a: f64| Field((0..n).map(|_| rng.random_range(-a..a)).collect());
    let u = random(64, 2.0);
    let step = StepData::new(random(64, 2.0), random(64, 2.0), 0.1).unwrap();
    let mut worst_grad = 0.0_f64;
    for p in [1.25, 1.5, 2.0] {
        let g = grad_j_sp(&u, &step, &kernel, p).unwrap();
        let eps = 1e-5;
        let fd: Vec<f64> = (0..64)
            .map(|i| {
                let (mut up, mut dn) = (u.clone(), u.clone());
                up.values_mut()[i] += eps;
                dn.values_mut()[i] -= eps;
                (j_sp(&up, &step, &kernel, p).unwrap() - j_sp(&dn, &step, &kernel, p).unwrap())
                    / (2.0 * eps)
            })
            .collect();
        let norm = fd.iter().map(|x| x.abs()).fold(0.0, f64::max);
        worst_grad = worst_grad.max(max_diff(g.values(), &fd) / norm);
    }

    // fixed fields: the random 4-cell line, a random 8x8 field, the 8x8 bump
    let (_, k4) = line(4, 0.25, 0.5);
    let fields = [
        ("4-cell", random(4, 1.0), k4),
        ("8x8 random", random(64, 2.0), kernel.clone()),
        (
            "8x8 bump",
            datum(InitialDatum::Bump { amplitude: 2.0 }, &grid, 0),
            kernel.clone(),
        ),
    ];
    let mut notes = Vec::new();
    let mut close = true;
    for (name, f, k) in &fields {
        let base = seminorm(f.values(), k) / 2.0;
        let gap = |p: f64| (phi_sp(f, k, p).unwrap() - base).abs() / base;
        let (g1, g2) = (gap(1.01), gap(1.001));
        close &= g2 <= 1e-3;
        notes.push(format!(
            "{name} {g2:.2e} (ratio to p = 1.01: {:.3})",
            g2 / g1
        ));
    }
    verdict(
        worst_grad <= 1e-5 && close,
        format!(
            "gradient rel err {worst_grad:.2e}; phi(1.001) rel gap: {}",
            notes.join(", ")
        ),
    )
}

fn extinction() -> Verdict {
    let (grid, kernel) = line(1, 1.0, 0.5);
    let (b, v) = (kernel.exterior_weights()[0], kernel.volume());
    // τ = 2bh/v = 1 / 7.37
    let h = v / (2.0 * b * 7.37);
    let tau = 2.0 * b * h / v;
    let m = 12;
    let traj = run(
        &Field(vec![1.0]),
        &SourceSpec::Zero,
        h * m as f64,
        m,
        &grid,
        &kernel,
    );
    let stop = (1.0 / tau).ceil() as usize;
    let mut err = 0.0_f64;
    let mut exact = true;
    for k in 0..=m {
        let u = traj.snapshots[k].values()[0];
        if k >= stop {
            exact &= u == 0.0;
        } else {
            exact &= u > 0.0;
            err = err.max((u - (1.0 - k as f64 * tau)).abs());
        }
    }
    verdict(
        exact && err <= 1e-8,
        format!(
            "1/tau = {:.3}, zero from step {stop} on: {exact}, pre-extinction error {err:.1e}",
            1.0 / tau
        ),
    )
}
