//! Uniform cell grids on the box `(0, L)^N` and the singular nonlocal kernel.
//!
//! Interior cells are the unknowns. Every other lattice cell belongs to the
//! complement of the domain, where the field is pinned to zero. The
//! double integral `∫∫ |u(x) - u(y)| / |x - y|^{N+s}` is discretised with the
//! midpoint rule on cell pairs:
//!
//! * interior/interior pairs carry `w_ij = v² / |x_i - x_j|^{N+s}`;
//! * interior/exterior pairs collapse to one coupling per cell,
//!   `b_i = v · Q_i` with `Q_i ≈ ∫_{ext} |x_i - y|^{-(N+s)} dy`.
//!
//! Diagonal pairs are skipped (principal value). `Q_i` is the midpoint sum
//! over exterior lattice cells inside a ball around `x_i`, plus, in
//! [`TailMode::Analytic`], the exact radial integral over the rest of space.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Far-field treatment for the exterior coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Truncate at the explicit exterior cells.
    None,
    /// Add the closed-form radial integral beyond the truncation radius.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dimension: usize,
    /// One entry per axis. A single entry is broadcast to every axis.
    pub cells_per_axis: Vec<usize>,
    pub spacing: f64,
    pub exterior_radius: f64,
    #[serde(default = "default_tail_mode")]
    pub tail_mode: TailMode,
}

fn default_tail_mode() -> TailMode {
    TailMode::Analytic
}

impl GridSpec {
    pub fn new_1d(cells: usize, spacing: f64, exterior_radius: f64, tail_mode: TailMode) -> Self {
        GridSpec {
            dimension: 1,
            cells_per_axis: vec![cells],
            spacing,
            exterior_radius,
            tail_mode,
        }
    }

    pub fn new_2d(
        nx: usize,
        ny: usize,
        spacing: f64,
        exterior_radius: f64,
        tail_mode: TailMode,
    ) -> Self {
        GridSpec {
            dimension: 2,
            cells_per_axis: vec![nx, ny],
            spacing,
            exterior_radius,
            tail_mode,
        }
    }

    fn axis_cells(&self) -> Result<[usize; 2]> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        let cells = match self.cells_per_axis.len() {
            1 => [self.cells_per_axis[0]; 2],
            n if n == self.dimension => {
                let mut c = [1; 2];
                c[..n].copy_from_slice(&self.cells_per_axis);
                c
            }
            n => {
                return Err(Error::InvalidGrid(format!(
                    "cells_per_axis has {n} entries for dimension {}",
                    self.dimension
                )))
            }
        };
        let mut out = [1usize; 2];
        out[..self.dimension].copy_from_slice(&cells[..self.dimension]);
        if out.contains(&0) {
            return Err(Error::InvalidGrid(
                "every axis needs at least one cell".into(),
            ));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.axis_cells()?;
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        if !(self.exterior_radius >= self.spacing) {
            return Err(Error::InvalidKernel(format!(
                "exterior radius {} is smaller than the spacing {}",
                self.exterior_radius, self.spacing
            )));
        }
        Ok(())
    }
}

pub type Point = [f64; 2];

/// Interior cell centres of a uniform lattice. Flat index is `ix + nx * iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dimension: usize,
    cells: [usize; 2],
    spacing: f64,
    centers: Vec<Point>,
}

impl Grid {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Cell volume `Δx^N`.
    pub fn volume(&self) -> f64 {
        self.spacing.powi(self.dimension as i32)
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells[..self.dimension]
    }

    /// Side length of the box.
    pub fn extent(&self, axis: usize) -> f64 {
        self.cells[axis] as f64 * self.spacing
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dimension)
            .map(|a| self.extent(a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    /// Coordinates of one centre, truncated to the grid dimension.
    pub fn coords(&self, i: usize) -> &[f64] {
        &self.centers[i][..self.dimension]
    }

    pub fn flat_index(&self, multi: [usize; 2]) -> usize {
        multi[0] + self.cells[0] * multi[1]
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        [flat % self.cells[0], flat / self.cells[0]]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.centers[i], self.centers[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
}

pub fn build_grid(spec: &GridSpec) -> Result<Grid> {
    let cells = spec.axis_cells()?;
    if !(spec.spacing > 0.0 && spec.spacing.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "spacing must be positive, got {}",
            spec.spacing
        )));
    }
    let dx = spec.spacing;
    let mut centers = Vec::with_capacity(cells[0] * cells[1]);
    for iy in 0..cells[1] {
        for ix in 0..cells[0] {
            let x = (ix as f64 + 0.5) * dx;
            let y = if spec.dimension == 2 {
                (iy as f64 + 0.5) * dx
            } else {
                0.0
            };
            centers.push([x, y]);
        }
    }
    Ok(Grid {
        dimension: spec.dimension,
        cells,
        spacing: dx,
        centers,
    })
}

/// `∫_{|y| > R} |y|^{-exponent} dy` over `R^N`, for `exponent > N`.
///
/// 1D: `2 R^{1-α} / (α - 1)`; 2D: `2π R^{2-α} / (α - 2)`.
pub fn radial_tail_integral(dimension: usize, exponent: f64, radius: f64) -> f64 {
    let n = dimension as f64;
    debug_assert!(exponent > n);
    let surface = if dimension == 1 { 2.0 } else { 2.0 * PI };
    surface * radius.powf(n - exponent) / (exponent - n)
}

/// Exterior lattice cells around each interior cell, grouped by squared
/// integer offset so the coupling can be re-evaluated for any kernel exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteriorQuadrature {
    dimension: usize,
    spacing: f64,
    volume: f64,
    tail_mode: TailMode,
    tail_radius: f64,
    /// Per cell: `(ix² + iy², multiplicity)` of exterior offsets.
    shells: Vec<Vec<(u64, u32)>>,
}

impl ExteriorQuadrature {
    fn new(grid: &Grid, spec: &GridSpec) -> Self {
        let dx = grid.spacing;
        // the analytic tail must not reach back into the domain
        let radius = match spec.tail_mode {
            TailMode::Analytic => spec.exterior_radius.max(grid.diameter()),
            TailMode::None => spec.exterior_radius,
        };
        let reach = (radius / dx * (1.0 + 1e-12)).floor() as i64;
        let (nx, ny) = (grid.cells[0] as i64, grid.cells[1] as i64);
        let outside = |jx: i64, jy: i64| jx < 0 || jx >= nx || jy < 0 || jy >= ny;

        let shells = (0..grid.len())
            .map(|i| {
                let [ix, iy] = grid.multi_index(i);
                let (ix, iy) = (ix as i64, iy as i64);
                let mut counts: BTreeMap<u64, u32> = BTreeMap::new();
                if grid.dimension == 1 {
                    for a in 1..=reach {
                        for jx in [ix - a, ix + a] {
                            if outside(jx, 0) {
                                *counts.entry((a * a) as u64).or_default() += 1;
                            }
                        }
                    }
                } else {
                    let r2 = reach * reach;
                    for a in -reach..=reach {
                        for b in -reach..=reach {
                            let q = a * a + b * b;
                            if q == 0 || q > r2 {
                                continue;
                            }
                            // exterior disk test uses the real radius, not the integer reach
                            if (q as f64).sqrt() * dx > radius * (1.0 + 1e-12) {
                                continue;
                            }
                            if outside(ix + a, iy + b) {
                                *counts.entry(q as u64).or_default() += 1;
                            }
                        }
                    }
                }
                counts.into_iter().collect()
            })
            .collect();

        // In 1D the included cells tile |y - x_i| <= (reach + 1/2) dx exactly.
        let tail_radius = if grid.dimension == 1 {
            (reach as f64 + 0.5) * dx
        } else {
            radius
        };
        ExteriorQuadrature {
            dimension: grid.dimension,
            spacing: dx,
            volume: grid.volume(),
            tail_mode: spec.tail_mode,
            tail_radius,
            shells,
        }
    }

    pub fn tail_radius(&self) -> f64 {
        self.tail_radius
    }

    pub fn tail_mode(&self) -> TailMode {
        self.tail_mode
    }

    /// `v · Q_i(α)` for every interior cell, where `Q_i(α)` approximates
    /// `∫_{ext} |x_i - y|^{-α} dy`.
    pub fn couplings(&self, exponent: f64) -> Vec<f64> {
        let tail = match self.tail_mode {
            TailMode::Analytic => radial_tail_integral(self.dimension, exponent, self.tail_radius),
            TailMode::None => 0.0,
        };
        self.shells
            .iter()
            .map(|shell| {
                let near: f64 = shell
                    .iter()
                    .map(|&(q, count)| {
                        let d = self.spacing * (q as f64).sqrt();
                        count as f64 * d.powf(-exponent)
                    })
                    .sum();
                self.volume * (self.volume * near + tail)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWeight {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// `|x_i - x_j|^{-(N+s)}`
    pub kernel: f64,
    /// `v² · kernel`
    pub weight: f64,
}

/// Discrete kernel. Pairs are stored once for `i < j`; the ordered weight
/// `w_ji` reads the same entry, so symmetry holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    s: f64,
    dimension: usize,
    n: usize,
    volume: f64,
    pairs: Vec<PairWeight>,
    exterior: Vec<f64>,
    quadrature: ExteriorQuadrature,
    op_norm_estimate: f64,
}

impl KernelWeights {
    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of interior cells.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// `N + s`
    pub fn exponent(&self) -> f64 {
        self.dimension as f64 + self.s
    }

    pub fn pairs(&self) -> &[PairWeight] {
        &self.pairs
    }

    pub fn exterior_weights(&self) -> &[f64] {
        &self.exterior
    }

    pub fn exterior_quadrature(&self) -> &ExteriorQuadrature {
        &self.quadrature
    }

    /// Upper bound on the norm of `u ↦ ((w_ij (u_i - u_j))_{i<j}, (b_i u_i)_i)`,
    /// the weighted difference operator used by the primal-dual solver.
    /// Gershgorin bound on its normal matrix: `max_i (2 Σ_j w_ij² + b_i²)`.
    pub fn op_norm_estimate(&self) -> f64 {
        self.op_norm_estimate
    }

    /// Position of the unordered pair `{i, j}` in [`Self::pairs`].
    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        if i == j || i >= self.n || j >= self.n {
            return None;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        Some(a * self.n - a * (a + 1) / 2 + (b - a - 1))
    }

    /// Ordered weight `w_ij`; zero on the diagonal.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.pair_index(i, j).map_or(0.0, |k| self.pairs[k].weight)
    }
}

pub fn assemble_kernel(grid: &Grid, s: f64, spec: &GridSpec) -> Result<KernelWeights> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidKernel(format!(
            "s must lie in (0, 1), got {s}"
        )));
    }
    spec.validate()?;
    if spec.dimension != grid.dimension || (spec.spacing - grid.spacing).abs() > 0.0 {
        return Err(Error::InvalidGrid("grid does not match its spec".into()));
    }
    let n = grid.len();
    let v = grid.volume();
    let exponent = grid.dimension as f64 + s;

    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let distance = grid.distance(i, j);
            let kernel = distance.powf(-exponent);
            pairs.push(PairWeight {
                i,
                j,
                distance,
                kernel,
                weight: v * v * kernel,
            });
        }
    }

    let quadrature = ExteriorQuadrature::new(grid, spec);
    let exterior = quadrature.couplings(exponent);

    let mut row = exterior.iter().map(|b| b * b).collect::<Vec<_>>();
    for p in &pairs {
        let w2 = p.weight * p.weight;
        row[p.i] += 2.0 * w2;
        row[p.j] += 2.0 * w2;
    }
    let op_norm_estimate = row.iter().cloned().fold(0.0, f64::max).sqrt();

    Ok(KernelWeights {
        s,
        dimension: grid.dimension,
        n,
        volume: v,
        pairs,
        exterior,
        quadrature,
        op_norm_estimate,
    })
}

/// Writes the kernel as two CSV files: `i,j,w_ij` (both orders) and `i,b_i`.
pub fn write_kernel_csv(
    kernel: &KernelWeights,
    pairs_path: &std::path::Path,
    exterior_path: &std::path::Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(pairs_path)
        .map_err(|e| Error::io(pairs_path, std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::io(pairs_path, std::io::Error::other(e));
    w.write_record(["i", "j", "w_ij"]).map_err(csv_err)?;
    for p in &kernel.pairs {
        for (a, b) in [(p.i, p.j), (p.j, p.i)] {
            w.write_record([a.to_string(), b.to_string(), crate::io::fmt_f64(p.weight)])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(pairs_path, e))?;

    let mut w = csv::Writer::from_path(exterior_path)
        .map_err(|e| Error::io(exterior_path, std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::io(exterior_path, std::io::Error::other(e));
    w.write_record(["i", "b_i"]).map_err(csv_err)?;
    for (i, b) in kernel.exterior.iter().enumerate() {
        w.write_record([i.to_string(), crate::io::fmt_f64(*b)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(exterior_path, e))?;
    Ok(())
}
