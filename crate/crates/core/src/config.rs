//! JSON run configuration.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::Field;
use crate::error::{Error, Result};
use crate::grid::{assemble_kernel, build_grid, Grid, GridSpec, KernelWeights};
use crate::io::read_field_csv;
use crate::rothe::{SourceSpec, TimeGrid};
use crate::step::SolverOptions;

/// Initial datum presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    Zero,
    /// `amplitude · Π_d sin(π x_d / L_d)`
    Bump {
        amplitude: f64,
    },
    /// `±amplitude` alternating over cells of side `block` (in cells).
    Checker {
        amplitude: f64,
        #[serde(default = "one")]
        block: usize,
    },
    /// Uniform in `[-amplitude, amplitude]`, drawn from the run seed.
    Random {
        amplitude: f64,
    },
    /// Snapshot CSV (`index, coordinates…, value`).
    File {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

impl InitialDatum {
    /// `base` resolves relative file paths.
    pub fn build(&self, grid: &Grid, seed: u64, base: &Path) -> Result<Field> {
        let n = grid.len();
        let field = match self {
            InitialDatum::Zero => Field::zeros(n),
            InitialDatum::Bump { amplitude } => Field(
                (0..n)
                    .map(|i| {
                        amplitude
                            * grid
                                .coords(i)
                                .iter()
                                .enumerate()
                                .map(|(d, x)| (std::f64::consts::PI * x / grid.extent(d)).sin())
                                .product::<f64>()
                    })
                    .collect(),
            ),
            InitialDatum::Checker { amplitude, block } => {
                if *block == 0 {
                    return Err(Error::Config("checker block must be positive".into()));
                }
                Field(
                    (0..n)
                        .map(|i| {
                            let [a, b] = grid.multi_index(i);
                            if (a / block + b / block) % 2 == 0 {
                                *amplitude
                            } else {
                                -amplitude
                            }
                        })
                        .collect(),
                )
            }
            InitialDatum::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = amplitude.abs();
                Field(
                    (0..n)
                        .map(|_| {
                            if a > 0.0 {
                                rng.random_range(-a..=a)
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )
            }
            InitialDatum::File { path } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                read_field_csv(&path, n)?
            }
        };
        if !field.is_finite() {
            return Err(Error::Config("initial datum is not finite".into()));
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub s: f64,
    /// Final time.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Number of time steps (`solve`, `contract`).
    #[serde(default)]
    pub m: Option<usize>,
    /// Nested step counts (`refine`).
    #[serde(default)]
    pub m_list: Option<Vec<usize>>,
    pub initial: InitialDatum,
    /// Second initial datum (`contract`).
    #[serde(default)]
    pub initial_b: Option<InitialDatum>,
    pub source: SourceSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Steps whose sign field is written out.
    #[serde(default)]
    pub z_steps: Vec<usize>,
}

/// Grid, kernel and data built from a configuration.
pub struct Setup {
    pub grid: Grid,
    pub kernel: KernelWeights,
    pub initial: Field,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Config(format!(
                "s must lie in (0, 1), got {}",
                self.s
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "T must be positive, got {}",
                self.horizon
            )));
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let m = self
            .m
            .ok_or_else(|| Error::Config("missing field `m`".into()))?;
        TimeGrid::new(self.horizon, m)
    }

    pub fn m_list(&self) -> Result<&[usize]> {
        self.m_list
            .as_deref()
            .ok_or_else(|| Error::Config("missing field `m_list`".into()))
    }

    /// Builds the grid, kernel and initial datum; `base` resolves relative paths.
    pub fn setup(&self, base: &Path) -> Result<Setup> {
        let grid = build_grid(&self.grid)?;
        let kernel = assemble_kernel(&grid, self.s, &self.grid)?;
        let initial = self.initial.build(&grid, self.seed, base)?;
        self.source.validate(grid.len())?;
        for &k in &self.z_steps {
            if let Some(m) = self.m {
                if k > m {
                    return Err(Error::Config(format!("z_steps entry {k} exceeds m = {m}")));
                }
            }
        }
        Ok(Setup {
            grid,
            kernel,
            initial,
        })
    }
}
