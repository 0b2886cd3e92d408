//! Flow-map emulation: one GP per state coordinate, trained on single
//! simulator steps from a Latin hypercube of initial conditions, then
//! iterated to predict whole trajectories.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{latin_hypercube, BoundingBox};
use crate::dynsys::{generate_training, DynamicalSystem, FlowMapSample, Tolerance};
use crate::error::{EmuError, Result};
use crate::gp::{FitOptions, GpModel, GpModelRecord};
use crate::kernel::KernelFamily;
use crate::propagate::{step_distribution, PropagationConfig, StateDistribution};

pub const ARCHIVE_FORMAT: &str = "dynemu-emulator";
pub const ARCHIVE_VERSION: u32 = 1;

/// Settings for [`FlowMapEmulator::build_with`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Design size; `12·d` is the usual choice.
    pub n: usize,
    pub dt: f64,
    pub design_seed: u64,
    /// Coordinate `l` is fitted with seed `fit.seed + l`.
    pub fit: FitOptions,
    pub tolerance: Tolerance,
}

impl BuildOptions {
    pub fn new(n: usize, dt: f64, family: KernelFamily, seed: u64) -> Self {
        Self {
            n,
            dt,
            design_seed: seed,
            fit: FitOptions::new(family, seed),
            tolerance: Tolerance::default(),
        }
    }
}

/// `d` independent scalar emulators `f̂_l : x(t₀) ↦ x_l(t₀ + dt)` sharing one design.
#[derive(Debug, Clone)]
pub struct FlowMapEmulator {
    models: Vec<GpModel>,
    dt: f64,
    bbox: BoundingBox,
}

/// Predicted trajectory: one Gaussian state per step, starting from a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPrediction {
    pub states: Vec<StateDistribution>,
    /// `det Σ` per step.
    pub gen_var: Vec<f64>,
    pub config: PropagationConfig,
    pub dt: f64,
}

impl TrajectoryPrediction {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, StateDistribution::dim)
    }

    /// Number of steps after the initial state.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time_index() as f64 * self.dt).collect()
    }

    pub fn mean_trace(&self, coordinate: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.mean()[coordinate]).collect()
    }
}

/// Serialised emulator: shared design plus one record per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorArchive {
    pub format: String,
    pub version: u32,
    pub dt: f64,
    pub bbox: BoundingBox,
    pub design: Vec<Vec<f64>>,
    pub models: Vec<GpModelRecord>,
    /// Free-form provenance (tool version, seeds); ignored when loading.
    #[serde(default)]
    pub provenance: std::collections::BTreeMap<String, String>,
}

impl EmulatorArchive {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EmuError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

impl FlowMapEmulator {
    /// Wraps already fitted models; all must share the same design.
    pub fn from_models(models: Vec<GpModel>, dt: f64, bbox: BoundingBox) -> Result<Self> {
        let first = models.first().ok_or_else(|| EmuError::usage("an emulator needs at least one model"))?;
        let d = first.dim();
        if models.len() != d || bbox.dim() != d {
            return Err(EmuError::usage(format!(
                "{} models and a {}-dimensional box for a {d}-dimensional state",
                models.len(),
                bbox.dim()
            )));
        }
        if models.iter().any(|m| m.design() != first.design()) {
            return Err(EmuError::usage("coordinate emulators must share one design"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(EmuError::usage(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { models, dt, bbox })
    }

    /// Latin hypercube of `n` points in `bbox`, one simulator step per point,
    /// one GP fit per coordinate. Both seeds are `seed`.
    pub fn build(system: &DynamicalSystem, bbox: &BoundingBox, n: usize, dt: f64, family: KernelFamily, seed: u64) -> Result<Self> {
        Self::build_with(system, bbox, &BuildOptions::new(n, dt, family, seed))
    }

    pub fn build_with(system: &DynamicalSystem, bbox: &BoundingBox, opts: &BuildOptions) -> Result<Self> {
        if bbox.dim() != system.dim() {
            return Err(EmuError::usage(format!(
                "box is {}-dimensional, system is {}-dimensional",
                bbox.dim(),
                system.dim()
            )));
        }
        let design = latin_hypercube(opts.n, bbox, opts.design_seed)?;
        let samples = generate_training(system, &design, opts.dt, opts.tolerance)?;
        Self::from_samples(&samples, bbox.clone(), &opts.fit)
    }

    /// Fits coordinate emulators to existing simulator runs. Coordinate `l`
    /// is fitted with seed `fit.seed + l`.
    pub fn from_samples(samples: &[FlowMapSample], bbox: BoundingBox, fit: &FitOptions) -> Result<Self> {
        let first = samples.first().ok_or_else(|| EmuError::usage("no training samples"))?;
        let d = first.x0.len();
        let dt = first.dt;
        if samples.iter().any(|s| s.x0.len() != d || s.x1.len() != d || s.dt != dt) {
            return Err(EmuError::usage("training samples must share dimension and time step"));
        }
        let n = samples.len();
        let design = DMatrix::from_fn(n, d, |i, j| samples[i].x0[j]);
        let models = (0..d)
            .into_par_iter()
            .map(|l| {
                let y = DVector::from_fn(n, |i, _| samples[i].x1[l]);
                let opts = FitOptions { seed: fit.seed.wrapping_add(l as u64), ..fit.clone() };
                GpModel::fit_with(design.clone(), y, &opts)
                    .map_err(|e| EmuError::Coordinate { coordinate: l, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models, dt, bbox)
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn dim(&self) -> usize {
        self.models.len()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.models[0].design()
    }

    /// Posterior means of all coordinate emulators at `x`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.predict_mean(x)).collect()
    }

    /// Advances a state distribution by one step.
    pub fn step(&self, input: &StateDistribution, config: &PropagationConfig) -> Result<StateDistribution> {
        step_distribution(&self.models, input, config)
    }

    /// Iterates the emulated flow map `steps` times from the point mass at `x0`.
    /// On failure at step `k` the error carries the states up to `k − 1`.
    pub fn rollout(&self, x0: &[f64], steps: usize, config: &PropagationConfig) -> Result<TrajectoryPrediction> {
        if steps == 0 {
            return Err(EmuError::usage("a rollout needs at least one step"));
        }
        if x0.len() != self.dim() {
            return Err(EmuError::usage(format!(
                "initial state has {} entries, emulator is {}-dimensional",
                x0.len(),
                self.dim()
            )));
        }
        config.validate()?;
        let mut traj = TrajectoryPrediction {
            states: Vec::with_capacity(steps + 1),
            gen_var: Vec::with_capacity(steps + 1),
            config: *config,
            dt: self.dt,
        };
        let start = StateDistribution::deterministic(x0, 0)?;
        traj.gen_var.push(start.generalized_variance());
        traj.states.push(start);
        for k in 1..=steps {
            match self.step(&traj.states[k - 1], config) {
                Ok(next) => {
                    traj.gen_var.push(next.generalized_variance());
                    traj.states.push(next);
                }
                Err(e) => {
                    return Err(EmuError::Propagation {
                        step: k,
                        message: e.to_string(),
                        partial: Box::new(traj),
                    })
                }
            }
        }
        Ok(traj)
    }

    /// Leave-one-out mean squared error of coordinate `l`, hyperparameters
    /// held at their full-data estimates.
    pub fn loo_mse(&self, coordinate: usize) -> Result<f64> {
        let m = self
            .models
            .get(coordinate)
            .ok_or_else(|| EmuError::usage(format!("no coordinate {coordinate}")))?;
        if m.len() < m.dim() + 3 {
            return Err(EmuError::InsufficientData(format!(
                "leave-one-out needs at least {} design points, have {}",
                m.dim() + 3,
                m.len()
            )));
        }
        m.loo_mse()
    }

    pub fn to_archive(&self) -> EmulatorArchive {
        let design = self.design();
        EmulatorArchive {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            dt: self.dt,
            bbox: self.bbox.clone(),
            design: design.row_iter().map(|r| r.iter().copied().collect()).collect(),
            models: self.models.iter().map(GpModel::to_record).collect(),
            provenance: Default::default(),
        }
    }

    pub fn from_archive(archive: EmulatorArchive) -> Result<Self> {
        if archive.format != ARCHIVE_FORMAT || archive.version != ARCHIVE_VERSION {
            return Err(EmuError::usage(format!(
                "unsupported archive {} v{}",
                archive.format, archive.version
            )));
        }
        let n = archive.design.len();
        let d = archive.design.first().map_or(0, Vec::len);
        if n == 0 || archive.design.iter().any(|r| r.len() != d) {
            return Err(EmuError::usage("archive design is empty or ragged"));
        }
        let design = DMatrix::from_fn(n, d, |i, j| archive.design[i][j]);
        let models = archive
            .models
            .into_iter()
            .map(|rec| GpModel::from_record(design.clone(), rec))
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models, archive.dt, archive.bbox)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let archive: EmulatorArchive = serde_json::from_str(&text).map_err(|e| EmuError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_archive(archive)
    }
}
