//! Gaussian-process emulation of deterministic dynamical systems.
//!
//! A short-time flow map `x(t) ↦ x(t + dt)` is learned coordinate by
//! coordinate from a handful of simulator runs, then iterated to predict
//! whole trajectories. Input uncertainty is pushed through each step by
//! Monte Carlo moment matching, with or without cross-covariances between
//! the coordinate emulators; the growth of the predicted SD marks the
//! predictability horizon.
//!
//! ```no_run
//! use dynemu::prelude::*;
//!
//! let sys = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
//! let bbox = estimate_bounds(&sys, &[0.01; 3], 100.0, 0.05, 0.01, Tolerance::default())?;
//! let emu = FlowMapEmulator::build(&sys, &bbox, 36, 0.01, KernelFamily::SquaredExponential, 1)?;
//! let cfg = PropagationConfig::new(PropagationMode::CorrelatedMc, 1000, 3)?;
//! let traj = emu.rollout(&[1.0, 1.0, 1.0], 2000, &cfg)?;
//! println!("horizon t = {}", horizon(&traj)?.horizon);
//! # Ok::<(), dynemu::EmuError>(())
//! ```

pub mod analysis;
pub mod config;
pub mod design;
pub mod dynsys;
pub mod emulator;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod kernel;
mod optim;
pub mod propagate;

pub use error::{EmuError, Result};

pub mod prelude {
    pub use crate::analysis::{coverage, detect_change_point, error_trace, horizon, sd_trace, CoverageReport, HorizonReport};
    pub use crate::config::ExperimentConfig;
    pub use crate::design::{estimate_bounds, latin_hypercube, BoundingBox};
    pub use crate::dynsys::{
        integrate_step, simulate, DynamicalSystem, Tolerance, LORENZ_A, LORENZ_B, LORENZ_C, VAN_DER_POL_ALPHA,
    };
    pub use crate::emulator::{BuildOptions, FlowMapEmulator, TrajectoryPrediction};
    pub use crate::error::{EmuError, Result};
    pub use crate::gp::{GpModel, PriorMean, Prediction};
    pub use crate::kernel::{KernelFamily, KernelSpec};
    pub use crate::propagate::{PropagationConfig, PropagationMode, StateDistribution};
}
