//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [system]
//! name = "lorenz"            # lorenz | van_der_pol | linear | stationary
//! params = { a = -2.6666666666666665, b = -10.0, c = 28.0 }
//!
//! [initial]
//! state = [1.0, 1.0, 1.0]
//!
//! [bounds]                   # either an explicit box ...
//! method = "estimate"        # ... or method = "explicit" with lower/upper
//! probe = [0.01, 0.01, 0.01]
//! horizon = 100.0
//! margin = 0.05
//! sample_dt = 0.01
//!
//! [design]
//! n = 36
//! seed = 1
//!
//! [emulator]
//! dt = 0.01
//! kernel = "squared_exponential"   # matern32 | exponential
//! fit_seed = 2
//!
//! [rollout]
//! steps = 2000
//! mode = "correlated"        # plugin | uncorrelated | correlated
//! n_mc = 1000
//! seed = 3
//!
//! [integrator]               # optional
//! abs = 1e-10
//! rel = 1e-8
//!
//! [output]
//! dir = "out/lorenz"
//!
//! [batch]                    # optional
//! count = 6
//! range = [-10.0, 10.0]
//! seed = 4
//! ```
//!
//! `--seed s` on the command line sets the design, fit, rollout and batch
//! seeds to `s`, `s+1`, `s+2` and `s+3`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{estimate_bounds, BoundingBox, DEFAULT_MARGIN};
use crate::dynsys::{DynamicalSystem, Tolerance, LORENZ_A, LORENZ_B, LORENZ_C, VAN_DER_POL_ALPHA};
use crate::error::{EmuError, Result};
use crate::kernel::KernelFamily;
use crate::propagate::{PropagationConfig, PropagationMode, DEFAULT_N_MC};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub initial: InitialConfig,
    pub bounds: BoundsConfig,
    pub design: DesignConfig,
    pub emulator: EmulatorConfig,
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub integrator: Tolerance,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsConfig {
    Explicit {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Box from one long probe trajectory.
    Estimate {
        probe: Vec<f64>,
        horizon: f64,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_sample_dt")]
        sample_dt: f64,
    },
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_sample_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorConfig {
    pub dt: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelFamily,
    pub fit_seed: u64,
}

fn default_kernel() -> KernelFamily {
    KernelFamily::SquaredExponential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub steps: usize,
    pub mode: PropagationMode,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    pub seed: u64,
}

fn default_n_mc() -> usize {
    DEFAULT_N_MC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(default = "default_batch_count")]
    pub count: usize,
    #[serde(default = "default_batch_range")]
    pub range: [f64; 2],
    pub seed: u64,
}

fn default_batch_count() -> usize {
    6
}

fn default_batch_range() -> [f64; 2] {
    [-10.0, 10.0]
}

fn config_err(msg: impl Into<String>) -> EmuError {
    EmuError::Config(msg.into())
}

impl ExperimentConfig {
    /// The Lorenz study: (1,1,1), n = 36, dt = 0.01, 2000 steps.
    pub fn lorenz() -> Self {
        Self {
            system: SystemConfig {
                name: "lorenz".into(),
                params: BTreeMap::from([("a".into(), LORENZ_A), ("b".into(), LORENZ_B), ("c".into(), LORENZ_C)]),
            },
            initial: InitialConfig { state: vec![1.0; 3] },
            bounds: BoundsConfig::Estimate {
                probe: vec![1e-2; 3],
                horizon: 100.0,
                margin: DEFAULT_MARGIN,
                sample_dt: 0.01,
            },
            design: DesignConfig { n: 36, seed: 1 },
            emulator: EmulatorConfig { dt: 0.01, kernel: KernelFamily::SquaredExponential, fit_seed: 2 },
            rollout: RolloutConfig { steps: 2000, mode: PropagationMode::CorrelatedMc, n_mc: DEFAULT_N_MC, seed: 3 },
            integrator: Tolerance::default(),
            output: OutputConfig { dir: "out/lorenz".into() },
            batch: Some(BatchConfig { count: 6, range: [-10.0, 10.0], seed: 4 }),
        }
    }

    /// The Van der Pol study: α = 5, (1,1), n = 24, dt = 0.01, 6000 steps.
    pub fn van_der_pol() -> Self {
        Self {
            system: SystemConfig {
                name: "van_der_pol".into(),
                params: BTreeMap::from([("alpha".into(), VAN_DER_POL_ALPHA)]),
            },
            initial: InitialConfig { state: vec![1.0; 2] },
            bounds: BoundsConfig::Estimate {
                probe: vec![1.0; 2],
                horizon: 100.0,
                margin: DEFAULT_MARGIN,
                sample_dt: 0.01,
            },
            design: DesignConfig { n: 24, seed: 1 },
            emulator: EmulatorConfig { dt: 0.01, kernel: KernelFamily::SquaredExponential, fit_seed: 2 },
            rollout: RolloutConfig { steps: 6000, mode: PropagationMode::CorrelatedMc, n_mc: DEFAULT_N_MC, seed: 3 },
            integrator: Tolerance::default(),
            output: OutputConfig { dir: "out/van_der_pol".into() },
            batch: Some(BatchConfig { count: 6, range: [-10.0, 10.0], seed: 4 }),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Sets all seeds from one base value.
    pub fn override_seed(&mut self, seed: u64) {
        self.design.seed = seed;
        self.emulator.fit_seed = seed.wrapping_add(1);
        self.rollout.seed = seed.wrapping_add(2);
        if let Some(b) = &mut self.batch {
            b.seed = seed.wrapping_add(3);
        }
    }

    pub fn build_system(&self) -> Result<DynamicalSystem> {
        DynamicalSystem::from_name(&self.system.name, &self.system.params).map_err(|e| config_err(e.to_string()))
    }

    pub fn propagation(&self) -> Result<PropagationConfig> {
        PropagationConfig::new(self.rollout.mode, self.rollout.n_mc, self.rollout.seed).map_err(|e| config_err(e.to_string()))
    }

    /// Explicit box, or the box from a probe run.
    pub fn resolve_bounds(&self, system: &DynamicalSystem) -> Result<BoundingBox> {
        match &self.bounds {
            BoundsConfig::Explicit { lower, upper } => BoundingBox::new(lower.clone(), upper.clone()).map_err(|e| config_err(e.to_string())),
            BoundsConfig::Estimate { probe, horizon, margin, sample_dt } => {
                estimate_bounds(system, probe, *horizon, *margin, *sample_dt, self.integrator)
            }
        }
    }

    /// Checks every field that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        let system = self.build_system()?;
        let d = system.dim();
        let check_vec = |what: &str, v: &[f64]| -> Result<()> {
            if v.len() != d {
                return Err(config_err(format!("{what} has {} entries, system `{}` is {d}-dimensional", v.len(), self.system.name)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(config_err(format!("{what} contains non-finite values")));
            }
            Ok(())
        };
        check_vec("initial.state", &self.initial.state)?;
        match &self.bounds {
            BoundsConfig::Explicit { lower, upper } => {
                check_vec("bounds.lower", lower)?;
                check_vec("bounds.upper", upper)?;
                if lower.iter().zip(upper).any(|(l, u)| l >= u) {
                    return Err(config_err("bounds.lower must be below bounds.upper in every coordinate"));
                }
            }
            BoundsConfig::Estimate { probe, horizon, margin, sample_dt } => {
                check_vec("bounds.probe", probe)?;
                if !(*horizon > 0.0 && horizon.is_finite()) {
                    return Err(config_err("bounds.horizon must be positive"));
                }
                if !(*margin >= 0.0 && margin.is_finite()) {
                    return Err(config_err("bounds.margin must be non-negative"));
                }
                if !(*sample_dt > 0.0 && sample_dt.is_finite()) {
                    return Err(config_err("bounds.sample_dt must be positive"));
                }
            }
        }
        if self.design.n < d + 2 {
            return Err(config_err(format!("design.n must be at least {} for a {d}-dimensional system", d + 2)));
        }
        if !(self.emulator.dt > 0.0 && self.emulator.dt.is_finite()) {
            return Err(config_err("emulator.dt must be positive"));
        }
        if self.rollout.steps == 0 {
            return Err(config_err("rollout.steps must be at least 1"));
        }
        self.propagation()?;
        let tol = self.integrator;
        if !(tol.abs > 0.0 && tol.rel > 0.0 && tol.abs.is_finite() && tol.rel.is_finite()) {
            return Err(config_err("integrator tolerances must be positive"));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(config_err("output.dir is empty"));
        }
        if let Some(b) = &self.batch {
            if b.count == 0 {
                return Err(config_err("batch.count must be positive"));
            }
            if !(b.range[0] < b.range[1] && b.range.iter().all(|v| v.is_finite())) {
                return Err(config_err("batch.range must be an increasing pair"));
            }
        }
        Ok(())
    }
}
