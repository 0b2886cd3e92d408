//! End-to-end experiment stages and their on-disk artifacts.
//!
//! Every stage reads its inputs from and writes its outputs to one directory:
//!
//! | file             | written by | contents                                   |
//! |------------------|------------|--------------------------------------------|
//! | `truth.csv`      | simulate   | `t, x_1..x_d` from the integrator          |
//! | `training.csv`   | build      | `x0_1..x0_d, x1_1..x1_d` one row per run   |
//! | `emulator.json`  | build      | fitted emulator archive                    |
//! | `trajectory.csv` | rollout    | `t, mean_1..mean_d, sd_1..sd_d, det_cov`   |
//! | `report.json`    | analyze    | LOO MSEs, horizon, coverage, config, seeds |
//!
//! CSV files start with one `#` comment line carrying the tool version and
//! seeds, followed by a header row. Numbers are written with 17 significant
//! digits so they read back bit for bit.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, CoverageReport, HorizonReport};
use crate::config::ExperimentConfig;
use crate::design::latin_hypercube;
use crate::dynsys::{generate_training, simulate};
use crate::emulator::{FlowMapEmulator, TrajectoryPrediction};
use crate::error::{EmuError, Result};
use crate::gp::FitOptions;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// File locations inside one experiment directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn truth(&self) -> PathBuf {
        self.dir.join("truth.csv")
    }

    pub fn training(&self) -> PathBuf {
        self.dir.join("training.csv")
    }

    pub fn emulator(&self) -> PathBuf {
        self.dir.join("emulator.json")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.dir.join("trajectory.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub design: u64,
    pub fit: u64,
    pub rollout: u64,
}

impl Seeds {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            design: cfg.design.seed,
            fit: cfg.emulator.fit_seed,
            rollout: cfg.rollout.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub seeds: Seeds,
    pub system: String,
    pub initial: Vec<f64>,
    pub mode: String,
    pub n_mc: usize,
    pub steps: usize,
    pub dt: f64,
    pub loo_mse: Vec<f64>,
    pub horizon: HorizonReport,
    pub coverage: CoverageReport,
    /// Largest `|mean − truth|` per coordinate before the horizon.
    pub max_error_pre_horizon: Vec<f64>,
    pub config: ExperimentConfig,
}

/// Trajectory summary as stored in `trajectory.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    /// Per step.
    pub means: Vec<Vec<f64>>,
    /// Per step.
    pub sds: Vec<Vec<f64>>,
    pub det_cov: Vec<f64>,
}

impl TrajectoryTable {
    pub fn from_prediction(traj: &TrajectoryPrediction) -> Self {
        Self {
            t: traj.times(),
            means: traj.states.iter().map(|s| s.mean().iter().copied().collect()).collect(),
            sds: traj.states.iter().map(|s| s.sd()).collect(),
            det_cov: traj.gen_var.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// SD sequences, one per coordinate.
    pub fn sd_traces(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|l| self.sds.iter().map(|s| s[l]).collect()).collect()
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        EmuError::Stage { .. } => e,
        other => EmuError::Stage { stage: name, source: Box::new(other) },
    })
}

fn provenance(cfg: &ExperimentConfig) -> String {
    let s = Seeds::of(cfg);
    format!(
        "# {TOOL} {VERSION} system={} seeds design={} fit={} rollout={}",
        cfg.system.name, s.design, s.fit, s.rollout
    )
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> EmuError {
    EmuError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_csv(path: &Path, cfg: &ExperimentConfig, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut buf = provenance(cfg).into_bytes();
    buf.push(b'\n');
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(|e| csv_err(path, e))?;
    }
    let buf = w.into_inner().map_err(|e| csv_err(path, e))?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Header and numeric rows of a CSV written by this module.
pub fn read_csv(path: &Path, producer: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = match std::fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(EmuError::MissingArtifact {
                path: path.display().to_string(),
                stage: producer.into(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_slice());
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| csv_err(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}{i}"))
}

pub fn write_trajectory(path: &Path, cfg: &ExperimentConfig, table: &TrajectoryTable) -> Result<()> {
    let d = table.dim();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(numbered("mean_", d))
        .chain(numbered("sd_", d))
        .chain(std::iter::once("det_cov".to_string()))
        .collect();
    let rows = (0..table.t.len()).map(|k| {
        let mut r = vec![table.t[k]];
        r.extend(&table.means[k]);
        r.extend(&table.sds[k]);
        r.push(table.det_cov[k]);
        r
    });
    write_csv(path, cfg, &header, rows)
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryTable> {
    let (header, rows) = read_csv(path, "rollout")?;
    if header.len() < 4 || (header.len() - 2) % 2 != 0 || header[0] != "t" {
        return Err(EmuError::Format {
            path: path.display().to_string(),
            message: format!("unexpected trajectory header {header:?}"),
        });
    }
    let d = (header.len() - 2) / 2;
    Ok(TrajectoryTable {
        t: rows.iter().map(|r| r[0]).collect(),
        means: rows.iter().map(|r| r[1..=d].to_vec()).collect(),
        sds: rows.iter().map(|r| r[d + 1..=2 * d].to_vec()).collect(),
        det_cov: rows.iter().map(|r| r[2 * d + 1]).collect(),
    })
}

/// Truth states (without the time column).
pub fn read_truth(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (_, rows) = read_csv(path, "simulate")?;
    Ok(rows.into_iter().map(|r| r[1..].to_vec()).collect())
}

/// Integrates the true system from the initial state over the rollout horizon.
pub fn simulate_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<Vec<f64>>> {
    stage("simulate", (|| {
        cfg.validate()?;
        let art = Artifacts::new(dir);
        std::fs::create_dir_all(dir)?;
        let system = cfg.build_system()?;
        let states = simulate(&system, &cfg.initial.state, cfg.emulator.dt, cfg.rollout.steps, cfg.integrator)?;
        let header: Vec<String> = std::iter::once("t".to_string()).chain(numbered("x_", system.dim())).collect();
        let dt = cfg.emulator.dt;
        let rows = states.iter().enumerate().map(|(k, x)| std::iter::once(k as f64 * dt).chain(x.iter().copied()).collect());
        write_csv(&art.truth(), cfg, &header, rows)?;
        Ok(states)
    })())
}

/// Design, training runs and coordinate fits.
pub fn build_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<FlowMapEmulator> {
    stage("build", (|| {
        cfg.validate()?;
        let art = Artifacts::new(dir);
        std::fs::create_dir_all(dir)?;
        let system = cfg.build_system()?;
        let bbox = cfg.resolve_bounds(&system)?;
        let design = latin_hypercube(cfg.design.n, &bbox, cfg.design.seed)?;
        let samples = generate_training(&system, &design, cfg.emulator.dt, cfg.integrator)?;
        let d = system.dim();
        let header: Vec<String> = numbered("x0_", d).chain(numbered("x1_", d)).collect();
        let rows = samples.iter().map(|s| s.x0.iter().chain(&s.x1).copied().collect());
        write_csv(&art.training(), cfg, &header, rows)?;

        let fit = FitOptions::new(cfg.emulator.kernel, cfg.emulator.fit_seed);
        let emu = FlowMapEmulator::from_samples(&samples, bbox, &fit)?;
        let mut archive = emu.to_archive();
        let seeds = Seeds::of(cfg);
        archive.provenance.insert("tool".into(), format!("{TOOL} {VERSION}"));
        archive.provenance.insert("system".into(), cfg.system.name.clone());
        archive.provenance.insert("design_seed".into(), seeds.design.to_string());
        archive.provenance.insert("fit_seed".into(), seeds.fit.to_string());
        archive.save(&art.emulator())?;
        Ok(emu)
    })())
}

fn load_emulator(art: &Artifacts) -> Result<FlowMapEmulator> {
    let path = art.emulator();
    if !path.exists() {
        return Err(EmuError::MissingArtifact {
            path: path.display().to_string(),
            stage: "build".into(),
        });
    }
    FlowMapEmulator::load(&path)
}

/// Loads the archive and predicts the trajectory. A failed rollout still
/// writes the states computed before the failure.
pub fn rollout_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<TrajectoryPrediction> {
    stage("rollout", (|| {
        cfg.validate()?;
        let art = Artifacts::new(dir);
        let emu = load_emulator(&art)?;
        if emu.dim() != cfg.initial.state.len() {
            return Err(EmuError::Config(format!(
                "archive is {}-dimensional, initial state has {} entries",
                emu.dim(),
                cfg.initial.state.len()
            )));
        }
        match emu.rollout(&cfg.initial.state, cfg.rollout.steps, &cfg.propagation()?) {
            Ok(traj) => {
                write_trajectory(&art.trajectory(), cfg, &TrajectoryTable::from_prediction(&traj))?;
                Ok(traj)
            }
            Err(EmuError::Propagation { step, message, partial }) => {
                write_trajectory(&art.trajectory(), cfg, &TrajectoryTable::from_prediction(&partial))?;
                Err(EmuError::Propagation { step, message, partial })
            }
            Err(e) => Err(e),
        }
    })())
}

/// Diagnostics from the CSVs and the archive.
pub fn analyze_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    stage("analyze", (|| {
        cfg.validate()?;
        let art = Artifacts::new(dir);
        let table = read_trajectory(&art.trajectory())?;
        let truth = read_truth(&art.truth())?;
        let emu = load_emulator(&art)?;
        let loo_mse = (0..emu.dim()).map(|l| emu.loo_mse(l)).collect::<Result<Vec<_>>>()?;
        let dt = cfg.emulator.dt;
        let horizon = analysis::horizon_from_sd_traces(table.sd_traces(), dt)?;
        let flags = analysis::coverage_trace_from(&table.means, &table.sds, &truth)?;
        let coverage = analysis::coverage_split(&flags, horizon.horizon_index);
        let errors = analysis::error_trace_from(&table.means, &truth)?;
        let max_error_pre_horizon = errors
            .iter()
            .map(|e| e[..horizon.horizon_index.max(1).min(e.len())].iter().copied().fold(0.0, f64::max))
            .collect();
        let report = Report {
            tool: TOOL.into(),
            version: VERSION.into(),
            seeds: Seeds::of(cfg),
            system: cfg.system.name.clone(),
            initial: cfg.initial.state.clone(),
            mode: cfg.rollout.mode.name().into(),
            n_mc: cfg.rollout.n_mc,
            steps: cfg.rollout.steps,
            dt,
            loo_mse,
            horizon,
            coverage,
            max_error_pre_horizon,
            config: cfg.clone(),
        };
        let text = serde_json::to_string_pretty(&report).map_err(|e| EmuError::Format {
            path: art.report().display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(art.report(), text + "\n")?;
        Ok(report)
    })())
}

/// simulate → build → rollout → analyze in `cfg.output.dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let dir = &cfg.output.dir;
    simulate_stage(cfg, dir)?;
    build_stage(cfg, dir)?;
    rollout_stage(cfg, dir)?;
    analyze_stage(cfg, dir)
}

/// Initial conditions drawn uniformly from `range^d`.
pub fn batch_initial_conditions(count: usize, dim: usize, range: [f64; 2], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(range[0]..range[1])).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub dir: PathBuf,
    pub initial: Vec<f64>,
    pub horizon: f64,
}

/// One full experiment per batch initial condition, each in `<out>/ic_<k>`.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<Report>> {
    let batch = stage("batch", cfg.validate().and_then(|_| {
        cfg.batch.clone().ok_or_else(|| EmuError::Config("the configuration has no [batch] section".into()))
    }))?;
    let d = cfg.initial.state.len();
    let ics = batch_initial_conditions(batch.count, d, batch.range, batch.seed);
    let reports = ics
        .par_iter()
        .enumerate()
        .map(|(k, ic)| {
            let mut sub = cfg.clone();
            sub.initial.state = ic.clone();
            sub.output.dir = cfg.output.dir.join(format!("ic_{}", k + 1));
            run_experiment(&sub)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary: Vec<BatchEntry> = reports
        .iter()
        .map(|r| BatchEntry {
            dir: r.config.output.dir.clone(),
            initial: r.initial.clone(),
            horizon: r.horizon.horizon,
        })
        .collect();
    let text = serde_json::to_string_pretty(&summary).map_err(|e| EmuError::Format {
        path: "batch.json".into(),
        message: e.to_string(),
    })?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    std::fs::write(cfg.output.dir.join("batch.json"), text + "\n")?;
    Ok(reports)
}
