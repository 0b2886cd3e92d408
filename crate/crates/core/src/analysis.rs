//! Diagnostics on finished rollouts: SD and error traces, credible-interval
//! coverage and the predictability horizon.

use serde::{Deserialize, Serialize};

use crate::emulator::TrajectoryPrediction;
use crate::error::{EmuError, Result};

/// Smallest SD fed to the log transform, so zero-variance steps stay finite.
const LOG_FLOOR: f64 = 1e-300;

/// Change points per coordinate and their earliest time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    /// Time index of each coordinate's change point; `T` when no change was found.
    pub change_points: Vec<usize>,
    pub changed: Vec<bool>,
    pub horizon_index: usize,
    pub horizon: f64,
    #[serde(skip)]
    pub sd_traces: Vec<Vec<f64>>,
}

/// Fraction of steps whose truth lies inside mean ± 2·SD in every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub overall: f64,
    /// Steps `0..horizon_index`; `None` if that segment is empty.
    pub pre_horizon: Option<f64>,
    /// Steps `horizon_index..=T`.
    pub post_horizon: Option<f64>,
}

pub fn sd_trace(traj: &TrajectoryPrediction, coordinate: usize) -> Result<Vec<f64>> {
    if coordinate >= traj.dim() {
        return Err(EmuError::usage(format!("no coordinate {coordinate} in a {}-dimensional trajectory", traj.dim())));
    }
    Ok(traj.states.iter().map(|s| s.cov()[(coordinate, coordinate)].max(0.0).sqrt()).collect())
}

/// At-most-one-change split of `series` in its mean. Returns the first index
/// of the second segment, chosen to minimise the summed within-segment squared
/// deviations (earliest index on ties), or `series.len()` for a constant series.
pub fn detect_change_point(series: &[f64]) -> Result<usize> {
    let n = series.len();
    if n < 4 {
        return Err(EmuError::usage(format!("change-point detection needs at least 4 values, got {n}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(EmuError::usage("change-point series contains non-finite values"));
    }
    if series.iter().all(|v| *v == series[0]) {
        return Ok(n);
    }
    // Welford sums of squared deviations for every prefix and suffix
    let running = |it: &mut dyn Iterator<Item = f64>| {
        let mut out = vec![0.0; n + 1];
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, x) in it.enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
            out[i + 1] = m2;
        }
        out
    };
    let prefix = running(&mut series.iter().copied());
    let suffix = running(&mut series.iter().rev().copied());
    let mut best = (1, f64::INFINITY);
    for k in 1..n {
        let cost = prefix[k] + suffix[n - k];
        if cost < best.1 {
            best = (k, cost);
        }
    }
    Ok(best.0)
}

/// Change point of each coordinate's log-SD trace over steps `1..=T`; step 0
/// is excluded because its SD is zero by construction.
pub fn horizon(traj: &TrajectoryPrediction) -> Result<HorizonReport> {
    let sd_traces = (0..traj.dim()).map(|l| sd_trace(traj, l)).collect::<Result<Vec<_>>>()?;
    horizon_from_sd_traces(sd_traces, traj.dt)
}

/// As [`horizon`], from one SD sequence per coordinate covering steps `0..=T`.
pub fn horizon_from_sd_traces(sd_traces: Vec<Vec<f64>>, dt: f64) -> Result<HorizonReport> {
    let len = sd_traces.first().map_or(0, Vec::len);
    if sd_traces.is_empty() || sd_traces.iter().any(|s| s.len() != len) {
        return Err(EmuError::usage("SD traces must be non-empty and of equal length"));
    }
    let steps = len.saturating_sub(1);
    let mut change_points = Vec::with_capacity(sd_traces.len());
    let mut changed = Vec::with_capacity(sd_traces.len());
    for sd in &sd_traces {
        let logs: Vec<f64> = sd[1..].iter().map(|s| s.max(LOG_FLOOR).ln()).collect();
        let cp = detect_change_point(&logs)?;
        // series index j corresponds to time index j + 1
        let (idx, found) = if cp == logs.len() { (steps, false) } else { (cp + 1, true) };
        change_points.push(idx);
        changed.push(found);
    }
    let horizon_index = change_points.iter().copied().min().unwrap_or(steps);
    Ok(HorizonReport {
        change_points,
        changed,
        horizon_index,
        horizon: horizon_index as f64 * dt,
        sd_traces,
    })
}

fn check_truth(steps: usize, dim: usize, truth: &[Vec<f64>]) -> Result<()> {
    if truth.len() != steps {
        return Err(EmuError::usage(format!("truth has {} states, trajectory has {steps}", truth.len())));
    }
    if let Some(i) = truth.iter().position(|x| x.len() != dim) {
        return Err(EmuError::usage(format!("truth state {i} has {} entries, expected {dim}", truth[i].len())));
    }
    Ok(())
}

fn means_and_sds(traj: &TrajectoryPrediction) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    traj.states.iter().map(|s| (s.mean().iter().copied().collect(), s.sd())).unzip()
}

/// `|mean_l − truth_l|` per coordinate and step.
pub fn error_trace(traj: &TrajectoryPrediction, truth: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let means: Vec<Vec<f64>> = traj.states.iter().map(|s| s.mean().iter().copied().collect()).collect();
    error_trace_from(&means, truth)
}

/// As [`error_trace`], from per-step mean vectors.
pub fn error_trace_from(means: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dim = means.first().map_or(0, Vec::len);
    check_truth(means.len(), dim, truth)?;
    Ok((0..dim).map(|l| means.iter().zip(truth).map(|(m, x)| (m[l] - x[l]).abs()).collect()).collect())
}

/// Per step: does the truth lie inside mean ± 2·SD in every coordinate?
pub fn coverage_trace(traj: &TrajectoryPrediction, truth: &[Vec<f64>]) -> Result<Vec<bool>> {
    let (means, sds) = means_and_sds(traj);
    coverage_trace_from(&means, &sds, truth)
}

/// As [`coverage_trace`], from per-step mean and SD vectors.
pub fn coverage_trace_from(means: &[Vec<f64>], sds: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<bool>> {
    let dim = means.first().map_or(0, Vec::len);
    check_truth(means.len(), dim, truth)?;
    check_truth(means.len(), dim, sds)?;
    Ok(means
        .iter()
        .zip(sds)
        .zip(truth)
        .map(|((m, s), x)| (0..dim).all(|l| (m[l] - x[l]).abs() <= 2.0 * s[l]))
        .collect())
}

fn fraction(flags: &[bool]) -> Option<f64> {
    (!flags.is_empty()).then(|| flags.iter().filter(|b| **b).count() as f64 / flags.len() as f64)
}

/// Coverage over all steps and on either side of `horizon_index`.
pub fn coverage_split(flags: &[bool], horizon_index: usize) -> CoverageReport {
    let split = horizon_index.min(flags.len());
    CoverageReport {
        overall: fraction(flags).unwrap_or(0.0),
        pre_horizon: fraction(&flags[..split]),
        post_horizon: fraction(&flags[split..]),
    }
}

pub fn coverage(traj: &TrajectoryPrediction, truth: &[Vec<f64>], horizon_index: usize) -> Result<CoverageReport> {
    Ok(coverage_split(&coverage_trace(traj, truth)?, horizon_index))
}

/// Mean of `values[range]`, `NaN` for an empty range.
pub fn window_mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let w = &values[range.start.min(values.len())..range.end.min(values.len())];
    w.iter().sum::<f64>() / w.len() as f64
}
