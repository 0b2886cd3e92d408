//! One-step propagation of a Gaussian state through the coordinate emulators.
//!
//! For an uncertain input `x* ~ N(μ*, Σ*)` each output moment is estimated by
//! Monte Carlo on one shared sample matrix:
//!
//! ```text
//! E[f̂_l]          ≈ mean_i m_l(x*ⁱ)
//! Var[f̂_l]        ≈ mean_i s_l²(x*ⁱ) + var_i m_l(x*ⁱ)
//! Cov[f̂_l, f̂_j]   ≈ cov_i (m_l(x*ⁱ), m_j(x*ⁱ))
//! ```
//!
//! and the result is moment-matched to a Gaussian.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};
use crate::gp::GpModel;

/// Gaussian approximation of the state at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    time_index: usize,
}

impl StateDistribution {
    /// Symmetrises `cov` and, if it has negative eigenvalues, clips them to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, time_index: usize) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.shape() != (d, d) {
            return Err(EmuError::usage(format!(
                "state of dimension {d} needs a {d}×{d} covariance, got {:?}",
                cov.shape()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(EmuError::usage("state mean and covariance must be finite"));
        }
        let cov = repair_psd(cov);
        Ok(Self { mean, cov, time_index })
    }

    /// A point mass at `mean`.
    pub fn deterministic(mean: &[f64], time_index: usize) -> Result<Self> {
        let d = mean.len();
        Self::new(DVector::from_column_slice(mean), DMatrix::zeros(d, d), time_index)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.cov.iter().all(|v| *v == 0.0)
    }

    /// Marginal standard deviations.
    pub fn sd(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Determinant of the covariance.
    pub fn generalized_variance(&self) -> f64 {
        if self.is_deterministic() {
            return 0.0;
        }
        self.cov.determinant().max(0.0)
    }

    /// `n` draws from `N(mean, cov)` as rows, using the symmetric square root of
    /// the covariance. A deterministic state yields `n` copies of its mean.
    pub fn sample(&self, n: usize, rng: &mut impl rand::Rng) -> DMatrix<f64> {
        let d = self.dim();
        if self.is_deterministic() {
            return DMatrix::from_fn(n, d, |_, j| self.mean[j]);
        }
        let root = symmetric_sqrt(&self.cov);
        let mut out = DMatrix::zeros(n, d);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let x = &self.mean + &root * &z;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }
}

/// Symmetrise, then clip negative eigenvalues to zero.
pub fn repair_psd(cov: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    if sym.iter().all(|v| *v == 0.0) {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

fn symmetric_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = cov.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&roots) * q.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PropagationMode {
    /// Feed only the predicted mean forward; ignore input uncertainty.
    #[serde(rename = "plugin")]
    PlugIn,
    /// Monte Carlo moments per coordinate, off-diagonals dropped.
    #[serde(rename = "uncorrelated")]
    UncorrelatedMc,
    /// Monte Carlo moments including cross-covariances between coordinates.
    #[serde(rename = "correlated")]
    CorrelatedMc,
}

impl PropagationMode {
    pub const ALL: [PropagationMode; 3] = [
        PropagationMode::PlugIn,
        PropagationMode::UncorrelatedMc,
        PropagationMode::CorrelatedMc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropagationMode::PlugIn => "plugin",
            PropagationMode::UncorrelatedMc => "uncorrelated",
            PropagationMode::CorrelatedMc => "correlated",
        }
    }
}

impl std::str::FromStr for PropagationMode {
    type Err = EmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" | "plug-in" | "plug_in" => Ok(PropagationMode::PlugIn),
            "uncorrelated" => Ok(PropagationMode::UncorrelatedMc),
            "correlated" => Ok(PropagationMode::CorrelatedMc),
            other => Err(EmuError::Config(format!(
                "unknown propagation mode `{other}` (expected plugin, uncorrelated or correlated)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub mode: PropagationMode,
    pub n_mc: usize,
    pub seed: u64,
}

pub const DEFAULT_N_MC: usize = 1000;

impl PropagationConfig {
    pub fn new(mode: PropagationMode, n_mc: usize, seed: u64) -> Result<Self> {
        let c = Self { mode, n_mc, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != PropagationMode::PlugIn && self.n_mc < 2 {
            return Err(EmuError::usage(format!(
                "Monte Carlo propagation needs n_mc >= 2, got {}",
                self.n_mc
            )));
        }
        Ok(())
    }
}

/// Compensated (Neumaier) sum; result depends only on the order of `values`.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn average(values: &[f64]) -> f64 {
    neumaier_sum(values.iter().copied()) / values.len() as f64
}

/// Population covariance `1/n Σ (a_i − ā)(b_i − b̄)`.
fn centered_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (average(a), average(b));
    neumaier_sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb))) / a.len() as f64
}

fn rows_identical(samples: &DMatrix<f64>) -> bool {
    let first = samples.row(0);
    samples.row_iter().all(|r| r == first)
}

fn check_samples(models: &[&GpModel], samples: &DMatrix<f64>) -> Result<()> {
    if samples.nrows() == 0 {
        return Err(EmuError::usage("sample matrix is empty"));
    }
    for m in models {
        if m.dim() != samples.ncols() {
            return Err(EmuError::usage(format!(
                "samples are {}-dimensional but the model expects {}",
                samples.ncols(),
                m.dim()
            )));
        }
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(EmuError::usage("samples must be finite"));
    }
    Ok(())
}

fn row_vec(samples: &DMatrix<f64>, i: usize) -> Vec<f64> {
    samples.row(i).iter().copied().collect()
}

/// Posterior means and variances of every model at every sample row;
/// `out[l][i]` is model `l` at row `i`.
fn evaluate(models: &[&GpModel], samples: &DMatrix<f64>, with_variance: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let per_row: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.nrows())
        .into_par_iter()
        .map(|i| {
            let x = row_vec(samples, i);
            let mut means = Vec::with_capacity(models.len());
            let mut vars = Vec::with_capacity(models.len());
            for m in models {
                if with_variance {
                    let (mu, v) = m.predict_unchecked(&x);
                    means.push(mu);
                    vars.push(v);
                } else {
                    means.push(m.mean_unchecked(&x));
                }
            }
            (means, vars)
        })
        .collect();
    let n_models = models.len();
    let mut means = vec![Vec::with_capacity(per_row.len()); n_models];
    let mut vars = vec![Vec::with_capacity(per_row.len()); if with_variance { n_models } else { 0 }];
    for (m, v) in per_row {
        for l in 0..n_models {
            means[l].push(m[l]);
            if with_variance {
                vars[l].push(v[l]);
            }
        }
    }
    (means, vars)
}

/// Mean and variance of `f̂(x*)` from samples of `x*`. Identical rows (a
/// deterministic input) reduce to the plain prediction at that point.
pub fn propagate_moments_scalar(model: &GpModel, samples: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_samples(&[model], samples)?;
    if rows_identical(samples) {
        let p = model.predict(&row_vec(samples, 0))?;
        return Ok((p.mean, p.variance));
    }
    let (means, vars) = evaluate(&[model], samples, true);
    Ok((average(&means[0]), average(&vars[0]) + centered_cov(&means[0], &means[0])))
}

/// Covariance of two emulators' posterior means over the shared samples.
pub fn cross_covariance(a: &GpModel, b: &GpModel, samples: &DMatrix<f64>) -> Result<f64> {
    check_samples(&[a, b], samples)?;
    if rows_identical(samples) {
        return Ok(0.0);
    }
    let (means, _) = evaluate(&[a, b], samples, false);
    Ok(centered_cov(&means[0], &means[1]))
}

/// Deterministic per-step sample matrix: stream `time_index` of a ChaCha
/// generator keyed by `seed`.
pub fn draw_samples(input: &StateDistribution, n_mc: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(input.time_index() as u64);
    input.sample(n_mc, &mut rng)
}

fn plug_in(models: &[GpModel], input: &StateDistribution) -> Result<StateDistribution> {
    let x: Vec<f64> = input.mean().iter().copied().collect();
    let preds = models.iter().map(|m| m.predict(&x)).collect::<Result<Vec<_>>>()?;
    let mean = DVector::from_iterator(preds.len(), preds.iter().map(|p| p.mean));
    let var = DVector::from_iterator(preds.len(), preds.iter().map(|p| p.variance));
    StateDistribution::new(mean, DMatrix::from_diagonal(&var), input.time_index() + 1)
}

/// Advances `input` by one emulator step.
pub fn step_distribution(models: &[GpModel], input: &StateDistribution, config: &PropagationConfig) -> Result<StateDistribution> {
    config.validate()?;
    check_models(models, input)?;
    if config.mode == PropagationMode::PlugIn || input.is_deterministic() {
        return plug_in(models, input);
    }
    let samples = draw_samples(input, config.n_mc, config.seed);
    step_with_samples(models, input, config.mode, &samples)
}

fn check_models(models: &[GpModel], input: &StateDistribution) -> Result<()> {
    if models.len() != input.dim() {
        return Err(EmuError::usage(format!(
            "{} emulators cannot advance a {}-dimensional state",
            models.len(),
            input.dim()
        )));
    }
    if let Some(m) = models.iter().find(|m| m.dim() != input.dim()) {
        return Err(EmuError::usage(format!(
            "emulator input dimension {} differs from state dimension {}",
            m.dim(),
            input.dim()
        )));
    }
    Ok(())
}

/// Advances `input` using a caller-supplied sample matrix (rows drawn from
/// the input distribution). Plug-in mode ignores the samples.
pub fn step_with_samples(
    models: &[GpModel],
    input: &StateDistribution,
    mode: PropagationMode,
    samples: &DMatrix<f64>,
) -> Result<StateDistribution> {
    check_models(models, input)?;
    if mode == PropagationMode::PlugIn {
        return plug_in(models, input);
    }
    let refs: Vec<&GpModel> = models.iter().collect();
    check_samples(&refs, samples)?;
    if rows_identical(samples) {
        return plug_in(models, input);
    }
    let d = models.len();
    let (means, vars) = evaluate(&refs, samples, true);
    let mean = DVector::from_iterator(d, means.iter().map(|m| average(m)));
    let mut cov = DMatrix::zeros(d, d);
    for l in 0..d {
        cov[(l, l)] = average(&vars[l]) + centered_cov(&means[l], &means[l]);
        if mode == PropagationMode::CorrelatedMc {
            for j in 0..l {
                let c = centered_cov(&means[l], &means[j]);
                cov[(l, j)] = c;
                cov[(j, l)] = c;
            }
        }
    }
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(EmuError::Evaluation("propagated moments are not finite".into()));
    }
    StateDistribution::new(mean, cov, input.time_index() + 1)
}
