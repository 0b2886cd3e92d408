//! Scalar-output Gaussian-process regression with a linear prior mean.
//!
//! A [`GpModel`] is an interpolating (noise-free) emulator of one scalar
//! output. The posterior mean and variance at `x` are
//!
//! ```text
//! m(x)  = μ(x) + k(x)ᵀ K⁻¹ (y − μ(X))
//! s²(x) = k(x, x) − k(x)ᵀ K⁻¹ k(x)
//! ```
//!
//! with `μ(x) = β₀ + β₁·x`. Hyperparameters are found by maximum likelihood:
//! β (generalised least squares) and σ² are profiled out in closed form and
//! only the length-scales are searched numerically.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};
use crate::kernel::{self, KernelFamily, KernelSpec};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Initial diagonal inflation, relative to σ².
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up on a factorisation.
pub const JITTER_MAX: f64 = 1e-6;
/// σ² assigned to a model whose outputs the prior mean already reproduces.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// First-order polynomial prior mean `β₀ + β₁·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMean {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl PriorMean {
    pub fn new(intercept: f64, slopes: Vec<f64>) -> Self {
        Self { intercept, slopes }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(0.0, vec![0.0; dim])
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Posterior mean and variance at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// Search settings for [`GpModel::fit_with`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub family: KernelFamily,
    pub seed: u64,
    pub restarts: usize,
    /// Length-scale bounds as multiples of the per-dimension design range.
    pub bound_factors: (f64, f64),
    pub max_evals_per_restart: usize,
}

impl FitOptions {
    pub fn new(family: KernelFamily, seed: u64) -> Self {
        Self {
            family,
            seed,
            restarts: 8,
            bound_factors: (1e-2, 1e2),
            max_evals_per_restart: 600,
        }
    }
}

/// Likelihood of the outputs with β and σ² at their closed-form optima.
#[derive(Debug, Clone)]
pub struct ProfiledLikelihood {
    pub log_likelihood: f64,
    pub mean: PriorMean,
    pub variance: f64,
    /// Relative jitter that made the correlation matrix factorisable.
    pub jitter: f64,
}

/// A conditioned scalar GP. Immutable once built; share freely across threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    design: DMatrix<f64>,
    /// Row-major copy of `design` for the prediction hot path.
    rows: Vec<f64>,
    outputs: DVector<f64>,
    kernel: KernelSpec,
    mean: PriorMean,
    /// Cholesky factorisation of `K + jitter·I`.
    chol: Cholesky<f64, Dyn>,
    factor: DMatrix<f64>,
    /// Row-major copy of the lower factor.
    factor_rows: Vec<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Serialisable form of a [`GpModel`]; the factorisation is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelRecord {
    pub kernel: KernelSpec,
    pub mean: PriorMean,
    pub jitter: f64,
    pub outputs: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

fn correlation_matrix(family: KernelFamily, lengthscales: &[f64], rows: &[f64], n: usize, d: usize) -> DMatrix<f64> {
    let mut r = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let xi = &rows[i * d..(i + 1) * d];
        for j in 0..i {
            let c = kernel::correlation(family, lengthscales, xi, &rows[j * d..(j + 1) * d]);
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

/// Cholesky of `m + jitter·scale·I`, escalating jitter ×10 from
/// [`JITTER_START`] to [`JITTER_MAX`].
fn factor_escalating(m: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * 1.000_001 {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += rel * scale;
        }
        if let Some(ch) = a.cholesky() {
            return Ok((ch, rel * scale));
        }
        rel *= 10.0;
    }
    Err(EmuError::IllConditioned(format!(
        "covariance matrix not positive definite with jitter up to {JITTER_MAX:e}·σ²"
    )))
}

fn validate_data(design: &DMatrix<f64>, outputs: &DVector<f64>) -> Result<()> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return Err(EmuError::usage("design must be non-empty"));
    }
    if design.nrows() != outputs.len() {
        return Err(EmuError::usage(format!(
            "design has {} rows but {} outputs were given",
            design.nrows(),
            outputs.len()
        )));
    }
    if design.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
        return Err(EmuError::usage("design and outputs must be finite"));
    }
    Ok(())
}

fn check_distinct_rows(rows: &[f64], n: usize, d: usize) -> Result<()> {
    for i in 0..n {
        for j in 0..i {
            if rows[i * d..(i + 1) * d] == rows[j * d..(j + 1) * d] {
                return Err(EmuError::IllConditioned(format!(
                    "design rows {j} and {i} coincide"
                )));
            }
        }
    }
    Ok(())
}

/// Regression matrix `[1 | X]`.
fn trend_matrix(design: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = design.shape();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { design[(i, j - 1)] })
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `(design, outputs)`.
    /// Jitter starts at `1e-10·σ²` and escalates on factorisation failure.
    pub fn condition(
        design: DMatrix<f64>,
        outputs: DVector<f64>,
        kernel: KernelSpec,
        mean: PriorMean,
    ) -> Result<Self> {
        Self::condition_impl(design, outputs, kernel, mean, None)
    }

    /// Conditions with an exact, caller-chosen absolute jitter (no escalation).
    pub fn condition_with_jitter(
        design: DMatrix<f64>,
        outputs: DVector<f64>,
        kernel: KernelSpec,
        mean: PriorMean,
        jitter: f64,
    ) -> Result<Self> {
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(EmuError::usage(format!("jitter must be non-negative, got {jitter}")));
        }
        Self::condition_impl(design, outputs, kernel, mean, Some(jitter))
    }

    fn condition_impl(
        design: DMatrix<f64>,
        outputs: DVector<f64>,
        kernel: KernelSpec,
        mean: PriorMean,
        jitter: Option<f64>,
    ) -> Result<Self> {
        validate_data(&design, &outputs)?;
        let (n, d) = design.shape();
        if kernel.dim() != d || mean.slopes.len() != d {
            return Err(EmuError::usage(format!(
                "design is {d}-dimensional but kernel has {} length-scales and mean {} slopes",
                kernel.dim(),
                mean.slopes.len()
            )));
        }
        let rows = to_rows(&design);
        let mut k = correlation_matrix(kernel.family(), kernel.lengthscales(), &rows, n, d);
        k *= kernel.variance();
        let (chol, jitter) = match jitter {
            None => factor_escalating(&k, kernel.variance())?,
            Some(j) => {
                for i in 0..n {
                    k[(i, i)] += j;
                }
                let ch = k.cholesky().ok_or_else(|| {
                    EmuError::IllConditioned(format!(
                        "covariance matrix not positive definite with jitter {j:e}"
                    ))
                })?;
                (ch, j)
            }
        };
        let residual = DVector::from_fn(n, |i, _| outputs[i] - mean.eval(&rows[i * d..(i + 1) * d]));
        let alpha = chol.solve(&residual);
        let factor = chol.l();
        let factor_rows = to_rows(&factor);
        Ok(Self {
            design,
            rows,
            outputs,
            kernel,
            mean,
            chol,
            factor,
            factor_rows,
            alpha,
            jitter,
        })
    }

    /// Maximum-likelihood fit with default search settings.
    pub fn fit(design: DMatrix<f64>, outputs: DVector<f64>, family: KernelFamily, seed: u64) -> Result<Self> {
        Self::fit_with(design, outputs, &FitOptions::new(family, seed))
    }

    /// Maximum-likelihood fit.
    ///
    /// Length-scales are searched in log space by Nelder–Mead from
    /// `opts.restarts` seeded starting points, each constrained to
    /// `bound_factors × range` per dimension. The best restart wins; ties go
    /// to the lowest restart index. Outputs that the linear prior mean already
    /// reproduces skip the search and get σ² = [`DEGENERATE_VARIANCE`].
    pub fn fit_with(design: DMatrix<f64>, outputs: DVector<f64>, opts: &FitOptions) -> Result<Self> {
        validate_data(&design, &outputs)?;
        let (n, d) = design.shape();
        if n < d + 2 {
            return Err(EmuError::InsufficientData(format!(
                "fitting a {d}-dimensional GP with a linear mean needs at least {} points, got {n}",
                d + 2
            )));
        }
        let rows = to_rows(&design);
        check_distinct_rows(&rows, n, d)?;

        let ranges: Vec<f64> = (0..d)
            .map(|j| {
                let col = design.column(j);
                let r = col.max() - col.min();
                if r > 0.0 {
                    r
                } else {
                    1.0
                }
            })
            .collect();

        if let Some(ols) = exact_linear_fit(&design, &outputs) {
            let kernel = KernelSpec::new(opts.family, DEGENERATE_VARIANCE, ranges)?;
            return Self::condition(design, outputs, kernel, ols);
        }

        let lower: Vec<f64> = ranges.iter().map(|r| (r * opts.bound_factors.0).ln()).collect();
        let upper: Vec<f64> = ranges.iter().map(|r| (r * opts.bound_factors.1).ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let restarts = opts.restarts.max(1);
        let starts: Vec<Vec<f64>> = (0..restarts)
            .map(|i| {
                if i == 0 {
                    // geometric centre of the box: θ_l = range_l
                    lower.iter().zip(&upper).map(|(a, b)| 0.5 * (a + b)).collect()
                } else {
                    lower
                        .iter()
                        .zip(&upper)
                        .map(|(a, b)| a + rng.random::<f64>() * (b - a))
                        .collect()
                }
            })
            .collect();

        let nm = NelderMeadOptions {
            max_evals: opts.max_evals_per_restart,
            f_tol: 1e-10,
            x_tol: 1e-6,
            initial_step: 0.25 * (upper[0] - lower[0]),
        };
        let objective = |log_theta: &[f64]| {
            let theta: Vec<f64> = log_theta.iter().map(|v| v.exp()).collect();
            match profiled_likelihood(&design, &outputs, opts.family, &theta) {
                Ok(p) => -p.log_likelihood,
                Err(_) => f64::INFINITY,
            }
        };

        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (i, start) in starts.iter().enumerate() {
            let m = nelder_mead(objective, start, &lower, &upper, &nm);
            if !m.value.is_finite() {
                continue;
            }
            // strict comparison keeps the lowest index on ties
            if best.as_ref().is_none_or(|(_, v, _)| m.value < *v) {
                best = Some((i, m.value, m.x));
            }
        }
        let (_, value, log_theta) = best.ok_or_else(|| EmuError::Fit {
            message: format!("all {restarts} restarts produced non-finite likelihoods"),
            best_objective: f64::INFINITY,
        })?;
        let theta: Vec<f64> = log_theta.iter().map(|v| v.exp()).collect();
        let prof = profiled_likelihood(&design, &outputs, opts.family, &theta).map_err(|e| EmuError::Fit {
            message: format!("re-evaluating the optimum failed: {e}"),
            best_objective: value,
        })?;
        let kernel = KernelSpec::new(opts.family, prof.variance.max(DEGENERATE_VARIANCE), theta)?;
        Self::condition(design, outputs, kernel, prof.mean)
    }

    /// Rebuilds a model from its archived form and shared design.
    pub fn from_record(design: DMatrix<f64>, record: GpModelRecord) -> Result<Self> {
        let outputs = DVector::from_vec(record.outputs);
        Self::condition_with_jitter(design, outputs, record.kernel, record.mean, record.jitter)
    }

    pub fn to_record(&self) -> GpModelRecord {
        GpModelRecord {
            kernel: self.kernel.clone(),
            mean: self.mean.clone(),
            jitter: self.jitter,
            outputs: self.outputs.as_slice().to_vec(),
        }
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.mean
    }

    /// Lower-triangular factor of `K + jitter·I`.
    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `K⁻¹ (y − μ(X))`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn len(&self) -> usize {
        self.design.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.design.nrows() == 0
    }

    /// Posterior mean and variance at `x`. The variance is clamped to `[0, σ²]`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_input(x)?;
        let (mean, variance) = self.predict_unchecked(x);
        Ok(Prediction { mean, variance })
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.mean_unchecked(x))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(EmuError::usage(format!(
                "model expects {}-dimensional input, got {}",
                self.dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EmuError::usage("prediction input must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let fam = self.kernel.family();
        let ls = self.kernel.lengthscales();
        let s2 = self.kernel.variance();
        let mut acc = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            acc += s2 * kernel::correlation(fam, ls, x, &self.rows[i * d..(i + 1) * d]) * a;
        }
        self.mean.eval(x) + acc
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let n = self.len();
        let d = self.dim();
        let fam = self.kernel.family();
        let ls = self.kernel.lengthscales();
        let s2 = self.kernel.variance();
        let mut v: Vec<f64> = (0..n)
            .map(|i| s2 * kernel::correlation(fam, ls, x, &self.rows[i * d..(i + 1) * d]))
            .collect();
        let mean = self.mean.eval(x) + v.iter().zip(self.alpha.iter()).map(|(k, a)| k * a).sum::<f64>();
        // forward substitution: v ← L⁻¹ k
        let l = &self.factor_rows;
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
            v[i] = (v[i] - dot) / l[i * n + i];
        }
        let explained: f64 = v.iter().map(|t| t * t).sum();
        let variance = (s2 - explained).clamp(0.0, s2);
        (mean, variance)
    }

    /// Gaussian log-density of the outputs under this model's prior
    /// (`y ~ N(μ(X), K + jitter·I)`).
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let residual = self.residuals();
        let quad = residual.dot(&self.alpha);
        let log_det: f64 = 2.0 * self.factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (quad + log_det + n * LN_2PI)
    }

    /// Gradient of [`Self::log_marginal_likelihood`] with respect to the
    /// log length-scales (σ², β and jitter held fixed).
    pub fn log_likelihood_gradient(&self) -> Vec<f64> {
        let n = self.len();
        let d = self.dim();
        let k_inv = self.chol.inverse();
        let w = &self.alpha * self.alpha.transpose() - k_inv;
        let fam = self.kernel.family();
        let ls = self.kernel.lengthscales();
        let s2 = self.kernel.variance();
        (0..d)
            .map(|l| {
                let mut acc = 0.0;
                for i in 0..n {
                    let xi = &self.rows[i * d..(i + 1) * d];
                    for j in 0..i {
                        let xj = &self.rows[j * d..(j + 1) * d];
                        let kij = s2 * kernel::correlation(fam, ls, xi, xj);
                        let s = (xi[l] - xj[l]).abs() / ls[l];
                        let dk = kij * fam.log_lengthscale_sensitivity(s);
                        acc += 2.0 * w[(i, j)] * dk;
                    }
                }
                0.5 * acc
            })
            .collect()
    }

    fn residuals(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(self.len(), |i, _| {
            self.outputs[i] - self.mean.eval(&self.rows[i * d..(i + 1) * d])
        })
    }

    /// Leave-one-out predictions at each design point with all
    /// hyperparameters (β, σ², θ, jitter) held at their full-data values.
    /// Uses the closed form `y_i − [K⁻¹r]_i / [K⁻¹]_ii`.
    pub fn loo_predictions(&self) -> Result<DVector<f64>> {
        if self.len() < 2 {
            return Err(EmuError::InsufficientData(
                "leave-one-out needs at least two design points".into(),
            ));
        }
        let k_inv = self.chol.inverse();
        Ok(DVector::from_fn(self.len(), |i, _| {
            self.outputs[i] - self.alpha[i] / k_inv[(i, i)]
        }))
    }

    /// Mean squared leave-one-out error.
    pub fn loo_mse(&self) -> Result<f64> {
        let pred = self.loo_predictions()?;
        Ok((pred - &self.outputs).map(|e| e * e).mean())
    }
}

/// If a linear function reproduces `outputs` to round-off, returns it.
fn exact_linear_fit(design: &DMatrix<f64>, outputs: &DVector<f64>) -> Option<PriorMean> {
    let f = trend_matrix(design);
    let beta = f.clone().svd(true, true).solve(outputs, 1e-14).ok()?;
    let resid = outputs - &f * &beta;
    let scale = outputs.amax().max(1.0);
    let rms = (resid.norm_squared() / outputs.len() as f64).sqrt();
    if rms <= 1e-10 * scale {
        Some(PriorMean::new(beta[0], beta.as_slice()[1..].to_vec()))
    } else {
        None
    }
}

/// Concentrated log-likelihood at the given length-scales.
pub fn profiled_likelihood(
    design: &DMatrix<f64>,
    outputs: &DVector<f64>,
    family: KernelFamily,
    lengthscales: &[f64],
) -> Result<ProfiledLikelihood> {
    let (n, d) = design.shape();
    if lengthscales.len() != d {
        return Err(EmuError::usage("one length-scale per design column is required"));
    }
    if lengthscales.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(EmuError::usage("length-scales must be positive"));
    }
    let rows = to_rows(design);
    let r = correlation_matrix(family, lengthscales, &rows, n, d);
    let (chol, jitter) = factor_escalating(&r, 1.0).map_err(|e| EmuError::Evaluation(e.to_string()))?;
    let f = trend_matrix(design);
    let ri_f = chol.solve(&f);
    let ri_y = chol.solve(outputs);
    let a = f.transpose() * &ri_f;
    let b = f.transpose() * &ri_y;
    let beta = a
        .lu()
        .solve(&b)
        .ok_or_else(|| EmuError::Evaluation("trend normal equations are singular".into()))?;
    let resid = outputs - &f * &beta;
    let ri_r = ri_y - &ri_f * &beta;
    let variance = resid.dot(&ri_r) / n as f64;
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(EmuError::Evaluation(format!("profiled variance {variance} is not positive")));
    }
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nf = n as f64;
    let log_likelihood = -0.5 * (nf * (LN_2PI + variance.ln()) + nf + log_det);
    Ok(ProfiledLikelihood {
        log_likelihood,
        mean: PriorMean::new(beta[0], beta.as_slice()[1..].to_vec()),
        variance,
        jitter,
    })
}
