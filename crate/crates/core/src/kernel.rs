//! Stationary product-form covariance kernels.
//!
//! Every family factorises over coordinates,
//! `k(x, x') = σ² ∏_l g(|x_l - x'_l| / θ_l)`, and differs only in the
//! one-dimensional profile `g`.

use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern32,
    Exponential,
}

impl KernelFamily {
    /// One-dimensional correlation profile at scaled distance `s = |Δ| / θ`.
    #[inline]
    pub fn profile(self, s: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * s * s).exp(),
            KernelFamily::Matern32 => {
                let a = SQRT_3 * s;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Exponential => (-s).exp(),
        }
    }

    /// `(∂g/∂ log θ) / g` at scaled distance `s`.
    #[inline]
    pub(crate) fn log_lengthscale_sensitivity(self, s: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => s * s,
            KernelFamily::Matern32 => {
                let a = SQRT_3 * s;
                a * a / (1.0 + a)
            }
            KernelFamily::Exponential => s,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared_exponential",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = EmuError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "squared_exponential" | "se" | "gauss" | "gaussian" => {
                Ok(KernelFamily::SquaredExponential)
            }
            "matern32" | "matern_3_2" | "matern3_2" => Ok(KernelFamily::Matern32),
            "exponential" | "exp" => Ok(KernelFamily::Exponential),
            other => Err(EmuError::Config(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Kernel family plus hyperparameters: process variance σ² and one
/// length-scale per input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    variance: f64,
    lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(EmuError::usage(format!(
                "kernel variance must be positive and finite, got {variance}"
            )));
        }
        if lengthscales.is_empty() {
            return Err(EmuError::usage("kernel needs at least one length-scale"));
        }
        if let Some(bad) = lengthscales.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(EmuError::usage(format!(
                "length-scales must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            family,
            variance,
            lengthscales,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::new(self.family, variance, self.lengthscales.clone())
    }

    /// Covariance `k(x, x2)`; checks dimensions.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || x2.len() != self.dim() {
            return Err(EmuError::usage(format!(
                "kernel expects {}-dimensional inputs, got {} and {}",
                self.dim(),
                x.len(),
                x2.len()
            )));
        }
        Ok(self.variance * self.correlation(x, x2))
    }

    /// Correlation `k(x, x2) / σ²` without dimension checks.
    #[inline]
    pub fn correlation(&self, x: &[f64], x2: &[f64]) -> f64 {
        correlation(self.family, &self.lengthscales, x, x2)
    }
}

#[inline]
pub(crate) fn correlation(family: KernelFamily, lengthscales: &[f64], x: &[f64], x2: &[f64]) -> f64 {
    match family {
        // Sum in the exponent: one exp call instead of d.
        KernelFamily::SquaredExponential => {
            let mut acc = 0.0;
            for ((a, b), t) in x.iter().zip(x2).zip(lengthscales) {
                let s = (a - b) / t;
                acc += s * s;
            }
            (-0.5 * acc).exp()
        }
        _ => x
            .iter()
            .zip(x2)
            .zip(lengthscales)
            .map(|((a, b), t)| family.profile((a - b).abs() / t))
            .product(),
    }
}
