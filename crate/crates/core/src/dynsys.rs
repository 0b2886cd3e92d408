//! Ground-truth simulators: autonomous ODE right-hand sides and an adaptive
//! Dormand–Prince 5(4) integrator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};

pub type VectorField = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An autonomous system `dx/dt = f(x)`.
#[derive(Clone)]
pub struct DynamicalSystem {
    name: String,
    dim: usize,
    params: BTreeMap<String, f64>,
    rhs: Arc<VectorField>,
}

impl fmt::Debug for DynamicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicalSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// `(a·x₁ + x₂x₃, b(x₂ − x₃), −x₁x₂ + c·x₂ − x₃)`.
#[inline]
pub fn lorenz_rhs(x: &[f64; 3], a: f64, b: f64, c: f64) -> [f64; 3] {
    [
        a * x[0] + x[1] * x[2],
        b * (x[1] - x[2]),
        -x[0] * x[1] + c * x[1] - x[2],
    ]
}

/// `(x₂, α(1 − x₁²)x₂ − x₁)`.
#[inline]
pub fn vanderpol_rhs(x: &[f64; 2], alpha: f64) -> [f64; 2] {
    [x[1], alpha * (1.0 - x[0] * x[0]) * x[1] - x[0]]
}

pub const LORENZ_A: f64 = -8.0 / 3.0;
pub const LORENZ_B: f64 = -10.0;
pub const LORENZ_C: f64 = 28.0;
pub const VAN_DER_POL_ALPHA: f64 = 5.0;

impl DynamicalSystem {
    /// Wraps a user-supplied vector field.
    pub fn new<F>(name: impl Into<String>, dim: usize, params: BTreeMap<String, f64>, rhs: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            params,
            rhs: Arc::new(rhs),
        }
    }

    pub fn lorenz(a: f64, b: f64, c: f64) -> Self {
        let params = BTreeMap::from([("a".to_string(), a), ("b".to_string(), b), ("c".to_string(), c)]);
        Self::new("lorenz", 3, params, move |x, dx| {
            let v = lorenz_rhs(&[x[0], x[1], x[2]], a, b, c);
            dx.copy_from_slice(&v);
        })
    }

    pub fn van_der_pol(alpha: f64) -> Self {
        let params = BTreeMap::from([("alpha".to_string(), alpha)]);
        Self::new("van_der_pol", 2, params, move |x, dx| {
            let v = vanderpol_rhs(&[x[0], x[1]], alpha);
            dx.copy_from_slice(&v);
        })
    }

    /// `dx/dt = 0`.
    pub fn stationary(dim: usize) -> Self {
        let params = BTreeMap::from([("dimension".to_string(), dim as f64)]);
        Self::new("stationary", dim, params, |_, dx| dx.fill(0.0))
    }

    /// `dx/dt = rate·x`, coordinate-wise.
    pub fn linear(dim: usize, rate: f64) -> Self {
        let params = BTreeMap::from([("dimension".to_string(), dim as f64), ("rate".to_string(), rate)]);
        Self::new("linear", dim, params, move |x, dx| {
            for (d, v) in dx.iter_mut().zip(x) {
                *d = rate * v;
            }
        })
    }

    /// Looks up a built-in system by name. Missing parameters take the
    /// standard values (Lorenz `a = −8/3, b = −10, c = 28`; Van der Pol `α = 5`).
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str, default: Option<f64>| -> Result<f64> {
            params
                .get(k)
                .copied()
                .or(default)
                .ok_or_else(|| EmuError::Config(format!("system `{name}` requires parameter `{k}`")))
        };
        let allowed: &[&str] = match name {
            "lorenz" => &["a", "b", "c"],
            "van_der_pol" | "vanderpol" => &["alpha"],
            "stationary" => &["dimension"],
            "linear" => &["dimension", "rate"],
            other => return Err(EmuError::Config(format!("unknown system `{other}`"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(EmuError::Config(format!("system `{name}` has no parameter `{k}`")));
        }
        let dimension = || -> Result<usize> {
            let d = get("dimension", None)?;
            if d >= 1.0 && d.fract() == 0.0 {
                Ok(d as usize)
            } else {
                Err(EmuError::Config(format!("dimension must be a positive integer, got {d}")))
            }
        };
        Ok(match name {
            "lorenz" => Self::lorenz(
                get("a", Some(LORENZ_A))?,
                get("b", Some(LORENZ_B))?,
                get("c", Some(LORENZ_C))?,
            ),
            "van_der_pol" | "vanderpol" => Self::van_der_pol(get("alpha", Some(VAN_DER_POL_ALPHA))?),
            "stationary" => Self::stationary(dimension()?),
            _ => Self::linear(dimension()?, get("rate", None)?),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    #[inline]
    pub fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.rhs)(x, dx)
    }

    pub fn derivative(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.dim];
        self.eval(x, &mut dx);
        dx
    }
}

/// Local error tolerances for the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-8 }
    }
}

/// One simulator run over a single emulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub dt: f64,
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// b − b̂ (fifth- minus fourth-order weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 1_000_000;

/// Starting step size from the usual two-probe estimate (Hairer, Nørsett & Wanner).
fn initial_step(system: &DynamicalSystem, y0: &[f64], f0: &[f64], dt: f64, tol: Tolerance) -> f64 {
    let d = y0.len() as f64;
    let rms = |v: &[f64]| {
        (v.iter().zip(y0).map(|(a, y)| (a / (tol.abs + tol.rel * y.abs())).powi(2)).sum::<f64>() / d).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = system.derivative(&y1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(dt)
}

/// Integrates from `x0` over `[0, dt]`; the last step is shortened to land
/// exactly on `dt`.
pub fn integrate_step(system: &DynamicalSystem, x0: &[f64], dt: f64, tol: Tolerance) -> Result<Vec<f64>> {
    let d = system.dim();
    if x0.len() != d {
        return Err(EmuError::usage(format!("state has {} entries, system is {d}-dimensional", x0.len())));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(EmuError::usage(format!("time step must be positive, got {dt}")));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(EmuError::Integration { t: 0.0, message: "non-finite initial state".into() });
    }

    let mut y = x0.to_vec();
    let mut k1 = system.derivative(&y);
    let mut k = vec![vec![0.0; d]; 6];
    let mut tmp = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let mut t = 0.0;
    let mut h = initial_step(system, &y, &k1, dt, tol);
    let mut steps = 0usize;

    while t < dt {
        if steps >= MAX_STEPS {
            return Err(EmuError::Integration { t, message: "step budget exhausted".into() });
        }
        steps += 1;
        let last = t + h >= dt;
        if last {
            h = dt - t;
        }

        for i in 0..d {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        system.eval(&tmp, &mut k[0]);
        for i in 0..d {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k[0][i]);
        }
        system.eval(&tmp, &mut k[1]);
        for i in 0..d {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k[0][i] + A43 * k[1][i]);
        }
        system.eval(&tmp, &mut k[2]);
        for i in 0..d {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k[0][i] + A53 * k[1][i] + A54 * k[2][i]);
        }
        system.eval(&tmp, &mut k[3]);
        for i in 0..d {
            tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k[0][i] + A63 * k[1][i] + A64 * k[2][i] + A65 * k[3][i]);
        }
        system.eval(&tmp, &mut k[4]);
        for i in 0..d {
            y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k[1][i] + A74 * k[2][i] + A75 * k[3][i] + A76 * k[4][i]);
        }
        system.eval(&y_new, &mut k[5]);

        let mut err = 0.0;
        for i in 0..d {
            let e = h * (E1 * k1[i] + E3 * k[1][i] + E4 * k[2][i] + E5 * k[3][i] + E6 * k[4][i] + E7 * k[5][i]);
            let sc = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / d as f64).sqrt();

        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h *= 0.1;
            if h < 1e-14 * dt.max(1.0) {
                return Err(EmuError::Integration { t, message: "non-finite state".into() });
            }
            continue;
        }

        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            t = if last { dt } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            // first-same-as-last
            std::mem::swap(&mut k1, &mut k[5]);
            h *= factor;
        } else {
            h *= factor.min(1.0);
            if h < 1e-14 * dt.max(1.0) {
                return Err(EmuError::Integration { t, message: "step size underflow".into() });
            }
        }
    }
    Ok(y)
}

/// Reference trajectory sampled every `dt`: `steps + 1` states, starting with `x0`.
pub fn simulate(system: &DynamicalSystem, x0: &[f64], dt: f64, steps: usize, tol: Tolerance) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    for s in 0..steps {
        let next = integrate_step(system, &out[s], dt, tol).map_err(|e| match e {
            EmuError::Integration { t, message } => EmuError::Integration { t: s as f64 * dt + t, message },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Runs the simulator once per design row over one step of length `dt`.
/// Rows are processed in parallel; results keep design order.
pub fn generate_training(system: &DynamicalSystem, design: &DMatrix<f64>, dt: f64, tol: Tolerance) -> Result<Vec<FlowMapSample>> {
    if design.ncols() != system.dim() {
        return Err(EmuError::usage(format!(
            "design has {} columns but the system is {}-dimensional",
            design.ncols(),
            system.dim()
        )));
    }
    (0..design.nrows())
        .into_par_iter()
        .map(|row| {
            let x0: Vec<f64> = design.row(row).iter().copied().collect();
            let x1 = integrate_step(system, &x0, dt, tol).map_err(|e| EmuError::TrainingRow { row, source: Box::new(e) })?;
            Ok(FlowMapSample { x0, x1, dt })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classical RK4 with a fixed step; independent of the adaptive path.
    fn rk4(system: &DynamicalSystem, x0: &[f64], dt: f64, substeps: usize) -> Vec<f64> {
        let h = dt / substeps as f64;
        let mut y = x0.to_vec();
        let d = y.len();
        let add = |y: &[f64], k: &[f64], s: f64| y.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
        for _ in 0..substeps {
            let k1 = system.derivative(&y);
            let k2 = system.derivative(&add(&y, &k1, h / 2.0));
            let k3 = system.derivative(&add(&y, &k2, h / 2.0));
            let k4 = system.derivative(&add(&y, &k3, h));
            for i in 0..d {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    /// Step-halving reference: RK4 at h and h/2 combined by Richardson extrapolation.
    fn richardson(system: &DynamicalSystem, x0: &[f64], dt: f64) -> Vec<f64> {
        let coarse = rk4(system, x0, dt, 64);
        let fine = rk4(system, x0, dt, 128);
        fine.iter().zip(&coarse).map(|(f, c)| f + (f - c) / 15.0).collect()
    }

    #[test]
    fn lorenz_rhs_values() {
        assert_eq!(lorenz_rhs(&[0.0; 3], 1.0, 2.0, 3.0), [0.0; 3]);
        let v = lorenz_rhs(&[1.0, 1.0, 1.0], LORENZ_A, LORENZ_B, LORENZ_C);
        assert!((v[0] + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 26.0);
        assert_eq!(lorenz_rhs(&[2.5, 0.0, 0.0], -3.0, 7.0, 5.0), [-7.5, 0.0, 0.0]);
    }

    #[test]
    fn vanderpol_rhs_values() {
        assert_eq!(vanderpol_rhs(&[0.0, 0.0], 5.0), [0.0, 0.0]);
        assert_eq!(vanderpol_rhs(&[1.0, 1.0], 5.0), [1.0, -1.0]);
        assert_eq!(vanderpol_rhs(&[2.0, 0.0], 5.0), [0.0, -2.0]);
    }

    #[test]
    fn stationary_system_is_fixed() {
        let s = DynamicalSystem::stationary(3);
        let x0 = [0.3, -1.7, 12.5];
        assert_eq!(integrate_step(&s, &x0, 0.01, Tolerance::default()).unwrap(), x0.to_vec());
    }

    #[test]
    fn equilibria_are_preserved_exactly() {
        let s = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
        assert_eq!(integrate_step(&s, &[0.0; 3], 0.5, Tolerance::default()).unwrap(), vec![0.0; 3]);
        let v = DynamicalSystem::van_der_pol(5.0);
        assert_eq!(integrate_step(&v, &[0.0; 2], 0.5, Tolerance::default()).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn exponential_growth() {
        let s = DynamicalSystem::linear(1, 1.0);
        let y = integrate_step(&s, &[1.0], 0.01, Tolerance::default()).unwrap();
        assert!((y[0] - 0.01f64.exp()).abs() < 1e-9, "{}", y[0]);
        let y = integrate_step(&s, &[1.0], 2.0, Tolerance::default()).unwrap();
        assert!((y[0] - 2.0f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn lorenz_step_matches_richardson_reference() {
        let s = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
        for x0 in [[1.0, 1.0, 1.0], [30.0, -8.0, 12.0], [5.0, 15.0, -20.0]] {
            let got = integrate_step(&s, &x0, 0.01, Tolerance::default()).unwrap();
            let want = richardson(&s, &x0, 0.01);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "{x0:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn halving_tolerance_converges() {
        let s = DynamicalSystem::van_der_pol(5.0);
        let coarse_tol = Tolerance { abs: 1e-8, rel: 1e-6 };
        let fine_tol = Tolerance { abs: 0.5e-8, rel: 0.5e-6 };
        for x0 in [[1.0, 1.0], [-2.0, 6.0], [0.1, -3.0]] {
            let a = integrate_step(&s, &x0, 0.01, coarse_tol).unwrap();
            let b = integrate_step(&s, &x0, 0.01, fine_tol).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < coarse_tol.abs + coarse_tol.rel * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn van_der_pol_settles_on_limit_cycle() {
        let s = DynamicalSystem::van_der_pol(5.0);
        let traj = simulate(&s, &[1.0, 1.0], 0.01, 8000, Tolerance::default()).unwrap();
        // amplitude per half-cycle from sign changes of x₁
        let mut peaks = Vec::new();
        let mut cur: f64 = 0.0;
        for w in traj.windows(2) {
            cur = cur.max(w[0][0].abs());
            if w[0][0].signum() != w[1][0].signum() {
                peaks.push(cur);
                cur = 0.0;
            }
        }
        let late = &peaks[peaks.len() - 5..peaks.len() - 1];
        for w in late.windows(2) {
            assert!((w[0] - w[1]).abs() / w[0] < 0.01, "{late:?}");
        }
        assert!((late[0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn rejects_bad_input() {
        let s = DynamicalSystem::van_der_pol(5.0);
        assert!(integrate_step(&s, &[1.0, 1.0], 0.0, Tolerance::default()).is_err());
        assert!(integrate_step(&s, &[1.0], 0.1, Tolerance::default()).is_err());
        let blowup = DynamicalSystem::new("blowup", 1, BTreeMap::new(), |x, dx| dx[0] = x[0] * x[0]);
        assert!(matches!(integrate_step(&blowup, &[1.0], 2.0, Tolerance::default()), Err(EmuError::Integration { .. })));
    }

    #[test]
    fn training_matches_per_row_integration() {
        let s = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
        let design = DMatrix::from_fn(36, 3, |i, j| -20.0 + ((i * 11 + j * 17) % 36) as f64 * 40.0 / 35.0 + 25.0 * (j == 0) as u8 as f64);
        let samples = generate_training(&s, &design, 0.01, Tolerance::default()).unwrap();
        assert_eq!(samples.len(), 36);
        for (i, smp) in samples.iter().enumerate() {
            assert_eq!(smp.dt, 0.01);
            let want = richardson(&s, &smp.x0, 0.01);
            for (g, w) in smp.x1.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8 * w.abs().max(1.0), "row {i}: {g} vs {w} x0 {:?}", smp.x0);
            }
        }
        let again = generate_training(&s, &design, 0.01, Tolerance::default()).unwrap();
        assert_eq!(samples, again);
    }

    #[test]
    fn stationary_training_is_identity() {
        let s = DynamicalSystem::stationary(2);
        let design = DMatrix::from_row_slice(1, 2, &[0.25, 0.75]);
        let samples = generate_training(&s, &design, 0.01, Tolerance::default()).unwrap();
        assert_eq!(samples[0].x1, vec![0.25, 0.75]);
    }

    #[test]
    fn training_errors_name_the_row() {
        let blowup = DynamicalSystem::new("blowup", 1, BTreeMap::new(), |x, dx| dx[0] = x[0] * x[0]);
        let design = DMatrix::from_column_slice(3, 1, &[0.0, 0.1, 50.0]);
        match generate_training(&blowup, &design, 1.0, Tolerance::default()) {
            Err(EmuError::TrainingRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_lookup() {
        let l = DynamicalSystem::from_name("lorenz", &BTreeMap::new()).unwrap();
        assert_eq!(l.params()["c"], 28.0);
        assert!(DynamicalSystem::from_name("duffing", &BTreeMap::new()).is_err());
        let bad = BTreeMap::from([("beta".to_string(), 1.0)]);
        assert!(DynamicalSystem::from_name("lorenz", &bad).is_err());
        let st = DynamicalSystem::from_name("stationary", &BTreeMap::from([("dimension".to_string(), 2.0)])).unwrap();
        assert_eq!(st.dim(), 2);
    }
}
