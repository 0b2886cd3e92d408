//! Space-filling designs over a box of initial conditions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{integrate_step, DynamicalSystem, Tolerance};
use crate::error::{EmuError, Result};

/// Absolute widening applied to a zero-width coordinate.
pub const DEGENERATE_WIDTH_FLOOR: f64 = 1e-3;
pub const DEFAULT_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(EmuError::usage(format!(
                "box bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(EmuError::usage(format!("box coordinate {i}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, lo), hi)| lo <= v && v <= hi)
    }
}

/// Latin hypercube of `n` points: in every coordinate each of the `n`
/// equal-width strata holds exactly one point, placed uniformly at random
/// inside its stratum.
pub fn latin_hypercube(n: usize, bbox: &BoundingBox, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(EmuError::usage("a Latin hypercube needs at least one point"));
    }
    let d = bbox.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, d);
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        let (lo, w) = (bbox.lower[j], bbox.width(j));
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            // keep the point inside its stratum despite rounding
            let frac = ((s as f64 + u) / n as f64).min(((s + 1) as f64 / n as f64).next_down());
            out[(i, j)] = lo + frac * w;
        }
    }
    Ok(out)
}

/// Box from the extremes of one long trajectory, widened by `margin` of the
/// observed extent on each side. Zero-extent coordinates are widened by
/// [`DEGENERATE_WIDTH_FLOOR`] instead.
pub fn estimate_bounds(
    system: &DynamicalSystem,
    probe_initial: &[f64],
    horizon: f64,
    margin: f64,
    sample_dt: f64,
    tol: Tolerance,
) -> Result<BoundingBox> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(EmuError::usage(format!("probe horizon must be positive, got {horizon}")));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(EmuError::usage(format!("margin must be non-negative, got {margin}")));
    }
    if sample_dt.is_nan() || sample_dt <= 0.0 {
        return Err(EmuError::usage("sampling interval must be positive"));
    }
    if probe_initial.len() != system.dim() {
        return Err(EmuError::usage("probe state dimension does not match the system"));
    }
    let mut lower = probe_initial.to_vec();
    let mut upper = probe_initial.to_vec();
    let mut x = probe_initial.to_vec();
    let steps = (horizon / sample_dt).ceil() as usize;
    for s in 0..steps {
        let t = s as f64 * sample_dt;
        x = match integrate_step(system, &x, sample_dt, tol) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => next,
            _ => return Err(EmuError::Divergence { t, lower, upper }),
        };
        for i in 0..x.len() {
            lower[i] = lower[i].min(x[i]);
            upper[i] = upper[i].max(x[i]);
        }
    }
    for i in 0..lower.len() {
        let extent = upper[i] - lower[i];
        let pad = if extent > 0.0 { margin * extent } else { DEGENERATE_WIDTH_FLOOR };
        lower[i] -= pad;
        upper[i] += pad;
    }
    BoundingBox::new(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{LORENZ_A, LORENZ_B, LORENZ_C};
    use proptest::prelude::*;

    fn strata_hit(design: &DMatrix<f64>, bbox: &BoundingBox) -> Vec<Vec<usize>> {
        let n = design.nrows();
        (0..bbox.dim())
            .map(|j| {
                let mut counts = vec![0usize; n];
                for i in 0..n {
                    let u = (design[(i, j)] - bbox.lower()[j]) / bbox.width(j);
                    counts[((u * n as f64).floor() as usize).min(n - 1)] += 1;
                }
                counts
            })
            .collect()
    }

    #[test]
    fn single_point_lies_in_box() {
        let b = BoundingBox::cube(4, 0.0, 1.0).unwrap();
        let x = latin_hypercube(1, &b, 3).unwrap();
        assert!(b.contains(&x.row(0).iter().copied().collect::<Vec<_>>()));
    }

    #[test]
    fn deciles_are_each_hit_once() {
        let b = BoundingBox::cube(3, 0.0, 1.0).unwrap();
        let x = latin_hypercube(10, &b, 42).unwrap();
        for counts in strata_hit(&x, &b) {
            assert!(counts.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn lorenz_sized_design_has_flat_marginals() {
        let b = BoundingBox::new(vec![0.0, -25.0, -25.0], vec![50.0, 25.0, 25.0]).unwrap();
        let x = latin_hypercube(36, &b, 7).unwrap();
        for counts in strata_hit(&x, &b) {
            assert_eq!(counts, vec![1; 36]);
        }
    }

    #[test]
    fn same_seed_same_design() {
        let b = BoundingBox::cube(2, -1.0, 3.0).unwrap();
        let a = latin_hypercube(24, &b, 99).unwrap();
        let c = latin_hypercube(24, &b, 99).unwrap();
        assert!(a.iter().zip(c.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_ne!(a, latin_hypercube(24, &b, 100).unwrap());
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(BoundingBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(latin_hypercube(0, &BoundingBox::cube(1, 0.0, 1.0).unwrap(), 0).is_err());
    }

    #[test]
    fn stationary_bounds_use_floor() {
        let s = DynamicalSystem::stationary(2);
        let b = estimate_bounds(&s, &[1.0, -2.0], 1.0, 0.05, 0.01, Tolerance::default()).unwrap();
        assert_eq!(b.lower(), &[1.0 - 1e-3, -2.0 - 1e-3]);
        assert_eq!(b.upper(), &[1.0 + 1e-3, -2.0 + 1e-3]);
    }

    #[test]
    fn lorenz_bounds_cover_the_attractor() {
        let s = DynamicalSystem::lorenz(LORENZ_A, LORENZ_B, LORENZ_C);
        let probe = [1e-2, 1e-2, 1e-2];
        let b = estimate_bounds(&s, &probe, 100.0, 0.05, 0.01, Tolerance::default()).unwrap();
        // x₁ (the a-coordinate) lives on [0, ~50]; x₂, x₃ swing through zero
        assert!(b.lower()[0] < 1.0 && b.upper()[0] > 40.0 && b.upper()[0] < 60.0, "{b:?}");
        assert!(b.lower()[1] < -15.0 && b.upper()[1] > 15.0);
        assert!(b.lower()[2] < -20.0 && b.upper()[2] > 20.0);
        let traj = crate::dynsys::simulate(&s, &probe, 0.01, 10_000, Tolerance::default()).unwrap();
        assert!(traj.iter().all(|x| b.contains(x)));
    }

    #[test]
    fn van_der_pol_amplitude() {
        let s = DynamicalSystem::van_der_pol(5.0);
        let b = estimate_bounds(&s, &[0.1, 0.1], 100.0, 0.0, 0.01, Tolerance::default()).unwrap();
        assert!((b.upper()[0] - 2.02).abs() < 0.1 && (b.lower()[0] + 2.02).abs() < 0.1, "{b:?}");
    }

    #[test]
    fn divergence_reports_extremes() {
        let s = DynamicalSystem::new("blowup", 1, Default::default(), |x, dx| dx[0] = x[0] * x[0]);
        match estimate_bounds(&s, &[1.0], 5.0, 0.05, 0.01, Tolerance::default()) {
            Err(EmuError::Divergence { upper, .. }) => assert!(upper[0] > 10.0),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn stratification_is_exact(n in 1usize..60, d in 1usize..5, seed in any::<u64>()) {
            let b = BoundingBox::new((0..d).map(|i| -(i as f64)).collect(), (0..d).map(|i| 1.0 + 3.0 * i as f64).collect()).unwrap();
            let x = latin_hypercube(n, &b, seed).unwrap();
            for counts in strata_hit(&x, &b) {
                prop_assert!(counts.iter().all(|&c| c == 1));
            }
        }
    }
}
