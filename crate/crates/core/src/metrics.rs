//! Evaluation metrics and the distance-recovery scaling experiment.

use nalgebra::{DMatrix, Matrix2xX};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edm::kappa_operator;
use crate::error::{MprError, Result};
use crate::opusim::UniformNoise;
use crate::rng::{gaussian_vector, rng_from_seed, sub_seed};
use crate::solver::{classical_mds, refine_multistart, SolverConfig};
use crate::types::{DistanceObservation, PointSet};
use crate::Complex64;

/// Recovered projections of `xi_1`, `xi_2` and `xi_1 + xi_2`.
#[derive(Clone, Debug)]
pub struct LinearityTriple {
    pub y: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

impl LinearityTriple {
    pub fn new(y: Vec<Complex64>, z: Vec<Complex64>, v: Vec<Complex64>) -> Result<Self> {
        if y.len() != z.len() || y.len() != v.len() {
            return Err(MprError::Shape(format!("lengths {}, {}, {} differ", y.len(), z.len(), v.len())));
        }
        Ok(Self { y, z, v })
    }
}

/// Mean over retained rows of `|(y + z) - v| / |v|`. `retained = None` keeps all rows.
pub fn linearity_error(t: &LinearityTriple, retained: Option<&[bool]>) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for m in 0..t.v.len() {
        if retained.is_some_and(|r| !r[m]) {
            continue;
        }
        let denom = t.v[m].norm();
        if denom == 0.0 {
            return Err(MprError::Undefined(format!("row {m} has a zero sum-frame projection")));
        }
        sum += ((t.y[m] + t.z[m]) - t.v[m]).norm() / denom;
        count += 1;
    }
    if count == 0 {
        return Err(MprError::Undefined("linearity error over zero retained rows".into()));
    }
    Ok(sum / count as f64)
}

/// Reported in place of `+∞` when the estimate is exact.
pub const GOOD_BITS_CAP: f64 = 52.0;

/// `-(20 / 6.02) log10(| |y|² - |ŷ|² | / |y|²)`, capped at [`GOOD_BITS_CAP`].
pub fn good_bits(true_sq_mag: f64, est_sq_mag: f64) -> f64 {
    assert!(true_sq_mag > 0.0, "good bits need a positive reference magnitude");
    let rel = (true_sq_mag - est_sq_mag).abs() / true_sq_mag;
    if rel == 0.0 {
        return GOOD_BITS_CAP;
    }
    (-(20.0 / 6.02) * rel.log10()).min(GOOD_BITS_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Bernoulli probability that a distance survives the mask.
    pub keep_probability: f64,
    /// Bit depth of the additive uniform noise; `None` disables noise.
    pub bits: Option<u32>,
    /// Upper bound on distance entries used to size the noise.
    pub kappa: f64,
    pub anchor_counts: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Standard deviation of each planar point coordinate.
    pub point_scale: f64,
    pub solver: SolverConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            keep_probability: 0.9,
            bits: Some(8),
            kappa: 255.0,
            anchor_counts: vec![10, 20, 40, 80],
            trials: 50,
            seed: 0,
            point_scale: 255f64.sqrt() / 4.0,
            solver: SolverConfig { gd_restarts: 20, ..SolverConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub anchors: usize,
    /// Mean over trials of `‖D̂ - D‖_F / K`.
    pub mean_error: f64,
    /// Standard error of that mean.
    pub std_error: f64,
    /// `mean_error * sqrt(p K)`, flat in `K` when the error bound is tight.
    pub normalized: f64,
}

fn scaling_trial(k: usize, cfg: &ScalingConfig, noise: Option<UniformNoise>, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let coords = gaussian_vector(2 * k, &mut rng) * cfg.point_scale;
    let truth = PointSet::new(Matrix2xX::from_iterator(k, coords.iter().copied()));
    let d = truth.squared_distances();
    let mut noisy = d.clone();
    let mut mask = DMatrix::identity(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let e = noise.map_or(0.0, |n| n.sample(&mut rng));
            noisy[(i, j)] += e;
            noisy[(j, i)] = noisy[(i, j)];
            let keep = if rng.random::<f64>() < cfg.keep_probability { 1.0 } else { 0.0 };
            mask[(i, j)] = keep;
            mask[(j, i)] = keep;
        }
    }
    let obs = DistanceObservation::new(noisy, mask, 0, 0).expect("symmetric by construction");
    let init = classical_mds(&obs, &cfg.solver);
    let est = if cfg.solver.gd_max_iters > 0 { refine_multistart(&obs, &init, &cfg.solver) } else { init };
    let d_hat = kappa_operator(&est.gram()).expect("square");
    (d_hat - d).norm()
}

/// Mean distance-recovery error per anchor as the anchor count grows, under
/// additive uniform quantization noise and an iid Bernoulli mask.
pub fn edm_error_scaling(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if !(cfg.keep_probability > 0.0 && cfg.keep_probability <= 1.0) {
        return Err(MprError::InvalidArgument(format!("keep probability {} not in (0, 1]", cfg.keep_probability)));
    }
    if cfg.trials == 0 {
        return Err(MprError::InvalidArgument("need at least one trial".into()));
    }
    if cfg.anchor_counts.iter().any(|&k| k < 3) || cfg.anchor_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MprError::InvalidArgument("anchor counts must be increasing and at least 3".into()));
    }
    let noise = cfg.bits.map(|b| UniformNoise::quantization(b, cfg.kappa)).transpose()?;
    Ok(cfg
        .anchor_counts
        .iter()
        .map(|&k| {
            let errors: Vec<f64> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| scaling_trial(k, cfg, noise, sub_seed(sub_seed(cfg.seed, k as u64), t as u64)))
                .map(|e| e / k as f64)
                .collect();
            let (mean, std_error) = mean_and_stderr(&errors);
            ScalingRow { anchors: k, mean_error: mean, std_error, normalized: mean * (cfg.keep_probability * k as f64).sqrt() }
        })
        .collect())
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn exact_sum_has_zero_error() {
        let t = LinearityTriple::new(vec![c(1.0, 2.0)], vec![c(-0.5, 0.5)], vec![c(0.5, 2.5)]).unwrap();
        assert_eq!(linearity_error(&t, None).unwrap(), 0.0);
    }

    #[test]
    fn single_row_arithmetic() {
        let t = LinearityTriple::new(vec![c(1.1, 1.0)], vec![c(0.0, 0.0)], vec![c(1.0, 1.0)]).unwrap();
        let e = linearity_error(&t, None).unwrap();
        assert!((e - 0.1 / 2f64.sqrt()).abs() < 1e-12);
        assert!((e - 0.0707).abs() < 1e-4);
    }

    #[test]
    fn filtered_rows_are_skipped_and_empty_is_undefined() {
        let t = LinearityTriple::new(vec![c(1.0, 0.0), c(5.0, 0.0)], vec![c(0.0, 0.0); 2], vec![c(1.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        assert!(linearity_error(&t, None).is_err());
        assert_eq!(linearity_error(&t, Some(&[true, false])).unwrap(), 0.0);
        assert!(linearity_error(&t, Some(&[false, false])).is_err());
        assert!(LinearityTriple::new(vec![c(1.0, 0.0)], vec![], vec![]).is_err());
    }

    #[test]
    fn good_bits_reference_values() {
        assert!((good_bits(1.0, 1.5) - 1.0).abs() < 1e-3);
        assert!((good_bits(1.0, 1.5) - (20.0 / 6.02) * 2f64.log10()).abs() < 1e-12);
        assert_eq!(good_bits(3.0, 3.0), GOOD_BITS_CAP);
        assert!((good_bits(100.0, 99.0) - 6.645).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn good_bits_decrease_with_error(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi > lo * (1.0 + 1e-9));
            let g_lo = good_bits(1.0, 1.0 + lo);
            let g_hi = good_bits(1.0, 1.0 + hi);
            prop_assert!(g_hi < g_lo || g_lo == GOOD_BITS_CAP);
        }

        #[test]
        fn linearity_error_is_nonnegative(vals in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let t = LinearityTriple::new(vec![c(vals[0], vals[1])], vec![c(vals[2], vals[3])], vec![c(vals[4], vals[5] + 10.0)]).unwrap();
            prop_assert!(linearity_error(&t, None).unwrap() >= 0.0);
        }
    }

    #[test]
    fn noiseless_scaling_is_exact() {
        let cfg = ScalingConfig { keep_probability: 1.0, bits: None, anchor_counts: vec![5, 10], trials: 4, ..ScalingConfig::default() };
        for row in edm_error_scaling(&cfg).unwrap() {
            assert!(row.mean_error < 1e-8, "{row:?}");
        }
    }

    #[test]
    fn heavier_masking_hurts() {
        let base = ScalingConfig { anchor_counts: vec![20], trials: 20, seed: 3, ..ScalingConfig::default() };
        let full = edm_error_scaling(&ScalingConfig { keep_probability: 0.8, ..base.clone() }).unwrap();
        let half = edm_error_scaling(&ScalingConfig { keep_probability: 0.4, ..base }).unwrap();
        assert!(half[0].mean_error > full[0].mean_error, "{half:?} vs {full:?}");
    }

    #[test]
    fn scaling_rejects_bad_config() {
        let bad = ScalingConfig { anchor_counts: vec![10, 5], ..ScalingConfig::default() };
        assert!(edm_error_scaling(&bad).is_err());
        let bad = ScalingConfig { keep_probability: 0.0, ..ScalingConfig::default() };
        assert!(edm_error_scaling(&bad).is_err());
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
