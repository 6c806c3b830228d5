//! Binary reference anchors for projectors that only accept `{0,1}` inputs.
//!
//! Every probed difference must itself be binary, so anchors are built as a
//! chain of nested supports: `r_1` covers the union of all frame supports plus
//! random flips, and each later anchor covers the previous one plus flips. The
//! origin is appended last.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::opusim::Opu;
use crate::rng::{rng_from_seed, sub_seed};
use crate::types::{check_binary, Frame, ReferenceSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDesignConfig {
    /// Probability of turning each remaining zero into a one at every step.
    pub flip_probability: f64,
    /// Number of anchors `K`, the origin included.
    pub anchor_count: usize,
    pub seed: u64,
    /// Minimum number of new ones per anchor; topped up with uniformly chosen
    /// zeros when the random flips fall short.
    pub min_new_per_step: usize,
    /// Fresh-seed regenerations allowed after an anchor saturates.
    pub max_retries: usize,
}

impl Default for ReferenceDesignConfig {
    fn default() -> Self {
        Self { flip_probability: 0.2, anchor_count: 5, seed: 0, min_new_per_step: 1, max_retries: 10 }
    }
}

/// Anchors plus how many attempts it took to build them.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignReport {
    pub references: ReferenceSet,
    pub attempts: usize,
}

pub fn design_binary_references(frames: &[Frame], cfg: &ReferenceDesignConfig) -> Result<ReferenceSet> {
    design_with_report(frames, cfg).map(|r| r.references)
}

/// Runs the chain construction, regenerating with a fresh sub-seed up to
/// `max_retries` times when an anchor becomes all-ones too early.
pub fn design_with_report(frames: &[Frame], cfg: &ReferenceDesignConfig) -> Result<DesignReport> {
    if !(cfg.flip_probability > 0.0 && cfg.flip_probability < 1.0) {
        return Err(MprError::InvalidArgument(format!(
            "flip probability must lie in (0, 1), got {}",
            cfg.flip_probability
        )));
    }
    if cfg.anchor_count < 2 {
        return Err(MprError::InvalidArgument(format!("need K >= 2 anchors, got {}", cfg.anchor_count)));
    }
    let first = frames
        .first()
        .ok_or_else(|| MprError::InvalidArgument("reference design needs at least one frame".into()))?;
    let n = first.len();
    let mut union = DVector::zeros(n);
    for f in frames {
        if f.len() != n {
            return Err(MprError::Shape(format!("frame {} has length {}, expected {n}", f.index(), f.len())));
        }
        check_binary(f.values())?;
        union += f.values();
    }
    let base = union.map(|v| if v != 0.0 { 1.0 } else { 0.0 });

    let mut last_err = None;
    for attempt in 0..=cfg.max_retries {
        match build_chain(&base, cfg, sub_seed(cfg.seed, attempt as u64)) {
            Ok(references) => return Ok(DesignReport { references, attempts: attempt + 1 }),
            Err(e @ MprError::AnchorSaturated { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(MprError::DesignExhausted {
        attempts: cfg.max_retries + 1,
        last: Box::new(last_err.expect("at least one attempt ran")),
    })
}

fn build_chain(base: &DVector<f64>, cfg: &ReferenceDesignConfig, seed: u64) -> Result<ReferenceSet> {
    let mut rng = rng_from_seed(seed);
    let nonzero = cfg.anchor_count - 1;
    let mut current = base.clone();
    let mut anchors = Vec::with_capacity(cfg.anchor_count);
    for q in 1..=nonzero {
        let mut added = 0;
        for v in current.iter_mut() {
            if *v == 0.0 && rng.random::<f64>() < cfg.flip_probability {
                *v = 1.0;
                added += 1;
            }
        }
        if added < cfg.min_new_per_step {
            let zeros: Vec<usize> = (0..current.len()).filter(|&i| current[i] == 0.0).collect();
            let need = cfg.min_new_per_step - added;
            if zeros.len() < need {
                // the previous anchor (or the frame union) is already full
                return Err(MprError::AnchorSaturated { index: q.saturating_sub(1).max(1) });
            }
            for k in sample(&mut rng, zeros.len(), need) {
                current[zeros[k]] = 1.0;
            }
        }
        if q < nonzero && current.iter().all(|&v| v == 1.0) {
            return Err(MprError::AnchorSaturated { index: q });
        }
        anchors.push(current.clone());
    }
    ReferenceSet::with_origin(anchors)
}

/// Checks that `support(r_l) ⊆ support(r_q)` for all nonzero anchors `l < q`.
pub fn is_nested(refs: &ReferenceSet) -> bool {
    let nonzero = &refs.anchors()[..refs.count() - 1];
    nonzero.iter().enumerate().all(|(l, lower)| {
        nonzero[l + 1..]
            .iter()
            .all(|upper| lower.iter().zip(upper.iter()).all(|(&a, &b)| a <= b))
    })
}

/// Checks that `r_q - xi` is binary for every frame and nonzero anchor.
pub fn covers_frames(refs: &ReferenceSet, frames: &[Frame]) -> bool {
    let nonzero = &refs.anchors()[..refs.count() - 1];
    frames.iter().all(|f| {
        nonzero
            .iter()
            .all(|r| r.iter().zip(f.values().iter()).all(|(&a, &x)| matches!(a - x, d if d == 0.0 || d == 1.0)))
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdStatistic {
    Min,
    /// Robust to rare hot pixels.
    #[default]
    Mode,
    Mean,
}

/// Projects the all-zero input `repeats` times and summarizes the readings.
///
/// Use a projector with masking disabled; masked readings are skipped.
pub fn estimate_sensitivity_threshold(opu: &dyn Opu, repeats: usize, statistic: ThresholdStatistic) -> Result<f64> {
    if repeats == 0 {
        return Err(MprError::InvalidArgument("need at least one repeat".into()));
    }
    let zero = DVector::zeros(opu.input_dim());
    let inputs = vec![zero; repeats];
    let readings: Vec<f64> = opu
        .measure(&inputs)?
        .into_iter()
        .flat_map(|m| {
            m.intensities
                .iter()
                .zip(m.mask)
                .filter(|(_, w)| *w)
                .map(|(&v, _)| v)
                .collect::<Vec<_>>()
        })
        .collect();
    if readings.is_empty() {
        return Ok(0.0);
    }
    Ok(match statistic {
        ThresholdStatistic::Min => readings.iter().copied().fold(f64::INFINITY, f64::min),
        ThresholdStatistic::Mean => readings.iter().sum::<f64>() / readings.len() as f64,
        ThresholdStatistic::Mode => {
            let mut sorted = readings;
            sorted.sort_by(f64::total_cmp);
            // longest run of equal values; ties go to the smaller value
            let (mut best, mut best_len) = (sorted[0], 0usize);
            let mut i = 0;
            while i < sorted.len() {
                let mut j = i;
                while j < sorted.len() && sorted[j] == sorted[i] {
                    j += 1;
                }
                if j - i > best_len {
                    best = sorted[i];
                    best_len = j - i;
                }
                i = j;
            }
            best
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opusim::{CameraConfig, SimulatedOpu, TransmissionMatrix};
    use crate::rng::bernoulli_vector;

    fn random_frames(n: usize, count: usize, density: f64, seed: u64) -> Vec<Frame> {
        let mut rng = rng_from_seed(seed);
        (0..count)
            .map(|i| Frame::new(bernoulli_vector(n, density, &mut rng), i + 1, true).unwrap())
            .collect()
    }

    fn brute_force_binary_differences(refs: &ReferenceSet) -> bool {
        let a = refs.anchors();
        (0..a.len()).all(|l| {
            (l + 1..a.len() - 1).all(|q| (&a[q] - &a[l]).iter().all(|&d| d == 0.0 || d == 1.0))
        })
    }

    #[test]
    fn single_basis_frame_gives_growing_nested_supports() {
        let mut e1 = DVector::zeros(16);
        e1[0] = 1.0;
        let frames = vec![Frame::new(e1, 1, true).unwrap()];
        let cfg = ReferenceDesignConfig {
            flip_probability: 1e-12,
            anchor_count: 3,
            seed: 4,
            min_new_per_step: 1,
            max_retries: 0,
        };
        let refs = design_binary_references(&frames, &cfg).unwrap();
        let sizes: Vec<f64> = refs.anchors().iter().map(|a| a.sum()).collect();
        assert_eq!(sizes, vec![2.0, 3.0, 0.0]);
        assert_eq!(refs.anchors()[0][0], 1.0);
        assert!(is_nested(&refs));
        assert!(covers_frames(&refs, &frames));
        assert!(brute_force_binary_differences(&refs));
    }

    #[test]
    fn default_density_chain_is_valid_and_deterministic() {
        let frames = random_frames(4096, 3, 0.1, 8);
        let cfg = ReferenceDesignConfig { anchor_count: 9, seed: 21, ..ReferenceDesignConfig::default() };
        let report = design_with_report(&frames, &cfg).unwrap();
        assert_eq!(report.attempts, 1);
        let refs = &report.references;
        assert_eq!(refs.count(), 9);
        assert!(refs.anchors()[8].iter().all(|&v| v == 0.0));
        assert!(is_nested(refs));
        assert!(covers_frames(refs, &frames));
        assert!(brute_force_binary_differences(refs));
        assert_eq!(design_binary_references(&frames, &cfg).unwrap(), *refs);
    }

    #[test]
    fn saturation_is_reported_with_anchor_index() {
        let frames = random_frames(8, 1, 0.5, 1);
        let cfg = ReferenceDesignConfig {
            flip_probability: 0.999,
            anchor_count: 5,
            seed: 1,
            min_new_per_step: 1,
            max_retries: 2,
        };
        match design_with_report(&frames, &cfg) {
            Err(MprError::DesignExhausted { attempts: 3, last }) => {
                assert!(matches!(*last, MprError::AnchorSaturated { .. }));
                assert!(last.to_string().contains("anchor"));
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let frames = random_frames(8, 1, 0.5, 1);
        let bad_alpha = ReferenceDesignConfig { flip_probability: 1.0, ..ReferenceDesignConfig::default() };
        assert!(design_binary_references(&frames, &bad_alpha).is_err());
        let bad_k = ReferenceDesignConfig { anchor_count: 1, ..ReferenceDesignConfig::default() };
        assert!(design_binary_references(&frames, &bad_k).is_err());
        assert!(design_binary_references(&[], &ReferenceDesignConfig::default()).is_err());
    }

    #[test]
    fn threshold_of_noiseless_zero_input_is_zero() {
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(20, 10, 3).unwrap(), CameraConfig::default());
        for stat in [ThresholdStatistic::Min, ThresholdStatistic::Mode, ThresholdStatistic::Mean] {
            assert_eq!(estimate_sensitivity_threshold(&opu, 4, stat).unwrap(), 0.0);
        }
    }

    #[test]
    fn threshold_recovers_injected_dark_level() {
        let cam = CameraConfig { dark_level: 6.0, ..CameraConfig::default() };
        let opu = SimulatedOpu::new(TransmissionMatrix::draw(20, 10, 3).unwrap(), cam);
        assert_eq!(estimate_sensitivity_threshold(&opu, 5, ThresholdStatistic::Mode).unwrap(), 6.0);
        assert_eq!(
            estimate_sensitivity_threshold(&opu, 1, ThresholdStatistic::Mean).unwrap(),
            estimate_sensitivity_threshold(&opu, 1, ThresholdStatistic::Min).unwrap()
        );
        assert!(estimate_sensitivity_threshold(&opu, 0, ThresholdStatistic::Mode).is_err());
    }
}
