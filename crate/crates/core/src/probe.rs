//! Probe plans: which input differences to send to the projector, and how to
//! turn the returned readings into per-row distance observations.

use nalgebra::DVector;

use crate::error::{MprError, Result};
use crate::opusim::{Measurement, Opu};
use crate::solver::build_distance_matrix;
use crate::types::{check_binary, DistanceObservation, Frame, ReferenceSet};

/// All `Q (Q - 1) / 2` pair probes `x_q - x_r` for one frame.
#[derive(Clone, Debug)]
pub struct ProbePlan {
    point_count: usize,
    pairs: Vec<(usize, usize)>,
    inputs: Vec<DVector<f64>>,
}

impl ProbePlan {
    /// With `binary` set, each pair is submitted in whichever orientation is a
    /// `{0,1}` vector; the reading is orientation invariant.
    pub fn new(frame: &Frame, refs: &ReferenceSet, binary: bool) -> Result<Self> {
        if frame.len() != refs.dim() {
            return Err(MprError::Shape(format!(
                "frame {} has length {}, anchors have length {}",
                frame.index(),
                frame.len(),
                refs.dim()
            )));
        }
        let q = refs.point_count();
        let mut pairs = Vec::with_capacity(q * (q - 1) / 2);
        let mut inputs = Vec::with_capacity(pairs.capacity());
        for i in 0..q {
            for j in i + 1..q {
                let diff = refs.column(frame, i) - refs.column(frame, j);
                let input = if binary {
                    if check_binary(&diff).is_ok() {
                        diff
                    } else {
                        let flipped = -diff;
                        check_binary(&flipped).map_err(|_| {
                            MprError::InvalidArgument(format!(
                                "frame {}: difference of columns {} and {} is not binary in either orientation",
                                frame.index(),
                                i + 1,
                                j + 1
                            ))
                        })?;
                        flipped
                    }
                } else {
                    diff
                };
                pairs.push((i, j));
                inputs.push(input);
            }
        }
        Ok(Self { point_count: q, pairs, inputs })
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }
}

/// Readings returned for one frame's probe plan.
#[derive(Clone, Debug)]
pub struct IntensityRecord {
    pub frame: usize,
    pub point_count: usize,
    pub pairs: Vec<(usize, usize)>,
    pub measurements: Vec<Measurement>,
}

impl IntensityRecord {
    pub fn observation(&self, row: usize) -> Result<DistanceObservation> {
        let values: Vec<f64> = self.measurements.iter().map(|m| m.intensities[row]).collect();
        let mask: Vec<bool> = self.measurements.iter().map(|m| m.mask[row]).collect();
        build_distance_matrix(self.point_count, &self.pairs, &values, &mask, row, self.frame)
    }

    /// Reading of the signal-to-origin probe, i.e. the direct magnitude
    /// measurement `|<a_m, xi>|^2` (0 when masked).
    pub fn direct_magnitude(&self, row: usize) -> f64 {
        let origin = self.point_count - 1;
        let k = self.pairs.iter().position(|&p| p == (0, origin)).expect("plan covers all pairs");
        self.measurements[k].intensities[row]
    }
}

/// Distance observations for every frame and projector row, indexed
/// `[frame][row]`.
#[derive(Clone, Debug)]
pub struct ObservationSet {
    pub frames: Vec<Vec<DistanceObservation>>,
}

impl ObservationSet {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn row_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn from_records(records: &[IntensityRecord], rows: usize) -> Result<Self> {
        let frames = records
            .iter()
            .map(|rec| (0..rows).map(|m| rec.observation(m)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames })
    }
}

/// Probe plans for each frame, in frame order.
pub fn plan_frames(frames: &[Frame], refs: &ReferenceSet, binary: bool) -> Result<Vec<ProbePlan>> {
    frames.iter().map(|f| ProbePlan::new(f, refs, binary)).collect()
}

/// Sends every plan through the projector in one batch.
pub fn measure_plans(opu: &dyn Opu, plans: &[ProbePlan]) -> Result<Vec<IntensityRecord>> {
    let all: Vec<DVector<f64>> = plans.iter().flat_map(|p| p.inputs().iter().cloned()).collect();
    let mut readings = opu.measure(&all)?.into_iter();
    Ok(plans
        .iter()
        .enumerate()
        .map(|(s, plan)| IntensityRecord {
            frame: s,
            point_count: plan.point_count(),
            pairs: plan.pairs().to_vec(),
            measurements: readings.by_ref().take(plan.pairs().len()).collect(),
        })
        .collect())
}

/// Probes all frames against the anchors and assembles the observations.
pub fn acquire(opu: &dyn Opu, frames: &[Frame], refs: &ReferenceSet) -> Result<(Vec<IntensityRecord>, ObservationSet)> {
    let plans = plan_frames(frames, refs, opu.binary_inputs())?;
    let records = measure_plans(opu, &plans)?;
    let obs = ObservationSet::from_records(&records, opu.output_dim())?;
    Ok((records, obs))
}
