//! Per-row localization pipeline.
//!
//! For each projector row the first frame is localized (classical MDS,
//! optional squared-stress descent, translation so the origin anchor sits at
//! zero) and fixes the gauge. Every later frame is localized the same way and
//! rotated or reflected onto the first frame's anchors. Rows are independent
//! and solved in parallel.

mod export;
mod mds;
mod procrustes;
mod srls;
mod stress;

pub use export::ExportMetadata;
pub use mds::classical_mds;
pub use procrustes::{procrustes, ProcrustesFit};
pub use srls::{srls_localize, srls_localize_squared, srls_objective};
pub use stress::{refine_gd, refine_gd_traced, refine_multistart, squared_stress, GdOutcome};

use nalgebra::{DMatrix, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::probe::ObservationSet;
use crate::types::{DistanceObservation, EntryFlag, PointSet, RecoveredProjections};
use crate::Complex64;

/// How classical MDS fills masked distances before centering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imputation {
    /// Mean of the observed off-diagonal entries.
    ObservedMean,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Gradient descent iterations; 0 keeps the classical MDS estimate.
    pub gd_max_iters: usize,
    /// Backtracking shrink factor.
    pub armijo_shrink: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    /// Stop once the relative stress decrease of an accepted step falls below this.
    pub gd_tol: f64,
    pub imputation: Imputation,
    /// Eigenvalues below this are clamped to it before taking square roots.
    pub eigenvalue_floor: f64,
    /// Recovered points closer to the origin than this are flagged (camera-scale units).
    pub norm_filter_threshold: f64,
    /// Extra descents from random starts when distances are missing; the
    /// lowest-stress result wins. 0 refines the MDS estimate only.
    #[serde(default)]
    pub gd_restarts: usize,
    #[serde(default)]
    pub restart_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gd_max_iters: 200,
            armijo_shrink: 0.5,
            armijo_c: 1e-4,
            gd_tol: 1e-9,
            imputation: Imputation::ObservedMean,
            eigenvalue_floor: 0.0,
            norm_filter_threshold: 2.0,
            gd_restarts: 0,
            restart_seed: 0,
        }
    }
}

impl SolverConfig {
    /// Classical MDS only.
    pub fn mds_only() -> Self {
        Self { gd_max_iters: 0, ..Self::default() }
    }
}

/// Assembles the `Q x Q` observation for one row and frame from the pair
/// readings `values[k]` of `pairs[k] = (i, j)`.
pub fn build_distance_matrix(
    point_count: usize,
    pairs: &[(usize, usize)],
    values: &[f64],
    mask: &[bool],
    row: usize,
    frame: usize,
) -> Result<DistanceObservation> {
    if pairs.len() != values.len() || pairs.len() != mask.len() {
        return Err(MprError::Shape(format!(
            "{} pairs, {} values, {} mask entries",
            pairs.len(),
            values.len(),
            mask.len()
        )));
    }
    let q = point_count;
    let mut d2 = DMatrix::zeros(q, q);
    let mut w = DMatrix::identity(q, q);
    let mut seen = DMatrix::from_element(q, q, false);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i >= q || j >= q || i == j {
            return Err(MprError::InvalidArgument(format!("invalid pair ({i}, {j}) for {q} points")));
        }
        seen[(i, j)] = true;
        seen[(j, i)] = true;
        if mask[k] {
            d2[(i, j)] = values[k];
            d2[(j, i)] = values[k];
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
    }
    if (0..q).any(|i| (0..q).any(|j| i != j && !seen[(i, j)])) {
        return Err(MprError::InvalidArgument(format!("pair list does not cover all {q} points")));
    }
    DistanceObservation::new(d2, w, row, frame)
}

/// Translates so the last point (the origin anchor) sits at `(0, 0)`.
pub fn center_to_origin(points: &PointSet) -> PointSet {
    let origin = points.point(points.len() - 1);
    let mut out = points.translated(-origin);
    let last = out.len() - 1;
    out.points.set_column(last, &Vector2::zeros());
    out
}

/// MDS, optional refinement, then translation to the origin anchor.
pub fn localize(obs: &DistanceObservation, cfg: &SolverConfig) -> PointSet {
    let init = classical_mds(obs, cfg);
    let refined = if cfg.gd_max_iters > 0 { refine_multistart(obs, &init, cfg) } else { init };
    center_to_origin(&refined)
}

struct RowSolution {
    values: Vec<Complex64>,
    flags: Vec<EntryFlag>,
    reference: Option<PointSet>,
}

fn solve_row(obs: &ObservationSet, row: usize, cfg: &SolverConfig) -> RowSolution {
    let frames = obs.frame_count();
    let mut values = vec![Complex64::new(0.0, 0.0); frames];
    let mut flags = vec![EntryFlag::Unlocalizable; frames];

    let first = &obs.frames[0][row];
    if !first.is_localizable() {
        return RowSolution { values, flags, reference: None };
    }
    let base = localize(first, cfg);
    let reference = base.tail(1);
    values[0] = base.complex(0);
    flags[0] = EntryFlag::Ok;

    for s in 1..frames {
        let current = &obs.frames[s][row];
        if !current.is_localizable() {
            continue;
        }
        let points = localize(current, cfg);
        let fit = procrustes(&reference.points, &points.tail(1).points);
        let aligned = points.transformed(&fit.rotation);
        values[s] = aligned.complex(0);
        flags[s] = if fit.degenerate { EntryFlag::DegenerateAlignment } else { EntryFlag::Ok };
    }

    for (v, f) in values.iter().zip(flags.iter_mut()) {
        if *f == EntryFlag::Ok && v.norm() < cfg.norm_filter_threshold {
            *f = EntryFlag::SmallNorm;
        }
    }
    RowSolution { values, flags, reference: Some(reference) }
}

/// Recovers the complex projections for every row and frame.
pub fn solve_mpr(obs: &ObservationSet, cfg: &SolverConfig) -> Result<RecoveredProjections> {
    let frames = obs.frame_count();
    if frames == 0 || obs.row_count() == 0 {
        return Err(MprError::InvalidArgument("no observations to solve".into()));
    }
    let rows = obs.row_count();
    let q = obs.frames[0][0].point_count();
    for (s, frame) in obs.frames.iter().enumerate() {
        if frame.len() != rows {
            return Err(MprError::Shape(format!("frame {s} has {} rows, expected {rows}", frame.len())));
        }
        if frame.iter().any(|o| o.point_count() != q) {
            return Err(MprError::Shape(format!("frame {s} has an observation without {q} points")));
        }
    }
    if q < 3 {
        return Err(MprError::InvalidArgument(format!("need at least 3 points per row, got {q}")));
    }

    let solved: Vec<RowSolution> = (0..rows).into_par_iter().map(|m| solve_row(obs, m, cfg)).collect();

    let mut y = DMatrix::from_element(rows, frames, Complex64::new(0.0, 0.0));
    let mut flags = DMatrix::from_element(rows, frames, EntryFlag::Ok);
    let mut reference_anchors = Vec::with_capacity(rows);
    for (m, sol) in solved.into_iter().enumerate() {
        for s in 0..frames {
            y[(m, s)] = sol.values[s];
            flags[(m, s)] = sol.flags[s];
        }
        reference_anchors.push(sol.reference);
    }
    Ok(RecoveredProjections { y, flags, reference_anchors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opusim::{CameraConfig, SimulatedOpu, TransmissionMatrix};
    use crate::probe::acquire;
    use crate::rng::{gaussian_vector, rng_from_seed};
    use crate::types::{Frame, ReferenceSet};
    use nalgebra::Matrix2xX;

    #[test]
    fn zero_intensities_give_coincident_points() {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let obs = build_distance_matrix(3, &pairs, &[0.0; 3], &[true; 3], 0, 0).unwrap();
        assert_eq!(obs.d2, DMatrix::zeros(3, 3));
        assert!(classical_mds(&obs, &SolverConfig::default()).points.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn triangle_distances_fill_the_matrix() {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let obs = build_distance_matrix(3, &pairs, &[9.0, 16.0, 25.0], &[true; 3], 4, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 9.0, 16.0, 9.0, 0.0, 25.0, 16.0, 25.0, 0.0]);
        assert_eq!(obs.d2, expected);
        assert_eq!((obs.row, obs.frame), (4, 1));
    }

    #[test]
    fn masked_pair_is_zero_in_both_matrices() {
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let obs = build_distance_matrix(3, &pairs, &[9.0, 16.0, 25.0], &[true, false, true], 0, 0).unwrap();
        assert_eq!(obs.d2[(0, 2)], 0.0);
        assert_eq!(obs.d2[(2, 0)], 0.0);
        assert_eq!(obs.mask[(0, 2)], 0.0);
        assert!(!obs.is_localizable());
    }

    #[test]
    fn build_rejects_incomplete_pair_list() {
        assert!(build_distance_matrix(3, &[(0, 1)], &[1.0], &[true], 0, 0).is_err());
        assert!(build_distance_matrix(3, &[(0, 0)], &[1.0], &[true], 0, 0).is_err());
    }

    #[test]
    fn centering_moves_origin_anchor() {
        let p = PointSet::new(Matrix2xX::from_column_slice(&[3.0, 1.0, 5.0, 5.0, 1.0, -2.0]));
        let c = center_to_origin(&p);
        assert_eq!(c.point(2), Vector2::zeros());
        assert_eq!(c.point(0), Vector2::new(2.0, 3.0));
        assert_eq!(c.point(1), Vector2::new(4.0, 7.0));
        assert!((c.squared_distances() - p.squared_distances()).abs().max() < 1e-12);
        let already = center_to_origin(&c);
        assert_eq!(already, c);
    }

    struct Scenario {
        a: TransmissionMatrix,
        frames: Vec<Frame>,
        refs: ReferenceSet,
    }

    fn scenario(m: usize, n: usize, k: usize, seed: u64) -> Scenario {
        let mut rng = rng_from_seed(seed);
        let a = TransmissionMatrix::draw(m, n, seed).unwrap();
        let refs = ReferenceSet::with_origin((0..k - 1).map(|_| gaussian_vector(n, &mut rng)).collect()).unwrap();
        let x1 = gaussian_vector(n, &mut rng);
        let x2 = gaussian_vector(n, &mut rng);
        let x3 = &x1 + &x2;
        let frames = [x1, x2, x3]
            .into_iter()
            .enumerate()
            .map(|(i, x)| Frame::new(x, i + 1, false).unwrap())
            .collect();
        Scenario { a, frames, refs }
    }

    #[test]
    fn noiseless_magnitudes_match_ground_truth() {
        let sc = scenario(20, 64, 5, 3);
        let opu = SimulatedOpu::new(sc.a.clone(), CameraConfig::noiseless());
        let (_, obs) = acquire(&opu, &sc.frames[..1], &sc.refs).unwrap();
        let y = solve_mpr(&obs, &SolverConfig::default()).unwrap();
        let truth = sc.a.apply(sc.frames[0].values());
        for m in 0..20 {
            assert!((y.y[(m, 0)].norm() - truth[m].norm()).abs() < 1e-8 * truth[m].norm().max(1.0));
        }
    }

    #[test]
    fn duplicate_frames_agree() {
        let sc = scenario(15, 32, 6, 8);
        let frames = vec![sc.frames[0].clone(), Frame::new(sc.frames[0].values().clone(), 2, false).unwrap()];
        let cam = CameraConfig { exposure_gain: 0.05, ..CameraConfig::default() };
        let opu = SimulatedOpu::new(sc.a, cam);
        let (_, obs) = acquire(&opu, &frames, &sc.refs).unwrap();
        let y = solve_mpr(&obs, &SolverConfig::default()).unwrap();
        for m in 0..15 {
            if y.is_retained(m, 0) && y.is_retained(m, 1) {
                assert!((y.y[(m, 0)] - y.y[(m, 1)]).norm() < 1e-9 * y.y[(m, 0)].norm().max(1.0));
            }
        }
    }

    #[test]
    fn noiseless_sum_frame_is_linear() {
        let sc = scenario(30, 128, 6, 11);
        let opu = SimulatedOpu::new(sc.a, CameraConfig::noiseless());
        let (_, obs) = acquire(&opu, &sc.frames, &sc.refs).unwrap();
        let y = solve_mpr(&obs, &SolverConfig::default()).unwrap();
        for m in 0..30 {
            let sum = y.y[(m, 0)] + y.y[(m, 1)];
            let v = y.y[(m, 2)];
            assert!((sum - v).norm() / v.norm() < 1e-6, "row {m}");
        }
    }

    #[test]
    fn unlocalizable_first_frame_flags_whole_row() {
        let q = 4;
        let pairs: Vec<_> = (0..q).flat_map(|i| (i + 1..q).map(move |j| (i, j))).collect();
        let dead = build_distance_matrix(q, &pairs, &[0.0; 6], &[false; 6], 0, 0).unwrap();
        let live = DistanceObservation::complete(
            PointSet::new(Matrix2xX::from_column_slice(&[3.0, 1.0, 0.0, 2.0, 4.0, 4.0, 0.0, 0.0]))
                .squared_distances(),
        )
        .unwrap();
        let obs = ObservationSet { frames: vec![vec![dead, live.clone()], vec![live.clone(), live]] };
        let y = solve_mpr(&obs, &SolverConfig::default()).unwrap();
        assert_eq!(y.flags[(0, 0)], EntryFlag::Unlocalizable);
        assert_eq!(y.flags[(0, 1)], EntryFlag::Unlocalizable);
        assert!(y.reference_anchors[0].is_none());
        assert_eq!(y.flags[(1, 0)], EntryFlag::Ok);
    }

    #[test]
    fn small_points_are_flagged() {
        let pts = PointSet::new(Matrix2xX::from_column_slice(&[0.5, 0.5, 3.0, 0.0, 0.0, 4.0, 0.0, 0.0]));
        let obs = ObservationSet { frames: vec![vec![DistanceObservation::complete(pts.squared_distances()).unwrap()]] };
        let y = solve_mpr(&obs, &SolverConfig::default()).unwrap();
        assert_eq!(y.flags[(0, 0)], EntryFlag::SmallNorm);
        assert!((y.y[(0, 0)].norm() - 0.5f64.hypot(0.5)).abs() < 1e-9);
    }
}
