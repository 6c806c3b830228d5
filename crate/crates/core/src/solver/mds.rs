use nalgebra::{DMatrix, Matrix2xX, SymmetricEigen};

use super::{Imputation, SolverConfig};
use crate::edm::centered_gram;
use crate::types::{DistanceObservation, PointSet};

fn imputed(obs: &DistanceObservation, rule: Imputation) -> DMatrix<f64> {
    let q = obs.point_count();
    let fill = match rule {
        Imputation::Zero => 0.0,
        Imputation::ObservedMean => {
            let (mut sum, mut count) = (0.0, 0usize);
            for i in 0..q {
                for j in i + 1..q {
                    if obs.mask[(i, j)] == 1.0 {
                        sum += obs.d2[(i, j)];
                        count += 1;
                    }
                }
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
    };
    DMatrix::from_fn(q, q, |i, j| {
        if i == j {
            0.0
        } else if obs.mask[(i, j)] == 1.0 {
            obs.d2[(i, j)]
        } else {
            fill
        }
    })
}

/// Classical MDS in the plane: top two eigenpairs of `-1/2 J D J`.
///
/// Masked entries are imputed per `cfg.imputation`. Eigenvalues are sorted in
/// nonincreasing order and clamped below at `cfg.eigenvalue_floor`; each
/// eigenvector is signed so its largest-magnitude component is positive.
pub fn classical_mds(obs: &DistanceObservation, cfg: &SolverConfig) -> PointSet {
    let q = obs.point_count();
    let gram = centered_gram(&imputed(obs, cfg.imputation)).expect("observation is square");
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut points = Matrix2xX::zeros(q);
    for (row, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(cfg.eigenvalue_floor).max(0.0);
        if lambda == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let pivot = v.iter().copied().fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * lambda.sqrt();
        for c in 0..q {
            points[(row, c)] = scale * v[c];
        }
    }
    PointSet::new(points)
}
