//! Planar Euclidean distance matrix primitives.

use nalgebra::DMatrix;

use crate::error::{MprError, Result};

fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(MprError::Shape(format!("{what} must be square, got {:?}", m.shape())));
    }
    Ok(m.nrows())
}

/// `K(G) = diag(G) 1^T - 2 G + 1 diag(G)^T`: squared distances from a Gram matrix.
pub fn kappa_operator(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = require_square(gram, "Gram matrix")?;
    Ok(DMatrix::from_fn(q, q, |i, j| gram[(i, i)] - 2.0 * gram[(i, j)] + gram[(j, j)]))
}

/// Gram matrix of the centered point set, `-1/2 J D J` with `J = I - 11^T / Q`.
pub fn centered_gram(d2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = require_square(d2, "distance matrix")?;
    if q == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // -1/2 J D J entrywise: subtract row and column means, add back the grand mean.
    let row_means: Vec<f64> = (0..q).map(|i| d2.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..q).map(|j| d2.column(j).mean()).collect();
    let grand = d2.mean();
    Ok(DMatrix::from_fn(q, q, |i, j| {
        -0.5 * (d2[(i, j)] - row_means[i] - col_means[j] + grand)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PointSet;
    use nalgebra::{Matrix2xX, SymmetricEigen};
    use proptest::prelude::*;

    fn triangle() -> PointSet {
        PointSet::new(Matrix2xX::from_column_slice(&[0.0, 0.0, 3.0, 0.0, 0.0, 4.0]))
    }

    #[test]
    fn kappa_of_identity() {
        let d = kappa_operator(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]));
    }

    #[test]
    fn kappa_of_zero() {
        assert_eq!(kappa_operator(&DMatrix::zeros(4, 4)).unwrap(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn kappa_of_triangle_gram() {
        let d = kappa_operator(&triangle().gram()).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, 9.0, 16.0, 9.0, 0.0, 25.0, 16.0, 25.0, 0.0]);
        assert_eq!(d, expected);
    }

    #[test]
    fn kappa_rejects_non_square() {
        assert!(kappa_operator(&DMatrix::zeros(2, 3)).is_err());
        assert!(centered_gram(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn centered_gram_of_zero() {
        assert_eq!(centered_gram(&DMatrix::zeros(3, 3)).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn centered_gram_two_points() {
        // J = [[.5,-.5],[-.5,.5]], J D J = [[-1,1],[1,-1]] for D = [[0,2],[2,0]].
        let g = centered_gram(&DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((g - expected).abs().max() < 1e-15);
    }

    #[test]
    fn centered_gram_matches_explicit_centering_matrix() {
        let d = triangle().squared_distances();
        let q = 3;
        let j = DMatrix::identity(q, q) - DMatrix::from_element(q, q, 1.0 / q as f64);
        let explicit = -0.5 * &j * &d * &j;
        assert!((centered_gram(&d).unwrap() - explicit).abs().max() < 1e-12);
    }

    #[test]
    fn triangle_round_trip_through_top_two_eigenpairs() {
        let d = triangle().squared_distances();
        let g = centered_gram(&d).unwrap();
        let eig = SymmetricEigen::new(g);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut low_rank = DMatrix::zeros(3, 3);
        for &k in &order[..2] {
            let v = eig.eigenvectors.column(k);
            low_rank += eig.eigenvalues[k] * v * v.transpose();
        }
        let back = kappa_operator(&low_rank).unwrap();
        assert!((back - d).abs().max() < 1e-10);
    }

    fn planar_points() -> impl Strategy<Value = PointSet> {
        (3usize..25).prop_flat_map(|q| {
            proptest::collection::vec(-50.0f64..50.0, 2 * q)
                .prop_map(move |v| PointSet::new(Matrix2xX::from_column_slice(&v)))
        })
    }

    proptest! {
        #[test]
        fn kappa_of_gram_is_pairwise_distances(points in planar_points()) {
            let d = kappa_operator(&points.gram()).unwrap();
            let exact = points.squared_distances();
            let scale = exact.abs().max().max(1.0);
            prop_assert!((d - exact).abs().max() <= 1e-12 * scale);
        }

        #[test]
        fn centered_gram_of_planar_edm_has_rank_two(points in planar_points()) {
            let g = centered_gram(&kappa_operator(&points.gram()).unwrap()).unwrap();
            let mut eig: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            let thr = 1e-9 * eig[0].abs().max(1e-300);
            prop_assert!(eig[2..].iter().all(|l| l.abs() <= thr));
        }
    }
}
