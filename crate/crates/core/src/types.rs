//! Domain types shared by every stage of the pipeline.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::Complex64;

pub(crate) fn check_binary(values: &DVector<f64>) -> Result<()> {
    match values.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(index) => Err(MprError::NonBinaryInput { index, value: values[index] }),
        None => Ok(()),
    }
}

/// One signal of interest pushed through the projector.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    values: DVector<f64>,
    index: usize,
}

impl Frame {
    /// `index` is 1-based. With `binary` set every entry must be exactly 0 or 1.
    pub fn new(values: DVector<f64>, index: usize, binary: bool) -> Result<Self> {
        if index == 0 {
            return Err(MprError::InvalidArgument("frame index is 1-based".into()));
        }
        if values.is_empty() {
            return Err(MprError::InvalidArgument("frame has zero length".into()));
        }
        if binary {
            check_binary(&values)?;
        }
        Ok(Self { values, index })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Reference anchors `r_1 .. r_K`, the last of which is the origin.
///
/// Together with a frame `xi` they form the column layout
/// `X = [xi, r_1, ..., r_K]` with `Q = K + 1` points per row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    anchors: Vec<DVector<f64>>,
}

impl ReferenceSet {
    pub fn new(anchors: Vec<DVector<f64>>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(MprError::InvalidArgument(format!(
                "need at least 2 anchors (origin plus one), got {}",
                anchors.len()
            )));
        }
        let n = anchors[0].len();
        if n == 0 {
            return Err(MprError::InvalidArgument("anchors have zero length".into()));
        }
        if let Some(bad) = anchors.iter().position(|a| a.len() != n) {
            return Err(MprError::Shape(format!(
                "anchor {} has length {}, expected {n}",
                bad + 1,
                anchors[bad].len()
            )));
        }
        if anchors[anchors.len() - 1].iter().any(|&v| v != 0.0) {
            return Err(MprError::InvalidArgument("last anchor must be the origin".into()));
        }
        Ok(Self { anchors })
    }

    /// Builds `nonzero` followed by the origin anchor.
    pub fn with_origin(mut nonzero: Vec<DVector<f64>>) -> Result<Self> {
        let n = nonzero.first().map(|a| a.len()).unwrap_or(0);
        nonzero.push(DVector::zeros(n));
        Self::new(nonzero)
    }

    pub fn anchors(&self) -> &[DVector<f64>] {
        &self.anchors
    }

    /// Number of anchors `K`, origin included.
    pub fn count(&self) -> usize {
        self.anchors.len()
    }

    /// Points per row, `Q = K + 1`.
    pub fn point_count(&self) -> usize {
        self.anchors.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    /// Column `q` (0-based) of `X = [xi, r_1, ..., r_K]`.
    pub fn column<'a>(&'a self, frame: &'a Frame, q: usize) -> &'a DVector<f64> {
        if q == 0 {
            frame.values()
        } else {
            &self.anchors[q - 1]
        }
    }

    pub fn is_binary(&self) -> bool {
        self.anchors.iter().all(|a| check_binary(a).is_ok())
    }

    /// Writes one line per anchor as a string of `0`/`1` characters.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for a in &self.anchors {
            check_binary(a)?;
            let line: String = a.iter().map(|&v| if v == 1.0 { '1' } else { '0' }).collect();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut anchors = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .chars()
                .enumerate()
                .map(|(col, c)| match c {
                    '0' => Ok(0.0),
                    '1' => Ok(1.0),
                    other => Err(MprError::Format(format!(
                        "line {}: column {}: expected 0 or 1, found {other:?}",
                        lineno + 1,
                        col + 1
                    ))),
                })
                .collect::<Result<Vec<f64>>>()?;
            anchors.push(DVector::from_vec(values));
        }
        Self::new(anchors)
    }
}

/// Squared distances among the `Q` points of one row in one frame, with the
/// camera validity mask. Masked entries hold 0 and are never read as data.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceObservation {
    pub d2: DMatrix<f64>,
    pub mask: DMatrix<f64>,
    pub row: usize,
    pub frame: usize,
}

impl DistanceObservation {
    /// Fully observed matrix.
    pub fn complete(d2: DMatrix<f64>) -> Result<Self> {
        let q = d2.nrows();
        Self::new(d2, DMatrix::from_element(q, q, 1.0), 0, 0)
    }

    pub fn new(mut d2: DMatrix<f64>, mask: DMatrix<f64>, row: usize, frame: usize) -> Result<Self> {
        let q = d2.nrows();
        if d2.ncols() != q || mask.shape() != (q, q) {
            return Err(MprError::Shape(format!(
                "distance matrix {:?} and mask {:?} must be equal square shapes",
                d2.shape(),
                mask.shape()
            )));
        }
        for i in 0..q {
            if mask[(i, i)] != 1.0 || d2[(i, i)] != 0.0 {
                return Err(MprError::InvalidArgument(
                    "diagonal must be observed and zero".into(),
                ));
            }
            for j in 0..q {
                let w = mask[(i, j)];
                if w != 0.0 && w != 1.0 {
                    return Err(MprError::InvalidArgument("mask must be binary".into()));
                }
                if w != mask[(j, i)] || (w == 1.0 && d2[(i, j)] != d2[(j, i)]) {
                    return Err(MprError::InvalidArgument(
                        "distance matrix and mask must be symmetric".into(),
                    ));
                }
                if w == 0.0 {
                    d2[(i, j)] = 0.0;
                }
            }
        }
        Ok(Self { d2, mask, row, frame })
    }

    pub fn point_count(&self) -> usize {
        self.d2.nrows()
    }

    /// Number of observed unordered pairs.
    pub fn observed_pairs(&self) -> usize {
        let q = self.point_count();
        (0..q)
            .flat_map(|i| (i + 1..q).map(move |j| (i, j)))
            .filter(|&(i, j)| self.mask[(i, j)] == 1.0)
            .count()
    }

    fn observed_degree(&self, i: usize) -> usize {
        (0..self.point_count())
            .filter(|&j| j != i && self.mask[(i, j)] == 1.0)
            .count()
    }

    /// At least a triangle's worth of distances, and both the signal point
    /// (first column) and the origin (last column) touch one observation.
    pub fn is_localizable(&self) -> bool {
        let q = self.point_count();
        q >= 3
            && self.observed_pairs() >= 3
            && self.observed_degree(0) > 0
            && self.observed_degree(q - 1) > 0
    }
}

/// Candidate planar points: column `q` is the complex number
/// `points[(0, q)] + j * points[(1, q)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Matrix2xX<f64>,
}

impl PointSet {
    pub fn new(points: Matrix2xX<f64>) -> Self {
        Self { points }
    }

    pub fn zeros(q: usize) -> Self {
        Self { points: Matrix2xX::zeros(q) }
    }

    pub fn from_complex(values: &[Complex64]) -> Self {
        Self {
            points: Matrix2xX::from_fn(values.len(), |r, c| {
                if r == 0 {
                    values[c].re
                } else {
                    values[c].im
                }
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn point(&self, q: usize) -> Vector2<f64> {
        self.points.column(q).into_owned()
    }

    pub fn complex(&self, q: usize) -> Complex64 {
        Complex64::new(self.points[(0, q)], self.points[(1, q)])
    }

    pub fn translated(&self, shift: Vector2<f64>) -> Self {
        let mut points = self.points.clone();
        for mut col in points.column_iter_mut() {
            col += shift;
        }
        Self { points }
    }

    pub fn transformed(&self, rotation: &Matrix2<f64>) -> Self {
        Self { points: rotation * &self.points }
    }

    /// Columns `from..` as a new point set.
    pub fn tail(&self, from: usize) -> Self {
        Self { points: self.points.columns(from, self.len() - from).into_owned() }
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.points.transpose() * &self.points
    }

    /// Exact pairwise squared distances.
    pub fn squared_distances(&self) -> DMatrix<f64> {
        let q = self.len();
        DMatrix::from_fn(q, q, |i, j| (self.point(i) - self.point(j)).norm_squared())
    }
}

/// Why an entry of the recovered projections should not be trusted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryFlag {
    Ok,
    /// Recovered point closer to the origin than the norm filter allows.
    SmallNorm,
    /// Too few unmasked distances to localize the point set.
    Unlocalizable,
    /// Anchors were rank deficient, so the frame alignment is ambiguous.
    DegenerateAlignment,
}

impl EntryFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryFlag::Ok => "ok",
            EntryFlag::SmallNorm => "small-norm",
            EntryFlag::Unlocalizable => "unlocalizable",
            EntryFlag::DegenerateAlignment => "degenerate-alignment",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ok, Self::SmallNorm, Self::Unlocalizable, Self::DegenerateAlignment]
            .into_iter()
            .find(|f| f.as_str() == s)
    }
}

/// Output of the pipeline: `y[(m, s)]` is the localized signal point of frame
/// `s` for projector row `m`.
///
/// Each row is only defined up to one global phase and one conjugation,
/// shared by all frames of that row.
#[derive(Clone, Debug)]
pub struct RecoveredProjections {
    pub y: DMatrix<Complex64>,
    pub flags: DMatrix<EntryFlag>,
    /// Frame-1 anchor positions per row (origin included, origin-centered),
    /// which fix that row's gauge. `None` for rows whose first frame failed.
    pub reference_anchors: Vec<Option<PointSet>>,
}

impl RecoveredProjections {
    pub fn rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn frames(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_retained(&self, row: usize, frame: usize) -> bool {
        self.flags[(row, frame)] == EntryFlag::Ok
    }

    /// Column `frame` as a vector.
    pub fn frame(&self, frame: usize) -> Vec<Complex64> {
        self.y.column(frame).iter().copied().collect()
    }
}
