//! Simulated optical processing unit.
//!
//! The forward model is `b = w ⊙ Q(g |A x|^2 + dark)`: a complex Gaussian
//! transmission matrix `A`, an exposure gain `g`, an optional dark level, a
//! `b`-bit rounding quantizer and a sensitivity mask `w` that zeroes every
//! reading at or below the threshold `τ`.
//!
//! The solver only ever talks to the [`Opu`] trait; the transmission matrix
//! stays inside [`SimulatedOpu`].

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MprError, Result};
use crate::rng::rng_from_seed;
use crate::types::check_binary;
use crate::Complex64;

/// Hidden complex `M x N` matrix with iid entries `N(0,1) + j N(0,1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMatrix {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
    seed: u64,
}

const DUMP_MAGIC: &[u8; 4] = b"OPTM";
const DUMP_VERSION: u32 = 1;

impl TransmissionMatrix {
    pub fn draw(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(MprError::InvalidArgument(format!(
                "transmission matrix needs nonzero dimensions, got {m} x {n}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut re = DMatrix::zeros(m, n);
        let mut im = DMatrix::zeros(m, n);
        // row-major draw order so a matrix with more rows extends a smaller one
        for i in 0..m {
            for j in 0..n {
                re[(i, j)] = rng.sample(StandardNormal);
                im[(i, j)] = rng.sample(StandardNormal);
            }
        }
        Ok(Self { re, im, seed })
    }

    pub fn from_parts(re: DMatrix<f64>, im: DMatrix<f64>, seed: u64) -> Result<Self> {
        if re.shape() != im.shape() || re.is_empty() {
            return Err(MprError::Shape(format!(
                "real part {:?} and imaginary part {:?} must match and be nonempty",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im, seed })
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn real_part(&self) -> &DMatrix<f64> {
        &self.re
    }

    pub fn imag_part(&self) -> &DMatrix<f64> {
        &self.im
    }

    pub fn entry(&self, m: usize, n: usize) -> Complex64 {
        Complex64::new(self.re[(m, n)], self.im[(m, n)])
    }

    /// Exact complex projection `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> Vec<Complex64> {
        let re = &self.re * x;
        let im = &self.im * x;
        re.iter().zip(im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    /// Raw intensities `|A X|^2` for the inputs stacked as columns of `x`.
    pub fn raw_intensities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.cols() {
            return Err(MprError::Shape(format!(
                "inputs have length {}, transmission matrix expects {}",
                x.nrows(),
                self.cols()
            )));
        }
        let re = &self.re * x;
        let im = &self.im * x;
        Ok(re.component_mul(&re) + im.component_mul(&im))
    }

    /// Header `{magic, version, M, N, seed}` then row-major little-endian
    /// `f64` pairs `(re, im)`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.cols() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                w.write_all(&self.re[(i, j)].to_le_bytes())?;
                w.write_all(&self.im[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(MprError::Format(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DUMP_VERSION {
            return Err(MprError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let m = next_u64(&mut r)? as usize;
        let n = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let mut re = DMatrix::zeros(m, n);
        let mut im = DMatrix::zeros(m, n);
        let mut buf = [0u8; 8];
        for i in 0..m {
            for j in 0..n {
                r.read_exact(&mut buf)?;
                re[(i, j)] = f64::from_le_bytes(buf);
                r.read_exact(&mut buf)?;
                im[(i, j)] = f64::from_le_bytes(buf);
            }
        }
        Self::from_parts(re, im, seed)
    }
}

/// Camera model applied to raw intensities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    /// Quantizer bit depth; `None` disables quantization (infinite precision).
    pub bits: Option<u32>,
    /// Multiplier on raw intensity before quantization.
    pub exposure_gain: f64,
    /// Sensitivity threshold in camera units; `None` disables masking.
    pub threshold: Option<f64>,
    /// Inputs must be `{0,1}` vectors, as with a micro-mirror modulator.
    pub binary_mode: bool,
    /// Constant offset added before quantization (sensor dark level).
    pub dark_level: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { bits: Some(8), exposure_gain: 1.0, threshold: None, binary_mode: false, dark_level: 0.0 }
    }
}

impl CameraConfig {
    /// No quantization, no threshold, unit gain.
    pub fn noiseless() -> Self {
        Self { bits: None, ..Self::default() }
    }

    /// Largest quantizer output, `2^b - 1`.
    pub fn max_level(&self) -> Option<f64> {
        self.bits.map(max_level)
    }

    /// Camera reading for a raw intensity, before masking.
    pub fn quantize(&self, raw: f64) -> f64 {
        let scaled = self.exposure_gain * raw + self.dark_level;
        match self.bits {
            Some(b) => scaled.round().clamp(0.0, max_level(b)),
            None => scaled,
        }
    }

    /// `false` when the reading is at or below the sensitivity threshold.
    pub fn passes_threshold(&self, reading: f64) -> bool {
        match self.threshold {
            Some(tau) => reading > tau,
            None => true,
        }
    }
}

pub fn max_level(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// Camera output for one input vector: readings with masked entries zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub intensities: DVector<f64>,
    pub mask: Vec<bool>,
}

impl Measurement {
    fn from_raw(raw: impl Iterator<Item = f64>, cam: &CameraConfig) -> Self {
        let (intensities, mask): (Vec<f64>, Vec<bool>) = raw
            .map(|r| {
                let q = cam.quantize(r);
                if cam.passes_threshold(q) {
                    (q, true)
                } else {
                    (0.0, false)
                }
            })
            .unzip();
        Self { intensities: DVector::from_vec(intensities), mask }
    }
}

/// What the phase-retrieval pipeline may ask of a projector.
pub trait Opu: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Quantizer depth, `None` for an ideal sensor.
    fn bits(&self) -> Option<u32>;
    fn threshold(&self) -> Option<f64>;
    /// Whether inputs are restricted to `{0,1}^N`.
    fn binary_inputs(&self) -> bool;
    fn measure(&self, inputs: &[DVector<f64>]) -> Result<Vec<Measurement>>;
}

/// In-memory projector backed by a known transmission matrix.
#[derive(Clone, Debug)]
pub struct SimulatedOpu {
    pub matrix: TransmissionMatrix,
    pub camera: CameraConfig,
}

impl SimulatedOpu {
    pub fn new(matrix: TransmissionMatrix, camera: CameraConfig) -> Self {
        Self { matrix, camera }
    }
}

impl Opu for SimulatedOpu {
    fn input_dim(&self) -> usize {
        self.matrix.cols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.rows()
    }

    fn bits(&self) -> Option<u32> {
        self.camera.bits
    }

    fn threshold(&self) -> Option<f64> {
        self.camera.threshold
    }

    fn binary_inputs(&self) -> bool {
        self.camera.binary_mode
    }

    fn measure(&self, inputs: &[DVector<f64>]) -> Result<Vec<Measurement>> {
        measure_batch(&self.matrix, inputs, &self.camera)
    }
}

fn stack_inputs(a: &TransmissionMatrix, inputs: &[DVector<f64>], cam: &CameraConfig) -> Result<DMatrix<f64>> {
    let n = a.cols();
    for x in inputs {
        if x.len() != n {
            return Err(MprError::Shape(format!("input has length {}, expected {n}", x.len())));
        }
        if cam.binary_mode {
            check_binary(x)?;
        }
    }
    let mut stacked = DMatrix::zeros(n, inputs.len());
    for (j, x) in inputs.iter().enumerate() {
        stacked.set_column(j, x);
    }
    Ok(stacked)
}

/// Camera readings and mask for a single input.
pub fn measure_intensity(a: &TransmissionMatrix, x: &DVector<f64>, cam: &CameraConfig) -> Result<Measurement> {
    let mut out = measure_batch(a, std::slice::from_ref(x), cam)?;
    Ok(out.remove(0))
}

pub fn measure_batch(a: &TransmissionMatrix, inputs: &[DVector<f64>], cam: &CameraConfig) -> Result<Vec<Measurement>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let raw = a.raw_intensities(&stack_inputs(a, inputs, cam)?)?;
    Ok(raw.column_iter().map(|col| Measurement::from_raw(col.iter().copied(), cam)).collect())
}

/// Fraction of readings sitting at the top quantizer level `2^b - 1`.
pub fn check_saturation(intensities: &[f64], bits: u32) -> f64 {
    if intensities.is_empty() {
        return 0.0;
    }
    let top = max_level(bits);
    intensities.iter().filter(|&&v| v >= top).count() as f64 / intensities.len() as f64
}

/// Exposure gain for which the brightest probe reading quantizes to
/// `target_max`, found by bisection on the gain.
pub fn auto_exposure(a: &TransmissionMatrix, probes: &[DVector<f64>], cam: &CameraConfig, target_max: f64) -> Result<f64> {
    if probes.is_empty() {
        return Err(MprError::InvalidArgument("auto exposure needs at least one probe".into()));
    }
    if target_max <= 0.0 {
        return Err(MprError::InvalidArgument(format!("target level must be positive, got {target_max}")));
    }
    let raw = a.raw_intensities(&stack_inputs(a, probes, cam)?)?;
    exposure_for_peak(raw.max(), cam, target_max)
}

/// Bisection core of [`auto_exposure`], given the peak raw intensity.
pub fn exposure_for_peak(raw_peak: f64, cam: &CameraConfig, target_max: f64) -> Result<f64> {
    if !(raw_peak > 0.0) {
        return Err(MprError::NoExposure);
    }
    // aim at the center of the quantizer bin of `target_max`
    let residual = |g: f64| g * raw_peak + cam.dark_level - target_max;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while residual(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(MprError::NoExposure);
        }
    }
    if residual(lo) > 0.0 {
        return Err(MprError::InvalidArgument(format!(
            "dark level {} already exceeds target {target_max}",
            cam.dark_level
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Idealized additive quantization noise, uniform on
/// `[-κ / (2 (2^b - 1)), κ / (2 (2^b - 1))]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformNoise {
    half_width: f64,
}

impl UniformNoise {
    pub fn quantization(bits: u32, kappa: f64) -> Result<Self> {
        if bits == 0 || bits > 63 {
            return Err(MprError::InvalidArgument(format!("bit depth {bits} out of range")));
        }
        if !(kappa > 0.0) {
            return Err(MprError::InvalidArgument(format!("κ must be positive, got {kappa}")));
        }
        Ok(Self { half_width: kappa / (2.0 * max_level(bits)) })
    }

    pub fn support(&self) -> (f64, f64) {
        (-self.half_width, self.half_width)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(-self.half_width..=self.half_width)
    }
}
