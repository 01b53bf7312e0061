//! Quadrature conventions, spectral covariance matrices and entanglement measures.
//!
//! Quadratures are ordered `(X₁, Y₁, X₂, Y₂)` with mode 1 the signal and mode 2
//! the idler. The normalization is `X = a + a†`, `Y = −i(a − a†)`, so a vacuum
//! mode has unit variance in every quadrature and the two-mode vacuum spectrum
//! is the 4×4 identity. Under this convention the shot-noise limit of `X₁ ± X₂`
//! is 2.

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix4 = Matrix4<Complex64>;

/// Floor reported by [`to_db_rel_snl`] for a vanishing variance.
pub const DB_FLOOR: f64 = -99.0;

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const IMAG_RESIDUE_TOL: f64 = 1e-12;

/// Hermitian, positive semidefinite spectral covariance of the two-mode
/// quadratures at one analysis (sideband) frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCovariance {
    matrix: CMatrix4,
    analysis_frequency: f64,
}

impl SpectralCovariance {
    /// Validates `matrix` against the Hermitian / PSD / real-diagonal invariants.
    pub fn new(matrix: CMatrix4, analysis_frequency: f64) -> Result<Self> {
        validate(&matrix)?;
        Ok(Self {
            matrix,
            analysis_frequency,
        })
    }

    /// Builds from a real symmetric matrix, e.g. a textbook covariance.
    pub fn from_real(matrix: Matrix4<f64>, analysis_frequency: f64) -> Result<Self> {
        Self::new(matrix.map(|x| Complex64::new(x, 0.0)), analysis_frequency)
    }

    /// Symmetric two-mode squeezed (EPR) spectrum whose entangled combinations
    /// `X₁+X₂` and `Y₁−Y₂` have per-unit-SNL variance `squeezed` and whose
    /// conjugate combinations have `antisqueezed`.
    pub fn epr(squeezed: f64, antisqueezed: f64, analysis_frequency: f64) -> Result<Self> {
        let a = 0.5 * (squeezed + antisqueezed);
        let c = 0.5 * (squeezed - antisqueezed);
        #[rustfmt::skip]
        let m = Matrix4::new(
            a,   0.0, c,   0.0,
            0.0, a,   0.0, -c,
            c,   0.0, a,   0.0,
            0.0, -c,  0.0, a,
        );
        Self::from_real(m, analysis_frequency)
    }

    pub(crate) fn from_unchecked(matrix: CMatrix4, analysis_frequency: f64) -> Self {
        Self {
            matrix,
            analysis_frequency,
        }
    }

    pub fn matrix(&self) -> &CMatrix4 {
        &self.matrix
    }

    /// Sideband frequency Ω in MHz.
    pub fn analysis_frequency(&self) -> f64 {
        self.analysis_frequency
    }

    /// Smallest eigenvalue of the (Hermitian) matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.symmetric_eigenvalues().min()
    }
}

fn scale(m: &CMatrix4) -> f64 {
    m.iter().map(|z| z.norm()).fold(1.0, f64::max)
}

fn validate(m: &CMatrix4) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidSpectrum("non-finite entry".into()));
    }
    let s = scale(m);
    for i in 0..4 {
        for j in 0..4 {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            if d > HERMITIAN_TOL * s {
                return Err(Error::InvalidSpectrum(format!(
                    "not Hermitian at ({i},{j}): deviation {d:.3e}"
                )));
            }
        }
        if m[(i, i)].re < -PSD_TOL * s {
            return Err(Error::InvalidSpectrum(format!(
                "negative diagonal entry {} at {i}",
                m[(i, i)].re
            )));
        }
    }
    let lmin = m.symmetric_eigenvalues().min();
    if lmin < -PSD_TOL * s {
        return Err(Error::InvalidSpectrum(format!(
            "not positive semidefinite: smallest eigenvalue {lmin:.3e}"
        )));
    }
    Ok(())
}

fn hermitize(m: &CMatrix4) -> CMatrix4 {
    let mut h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    for i in 0..4 {
        h[(i, i)].im = 0.0;
    }
    h
}

/// Real linear combination of `(X₁, Y₁, X₂, Y₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadCombination {
    coefficients: [f64; 4],
}

impl QuadCombination {
    pub const fn new(coefficients: [f64; 4]) -> Self {
        Self { coefficients }
    }

    /// Amplitude sum `X₁ + X₂`.
    pub const fn x_sum() -> Self {
        Self::new([1.0, 0.0, 1.0, 0.0])
    }

    /// Amplitude difference `X₁ − X₂`.
    pub const fn x_diff() -> Self {
        Self::new([1.0, 0.0, -1.0, 0.0])
    }

    /// Phase sum `Y₁ + Y₂`.
    pub const fn y_sum() -> Self {
        Self::new([0.0, 1.0, 0.0, 1.0])
    }

    /// Phase difference `Y₁ − Y₂`.
    pub const fn y_diff() -> Self {
        Self::new([0.0, 1.0, 0.0, -1.0])
    }

    pub fn coefficients(&self) -> [f64; 4] {
        self.coefficients
    }

    /// Shot-noise variance of this combination: the sum of squared coefficients.
    pub fn snl(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.coefficients.map(|c| c * k))
    }
}

/// Two independent vacuum modes: the identity spectrum.
pub fn vacuum_spectrum(analysis_frequency: f64) -> SpectralCovariance {
    SpectralCovariance::from_unchecked(CMatrix4::identity(), analysis_frequency)
}

/// Variance `cᵀ S c` of a real quadrature combination.
pub fn combination_variance(s: &SpectralCovariance, c: &QuadCombination) -> Result<f64> {
    let m = &s.matrix;
    let k = c.coefficients;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            acc += m[(i, j)] * (k[i] * k[j]);
        }
    }
    if acc.im.abs() > IMAG_RESIDUE_TOL * scale(m).max(acc.re.abs()) {
        return Err(Error::InvalidSpectrum(format!(
            "quadratic form has imaginary residue {:.3e}",
            acc.im
        )));
    }
    Ok(acc.re.max(0.0))
}

/// `10·log₁₀(variance / snl)`; negative values are squeezed below the SNL.
/// A zero variance, or anything below the floor, reports [`DB_FLOOR`].
pub fn to_db_rel_snl(variance: f64, snl: f64) -> Result<f64> {
    if !(snl > 0.0) {
        return Err(Error::param("snl", format!("must be positive, got {snl}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::param(
            "variance",
            format!("must be non-negative, got {variance}"),
        ));
    }
    if variance == 0.0 {
        return Ok(DB_FLOOR);
    }
    Ok((10.0 * (variance / snl).log10()).max(DB_FLOOR))
}

/// Duan sum `⟨δ²(X₁+X₂)⟩ + ⟨δ²(Y₁−Y₂)⟩`; values below 4 certify inseparability.
pub fn duan_value(s: &SpectralCovariance) -> Result<f64> {
    Ok(combination_variance(s, &QuadCombination::x_sum())? + combination_variance(s, &QuadCombination::y_diff())?)
}

/// Duan sum for the conjugate sign convention, `⟨δ²(X₁−X₂)⟩ + ⟨δ²(Y₁+Y₂)⟩`.
pub fn duan_value_conjugate(s: &SpectralCovariance) -> Result<f64> {
    Ok(combination_variance(s, &QuadCombination::x_diff())? + combination_variance(s, &QuadCombination::y_sum())?)
}

/// Propagates a spectrum through a linear frequency-domain map,
/// `T·S·T† + Σ_k L_k·L_k†`, with every auxiliary port in vacuum.
pub fn apply_transfer(
    transfer: &CMatrix4,
    s_in: &SpectralCovariance,
    noise_couplings: &[CMatrix4],
) -> Result<SpectralCovariance> {
    let mut out = transfer * s_in.matrix * transfer.adjoint();
    for l in noise_couplings {
        out += l * l.adjoint();
    }
    SpectralCovariance::new(hermitize(&out), s_in.analysis_frequency)
}

/// Which of the two modes a local operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Signal,
    Idler,
}

impl Mode {
    /// Offset of the mode's `X` quadrature in the `(X₁, Y₁, X₂, Y₂)` ordering.
    pub fn offset(self) -> usize {
        match self {
            Mode::Signal => 0,
            Mode::Idler => 2,
        }
    }
}

impl TryFrom<u8> for Mode {
    type Error = Error;

    fn try_from(index: u8) -> Result<Self> {
        match index {
            1 => Ok(Mode::Signal),
            2 => Ok(Mode::Idler),
            other => Err(Error::InvalidMode(other)),
        }
    }
}

/// Phase-space rotation of both modes, `a_k → a_k·e^{−iφ_k}`.
pub fn rotation_matrix(angles: [f64; 2]) -> Matrix4<f64> {
    let mut r = Matrix4::zeros();
    for (k, phi) in angles.into_iter().enumerate() {
        let (s, c) = phi.sin_cos();
        let o = 2 * k;
        r[(o, o)] = c;
        r[(o, o + 1)] = s;
        r[(o + 1, o)] = -s;
        r[(o + 1, o + 1)] = c;
    }
    r
}

/// Rotates the `(X, Y)` quadratures of one mode by `angle` radians.
pub fn rotate_mode(s: &SpectralCovariance, mode: Mode, angle: f64) -> Result<SpectralCovariance> {
    let angles = match mode {
        Mode::Signal => [angle, 0.0],
        Mode::Idler => [0.0, angle],
    };
    let r = rotation_matrix(angles).map(|x| Complex64::new(x, 0.0));
    apply_transfer(&r, s, &[])
}
