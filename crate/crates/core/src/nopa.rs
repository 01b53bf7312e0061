//! Single sub-threshold type-II parametric amplifier cavity.
//!
//! The two frequency-degenerate, polarization-distinct modes `a₁` (signal) and
//! `a₂` (idler) are handled in the superposition basis `d± = (a₁ ± a₂)/√2`,
//! where the non-degenerate interaction splits into two independent degenerate
//! squeezers with opposite pump sign. Public quantities are in ordinary
//! frequency (MHz); the drift matrix and transfer functions are built from
//! angular rates (rad/µs).

use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::{apply_transfer, CMatrix4, SpectralCovariance};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const MAX_CONDITION: f64 = 1e12;

/// Ordinary frequency in MHz to angular frequency in rad/µs.
#[inline]
pub fn angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Standing-wave cavity; the geometric length is one-way.
    Linear,
    /// Travelling-wave cavity; the geometric length is the full perimeter.
    Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityGeometry {
    pub topology: Topology,
    /// Meters.
    pub geometric_length: f64,
    /// Meters.
    pub crystal_length: f64,
    pub crystal_index: f64,
    /// Output-coupler power transmission at the subharmonic.
    pub coupler_transmission: f64,
    pub finesse: f64,
}

impl CavityGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.geometric_length > 0.0) {
            return Err(Error::param("geometric_length", "must be positive"));
        }
        if !(self.crystal_length > 0.0) || self.crystal_length > self.geometric_length {
            return Err(Error::param(
                "crystal_length",
                "must be positive and no longer than the cavity",
            ));
        }
        if !(self.crystal_index >= 1.0) {
            return Err(Error::param("crystal_index", "must be at least 1"));
        }
        if !(self.coupler_transmission > 0.0 && self.coupler_transmission < 1.0) {
            return Err(Error::param("coupler_transmission", "must lie in (0, 1)"));
        }
        if !(self.finesse > 1.0) || !self.finesse.is_finite() {
            return Err(Error::param("finesse", "must be finite and greater than 1"));
        }
        let total_loss = 2.0 * PI / self.finesse;
        if total_loss < self.coupler_transmission {
            return Err(Error::InconsistentGeometry {
                escape_efficiency: self.coupler_transmission / total_loss,
                transmission: self.coupler_transmission,
                total_loss,
            });
        }
        Ok(())
    }

    /// Round-trip optical path length in meters.
    pub fn optical_round_trip(&self) -> f64 {
        let passes = match self.topology {
            Topology::Linear => 2.0,
            Topology::Ring => 1.0,
        };
        passes * (self.geometric_length - self.crystal_length) + passes * self.crystal_length * self.crystal_index
    }
}

/// Cavity decay rates, all half-widths in ordinary frequency (MHz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRates {
    pub fsr: f64,
    /// Seconds.
    pub round_trip_time: f64,
    pub gamma_total: f64,
    pub gamma_coupler: f64,
    pub gamma_loss: f64,
    pub escape_efficiency: f64,
}

impl DecayRates {
    /// Rates from a free spectral range, a total HWHM decay rate and an escape
    /// efficiency.
    pub fn from_decay(fsr: f64, gamma_total: f64, escape_efficiency: f64) -> Result<Self> {
        if !(fsr > 0.0) {
            return Err(Error::param("fsr", "must be positive"));
        }
        if !(gamma_total > 0.0) || !gamma_total.is_finite() {
            return Err(Error::param("gamma_total", "must be positive"));
        }
        if !(escape_efficiency > 0.0 && escape_efficiency <= 1.0) {
            return Err(Error::param("escape_efficiency", "must lie in (0, 1]"));
        }
        let gamma_coupler = escape_efficiency * gamma_total;
        Ok(Self {
            fsr,
            round_trip_time: 1.0 / (fsr * 1e6),
            gamma_total,
            gamma_coupler,
            gamma_loss: gamma_total - gamma_coupler,
            escape_efficiency,
        })
    }

    /// Full width at half maximum of the cavity resonance, MHz.
    pub fn linewidth_fwhm(&self) -> f64 {
        2.0 * self.gamma_total
    }

    /// Same linewidth with a different split between coupler and loss ports.
    pub fn with_escape_efficiency(&self, escape_efficiency: f64) -> Result<Self> {
        Self::from_decay(self.fsr, self.gamma_total, escape_efficiency)
    }
}

/// Free spectral range, linewidth and escape efficiency of a cavity.
///
/// The total round-trip loss implied by the finesse is `2π/F`, so the HWHM
/// decay rate is `FSR/(2F)` and the output-coupler share of it is
/// `T·F/(2π)`.
pub fn derive_rates(g: &CavityGeometry) -> Result<DecayRates> {
    g.validate()?;
    let fsr = SPEED_OF_LIGHT / g.optical_round_trip() / 1e6;
    let gamma_total = fsr / (2.0 * g.finesse);
    let escape = g.coupler_transmission * g.finesse / (2.0 * PI);
    if escape > 1.0 {
        return Err(Error::InconsistentGeometry {
            escape_efficiency: escape,
            transmission: g.coupler_transmission,
            total_loss: 2.0 * PI / g.finesse,
        });
    }
    DecayRates::from_decay(fsr, gamma_total, escape)
}

/// Normalized pump amplitude `σ = √(P/P_th)` below threshold.
pub fn pump_amplitude(pump_power: f64, threshold_power: f64) -> Result<f64> {
    if !(threshold_power > 0.0) {
        return Err(Error::param("threshold_power", "must be positive"));
    }
    if !(pump_power >= 0.0) {
        return Err(Error::param("pump_power", "must be non-negative"));
    }
    if pump_power >= threshold_power {
        return Err(Error::AboveThreshold {
            pump_mw: pump_power,
            threshold_mw: threshold_power,
        });
    }
    Ok((pump_power / threshold_power).sqrt())
}

/// Operating point of one amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NopaParams {
    pub rates: DecayRates,
    /// Pump amplitude relative to threshold, in `[0, 1)`.
    pub sigma: f64,
    /// Relative pump phase: 0 amplifies the injected amplitude, π de-amplifies it.
    pub pump_phase: f64,
    /// Common detuning of signal and idler from resonance, MHz.
    pub detuning: f64,
}

impl NopaParams {
    pub fn new(rates: DecayRates, sigma: f64, pump_phase: f64, detuning: f64) -> Result<Self> {
        let p = Self {
            rates,
            sigma,
            pump_phase,
            detuning,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::param(
                "sigma",
                format!("below threshold required: 0 <= sigma < 1, got {}", self.sigma),
            ));
        }
        if !self.pump_phase.is_finite() {
            return Err(Error::param("pump_phase", "must be finite"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::param("detuning", "must be finite"));
        }
        Ok(())
    }
}

/// Orthogonal change of basis from `(X₁, Y₁, X₂, Y₂)` to `(X₊, Y₊, X₋, Y₋)`.
/// It is its own inverse.
pub fn superposition_basis() -> Matrix4<f64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    #[rustfmt::skip]
    let u = Matrix4::new(
        h,   0.0, h,   0.0,
        0.0, h,   0.0, h,
        h,   0.0, -h,  0.0,
        0.0, h,   0.0, -h,
    );
    u
}

/// Linearized drift of `(X₊, Y₊, X₋, Y₋)` in rad/µs.
pub fn drift_matrix(p: &NopaParams) -> Matrix4<f64> {
    let gamma = angular(p.rates.gamma_total);
    let eps = p.sigma * gamma;
    let delta = angular(p.detuning);
    let (s, c) = p.pump_phase.sin_cos();
    let mut m = Matrix4::zeros();
    for (block, sign) in [(0usize, 1.0), (2usize, -1.0)] {
        m[(block, block)] = -gamma + sign * eps * c;
        m[(block, block + 1)] = delta + sign * eps * s;
        m[(block + 1, block)] = -delta + sign * eps * s;
        m[(block + 1, block + 1)] = -gamma - sign * eps * c;
    }
    m
}

/// Drift matrix expressed in the lab quadrature basis.
pub fn drift_matrix_lab(p: &NopaParams) -> Matrix4<f64> {
    let u = superposition_basis();
    u.transpose() * drift_matrix(p) * u
}

fn to_complex(m: &Matrix4<f64>) -> CMatrix4 {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Input-to-output and intracavity-loss-to-output transfer matrices at the
/// sideband frequency `analysis_frequency` (MHz), in the lab basis.
pub fn transfer_matrices(p: &NopaParams, analysis_frequency: f64) -> Result<(CMatrix4, CMatrix4)> {
    p.validate()?;
    let omega = angular(analysis_frequency);
    let m = to_complex(&drift_matrix(p));
    let resolvent_inv = CMatrix4::identity() * Complex64::new(0.0, -omega) - m;
    let sv = resolvent_inv.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let a = resolvent_inv
        .try_inverse()
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    let gc = angular(p.rates.gamma_coupler);
    let gl = angular(p.rates.gamma_loss);
    let t_in = a * Complex64::new(2.0 * gc, 0.0) - CMatrix4::identity();
    let t_loss = a * Complex64::new(2.0 * (gc * gl).sqrt(), 0.0);
    let u = to_complex(&superposition_basis());
    Ok((u * t_in * u, u * t_loss * u))
}

/// Spectrum reflected by the cavity for the injected spectrum `s_in`.
pub fn output_spectrum(p: &NopaParams, s_in: &SpectralCovariance) -> Result<SpectralCovariance> {
    let (t_in, t_loss) = transfer_matrices(p, s_in.analysis_frequency())?;
    apply_transfer(&t_in, s_in, &[t_loss])
}

/// Textbook resonant spectrum for vacuum injection, per unit SNL:
/// `(squeezed, antisqueezed)`.
pub fn resonant_closed_form(rates: &DecayRates, sigma: f64, analysis_frequency: f64) -> (f64, f64) {
    let eta = rates.escape_efficiency;
    let w = analysis_frequency / rates.gamma_total;
    let w2 = w * w;
    let sq = 1.0 - eta * 4.0 * sigma / ((1.0 + sigma).powi(2) + w2);
    let anti = 1.0 + eta * 4.0 * sigma / ((1.0 - sigma).powi(2) + w2);
    (sq, anti)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{combination_variance, vacuum_spectrum, QuadCombination};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    pub(crate) fn nopa1() -> CavityGeometry {
        CavityGeometry {
            topology: Topology::Linear,
            geometric_length: 0.051,
            crystal_length: 0.010,
            crystal_index: 1.83,
            coupler_transmission: 0.032,
            finesse: 165.0,
        }
    }

    pub(crate) fn nopa2() -> CavityGeometry {
        CavityGeometry {
            topology: Topology::Ring,
            geometric_length: 0.557,
            crystal_length: 0.010,
            crystal_index: 1.83,
            coupler_transmission: 0.035,
            finesse: 153.0,
        }
    }

    #[test]
    fn nopa2_rates() {
        let r = derive_rates(&nopa2()).unwrap();
        // c / (0.547 + 0.0183) m
        assert_abs_diff_eq!(r.fsr, 530.32, epsilon = 0.01);
        assert_abs_diff_eq!(r.linewidth_fwhm(), 3.466, epsilon = 0.001);
        assert_abs_diff_eq!(r.escape_efficiency, 0.8523, epsilon = 1e-4);
        assert_relative_eq!(r.gamma_coupler + r.gamma_loss, r.gamma_total, max_relative = 1e-12);
        assert_relative_eq!(r.round_trip_time, 1.0 / (r.fsr * 1e6));
    }

    #[test]
    fn nopa1_rates() {
        let r = derive_rates(&nopa1()).unwrap();
        // c / (2·0.041 + 2·0.0183) m
        assert_abs_diff_eq!(r.fsr, 2527.76, epsilon = 0.01);
        assert_abs_diff_eq!(r.gamma_total, 7.660, epsilon = 1e-3);
        assert_abs_diff_eq!(r.escape_efficiency, 0.8403, epsilon = 1e-4);
    }

    #[test]
    fn high_finesse_is_inconsistent() {
        let mut g = nopa2();
        g.finesse = 1e6;
        assert!(matches!(derive_rates(&g), Err(Error::InconsistentGeometry { .. })));
        g.finesse = f64::INFINITY;
        assert!(derive_rates(&g).is_err());
    }

    #[test]
    fn geometry_validation() {
        let mut g = nopa1();
        g.coupler_transmission = 1.0;
        assert!(derive_rates(&g).is_err());
        let mut g = nopa1();
        g.crystal_length = 0.2;
        assert!(derive_rates(&g).is_err());
        let mut g = nopa1();
        g.finesse = 1.0;
        assert!(derive_rates(&g).is_err());
    }

    #[test]
    fn pump_amplitude_cases() {
        assert_eq!(pump_amplitude(0.0, 200.0).unwrap(), 0.0);
        assert_abs_diff_eq!(pump_amplitude(120.0, 200.0).unwrap(), 0.7746, epsilon = 1e-4);
        assert!(matches!(
            pump_amplitude(200.0, 200.0),
            Err(Error::AboveThreshold { .. })
        ));
        assert!(pump_amplitude(10.0, 0.0).is_err());
    }

    #[test]
    fn sigma_must_be_below_threshold() {
        let r = derive_rates(&nopa1()).unwrap();
        let err = NopaParams::new(r, 1.2, PI, 0.0).unwrap_err();
        assert!(err.to_string().contains("below threshold required"));
        assert!(NopaParams::new(r, 1.0, PI, 0.0).is_err());
        assert!(NopaParams::new(r, -0.1, PI, 0.0).is_err());
    }

    #[test]
    fn empty_cavity_drift() {
        let r = derive_rates(&nopa2()).unwrap();
        let p = NopaParams::new(r, 0.0, 0.3, 0.0).unwrap();
        let m = drift_matrix(&p);
        assert_abs_diff_eq!(
            (m + Matrix4::identity() * angular(r.gamma_total)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pump_phase_swaps_decay_channels() {
        let r = derive_rates(&nopa1()).unwrap();
        let g = angular(r.gamma_total);
        let s = 0.7746;
        let deamp = drift_matrix(&NopaParams::new(r, s, PI, 0.0).unwrap());
        let amp = drift_matrix(&NopaParams::new(r, s, 0.0, 0.0).unwrap());
        assert_abs_diff_eq!(deamp[(0, 0)], -g * (1.0 + s), epsilon = 1e-9);
        assert_abs_diff_eq!(deamp[(1, 1)], -g * (1.0 - s), epsilon = 1e-9);
        assert_abs_diff_eq!(amp[(0, 0)], -g * (1.0 - s), epsilon = 1e-9);
        assert_abs_diff_eq!(amp[(1, 1)], -g * (1.0 + s), epsilon = 1e-9);
        // Δ = 0 leaves each 2×2 block diagonal, so diagonal entries are eigenvalues.
        assert_abs_diff_eq!(deamp[(0, 1)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(deamp[(1, 0)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn resonant_lossless_empty_cavity_is_identity() {
        let r = DecayRates::from_decay(500.0, 2.0, 1.0).unwrap();
        let p = NopaParams::new(r, 0.0, 0.0, 0.0).unwrap();
        let (t, l) = transfer_matrices(&p, 0.0).unwrap();
        assert_abs_diff_eq!((t - CMatrix4::identity()).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn passive_transfer_conserves_flux() {
        for (escape, det, f) in [(1.0, 0.0, 0.0), (1.0, 3.0, 2.5), (0.85, -4.0, 1.0), (0.3, 7.0, 9.0)] {
            let r = DecayRates::from_decay(500.0, 1.7, escape).unwrap();
            let p = NopaParams::new(r, 0.0, 1.0, det).unwrap();
            let (t, l) = transfer_matrices(&p, f).unwrap();
            let flux = t * t.adjoint() + l * l.adjoint();
            assert_abs_diff_eq!((flux - CMatrix4::identity()).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_examples() {
        let r = derive_rates(&nopa1()).unwrap();
        assert_eq!(resonant_closed_form(&r, 0.0, 3.0), (1.0, 1.0));
        let ideal = DecayRates::from_decay(500.0, 2.0, 1.0).unwrap();
        assert!(resonant_closed_form(&ideal, 0.999999, 0.0).0 < 1e-10);
        let (sq, _) = resonant_closed_form(&r, 0.7746, 3.0);
        assert_abs_diff_eq!(sq, 0.212, epsilon = 1e-3);
        assert_abs_diff_eq!(10.0 * sq.log10(), -6.74, epsilon = 0.01);
    }

    #[test]
    fn vacuum_injection_matches_closed_form() {
        let r = derive_rates(&nopa1()).unwrap();
        let p = NopaParams::new(r, 0.7746, PI, 0.0).unwrap();
        let out = output_spectrum(&p, &vacuum_spectrum(3.0)).unwrap();
        let (sq, anti) = resonant_closed_form(&r, 0.7746, 3.0);
        let xs = combination_variance(&out, &QuadCombination::x_sum()).unwrap() / 2.0;
        let ys = combination_variance(&out, &QuadCombination::y_sum()).unwrap() / 2.0;
        assert_relative_eq!(xs, sq, max_relative = 1e-10);
        assert_relative_eq!(ys, anti, max_relative = 1e-10);
    }

    #[test]
    fn far_detuned_cavity_reflects_input() {
        let r = derive_rates(&nopa2()).unwrap();
        // minimum-uncertainty EPR input at -2.4 dB
        let s_in = SpectralCovariance::epr(0.575, 1.0 / 0.575, 3.0).unwrap();
        for det in [100.0, -100.0] {
            let p = NopaParams::new(r, 0.5, PI, det * r.gamma_total).unwrap();
            let out = output_spectrum(&p, &s_in).unwrap();
            for c in [
                QuadCombination::x_sum(),
                QuadCombination::y_diff(),
                QuadCombination::x_diff(),
                QuadCombination::y_sum(),
            ] {
                let a = combination_variance(&out, &c).unwrap();
                let b = combination_variance(&s_in, &c).unwrap();
                assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
            }
        }
    }
}
