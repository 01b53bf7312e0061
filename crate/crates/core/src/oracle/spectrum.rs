//! Segment-averaged periodogram evaluated at individual analysis frequencies.
//!
//! Samples are normalized so that unit-intensity white noise has unit
//! per-sample variance; the estimator is scaled by the window energy, so such
//! a series has spectral density 1 at every frequency. Segments do not
//! overlap, which keeps the per-segment values independent and makes the
//! scatter-based standard error honest.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::QuadCombination;

/// Minimum number of complete segments for a spectral estimate.
pub const MIN_SEGMENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Rect,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| {
                    let s = (PI * (i as f64 + 0.5) / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

/// Mean spectral density with the standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumEstimate {
    pub value: f64,
    pub std_error: f64,
    pub segments: usize,
}

impl SpectrumEstimate {
    /// Number of standard errors separating this estimate from `expected`.
    pub fn z_score(&self, expected: f64) -> f64 {
        (self.value - expected) / self.std_error
    }
}

/// Streaming accumulator of windowed single-frequency DFTs of the four
/// quadratures, one record per completed segment.
#[derive(Debug, Clone)]
pub struct SegmentDft {
    frequencies: Vec<f64>,
    /// Window times twiddle, one table per frequency.
    kernels: Vec<Vec<Complex64>>,
    window_energy: f64,
    position: usize,
    current: Vec<[Complex64; 4]>,
    /// `segments[k][f]` holds the DFT of segment `k` at frequency `f`.
    segments: Vec<Vec<[Complex64; 4]>>,
}

impl SegmentDft {
    /// `frequencies` in MHz, `time_step` in seconds.
    pub fn new(frequencies: &[f64], time_step: f64, segment_length: usize, window: Window) -> Result<Self> {
        if segment_length < 2 {
            return Err(Error::param("segment_length", "must be at least 2"));
        }
        if !(time_step > 0.0) {
            return Err(Error::param("time_step", "must be positive"));
        }
        let w = window.weights(segment_length);
        let window_energy = w.iter().map(|x| x * x).sum();
        let kernels = frequencies
            .iter()
            .map(|&f| {
                let step = 2.0 * PI * f * 1e6 * time_step;
                w.iter()
                    .enumerate()
                    .map(|(n, &wn)| Complex64::from_polar(wn, -step * n as f64))
                    .collect()
            })
            .collect();
        Ok(Self {
            frequencies: frequencies.to_vec(),
            kernels,
            window_energy,
            position: 0,
            current: vec![[Complex64::default(); 4]; frequencies.len()],
            segments: Vec::new(),
        })
    }

    pub fn segment_length(&self) -> usize {
        self.kernels.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn push(&mut self, sample: &[f64; 4]) {
        let n = self.position;
        for (acc, kernel) in self.current.iter_mut().zip(&self.kernels) {
            let k = kernel[n];
            for q in 0..4 {
                acc[q] += k * sample[q];
            }
        }
        self.position += 1;
        if self.position == self.segment_length() {
            self.segments.push(std::mem::replace(
                &mut self.current,
                vec![[Complex64::default(); 4]; self.frequencies.len()],
            ));
            self.position = 0;
        }
    }

    /// Appends the completed segments of `other`; partial segments are dropped.
    pub fn merge(&mut self, other: SegmentDft) {
        self.segments.extend(other.segments);
    }

    pub fn completed_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Spectral density of `combination`, normalized by its shot-noise level,
    /// at the `index`-th frequency.
    pub fn estimate(&self, index: usize, combination: &QuadCombination) -> Result<SpectrumEstimate> {
        let k = self.segments.len();
        if k < MIN_SEGMENTS {
            return Err(Error::SeriesTooShort {
                have: k * self.segment_length() + self.position,
                need: MIN_SEGMENTS * self.segment_length(),
            });
        }
        let c = combination.coefficients();
        let norm = self.window_energy * combination.snl();
        let values: Vec<f64> = self
            .segments
            .iter()
            .map(|seg| {
                let f = &seg[index];
                let z: Complex64 = (0..4).map(|q| f[q] * c[q]).sum();
                z.norm_sqr() / norm
            })
            .collect();
        let mean = values.iter().sum::<f64>() / k as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        Ok(SpectrumEstimate {
            value: mean,
            std_error: (var / k as f64).sqrt(),
            segments: k,
        })
    }
}

/// Sampled quadratures `(X₁, Y₁, X₂, Y₂)`, scaled so vacuum has unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Seconds between samples.
    pub time_step: f64,
    pub samples: Vec<[f64; 4]>,
}

/// Welch-style estimate of the normalized spectral density of `combination`
/// at `analysis_frequency` (MHz), pooling the segments of every series.
pub fn estimate_spectrum(
    series: &[TimeSeries],
    analysis_frequency: f64,
    segment_length: usize,
    window: Window,
    combination: &QuadCombination,
) -> Result<SpectrumEstimate> {
    let dt = series.first().map(|s| s.time_step).ok_or(Error::SeriesTooShort {
        have: 0,
        need: MIN_SEGMENTS * segment_length,
    })?;
    if series.iter().any(|s| s.time_step != dt) {
        return Err(Error::param("time_step", "series must share one sampling step"));
    }
    let mut dft = SegmentDft::new(&[analysis_frequency], dt, segment_length, window)?;
    for s in series {
        let mut part = SegmentDft::new(&[analysis_frequency], dt, segment_length, window)?;
        s.samples.iter().for_each(|x| part.push(x));
        dft.merge(part);
    }
    dft.estimate(0, combination)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white(n: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        TimeSeries {
            time_step: 1e-9,
            samples,
        }
    }

    #[test]
    fn white_noise_is_flat_at_unity() {
        let s = [white(256 * 400, 7)];
        for window in [Window::Rect, Window::Hann] {
            for f in [0.0, 3.0, 50.0, 120.0] {
                for c in [
                    QuadCombination::x_sum(),
                    QuadCombination::y_diff(),
                    QuadCombination::new([0.0, 2.0, 0.0, 0.0]),
                ] {
                    let e = estimate_spectrum(&s, f, 256, window, &c).unwrap();
                    assert_eq!(e.segments, 400);
                    // DC bin of a real signal is χ²₁, elsewhere χ²₂
                    assert!(e.z_score(1.0).abs() < 4.0, "{window:?} {f} {e:?}");
                    assert!(e.std_error < 0.08);
                }
            }
        }
    }

    #[test]
    fn detects_a_coloured_spectrum() {
        // AR(1) with coefficient 0.9 sampled at 1 ns: S(0) = 1/(1-0.9)² in units of the innovation
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = 0.0;
        let samples: Vec<[f64; 4]> = (0..512 * 300)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.9 * x + e;
                [x, 0.0, 0.0, 0.0]
            })
            .collect();
        let s = [TimeSeries {
            time_step: 1e-9,
            samples,
        }];
        let e = estimate_spectrum(&s, 0.5, 512, Window::Hann, &QuadCombination::new([1.0, 0.0, 0.0, 0.0])).unwrap();
        let w = 2.0 * PI * 0.5e6 * 1e-9;
        let expected = 1.0 / (1.0 - 2.0 * 0.9 * w.cos() + 0.81);
        assert!(e.z_score(expected).abs() < 4.0, "{e:?} vs {expected}");
    }

    #[test]
    fn too_few_segments() {
        let s = [white(200, 1)];
        let err = estimate_spectrum(&s, 1.0, 100, Window::Hann, &QuadCombination::x_sum()).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { .. }));
        assert!(estimate_spectrum(&[], 1.0, 100, Window::Hann, &QuadCombination::x_sum()).is_err());
    }
}
