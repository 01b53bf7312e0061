//! Time-domain Monte Carlo of the same linear chain, used to cross-check the
//! frequency-domain engine.
//!
//! Each amplifier integrates `dv = M v dt + √(2γ_c) dW_in + √(2γ_l) dW_loss`
//! with Euler–Maruyama in the symmetrized (vacuum = unit white noise)
//! convention. Its output is `√(2γ_c)·v̄ − ξ_in`, with `v̄` the mean of the
//! state before and after the step. Loss elements mix in fresh vacuum noise
//! sample by sample, so a cascade feeds the upstream output series straight
//! into the next cavity.
//!
//! Trajectory `k` draws from a ChaCha8 stream selected by `k` under the run
//! seed, so results do not depend on how trajectories are scheduled.

pub mod spectrum;

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{Element, NetworkChain, Source};
use crate::nopa::{angular, drift_matrix_lab};
use crate::quad::rotation_matrix;

pub use spectrum::{estimate_spectrum, SegmentDft, SpectrumEstimate, TimeSeries, Window};

/// Default step as a fraction of the fastest drift timescale.
pub const DEFAULT_STEP_FRACTION: f64 = 0.01;
/// Largest step allowed, as a fraction of the fastest drift timescale.
pub const MAX_STEP_FRACTION: f64 = 0.02;
/// Shortest run allowed, in units of the slowest decay time.
pub const MIN_DURATION_DECAYS: f64 = 200.0;
/// Default spectral segment, in units of the slowest decay time.
pub const DEFAULT_SEGMENT_DECAYS: f64 = 50.0;
pub const DEFAULT_SEGMENTS_PER_TRAJECTORY: usize = 100;
pub const DEFAULT_TRAJECTORIES: usize = 4;

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub chain: NetworkChain,
    /// Seconds.
    pub time_step: f64,
    /// Seconds, per trajectory.
    pub duration: f64,
    pub rng_seed: u64,
    pub n_trajectories: usize,
}

/// Fastest and slowest drift rates over every amplifier in a chain, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBounds {
    /// Largest eigenvalue modulus.
    pub gamma_max: f64,
    /// Smallest decay rate (negated real part).
    pub gamma_min: f64,
}

fn drift_eigenvalues(chain: &NetworkChain) -> Vec<Complex64> {
    chain
        .elements
        .iter()
        .filter_map(|e| match &e.element {
            Element::Nopa(p) => Some(p),
            _ => None,
        })
        .flat_map(|p| {
            let m = drift_matrix_lab(p) * 1e6;
            m.complex_eigenvalues().iter().copied().collect::<Vec<_>>()
        })
        .collect()
}

pub fn rate_bounds(chain: &NetworkChain) -> Result<RateBounds> {
    let eig = drift_eigenvalues(chain);
    if eig.is_empty() {
        return Err(Error::Simulation("chain contains no amplifier".into()));
    }
    Ok(RateBounds {
        gamma_max: eig.iter().map(|l| l.norm()).fold(0.0, f64::max),
        gamma_min: eig.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min),
    })
}

impl SimulationRun {
    /// Run sized from the chain's drift rates: step `0.01/γ_max`,
    /// [`DEFAULT_SEGMENTS_PER_TRAJECTORY`] segments of `50/γ_min` each.
    pub fn with_defaults(chain: NetworkChain, rng_seed: u64) -> Result<Self> {
        let b = rate_bounds(&chain)?;
        let time_step = DEFAULT_STEP_FRACTION / b.gamma_max;
        let segment = DEFAULT_SEGMENT_DECAYS / b.gamma_min;
        Ok(Self {
            chain,
            time_step,
            duration: segment * DEFAULT_SEGMENTS_PER_TRAJECTORY as f64,
            rng_seed,
            n_trajectories: DEFAULT_TRAJECTORIES,
        })
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.time_step).round() as usize
    }

    /// Samples per spectral segment of `50/γ_min`.
    pub fn default_segment_length(&self) -> Result<usize> {
        let b = rate_bounds(&self.chain)?;
        Ok((DEFAULT_SEGMENT_DECAYS / b.gamma_min / self.time_step).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        if !matches!(self.chain.source, Source::Vacuum) {
            return Err(Error::Simulation("only a vacuum source can be sampled".into()));
        }
        if self.chain.electronic_noise_db.is_some() {
            return Err(Error::Simulation("electronic noise floor is not simulated".into()));
        }
        if self.n_trajectories < 1 {
            return Err(Error::Simulation("need at least one trajectory".into()));
        }
        let b = rate_bounds(&self.chain)?;
        if !(self.time_step > 0.0) || self.time_step > MAX_STEP_FRACTION / b.gamma_max * (1.0 + 1e-12) {
            return Err(Error::Simulation(format!(
                "time step {:.3e} s exceeds {MAX_STEP_FRACTION}/γ_max = {:.3e} s",
                self.time_step,
                MAX_STEP_FRACTION / b.gamma_max
            )));
        }
        if self.duration < MIN_DURATION_DECAYS / b.gamma_min * (1.0 - 1e-12) {
            return Err(Error::Simulation(format!(
                "duration {:.3e} s is shorter than {MIN_DURATION_DECAYS}/γ_min = {:.3e} s",
                self.duration,
                MIN_DURATION_DECAYS / b.gamma_min
            )));
        }
        for l in drift_eigenvalues(&self.chain) {
            let g = Complex64::new(1.0, 0.0) + l * self.time_step;
            if g.norm() >= 1.0 {
                return Err(Error::Simulation(format!(
                    "unstable step: |1 + λ·dt| = {:.6} for λ = {l:.4e}",
                    g.norm()
                )));
            }
        }
        Ok(())
    }
}

enum Stage {
    Nopa {
        /// `I + M·dt` in the lab basis.
        propagator: Matrix4<f64>,
        /// √(2γ_c), √(2γ_l) in √(rad/µs).
        coupler: f64,
        loss: f64,
        state: Vector4<f64>,
    },
    Loss {
        transmit: [f64; 2],
        admit: [f64; 2],
    },
    Rotate(Matrix4<f64>),
}

/// One trajectory's worth of integrator state. Fields are in rate units
/// (white noise of variance `1/dt`, with `dt` in µs) until scaled on output.
struct Integrator {
    stages: Vec<Stage>,
    dt: f64,
    /// Standard normals consumed per step.
    draws: usize,
}

impl Integrator {
    fn new(run: &SimulationRun) -> Self {
        let dt = run.time_step * 1e6;
        let mut stages: Vec<Stage> = run
            .chain
            .elements
            .iter()
            .map(|e| match &e.element {
                Element::Nopa(p) => Stage::Nopa {
                    propagator: Matrix4::identity() + drift_matrix_lab(p) * dt,
                    coupler: (2.0 * angular(p.rates.gamma_coupler)).sqrt(),
                    loss: (2.0 * angular(p.rates.gamma_loss)).sqrt(),
                    state: Vector4::zeros(),
                },
                Element::Loss(eta) => loss_stage(*eta),
                Element::PhaseShift(phi) => Stage::Rotate(rotation_matrix(*phi)),
            })
            .collect();
        stages.push(loss_stage([run.chain.detection_efficiency; 2]));
        let draws = 4 * (1 + stages.iter().filter(|s| s.admits_noise()).count());
        Self { stages, dt, draws }
    }

    /// Advances one step driven by `normals` (length `draws`) and returns the
    /// detector sample scaled to unit vacuum variance.
    fn step(&mut self, normals: &[f64]) -> [f64; 4] {
        let white = 1.0 / self.dt.sqrt();
        let mut chunks = normals
            .chunks_exact(4)
            .map(|c| Vector4::new(c[0], c[1], c[2], c[3]) * white);
        let mut field = chunks.next().expect("input noise");
        for stage in &mut self.stages {
            let fresh = if stage.admits_noise() { chunks.next() } else { None };
            match stage {
                Stage::Nopa {
                    propagator,
                    coupler,
                    loss,
                    state,
                } => {
                    let mut drive = field * *coupler;
                    if let Some(xi) = &fresh {
                        drive += xi * *loss;
                    }
                    let next = *propagator * *state + drive * self.dt;
                    let out = (*state + next) * (0.5 * *coupler) - field;
                    *state = next;
                    field = out;
                }
                Stage::Loss { transmit, admit } => {
                    let xi = fresh.unwrap_or_else(Vector4::zeros);
                    for q in 0..4 {
                        field[q] = transmit[q / 2] * field[q] + admit[q / 2] * xi[q];
                    }
                }
                Stage::Rotate(r) => field = *r * field,
            }
        }
        let s = self.dt.sqrt();
        [field[0] * s, field[1] * s, field[2] * s, field[3] * s]
    }
}

impl Stage {
    fn admits_noise(&self) -> bool {
        match self {
            Stage::Nopa { loss, .. } => *loss > 0.0,
            Stage::Loss { admit, .. } => admit.iter().any(|&a| a > 0.0),
            Stage::Rotate(_) => false,
        }
    }
}

fn loss_stage(eta: [f64; 2]) -> Stage {
    Stage::Loss {
        transmit: eta.map(f64::sqrt),
        admit: eta.map(|e| (1.0 - e).sqrt()),
    }
}

fn trajectory_rng(seed: u64, trajectory: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory as u64);
    rng
}

fn fill_normals(rng: &mut ChaCha8Rng, buf: &mut [f64]) {
    buf.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
}

fn run_trajectory(run: &SimulationRun, trajectory: usize, mut sink: impl FnMut(&[f64; 4])) {
    let mut integ = Integrator::new(run);
    let mut rng = trajectory_rng(run.rng_seed, trajectory);
    let mut normals = vec![0.0; integ.draws];
    for _ in 0..run.steps() {
        fill_normals(&mut rng, &mut normals);
        sink(&integ.step(&normals));
    }
}

/// Detector-plane quadrature series, one per trajectory; deterministic in
/// `rng_seed`.
pub fn simulate(run: &SimulationRun) -> Result<Vec<TimeSeries>> {
    run.validate()?;
    Ok((0..run.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut samples = Vec::with_capacity(run.steps());
            run_trajectory(run, k, |x| samples.push(*x));
            TimeSeries {
                time_step: run.time_step,
                samples,
            }
        })
        .collect())
}

/// Streams every trajectory into a segment DFT at `frequencies` (MHz) without
/// storing the series.
pub fn simulate_spectra(
    run: &SimulationRun,
    frequencies: &[f64],
    segment_length: usize,
    window: Window,
) -> Result<SegmentDft> {
    run.validate()?;
    let parts = (0..run.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut dft = SegmentDft::new(frequencies, run.time_step, segment_length, window)?;
            run_trajectory(run, k, |x| dft.push(x));
            Ok(dft)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let mut acc = parts
        .next()
        .ok_or_else(|| Error::Simulation("no trajectories".into()))?;
    parts.for_each(|p| acc.merge(p));
    Ok(acc)
}

/// Spectra of `run` and of the same run at half the time step, driven by the
/// same Brownian paths: each coarse increment is the normalized sum of the two
/// fine increments it spans. The difference of the two estimates then
/// isolates discretization error. `segment_length` refers to the coarse run.
pub fn simulate_spectra_refined(
    run: &SimulationRun,
    frequencies: &[f64],
    segment_length: usize,
    window: Window,
) -> Result<(SegmentDft, SegmentDft)> {
    run.validate()?;
    let mut fine_run = run.clone();
    fine_run.time_step = run.time_step / 2.0;
    let parts = (0..run.n_trajectories)
        .into_par_iter()
        .map(|k| {
            let mut coarse = Integrator::new(run);
            let mut fine = Integrator::new(&fine_run);
            let mut coarse_dft = SegmentDft::new(frequencies, run.time_step, segment_length, window)?;
            let mut fine_dft = SegmentDft::new(frequencies, fine_run.time_step, 2 * segment_length, window)?;
            let mut rng = trajectory_rng(run.rng_seed, k);
            let d = coarse.draws;
            let (mut a, mut b, mut sum) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
            for _ in 0..run.steps() {
                fill_normals(&mut rng, &mut a);
                fill_normals(&mut rng, &mut b);
                fine_dft.push(&fine.step(&a));
                fine_dft.push(&fine.step(&b));
                for i in 0..d {
                    sum[i] = (a[i] + b[i]) * std::f64::consts::FRAC_1_SQRT_2;
                }
                coarse_dft.push(&coarse.step(&sum));
            }
            Ok((coarse_dft, fine_dft))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let (mut coarse, mut fine) = parts
        .next()
        .ok_or_else(|| Error::Simulation("no trajectories".into()))?;
    for (c, f) in parts {
        coarse.merge(c);
        fine.merge(f);
    }
    Ok((coarse, fine))
}

fn write_series_header(w: &mut impl Write, run: &SimulationRun, samples: usize) -> std::io::Result<()> {
    writeln!(w, "# nopa-cascade langevin series")?;
    writeln!(w, "# seed = {}", run.rng_seed)?;
    writeln!(w, "# time_step_s = {:e}", run.time_step)?;
    writeln!(w, "# samples = {samples}")?;
    writeln!(w, "# detection_efficiency = {}", run.chain.detection_efficiency)?;
    for e in &run.chain.elements {
        writeln!(w, "# element {} = {:?}", e.id, e.element)?;
    }
    writeln!(w, "t,X1,Y1,X2,Y2")
}

fn write_sample(w: &mut impl Write, n: usize, dt: f64, s: &[f64; 4]) -> std::io::Result<()> {
    writeln!(w, "{:e},{:.9},{:.9},{:.9},{:.9}", n as f64 * dt, s[0], s[1], s[2], s[3])
}

/// Writes one trajectory as CSV: `#`-prefixed metadata lines, then
/// `t,X1,Y1,X2,Y2` with time in seconds.
pub fn write_series_csv(path: &Path, run: &SimulationRun, series: &TimeSeries) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        write_series_header(&mut w, run, series.samples.len())?;
        for (n, s) in series.samples.iter().enumerate() {
            write_sample(&mut w, n, series.time_step, s)?;
        }
        w.flush()
    };
    body().map_err(io)
}

/// Integrates `trajectory` of `run` straight into a CSV file in the layout of
/// [`write_series_csv`], without holding the series in memory.
pub fn stream_series_csv(path: &Path, run: &SimulationRun, trajectory: usize) -> Result<()> {
    run.validate()?;
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    write_series_header(&mut w, run, run.steps()).map_err(io)?;
    let mut n = 0;
    let mut status = Ok(());
    run_trajectory(run, trajectory, |s| {
        if status.is_ok() {
            status = write_sample(&mut w, n, run.time_step, s);
        }
        n += 1;
    });
    status.and_then(|_| w.flush()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NamedElement;
    use crate::nopa::{resonant_closed_form, DecayRates, NopaParams};
    use crate::quad::QuadCombination;
    use std::f64::consts::PI;

    fn single(sigma: f64, phase: f64, escape: f64) -> NetworkChain {
        let r = DecayRates::from_decay(2500.0, 7.66, escape).unwrap();
        NetworkChain::new(vec![NamedElement::new(
            "nopa1",
            Element::Nopa(NopaParams::new(r, sigma, phase, 0.0).unwrap()),
        )])
    }

    #[test]
    fn same_seed_same_series() {
        let mut run = SimulationRun::with_defaults(single(0.5, PI, 0.9), 11).unwrap();
        run.duration = MIN_DURATION_DECAYS / rate_bounds(&run.chain).unwrap().gamma_min;
        run.n_trajectories = 2;
        let a = simulate(&run).unwrap();
        let b = simulate(&run).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].samples, a[1].samples);
        run.rng_seed = 12;
        assert_ne!(simulate(&run).unwrap(), a);
    }

    #[test]
    fn empty_cavity_passes_vacuum() {
        let mut run = SimulationRun::with_defaults(single(0.0, 0.0, 1.0), 5).unwrap();
        run.n_trajectories = 1;
        let series = simulate(&run).unwrap();
        // batch means for the standard error of the variance
        for q in 0..4 {
            let xs: Vec<f64> = series[0].samples.iter().map(|s| s[q] * s[q]).collect();
            let batches: Vec<f64> = xs
                .chunks(xs.len() / 100)
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .collect();
            let k = batches.len() as f64;
            let mean = batches.iter().sum::<f64>() / k;
            let se = (batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
            assert!(((mean - 1.0) / se).abs() < 3.0, "quadrature {q}: {mean} ± {se}");
        }
    }

    #[test]
    fn squeezed_spectrum_matches_closed_form() {
        let chain = single(0.7746, PI, 0.84);
        let rates = match &chain.elements[0].element {
            Element::Nopa(p) => p.rates,
            _ => unreachable!(),
        };
        let run = SimulationRun::with_defaults(chain, 21).unwrap();
        let freq = 0.39 * rates.gamma_total;
        let dft = simulate_spectra(&run, &[freq], run.default_segment_length().unwrap(), Window::Hann).unwrap();
        let est = dft.estimate(0, &QuadCombination::x_sum()).unwrap();
        let (sq, anti) = resonant_closed_form(&rates, 0.7746, freq);
        assert!(est.z_score(sq).abs() < 3.0, "{est:?} vs {sq}");
        let est = dft.estimate(0, &QuadCombination::y_sum()).unwrap();
        assert!(est.z_score(anti).abs() < 3.0, "{est:?} vs {anti}");
    }

    #[test]
    fn rejects_invalid_runs() {
        let chain = single(0.5, PI, 1.0);
        let base = SimulationRun::with_defaults(chain, 1).unwrap();

        let mut r = base.clone();
        r.time_step *= 3.0;
        assert!(matches!(r.validate(), Err(Error::Simulation(_))));

        let mut r = base.clone();
        r.duration = r.time_step * 10.0;
        assert!(r.validate().is_err());

        let mut r = base.clone();
        r.n_trajectories = 0;
        assert!(r.validate().is_err());

        let mut r = base.clone();
        r.chain.source = Source::External(std::sync::Arc::new(|f| Ok(crate::quad::vacuum_spectrum(f))));
        assert!(r.validate().is_err());

        assert!(SimulationRun::with_defaults(NetworkChain::default(), 1).is_err());
    }

    #[test]
    fn streamed_dump_matches_stored_series() {
        let mut run = SimulationRun::with_defaults(single(0.5, PI, 0.9), 3).unwrap();
        run.duration = MIN_DURATION_DECAYS / rate_bounds(&run.chain).unwrap().gamma_min;
        run.n_trajectories = 1;
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_series_csv(&a, &run, &simulate(&run).unwrap()[0]).unwrap();
        stream_series_csv(&b, &run, 0).unwrap();
        let text = std::fs::read_to_string(&a).unwrap();
        assert_eq!(text, std::fs::read_to_string(&b).unwrap());
        assert!(text.contains("# seed = 3\n"));
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "t,X1,Y1,X2,Y2");
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), run.steps() + 1);
    }
}
