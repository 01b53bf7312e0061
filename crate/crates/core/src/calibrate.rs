//! Least-squares fitting of chain parameters to measured noise levels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{correlation_report, evaluate, CorrelationReport, DetuningOverrides, NetworkChain, ParamRef};
use crate::optimize::{nelder_mead, Minimum, NelderMeadOptions};

/// Measured quantity, named after its CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    XSum,
    YDiff,
    XDiff,
    YSum,
}

impl Observable {
    pub fn pick(self, r: &CorrelationReport) -> f64 {
        match self {
            Observable::XSum => r.v_xsum_db,
            Observable::YDiff => r.v_ydiff_db,
            Observable::XDiff => r.v_xdiff_db,
            Observable::YSum => r.v_ysum_db,
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observable::XSum => "v_xsum_db",
            Observable::YDiff => "v_ydiff_db",
            Observable::XDiff => "v_xdiff_db",
            Observable::YSum => "v_ysum_db",
        })
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v_xsum_db" => Ok(Observable::XSum),
            "v_ydiff_db" => Ok(Observable::YDiff),
            "v_xdiff_db" => Ok(Observable::XDiff),
            "v_ysum_db" => Ok(Observable::YSum),
            other => Err(Error::param("observable", format!("unknown observable `{other}`"))),
        }
    }
}

/// One measured value together with the chain configuration it was taken in.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTarget {
    pub id: String,
    pub observable: Observable,
    pub target_db: f64,
    pub tolerance_db: f64,
    pub analysis_frequency: f64,
    /// Parameter values that differ from the base chain for this measurement.
    pub settings: Vec<(ParamRef, f64)>,
    /// Elements removed from the beam path for this measurement.
    pub bypass: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeParameter {
    pub param: ParamRef,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub targets: Vec<CalibrationTarget>,
    pub free: Vec<FreeParameter>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Grid points per free dimension for the deterministic starts.
    pub grid_points: usize,
    pub random_starts: usize,
    pub seed: u64,
    pub simplex: NelderMeadOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            grid_points: 3,
            random_starts: 4,
            seed: 0,
            simplex: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResidual {
    pub id: String,
    pub model_db: f64,
    pub target_db: f64,
    pub tolerance_db: f64,
}

impl TargetResidual {
    pub fn residual_db(&self) -> f64 {
        self.model_db - self.target_db
    }

    pub fn within_tolerance(&self) -> bool {
        self.residual_db().abs() <= self.tolerance_db
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub parameters: Vec<(ParamRef, f64)>,
    pub residuals: Vec<TargetResidual>,
    /// Sum of squared dB residuals at `parameters`.
    pub objective: f64,
    pub simplex_converged: bool,
    pub evaluations: usize,
    /// Simplex converged and every residual is within its tolerance.
    pub converged: bool,
}

impl CalibrationOutcome {
    /// Writes the fitted values into `chain`.
    pub fn apply(&self, chain: &mut NetworkChain) -> Result<()> {
        self.parameters.iter().try_for_each(|(p, v)| chain.set_param(p, *v))
    }

    pub fn value(&self, param: &ParamRef) -> Option<f64> {
        self.parameters.iter().find(|(p, _)| p == param).map(|(_, v)| *v)
    }
}

impl CalibrationProblem {
    pub fn validate(&self, chain: &NetworkChain) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::param("targets", "at least one target is required"));
        }
        if self.free.len() > self.targets.len() {
            return Err(Error::param(
                "free",
                format!(
                    "{} free parameters exceed {} targets",
                    self.free.len(),
                    self.targets.len()
                ),
            ));
        }
        for f in &self.free {
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(Error::param(
                    "free",
                    format!("`{}` needs finite bounds with min < max", f.param),
                ));
            }
            chain.get_param(&f.param)?;
            if self.free[..].iter().filter(|o| o.param == f.param).count() > 1 {
                return Err(Error::param("free", format!("`{}` listed twice", f.param)));
            }
        }
        for t in &self.targets {
            if !(t.target_db.is_finite() && t.tolerance_db > 0.0 && t.analysis_frequency.is_finite()) {
                return Err(Error::param(
                    "target",
                    format!("`{}` needs finite dB values and a positive tolerance", t.id),
                ));
            }
            self.configure(chain, t)?;
        }
        Ok(())
    }

    fn configure(&self, chain: &NetworkChain, t: &CalibrationTarget) -> Result<NetworkChain> {
        let mut c = chain.clone();
        for (p, v) in &t.settings {
            c.set_param(p, *v)?;
        }
        for id in &t.bypass {
            c = c.bypassing(id)?;
        }
        Ok(c)
    }

    /// Model values of every target with the free parameters at `x`.
    pub fn model_values(&self, chain: &NetworkChain, x: &[f64]) -> Result<Vec<f64>> {
        let mut base = chain.clone();
        for (f, &v) in self.free.iter().zip(x) {
            base.set_param(&f.param, v)?;
        }
        self.targets
            .iter()
            .map(|t| {
                let c = self.configure(&base, t)?;
                let s = evaluate(&c, &DetuningOverrides::new(), t.analysis_frequency)?;
                Ok(t.observable.pick(&correlation_report(&s)?))
            })
            .collect()
    }

    fn objective(&self, chain: &NetworkChain, x: &[f64]) -> f64 {
        match self.model_values(chain, x) {
            Ok(v) => v
                .iter()
                .zip(&self.targets)
                .map(|(m, t)| (m - t.target_db).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Fits the free parameters of `problem` by multistart Nelder–Mead.
///
/// Starts are a regular interior grid plus `random_starts` points drawn from
/// `seed`; the result is independent of thread scheduling.
pub fn calibrate(
    problem: &CalibrationProblem,
    chain: &NetworkChain,
    options: &CalibrationOptions,
) -> Result<CalibrationOutcome> {
    chain.validate()?;
    problem.validate(chain)?;
    let bounds: Vec<(f64, f64)> = problem.free.iter().map(|f| (f.lower, f.upper)).collect();
    let starts = start_points(&bounds, options);
    let objective = |x: &[f64]| problem.objective(chain, x);

    let runs: Vec<Minimum> = starts
        .par_iter()
        .map(|x0| nelder_mead(&objective, x0, &bounds, &options.simplex))
        .collect();
    let evaluations = runs.iter().map(|m| m.evaluations).sum();
    // first minimum wins ties, keeping the choice independent of scheduling
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .ok_or_else(|| Error::Simulation("no starting points".into()))?;

    let models = problem.model_values(chain, &best.x)?;
    let residuals: Vec<TargetResidual> = problem
        .targets
        .iter()
        .zip(models)
        .map(|(t, m)| TargetResidual {
            id: t.id.clone(),
            model_db: m,
            target_db: t.target_db,
            tolerance_db: t.tolerance_db,
        })
        .collect();
    let converged = best.converged && residuals.iter().all(TargetResidual::within_tolerance);
    Ok(CalibrationOutcome {
        parameters: problem
            .free
            .iter()
            .map(|f| f.param.clone())
            .zip(best.x.iter().copied())
            .collect(),
        residuals,
        objective: best.value,
        simplex_converged: best.converged,
        evaluations,
        converged,
    })
}

fn start_points(bounds: &[(f64, f64)], options: &CalibrationOptions) -> Vec<Vec<f64>> {
    let g = options.grid_points.max(1);
    let d = bounds.len();
    let mut out = Vec::new();
    for mut k in 0..g.pow(d as u32) {
        let point = bounds
            .iter()
            .map(|&(lo, hi)| {
                let i = k % g;
                k /= g;
                lo + (i as f64 + 0.5) / g as f64 * (hi - lo)
            })
            .collect();
        out.push(point);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.random_starts {
        out.push(bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect());
    }
    out
}
