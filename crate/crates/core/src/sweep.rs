//! Detuning and analysis-frequency sweeps, and their CSV form.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{correlation_report, evaluate, CorrelationReport, DetuningOverrides, Element, NetworkChain};

pub const CSV_HEADER: &str = "sweep_var,v_xsum_db,v_ydiff_db,v_xdiff_db,v_ysum_db,duan_plus,duan_minus";

#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    /// Detuning (MHz) of one amplifier; the others keep their configured values.
    Detuning {
        element: String,
        start: f64,
        stop: f64,
        points: usize,
    },
    /// Analysis frequency (MHz) at the configured detunings.
    Frequency { start: f64, stop: f64, points: usize },
}

impl SweepSpec {
    pub fn points(&self) -> usize {
        match self {
            SweepSpec::Detuning { points, .. } | SweepSpec::Frequency { points, .. } => *points,
        }
    }

    pub fn with_points(mut self, n: usize) -> Self {
        match &mut self {
            SweepSpec::Detuning { points, .. } | SweepSpec::Frequency { points, .. } => *points = n,
        }
        self
    }

    fn range(&self) -> (f64, f64) {
        match self {
            SweepSpec::Detuning { start, stop, .. } | SweepSpec::Frequency { start, stop, .. } => (*start, *stop),
        }
    }

    pub fn validate(&self, chain: &NetworkChain) -> Result<()> {
        let (a, b) = self.range();
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::param("sweep", "range must be finite"));
        }
        if self.points() < 2 {
            return Err(Error::param("sweep", "at least 2 points are required"));
        }
        if let SweepSpec::Detuning { element, .. } = self {
            match chain.element(element) {
                Some(e) if matches!(e.element, Element::Nopa(_)) => {}
                Some(_) => return Err(Error::param("sweep", format!("`{element}` is not an amplifier"))),
                None => return Err(Error::UnknownElement(element.clone())),
            }
        }
        Ok(())
    }

    /// Sweep values in ascending order.
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = self.range();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n = self.points();
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub sweep_var: f64,
    pub report: CorrelationReport,
}

/// Rows sorted by the swept variable. Variances are in dB relative to the
/// shot-noise level, so the SNL itself is the 0 dB line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row_nearest(&self, x: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .min_by(|a, b| (a.sweep_var - x).abs().total_cmp(&(b.sweep_var - x).abs()))
    }
}

fn run(points: &[f64], f: impl Fn(f64) -> Result<CorrelationReport> + Sync) -> Result<SweepResult> {
    let rows = points
        .par_iter()
        .map(|&x| {
            Ok(SweepRow {
                sweep_var: x,
                report: f(x)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { rows })
}

/// Sweeps the detuning of one amplifier at a fixed analysis frequency (MHz).
pub fn run_detuning_sweep(chain: &NetworkChain, spec: &SweepSpec, analysis_frequency: f64) -> Result<SweepResult> {
    let SweepSpec::Detuning { element, .. } = spec else {
        return Err(Error::param("sweep", "expected a detuning sweep"));
    };
    if !analysis_frequency.is_finite() {
        return Err(Error::param("analysis_frequency", "must be finite"));
    }
    chain.validate()?;
    spec.validate(chain)?;
    run(&spec.grid(), |d| {
        let overrides = DetuningOverrides::from([(element.clone(), d)]);
        correlation_report(&evaluate(chain, &overrides, analysis_frequency)?)
    })
}

/// Sweeps the analysis frequency with every detuning at its configured value.
pub fn run_frequency_sweep(chain: &NetworkChain, spec: &SweepSpec) -> Result<SweepResult> {
    if !matches!(spec, SweepSpec::Frequency { .. }) {
        return Err(Error::param("sweep", "expected a frequency sweep"));
    }
    chain.validate()?;
    spec.validate(chain)?;
    run(&spec.grid(), |f| {
        correlation_report(&evaluate(chain, &DetuningOverrides::new(), f)?)
    })
}

pub fn format_csv(result: &SweepResult) -> String {
    let mut out = String::with_capacity(80 * (result.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &result.rows {
        let r = &row.report;
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            row.sweep_var, r.v_xsum_db, r.v_ydiff_db, r.v_xdiff_db, r.v_ysum_db, r.duan_plus, r.duan_minus
        ));
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(format_csv(result).as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}
