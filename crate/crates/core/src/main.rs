use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nopa_cascade::calibrate::{calibrate, CalibrationOptions, CalibrationOutcome};
use nopa_cascade::config::{load_config, SweepConfig, KEY_REFERENCE};
use nopa_cascade::network::{correlation_report, evaluate, DetuningOverrides};
use nopa_cascade::oracle::spectrum::Window;
use nopa_cascade::oracle::{simulate_spectra, stream_series_csv, SimulationRun};
use nopa_cascade::quad::{combination_variance, QuadCombination};
use nopa_cascade::sweep::{emit_csv, format_csv, run_detuning_sweep, run_frequency_sweep, SweepSpec};
use nopa_cascade::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

/// Quantum noise spectra of cascaded sub-threshold parametric amplifiers.
#[derive(Parser)]
#[command(version, after_long_help = KEY_REFERENCE)]
#[command(
    long_about = "Quantum noise spectra of cascaded sub-threshold parametric amplifiers.\n\n\
Exit status: 0 success, 2 configuration error, 3 calibration did not converge, 4 I/O error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep detuning or analysis frequency and write the correlation table as CSV.
    Sweep(Common),
    /// Fit the `[free.*]` parameters to the `[target.*]` values.
    Calibrate(Common),
    /// Monte Carlo cross-check of the frequency-domain spectra at the analysis frequency.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file; `--help` lists every key.
    #[arg(long)]
    config: PathBuf,
    /// Output file. Sweep: CSV table (stdout if absent). Calibrate: report.
    /// Oracle: raw series of the first trajectory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `[output] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[sweep] points`.
    #[arg(long)]
    points: Option<usize>,
}

enum Failure {
    Lib(Error),
    NotConverged,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load(common: &Common) -> Result<SweepConfig, Error> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.points {
        let spec = cfg.sweep.take().ok_or_else(|| Error::ConfigValue {
            key: "sweep".into(),
            message: "--points needs a [sweep] section".into(),
        })?;
        let spec = spec.with_points(n);
        spec.validate(&cfg.chain).map_err(|e| Error::ConfigValue {
            key: "sweep.points".into(),
            message: e.to_string(),
        })?;
        cfg.sweep = Some(spec);
    }
    // relative output paths live next to the config file
    if let Some(p) = &cfg.output {
        if p.is_relative() {
            let base = common.config.parent().unwrap_or(Path::new(""));
            cfg.output = Some(base.join(p));
        }
    }
    Ok(cfg)
}

fn sweep(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::ConfigValue {
        key: "sweep".into(),
        message: "a [sweep] section is required".into(),
    })?;
    let result = match spec {
        SweepSpec::Detuning { .. } => run_detuning_sweep(&cfg.chain, spec, cfg.analysis_frequency)?,
        SweepSpec::Frequency { .. } => run_frequency_sweep(&cfg.chain, spec)?,
    };
    match common.out.as_ref().or(cfg.output.as_ref()) {
        Some(path) => {
            emit_csv(&result, path)?;
            eprintln!("wrote {} rows to {}", result.rows.len(), path.display());
        }
        None => {
            let stdout = std::io::stdout();
            stdout
                .lock()
                .write_all(format_csv(&result).as_bytes())
                .map_err(io_error(Path::new("<stdout>")))?;
        }
    }
    if cfg.oracle {
        oracle_check(&cfg)?;
    }
    Ok(())
}

fn format_outcome(out: &CalibrationOutcome) -> String {
    let mut s = String::new();
    s.push_str(&format!("converged = {}\n", out.converged));
    s.push_str(&format!("simplex_converged = {}\n", out.simplex_converged));
    s.push_str(&format!("objective_db2 = {:.6e}\n", out.objective));
    s.push_str(&format!("evaluations = {}\n", out.evaluations));
    s.push_str("\n[parameters]\n");
    for (p, v) in &out.parameters {
        s.push_str(&format!("{p} = {v:.6}\n"));
    }
    s.push_str("\n[residuals]\n");
    for r in &out.residuals {
        s.push_str(&format!(
            "{} = model {:.4} dB, target {:.4} dB, residual {:+.4} dB, tolerance {:.4} dB{}\n",
            r.id,
            r.model_db,
            r.target_db,
            r.residual_db(),
            r.tolerance_db,
            if r.within_tolerance() { "" } else { "  OUT OF TOLERANCE" }
        ));
    }
    s
}

fn calibrate_cmd(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let problem = cfg.calibration.as_ref().ok_or_else(|| Error::ConfigValue {
        key: "target".into(),
        message: "calibration needs [target.*] and [free.*] sections".into(),
    })?;
    let options = CalibrationOptions {
        seed: cfg.seed,
        ..CalibrationOptions::default()
    };
    let outcome = calibrate(problem, &cfg.chain, &options)?;
    let report = format_outcome(&outcome);
    print!("{report}");
    if let Some(path) = &common.out {
        std::fs::write(path, &report).map_err(io_error(path))?;
    }
    if outcome.converged {
        Ok(())
    } else {
        eprintln!("calibration did not reach every target; best-so-far reported above");
        Err(Failure::NotConverged)
    }
}

fn oracle_check(cfg: &SweepConfig) -> Result<(), Error> {
    let run = SimulationRun::with_defaults(cfg.chain.clone(), cfg.seed)?;
    let f = cfg.analysis_frequency;
    eprintln!(
        "oracle: {} trajectories x {} steps at {f} MHz",
        run.n_trajectories,
        run.steps()
    );
    let dft = simulate_spectra(&run, &[f], run.default_segment_length()?, Window::Hann)?;
    let exact = evaluate(&cfg.chain, &DetuningOverrides::new(), f)?;
    println!("combination,monte_carlo,std_error,frequency_domain,z");
    for (name, c) in [
        ("x_sum", QuadCombination::x_sum()),
        ("y_diff", QuadCombination::y_diff()),
        ("x_diff", QuadCombination::x_diff()),
        ("y_sum", QuadCombination::y_sum()),
    ] {
        let est = dft.estimate(0, &c)?;
        let expected = combination_variance(&exact, &c)? / c.snl();
        println!(
            "{name},{:.6},{:.6},{:.6},{:+.2}",
            est.value,
            est.std_error,
            expected,
            est.z_score(expected)
        );
    }
    let r = correlation_report(&exact)?;
    eprintln!(
        "frequency-domain duan_plus {:.4}, duan_minus {:.4}",
        r.duan_plus, r.duan_minus
    );
    Ok(())
}

fn oracle_cmd(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    oracle_check(&cfg)?;
    if let Some(path) = &common.out {
        let run = SimulationRun::with_defaults(cfg.chain.clone(), cfg.seed)?;
        stream_series_csv(path, &run, 0)?;
        eprintln!("wrote trajectory 0 to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep(c) => sweep(c),
        Command::Calibrate(c) => calibrate_cmd(c),
        Command::Oracle(c) => oracle_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Io { .. }) {
                EXIT_IO
            } else {
                EXIT_CONFIG
            })
        }
    }
}
