//! Line-oriented configuration files; the format is described by
//! [`KEY_REFERENCE`]. Unknown sections and keys are rejected.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::calibrate::{CalibrationProblem, CalibrationTarget, FreeParameter, Observable};
use crate::error::{Error, Result};
use crate::network::{Element, NamedElement, NetworkChain, ParamRef, Source};
use crate::nopa::{derive_rates, pump_amplitude, CavityGeometry, DecayRates, NopaParams, Topology};
use crate::quad::SpectralCovariance;
use crate::sweep::SweepSpec;

pub const KEY_REFERENCE: &str = "\
CONFIG FORMAT
  # comment
  [section]  or  [kind.id]
  key = value            # trailing comment

  Amplifiers, losses and phase shifts form the chain in file order.
  Unknown sections and keys are errors. Defaults in parentheses.

[source]
  kind                  vacuum | epr (vacuum)
  squeezed_db           epr only: squeezed combination, dB rel. SNL
  antisqueezed_db       epr only: anti-squeezed combination, dB rel. SNL

[nopa.<id>]
  topology              linear | ring (linear)
  geometric_length_m    one-way length (linear) or perimeter (ring)
  crystal_length_m
  crystal_index         (1.83)
  coupler_transmission  output coupler power transmission
  finesse
    or, instead of the cavity keys:
  fsr_mhz, linewidth_fwhm_mhz, escape_efficiency
  sigma                 pump amplitude relative to threshold, [0, 1)
    or: pump_power_mw with threshold_power_mw
  pump_phase            radians; accepts pi, -pi, pi/2, 0.5*pi. 0 amplifies, pi de-amplifies
  detuning_mhz          (0)

[loss.<id>]
  efficiency            power transmission, or efficiency_signal with efficiency_idler

[phase.<id>]
  signal_rad, idler_rad (0)

[detection]
  efficiency            homodyne efficiency (1)
  electronic_noise_db   additive noise floor rel. SNL (off)

[sweep]
  kind                  detuning | frequency
  element               detuning only: amplifier whose detuning is swept
  start_mhz, stop_mhz   (-15, 15 for detuning; required for frequency)
  points                (601)
  analysis_frequency_mhz  detuning only (3.0)

[output]
  path                  CSV destination, relative to the config file
  seed                  (0)
  oracle                true | false (false): Monte Carlo spot check

[target.<id>]
  observable            v_xsum_db | v_ydiff_db | v_xdiff_db | v_ysum_db
  target_db             measured value, dB rel. SNL
  tolerance_db          (0.1)
  analysis_frequency_mhz  (sweep value)
  bypass                comma-separated elements removed for this target
  set.<element>.<field> value used for this target only

[free.<element>.<field>]
  min, max              bounds of a fitted parameter

[metadata]
  any key               free text kept with the run, e.g. carrier powers;
                        ignored by the noise model

  Fields: sigma, pump_phase, detuning_mhz, efficiency; detection.efficiency
  addresses the detectors.
";

pub const DEFAULT_POINTS: usize = 601;
pub const DEFAULT_DETUNING_SPAN: f64 = 15.0;
pub const DEFAULT_ANALYSIS_FREQUENCY: f64 = 3.0;
pub const DEFAULT_CRYSTAL_INDEX: f64 = 1.83;
pub const DEFAULT_TOLERANCE_DB: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub chain: NetworkChain,
    pub sweep: Option<SweepSpec>,
    /// MHz; used by detuning sweeps and as the default for targets.
    pub analysis_frequency: f64,
    pub output: Option<PathBuf>,
    pub oracle: bool,
    pub seed: u64,
    pub calibration: Option<CalibrationProblem>,
    /// `[metadata]` entries in file order. Never enters the noise model.
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigSyntax {
        line,
        message: message.into(),
    }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn tokenize(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "section header must end with `]`"))?
                .trim();
            if !name.split('.').all(valid_ident) {
                return Err(syntax(line, format!("malformed section name `{name}`")));
            }
            if let Some(prev) = sections.iter().find(|s| s.name == name) {
                return Err(syntax(
                    line,
                    format!("section `{name}` already defined on line {}", prev.line),
                ));
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if !key.split('.').all(valid_ident) {
            return Err(syntax(line, format!("malformed key `{key}`")));
        }
        if value.is_empty() {
            return Err(syntax(line, format!("missing value for `{key}`")));
        }
        let section = sections
            .last_mut()
            .ok_or_else(|| syntax(line, "key outside of any section"))?;
        if let Some(prev) = section.entries.iter().find(|e| e.key == key) {
            return Err(syntax(
                line,
                format!("duplicate key `{key}` (first on line {})", prev.line),
            ));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.trim_matches('"').to_string(),
            line,
        });
    }
    Ok(sections)
}

/// Typed access to one section; every key must be consumed.
struct Reader<'a> {
    section: &'a Section,
    used: HashSet<&'a str>,
}

impl<'a> Reader<'a> {
    fn new(section: &'a Section) -> Self {
        Self {
            section,
            used: HashSet::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.section.name)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::config(self.path(key), message)
    }

    /// Library errors raised while building from this section.
    fn wrap(&self, key: &str) -> impl Fn(Error) -> Error + '_ {
        let path = self.path(key);
        move |e| Error::config(path.clone(), e.to_string())
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let e = self.section.entries.iter().find(|e| e.key == key)?;
        self.used.insert(e.key.as_str());
        Some(e.value.as_str())
    }

    fn has(&self, key: &str) -> bool {
        self.section.entries.iter().any(|e| e.key == key)
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.raw(key).map(str::to_string))
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(self.err(key, format!("expected a finite number, got `{v}`"))),
        }
    }

    fn angle(&mut self, key: &str) -> Result<Option<f64>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        parse_angle(v)
            .map(Some)
            .ok_or_else(|| self.err(key, format!("expected radians or a multiple of `pi`, got `{v}`")))
    }

    fn integer(&mut self, key: &str) -> Result<Option<u64>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.parse::<u64>()
            .map(Some)
            .map_err(|_| self.err(key, format!("expected a non-negative integer, got `{v}`")))
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(self.err(key, format!("expected `true` or `false`, got `{v}`"))),
        }
    }

    fn require<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| self.err(key, "required key is missing"))
    }

    /// Rejects keys that were never read.
    fn finish(self) -> Result<()> {
        match self
            .section
            .entries
            .iter()
            .find(|e| !self.used.contains(e.key.as_str()))
        {
            Some(e) => Err(Error::config(
                self.path(&e.key),
                format!("unknown key (line {})", e.line),
            )),
            None => Ok(()),
        }
    }
}

/// Radians as a plain number or as `[-][k*]pi[/n]`.
pub fn parse_angle(s: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let (sign, body) = match compact.strip_prefix('-') {
        Some(b) => (-1.0, b),
        None => (1.0, compact.as_str()),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().ok().filter(|d| *d != 0.0)?),
        None => (body, 1.0),
    };
    let coef = match num.split_once('*') {
        Some((k, "pi")) => k.parse::<f64>().ok()?,
        None if num == "pi" => 1.0,
        _ => return None,
    };
    let v = sign * coef * PI / den;
    v.is_finite().then_some(v)
}

fn parse_source(r: &mut Reader) -> Result<Source> {
    let kind = r.string("kind")?.unwrap_or_else(|| "vacuum".into());
    match kind.as_str() {
        "vacuum" => Ok(Source::Vacuum),
        "epr" => {
            let sq = r.number("squeezed_db")?;
            let sq = r.require("squeezed_db", sq)?;
            let anti = r.number("antisqueezed_db")?;
            let anti = r.require("antisqueezed_db", anti)?;
            let (vs, va) = (10f64.powf(sq / 10.0), 10f64.powf(anti / 10.0));
            if vs * va < 1.0 - 1e-12 {
                return Err(r.err(
                    "antisqueezed_db",
                    "squeezed and anti-squeezed levels violate the uncertainty bound",
                ));
            }
            SpectralCovariance::epr(vs, va, 0.0).map_err(r.wrap("squeezed_db"))?;
            Ok(Source::External(Arc::new(move |f| SpectralCovariance::epr(vs, va, f))))
        }
        other => Err(r.err("kind", format!("expected `vacuum` or `epr`, got `{other}`"))),
    }
}

fn parse_rates(r: &mut Reader) -> Result<DecayRates> {
    let cavity = [
        "topology",
        "geometric_length_m",
        "crystal_length_m",
        "crystal_index",
        "coupler_transmission",
        "finesse",
    ];
    let direct = ["fsr_mhz", "linewidth_fwhm_mhz", "escape_efficiency"];
    let uses_direct = direct.iter().any(|k| r.has(k));
    if uses_direct {
        if let Some(k) = cavity.iter().find(|k| r.has(k)) {
            return Err(r.err(k, "cavity geometry and direct rates are mutually exclusive"));
        }
        let fsr = r.number("fsr_mhz")?;
        let fsr = r.require("fsr_mhz", fsr)?;
        let fwhm = r.number("linewidth_fwhm_mhz")?;
        let fwhm = r.require("linewidth_fwhm_mhz", fwhm)?;
        let escape = r.number("escape_efficiency")?;
        let escape = r.require("escape_efficiency", escape)?;
        return DecayRates::from_decay(fsr, fwhm / 2.0, escape).map_err(r.wrap("linewidth_fwhm_mhz"));
    }
    let topology = match r.string("topology")?.as_deref() {
        None | Some("linear") => Topology::Linear,
        Some("ring") => Topology::Ring,
        Some(other) => return Err(r.err("topology", format!("expected `linear` or `ring`, got `{other}`"))),
    };
    let need = |r: &mut Reader, key: &str| -> Result<f64> {
        let v = r.number(key)?;
        r.require(key, v)
    };
    let geometry = CavityGeometry {
        topology,
        geometric_length: need(r, "geometric_length_m")?,
        crystal_length: need(r, "crystal_length_m")?,
        crystal_index: r.number("crystal_index")?.unwrap_or(DEFAULT_CRYSTAL_INDEX),
        coupler_transmission: need(r, "coupler_transmission")?,
        finesse: need(r, "finesse")?,
    };
    derive_rates(&geometry).map_err(r.wrap("finesse"))
}

fn parse_nopa(r: &mut Reader) -> Result<NopaParams> {
    let rates = parse_rates(r)?;
    let sigma = match (
        r.number("sigma")?,
        r.number("pump_power_mw")?,
        r.number("threshold_power_mw")?,
    ) {
        (Some(s), None, None) => s,
        (None, Some(p), Some(t)) => pump_amplitude(p, t).map_err(r.wrap("pump_power_mw"))?,
        (Some(_), _, _) => return Err(r.err("sigma", "give either `sigma` or pump and threshold powers, not both")),
        _ => {
            return Err(r.err(
                "sigma",
                "missing gain: give `sigma` or `pump_power_mw` with `threshold_power_mw`",
            ))
        }
    };
    let phase = r.angle("pump_phase")?;
    let phase = r.require("pump_phase", phase)?;
    let detuning = r.number("detuning_mhz")?.unwrap_or(0.0);
    let p = NopaParams {
        rates,
        sigma,
        pump_phase: phase,
        detuning,
    };
    p.validate().map_err(r.wrap("sigma"))?;
    Ok(p)
}

fn parse_loss(r: &mut Reader) -> Result<Element> {
    let eta = match (
        r.number("efficiency")?,
        r.number("efficiency_signal")?,
        r.number("efficiency_idler")?,
    ) {
        (Some(e), None, None) => [e; 2],
        (None, Some(s), Some(i)) => [s, i],
        (Some(_), _, _) => return Err(r.err("efficiency", "give either `efficiency` or the per-mode pair, not both")),
        _ => return Err(r.err("efficiency", "required key is missing")),
    };
    let e = Element::Loss(eta);
    e.validate().map_err(r.wrap("efficiency"))?;
    Ok(e)
}

fn parse_phase(r: &mut Reader) -> Result<Element> {
    Ok(Element::PhaseShift([
        r.angle("signal_rad")?.unwrap_or(0.0),
        r.angle("idler_rad")?.unwrap_or(0.0),
    ]))
}

struct SweepSection {
    spec: SweepSpec,
    analysis_frequency: Option<f64>,
}

fn parse_sweep(r: &mut Reader) -> Result<SweepSection> {
    let kind = r.string("kind")?;
    let kind = r.require("kind", kind)?;
    let points = match r.integer("points")? {
        Some(n) if n < 2 => return Err(r.err("points", "at least 2 points are required")),
        Some(n) => n as usize,
        None => DEFAULT_POINTS,
    };
    match kind.as_str() {
        "detuning" => {
            let element = r.string("element")?;
            Ok(SweepSection {
                spec: SweepSpec::Detuning {
                    element: r.require("element", element)?,
                    start: r.number("start_mhz")?.unwrap_or(-DEFAULT_DETUNING_SPAN),
                    stop: r.number("stop_mhz")?.unwrap_or(DEFAULT_DETUNING_SPAN),
                    points,
                },
                analysis_frequency: r.number("analysis_frequency_mhz")?,
            })
        }
        "frequency" => {
            if r.has("element") {
                return Err(r.err("element", "only detuning sweeps name an element"));
            }
            if r.has("analysis_frequency_mhz") {
                return Err(r.err(
                    "analysis_frequency_mhz",
                    "a frequency sweep scans the analysis frequency",
                ));
            }
            let start = r.number("start_mhz")?;
            let stop = r.number("stop_mhz")?;
            Ok(SweepSection {
                spec: SweepSpec::Frequency {
                    start: r.require("start_mhz", start)?,
                    stop: r.require("stop_mhz", stop)?,
                    points,
                },
                analysis_frequency: None,
            })
        }
        other => Err(r.err("kind", format!("expected `detuning` or `frequency`, got `{other}`"))),
    }
}

fn parse_target(r: &mut Reader, id: &str, default_frequency: f64) -> Result<CalibrationTarget> {
    let obs = r.string("observable")?;
    let obs = r.require("observable", obs)?;
    let observable: Observable = obs.parse().map_err(r.wrap("observable"))?;
    let target_db = r.number("target_db")?;
    let target_db = r.require("target_db", target_db)?;
    let tolerance_db = r.number("tolerance_db")?.unwrap_or(DEFAULT_TOLERANCE_DB);
    if !(tolerance_db > 0.0) {
        return Err(r.err("tolerance_db", "must be positive"));
    }
    let analysis_frequency = r.number("analysis_frequency_mhz")?.unwrap_or(default_frequency);
    let bypass = r
        .string("bypass")?
        .map(|s| {
            s.split(',')
                .map(|x| x.trim().to_string())
                .filter(|x| !x.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let set_keys: Vec<String> = r
        .section
        .entries
        .iter()
        .filter(|e| e.key.starts_with("set."))
        .map(|e| e.key.clone())
        .collect();
    let mut settings = Vec::new();
    for key in set_keys {
        let param: ParamRef = key["set.".len()..].parse().map_err(r.wrap(&key))?;
        let value = r.angle(&key)?.expect("key was listed");
        settings.push((param, value));
    }
    Ok(CalibrationTarget {
        id: id.to_string(),
        observable,
        target_db,
        tolerance_db,
        analysis_frequency,
        settings,
        bypass,
    })
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let sections = tokenize(text)?;
    let mut chain = NetworkChain::default();
    let mut sweep = None;
    let mut output = None;
    let mut oracle = false;
    let mut seed = 0;
    let mut targets = Vec::new();
    let mut free = Vec::new();
    let mut metadata = Vec::new();

    for s in &sections {
        let mut r = Reader::new(s);
        let (kind, id) = match s.name.split_once('.') {
            Some((k, id)) => (k, Some(id)),
            None => (s.name.as_str(), None),
        };
        match (kind, id) {
            ("source", None) => chain.source = parse_source(&mut r)?,
            ("nopa", Some(id)) if !id.contains('.') => {
                let p = parse_nopa(&mut r)?;
                chain.elements.push(NamedElement::new(id, Element::Nopa(p)));
            }
            ("loss", Some(id)) if !id.contains('.') => {
                let e = parse_loss(&mut r)?;
                chain.elements.push(NamedElement::new(id, e));
            }
            ("phase", Some(id)) if !id.contains('.') => {
                let e = parse_phase(&mut r)?;
                chain.elements.push(NamedElement::new(id, e));
            }
            ("detection", None) => {
                chain.detection_efficiency = r.number("efficiency")?.unwrap_or(1.0);
                chain.electronic_noise_db = r.number("electronic_noise_db")?;
            }
            ("sweep", None) => sweep = Some(parse_sweep(&mut r)?),
            ("output", None) => {
                output = r.string("path")?.map(PathBuf::from);
                seed = r.integer("seed")?.unwrap_or(0);
                oracle = r.boolean("oracle")?.unwrap_or(false);
            }
            ("metadata", None) => {
                metadata.extend(s.entries.iter().map(|e| (e.key.clone(), e.value.clone())));
                continue;
            }
            // parsed once the analysis frequency is known
            ("target", Some(id)) if !id.contains('.') => {}
            ("free", Some(param)) => {
                let p: ParamRef = param
                    .parse()
                    .map_err(|e: Error| Error::config(s.name.clone(), e.to_string()))?;
                let lower = r.number("min")?;
                let upper = r.number("max")?;
                free.push(FreeParameter {
                    param: p,
                    lower: r.require("min", lower)?,
                    upper: r.require("max", upper)?,
                });
            }
            _ => return Err(syntax(s.line, format!("unknown section `[{}]`", s.name))),
        }
        if kind != "target" {
            r.finish()?;
        }
    }

    if let Some(e) = chain.elements.iter().find(|e| e.id == "detection") {
        return Err(Error::config(e.id.clone(), "`detection` is reserved for the detectors"));
    }
    chain.validate().map_err(|e| Error::config("chain", e.to_string()))?;
    if chain.detection_efficiency <= 0.0 {
        return Err(Error::config("detection.efficiency", "must lie in (0, 1]"));
    }

    let analysis_frequency = sweep
        .as_ref()
        .and_then(|s: &SweepSection| s.analysis_frequency)
        .unwrap_or(DEFAULT_ANALYSIS_FREQUENCY);
    for s in sections.iter().filter(|s| s.name.starts_with("target.")) {
        let mut r = Reader::new(s);
        targets.push(parse_target(&mut r, &s.name["target.".len()..], analysis_frequency)?);
        r.finish()?;
    }

    let sweep = sweep.map(|s| s.spec);
    if let Some(spec) = &sweep {
        spec.validate(&chain)
            .map_err(|e| Error::config("sweep", e.to_string()))?;
    }
    let calibration = if targets.is_empty() && free.is_empty() {
        None
    } else {
        let problem = CalibrationProblem { targets, free };
        problem
            .validate(&chain)
            .map_err(|e| Error::config("target", e.to_string()))?;
        Some(problem)
    };

    Ok(SweepConfig {
        chain,
        sweep,
        analysis_frequency,
        output,
        oracle,
        seed,
        calibration,
        metadata,
    })
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[nopa.opa]
fsr_mhz = 530
linewidth_fwhm_mhz = 3.466
escape_efficiency = 0.85
sigma = 0.3
pump_phase = pi

[sweep]
kind = detuning
element = opa
";

    fn err_key(text: &str) -> (String, String) {
        match parse_config(text).unwrap_err() {
            Error::ConfigValue { key, message } => (key, message),
            other => panic!("expected a value error, got {other:?}"),
        }
    }

    fn err_line(text: &str) -> usize {
        match parse_config(text).unwrap_err() {
            Error::ConfigSyntax { line, .. } => line,
            other => panic!("expected a syntax error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert!(matches!(c.chain.source, Source::Vacuum));
        assert_eq!(c.chain.elements.len(), 1);
        let Element::Nopa(p) = &c.chain.elements[0].element else {
            panic!()
        };
        assert_eq!(p.pump_phase, PI);
        assert_eq!(p.rates.gamma_total, 1.733);
        assert_eq!(
            c.sweep,
            Some(SweepSpec::Detuning {
                element: "opa".into(),
                start: -15.0,
                stop: 15.0,
                points: 601
            })
        );
        assert_eq!(c.analysis_frequency, 3.0);
        assert!(c.calibration.is_none());
        assert!(!c.oracle);
    }

    #[test]
    fn sigma_above_threshold() {
        let (key, msg) = err_key(&MINIMAL.replace("sigma = 0.3", "sigma = 1.2"));
        assert_eq!(key, "nopa.opa.sigma");
        assert!(msg.contains("below threshold required"), "{msg}");
    }

    #[test]
    fn pump_powers_and_geometry() {
        let text = "
[nopa.nopa1]
topology = linear
geometric_length_m = 0.051
crystal_length_m = 0.01
coupler_transmission = 0.032
finesse = 165
pump_power_mw = 120
threshold_power_mw = 200
pump_phase = -pi/2
";
        let c = parse_config(text).unwrap();
        let Element::Nopa(p) = &c.chain.elements[0].element else {
            panic!()
        };
        assert!((p.sigma - 0.774597).abs() < 1e-6);
        assert!((p.rates.escape_efficiency - 0.8403).abs() < 1e-3);
        assert_eq!(p.pump_phase, -PI / 2.0);
        let (key, _) = err_key(&text.replace("pump_power_mw = 120", "pump_power_mw = 250"));
        assert_eq!(key, "nopa.nopa1.pump_power_mw");
        let (key, _) = err_key(&format!("{text}sigma = 0.5\n"));
        assert_eq!(key, "nopa.nopa1.sigma");
    }

    #[test]
    fn unknown_keys_and_sections_fail_closed() {
        let (key, _) = err_key(&format!("{MINIMAL}colour = red\n"));
        assert_eq!(key, "sweep.colour");
        assert_eq!(err_line(&format!("{MINIMAL}[bogus]\n")), 12);
        assert_eq!(err_line(&format!("{MINIMAL}[nopa.a.b]\n")), 12);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        assert_eq!(err_line("x = 1\n"), 1);
        assert_eq!(err_line("[sweep]\nkind detuning\n"), 2);
        assert_eq!(err_line("\n\n[sweep\n"), 3);
        assert_eq!(err_line("[sweep]\nkind = a\nkind = b\n"), 3);
        assert_eq!(err_line("[sweep]\n[sweep]\n"), 2);
        assert_eq!(err_line("[sweep]\nkind =\n"), 2);
    }

    #[test]
    fn semantic_errors_carry_key_paths() {
        assert_eq!(
            err_key(&MINIMAL.replace("sigma = 0.3", "sigma = abc")).0,
            "nopa.opa.sigma"
        );
        assert_eq!(err_key(&format!("{MINIMAL}points = 1\n")).0, "sweep.points");
        assert_eq!(err_key(&MINIMAL.replace("element = opa", "element = ghost")).0, "sweep");
        assert_eq!(err_key(&format!("{MINIMAL}start_mhz = inf\n")).0, "sweep.start_mhz");
        assert_eq!(
            err_key(&MINIMAL.replace("pump_phase = pi", "")).0,
            "nopa.opa.pump_phase"
        );
        assert_eq!(
            err_key(&format!("{MINIMAL}[loss.l]\nefficiency = 1.5\n")).0,
            "loss.l.efficiency"
        );
    }

    #[test]
    fn chain_order_follows_sections() {
        let text = format!("[loss.a]\nefficiency = 0.5\n{MINIMAL}[phase.p]\nsignal_rad = 0.1\n[loss.b]\nefficiency_signal = 0.9\nefficiency_idler = 0.8\n[detection]\nefficiency = 0.95\nelectronic_noise_db = -20\n");
        let c = parse_config(&text).unwrap();
        let ids: Vec<&str> = c.chain.elements.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "opa", "p", "b"]);
        assert_eq!(c.chain.elements[3].element, Element::Loss([0.9, 0.8]));
        assert_eq!(c.chain.detection_efficiency, 0.95);
        assert_eq!(c.chain.electronic_noise_db, Some(-20.0));
    }

    #[test]
    fn calibration_sections() {
        let text = format!(
            "{MINIMAL}analysis_frequency_mhz = 2.5
[loss.eta]
efficiency = 0.9
[output]
path = out.csv
seed = 42
oracle = true
[target.res]
observable = v_xsum_db
target_db = -3.0
set.opa.pump_phase = 0
bypass = eta
[free.eta.efficiency]
min = 0.5
max = 1
"
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(c.output, Some(PathBuf::from("out.csv")));
        assert_eq!((c.seed, c.oracle), (42, true));
        let p = c.calibration.unwrap();
        let t = &p.targets[0];
        assert_eq!((t.analysis_frequency, t.tolerance_db), (2.5, 0.1));
        assert_eq!(t.settings, vec![("opa.pump_phase".parse::<ParamRef>().unwrap(), 0.0)]);
        assert_eq!(t.bypass, vec!["eta".to_string()]);
        assert_eq!(p.free[0].param, "eta.efficiency".parse().unwrap());

        let too_many = format!("{text}[free.opa.sigma]\nmin = 0\nmax = 0.9\n");
        assert_eq!(err_key(&too_many).0, "target");
        assert_eq!(err_key(&text.replace("v_xsum_db", "v_zzz")).0, "target.res.observable");
        assert_eq!(
            err_key(&text.replace("set.opa.pump_phase", "set.opa.colour")).0,
            "target.res.set.opa.colour"
        );
    }

    #[test]
    fn epr_source() {
        let text = format!("[source]\nkind = epr\nsqueezed_db = -2.4\nantisqueezed_db = 9\n{MINIMAL}");
        let c = parse_config(&text).unwrap();
        let s = c.chain.source.spectrum(3.0).unwrap();
        assert!((s.matrix()[(0, 0)].re - (10f64.powf(-0.24) + 10f64.powf(0.9)) / 2.0).abs() < 1e-12);
        let bad = text.replace("antisqueezed_db = 9", "antisqueezed_db = -9");
        assert_eq!(err_key(&bad).0, "source.antisqueezed_db");
    }

    #[test]
    fn metadata_is_kept_but_inert() {
        let text = format!("[metadata]\nseed_power_mw = 10\noutput_power_uw = 52\n{MINIMAL}");
        let c = parse_config(&text).unwrap();
        assert_eq!(
            c.metadata,
            vec![
                ("seed_power_mw".into(), "10".into()),
                ("output_power_uw".into(), "52".into())
            ]
        );
        let plain = parse_config(MINIMAL).unwrap();
        let f = 3.0;
        let (a, b) = (
            crate::network::evaluate(&c.chain, &Default::default(), f).unwrap(),
            crate::network::evaluate(&plain.chain, &Default::default(), f).unwrap(),
        );
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi"), Some(PI));
        assert_eq!(parse_angle("-pi"), Some(-PI));
        assert_eq!(parse_angle("pi/2"), Some(PI / 2.0));
        assert_eq!(parse_angle("0.5*pi"), Some(0.5 * PI));
        assert_eq!(parse_angle("3.0"), Some(3.0));
        assert_eq!(parse_angle("tau"), None);
        assert_eq!(parse_angle("pi/0"), None);
        assert_eq!(parse_angle("nan"), None);
    }

    #[test]
    fn frequency_sweep_section() {
        let text = MINIMAL.replace(
            "kind = detuning\nelement = opa",
            "kind = frequency\nstart_mhz = 0\nstop_mhz = 20\npoints = 5",
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(
            c.sweep,
            Some(SweepSpec::Frequency {
                start: 0.0,
                stop: 20.0,
                points: 5
            })
        );
        let bad = format!("{text}element = opa\n");
        assert_eq!(err_key(&bad).0, "sweep.element");
    }
}
