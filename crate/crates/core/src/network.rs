//! Optical chains: a source spectrum folded through amplifiers, losses and
//! phase shifts, ending at a pair of homodyne detectors.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nopa::{output_spectrum, NopaParams};
use crate::quad::{
    apply_transfer, combination_variance, rotation_matrix, to_db_rel_snl, vacuum_spectrum, CMatrix4, QuadCombination,
    SpectralCovariance,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Nopa(NopaParams),
    /// Power transmission per mode `[signal, idler]`.
    Loss([f64; 2]),
    /// Local phase per mode `[signal, idler]`, radians.
    PhaseShift([f64; 2]),
}

impl Element {
    pub fn loss(efficiency: f64) -> Self {
        Element::Loss([efficiency; 2])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Element::Nopa(p) => p.validate(),
            Element::Loss(eta) => eta.iter().try_for_each(|&e| check_efficiency(e)),
            Element::PhaseShift(phi) => {
                if phi.iter().all(|p| p.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::param("phase", "must be finite"))
                }
            }
        }
    }
}

fn check_efficiency(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::param("efficiency", format!("must lie in [0, 1], got {eta}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedElement {
    pub id: String,
    pub element: Element,
}

impl NamedElement {
    pub fn new(id: impl Into<String>, element: Element) -> Self {
        Self { id: id.into(), element }
    }
}

/// Provides the injected spectrum at a given analysis frequency (MHz).
pub type SpectrumProvider = Arc<dyn Fn(f64) -> Result<SpectralCovariance> + Send + Sync>;

#[derive(Clone)]
pub enum Source {
    Vacuum,
    External(SpectrumProvider),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Vacuum => f.write_str("Vacuum"),
            Source::External(_) => f.write_str("External(..)"),
        }
    }
}

impl Source {
    pub fn spectrum(&self, analysis_frequency: f64) -> Result<SpectralCovariance> {
        match self {
            Source::Vacuum => Ok(vacuum_spectrum(analysis_frequency)),
            Source::External(provider) => provider(analysis_frequency),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkChain {
    pub source: Source,
    pub elements: Vec<NamedElement>,
    pub detection_efficiency: f64,
    /// Additive detector noise floor relative to shot noise, dB. Off when `None`.
    pub electronic_noise_db: Option<f64>,
}

impl Default for NetworkChain {
    fn default() -> Self {
        Self {
            source: Source::Vacuum,
            elements: Vec::new(),
            detection_efficiency: 1.0,
            electronic_noise_db: None,
        }
    }
}

/// Per-element detuning overrides (MHz), keyed by element id.
pub type DetuningOverrides = HashMap<String, f64>;

impl NetworkChain {
    pub fn new(elements: Vec<NamedElement>) -> Self {
        Self {
            elements,
            ..Self::default()
        }
    }

    pub fn with_detection_efficiency(mut self, eta: f64) -> Self {
        self.detection_efficiency = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detection_efficiency > 0.0 && self.detection_efficiency <= 1.0) {
            return Err(Error::param(
                "detection_efficiency",
                format!("must lie in (0, 1], got {}", self.detection_efficiency),
            ));
        }
        for (i, e) in self.elements.iter().enumerate() {
            e.element.validate()?;
            if self.elements[..i].iter().any(|o| o.id == e.id) {
                return Err(Error::param("element", format!("duplicate id `{}`", e.id)));
            }
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&NamedElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn element_mut(&mut self, id: &str) -> Result<&mut NamedElement> {
        self.elements
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownElement(id.to_string()))
    }

    pub fn nopa_mut(&mut self, id: &str) -> Result<&mut NopaParams> {
        match &mut self.element_mut(id)?.element {
            Element::Nopa(p) => Ok(p),
            _ => Err(Error::param("element", format!("`{id}` is not an amplifier"))),
        }
    }

    /// Copy of the chain with element `id` removed (beam path blocked around it).
    pub fn bypassing(&self, id: &str) -> Result<Self> {
        if self.element(id).is_none() {
            return Err(Error::UnknownElement(id.to_string()));
        }
        let mut out = self.clone();
        out.elements.retain(|e| e.id != id);
        Ok(out)
    }

    pub fn get_param(&self, param: &ParamRef) -> Result<f64> {
        let Some(id) = &param.element else {
            return match param.field {
                ParamField::Efficiency => Ok(self.detection_efficiency),
                _ => Err(Error::param("detection", "only `efficiency` is adjustable")),
            };
        };
        let e = self.element(id).ok_or_else(|| Error::UnknownElement(id.clone()))?;
        match (&e.element, param.field) {
            (Element::Nopa(p), ParamField::Sigma) => Ok(p.sigma),
            (Element::Nopa(p), ParamField::PumpPhase) => Ok(p.pump_phase),
            (Element::Nopa(p), ParamField::Detuning) => Ok(p.detuning),
            (Element::Loss(eta), ParamField::Efficiency) if eta[0] == eta[1] => Ok(eta[0]),
            _ => Err(Error::param("parameter", format!("`{param}` is not adjustable"))),
        }
    }

    /// Sets one scalar parameter; the new value is validated.
    pub fn set_param(&mut self, param: &ParamRef, value: f64) -> Result<()> {
        let Some(id) = &param.element else {
            return match param.field {
                ParamField::Efficiency => {
                    self.detection_efficiency = value;
                    self.validate()
                }
                _ => Err(Error::param("detection", "only `efficiency` is adjustable")),
            };
        };
        let e = self.element_mut(id)?;
        match (&mut e.element, param.field) {
            (Element::Nopa(p), ParamField::Sigma) => p.sigma = value,
            (Element::Nopa(p), ParamField::PumpPhase) => p.pump_phase = value,
            (Element::Nopa(p), ParamField::Detuning) => p.detuning = value,
            (Element::Loss(eta), ParamField::Efficiency) => *eta = [value; 2],
            _ => return Err(Error::param("parameter", format!("`{param}` is not adjustable"))),
        }
        e.element.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamField {
    Sigma,
    PumpPhase,
    Detuning,
    Efficiency,
}

/// Reference to a scalar chain parameter, written `<element>.<field>` or
/// `detection.efficiency`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRef {
    /// `None` addresses the detectors.
    pub element: Option<String>,
    pub field: ParamField,
}

impl ParamRef {
    pub fn new(element: &str, field: ParamField) -> Self {
        Self {
            element: Some(element.to_string()),
            field,
        }
    }
}

impl fmt::Display for ParamRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let field = match self.field {
            ParamField::Sigma => "sigma",
            ParamField::PumpPhase => "pump_phase",
            ParamField::Detuning => "detuning_mhz",
            ParamField::Efficiency => "efficiency",
        };
        write!(f, "{}.{field}", self.element.as_deref().unwrap_or("detection"))
    }
}

impl FromStr for ParamRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (element, field) = s
            .rsplit_once('.')
            .ok_or_else(|| Error::config(s, "expected `<element>.<field>`"))?;
        let field = match field {
            "sigma" => ParamField::Sigma,
            "pump_phase" => ParamField::PumpPhase,
            "detuning_mhz" => ParamField::Detuning,
            "efficiency" => ParamField::Efficiency,
            other => return Err(Error::config(s, format!("unknown field `{other}`"))),
        };
        let element = (element != "detection").then(|| element.to_string());
        Ok(Self { element, field })
    }
}

/// Beamsplitter loss with equal transmission for both modes, `η·S + (1−η)·I`.
pub fn loss_channel(s: &SpectralCovariance, efficiency: f64) -> Result<SpectralCovariance> {
    loss_channel_per_mode(s, [efficiency; 2])
}

pub fn loss_channel_per_mode(s: &SpectralCovariance, efficiency: [f64; 2]) -> Result<SpectralCovariance> {
    efficiency.iter().try_for_each(|&e| check_efficiency(e))?;
    let t = [efficiency[0].sqrt(), efficiency[1].sqrt()];
    let l = [(1.0 - efficiency[0]).sqrt(), (1.0 - efficiency[1]).sqrt()];
    let diag = |v: [f64; 2]| CMatrix4::from_diagonal(&[v[0], v[0], v[1], v[1]].map(|x| Complex64::new(x, 0.0)).into());
    apply_transfer(&diag(t), s, &[diag(l)])
}

fn phase_shift(s: &SpectralCovariance, angles: [f64; 2]) -> Result<SpectralCovariance> {
    let r = rotation_matrix(angles).map(|x| Complex64::new(x, 0.0));
    apply_transfer(&r, s, &[])
}

fn add_noise_floor(s: &SpectralCovariance, db: f64) -> Result<SpectralCovariance> {
    let floor = 10f64.powf(db / 10.0);
    let m = s.matrix() + CMatrix4::identity() * Complex64::new(floor, 0.0);
    SpectralCovariance::new(m, s.analysis_frequency())
}

/// Detector-plane spectrum of `chain` at `analysis_frequency` (MHz).
pub fn evaluate(
    chain: &NetworkChain,
    detuning_of: &DetuningOverrides,
    analysis_frequency: f64,
) -> Result<SpectralCovariance> {
    chain.validate()?;
    for id in detuning_of.keys() {
        match chain.element(id) {
            Some(NamedElement {
                element: Element::Nopa(_),
                ..
            }) => {}
            Some(_) => return Err(Error::param("detuning", format!("`{id}` is not an amplifier"))),
            None => return Err(Error::UnknownElement(id.clone())),
        }
    }
    let mut s = chain.source.spectrum(analysis_frequency)?;
    for e in &chain.elements {
        s = match &e.element {
            Element::Nopa(p) => {
                let mut p = *p;
                if let Some(&d) = detuning_of.get(&e.id) {
                    p.detuning = d;
                }
                output_spectrum(&p, &s)?
            }
            Element::Loss(eta) => loss_channel_per_mode(&s, *eta)?,
            Element::PhaseShift(phi) => phase_shift(&s, *phi)?,
        };
    }
    s = loss_channel(&s, chain.detection_efficiency)?;
    if let Some(db) = chain.electronic_noise_db {
        s = add_noise_floor(&s, db)?;
    }
    Ok(s)
}

/// The four measured correlation variances (dB rel. SNL) and both Duan sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub v_xsum_db: f64,
    pub v_ydiff_db: f64,
    pub v_xdiff_db: f64,
    pub v_ysum_db: f64,
    /// `⟨δ²(X₁+X₂)⟩ + ⟨δ²(Y₁−Y₂)⟩`.
    pub duan_plus: f64,
    /// `⟨δ²(X₁−X₂)⟩ + ⟨δ²(Y₁+Y₂)⟩`.
    pub duan_minus: f64,
}

pub fn correlation_report(s: &SpectralCovariance) -> Result<CorrelationReport> {
    let var = |c: QuadCombination| combination_variance(s, &c);
    let xs = var(QuadCombination::x_sum())?;
    let yd = var(QuadCombination::y_diff())?;
    let xd = var(QuadCombination::x_diff())?;
    let ys = var(QuadCombination::y_sum())?;
    Ok(CorrelationReport {
        v_xsum_db: to_db_rel_snl(xs, 2.0)?,
        v_ydiff_db: to_db_rel_snl(yd, 2.0)?,
        v_xdiff_db: to_db_rel_snl(xd, 2.0)?,
        v_ysum_db: to_db_rel_snl(ys, 2.0)?,
        duan_plus: xs + yd,
        duan_minus: xd + ys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nopa::DecayRates;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn epr_source() -> Source {
        Source::External(Arc::new(|f| SpectralCovariance::epr(0.575, 7.9, f)))
    }

    fn nopa(sigma: f64, phase: f64, det: f64) -> Element {
        let r = DecayRates::from_decay(530.0, 1.733, 0.852).unwrap();
        Element::Nopa(NopaParams::new(r, sigma, phase, det).unwrap())
    }

    #[test]
    fn loss_channel_cases() {
        let s = SpectralCovariance::epr(0.212, 13.7, 3.0).unwrap();
        assert_eq!(loss_channel(&s, 1.0).unwrap().matrix(), s.matrix());
        let v = loss_channel(&s, 0.0).unwrap();
        assert_abs_diff_eq!((v.matrix() - CMatrix4::identity()).norm(), 0.0, epsilon = 1e-15);
        let out = loss_channel(&s, 0.539).unwrap();
        let x = combination_variance(&out, &QuadCombination::x_sum()).unwrap() / 2.0;
        assert_abs_diff_eq!(x, 0.539 * 0.212 + 0.461, epsilon = 1e-12);
        assert_abs_diff_eq!(x, 0.575, epsilon = 1e-3);
        assert!(loss_channel(&s, 1.2).is_err());
        assert!(loss_channel(&s, -0.1).is_err());
    }

    #[test]
    fn empty_chain_passes_vacuum() {
        let s = evaluate(&NetworkChain::default(), &HashMap::new(), 3.0).unwrap();
        assert_eq!(s.matrix(), &CMatrix4::identity());
        let r = correlation_report(&s).unwrap();
        assert_eq!([r.v_xsum_db, r.v_ydiff_db, r.v_xdiff_db, r.v_ysum_db], [0.0; 4]);
        assert_eq!((r.duan_plus, r.duan_minus), (4.0, 4.0));
    }

    #[test]
    fn losses_compose() {
        let mut a = NetworkChain::new(vec![
            NamedElement::new("l1", Element::loss(0.8)),
            NamedElement::new("l2", Element::loss(0.5)),
        ]);
        a.source = epr_source();
        let mut b = NetworkChain::new(vec![NamedElement::new("l", Element::loss(0.4))]);
        b.source = epr_source();
        let sa = evaluate(&a, &HashMap::new(), 3.0).unwrap();
        let sb = evaluate(&b, &HashMap::new(), 3.0).unwrap();
        assert_abs_diff_eq!((sa.matrix() - sb.matrix()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn overrides_validate_targets() {
        let chain = NetworkChain::new(vec![
            NamedElement::new("n", nopa(0.3, PI, 0.0)),
            NamedElement::new("l", Element::loss(0.9)),
        ]);
        let mut o = HashMap::new();
        o.insert("missing".to_string(), 1.0);
        assert!(matches!(evaluate(&chain, &o, 3.0), Err(Error::UnknownElement(_))));
        let mut o = HashMap::new();
        o.insert("l".to_string(), 1.0);
        assert!(evaluate(&chain, &o, 3.0).is_err());
        let mut o = HashMap::new();
        o.insert("n".to_string(), 2.0);
        let with = evaluate(&chain, &o, 3.0).unwrap();
        let mut moved = chain.clone();
        moved.nopa_mut("n").unwrap().detuning = 2.0;
        assert_eq!(with, evaluate(&moved, &HashMap::new(), 3.0).unwrap());
    }

    #[test]
    fn param_refs_roundtrip_and_apply() {
        let mut chain = NetworkChain::new(vec![
            NamedElement::new("nopa2", nopa(0.3, PI, 0.0)),
            NamedElement::new("eta2", Element::loss(0.9)),
        ]);
        for text in [
            "nopa2.sigma",
            "eta2.efficiency",
            "detection.efficiency",
            "nopa2.pump_phase",
        ] {
            let p: ParamRef = text.parse().unwrap();
            assert_eq!(p.to_string(), text);
        }
        let sigma: ParamRef = "nopa2.sigma".parse().unwrap();
        chain.set_param(&sigma, 0.5).unwrap();
        assert_eq!(chain.get_param(&sigma).unwrap(), 0.5);
        assert!(chain.set_param(&sigma, 1.5).is_err());
        assert!("eta2.sigma"
            .parse::<ParamRef>()
            .map(|p| chain.set_param(&p, 0.1))
            .unwrap()
            .is_err());
        assert!("nopa2.bogus".parse::<ParamRef>().is_err());
        assert!("nosuch.sigma"
            .parse::<ParamRef>()
            .map(|p| chain.get_param(&p))
            .unwrap()
            .is_err());
    }

    #[test]
    fn detection_noise_floor_raises_variances() {
        let chain = NetworkChain {
            electronic_noise_db: Some(-10.0),
            ..NetworkChain::default()
        };
        let s = evaluate(&chain, &HashMap::new(), 1.0).unwrap();
        assert_abs_diff_eq!(s.matrix()[(0, 0)].re, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn bypass_removes_element() {
        let chain = NetworkChain::new(vec![
            NamedElement::new("a", Element::loss(0.5)),
            NamedElement::new("b", nopa(0.3, 0.0, 0.0)),
        ]);
        let b = chain.bypassing("b").unwrap();
        assert_eq!(b.elements.len(), 1);
        assert!(chain.bypassing("zz").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let chain = NetworkChain::new(vec![
            NamedElement::new("a", Element::loss(0.5)),
            NamedElement::new("a", Element::loss(0.6)),
        ]);
        assert!(evaluate(&chain, &HashMap::new(), 1.0).is_err());
    }
}
