//! Two-photon amplitudes `psi_{s s'}(k, k')`, Bell-state constructors built from
//! null-tetrad contractions, polarization-angle fields and residual diagnostics.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{
    full_space_nodes, invariant_node_set, regions_disjoint, sum_pairs, transverse_frame, DetectorRegion, Estimate,
    Node, QuadratureSpec,
};
use crate::spinor_tetrad::{
    cminkowski, minkowski, null_tetrad, pairing, standard_spinor, wigner_phase, CFourVector, LorentzMap,
    NullMomentum, Spinor, Vec3,
};
use crate::vacuum::VacuumDensity;
use crate::wrap_angle;

/// Circular polarization label, `s = +1` or `s = -1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Helicity {
    Plus,
    Minus,
}

impl Helicity {
    pub const BOTH: [Helicity; 2] = [Helicity::Plus, Helicity::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Helicity::Plus => 1.0,
            Helicity::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Helicity {
        match self {
            Helicity::Plus => Helicity::Minus,
            Helicity::Minus => Helicity::Plus,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Helicity::Plus => 0,
            Helicity::Minus => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BellKind {
    Bell11,
    Bell12,
    Bell21,
    Bell22,
}

impl BellKind {
    /// Anti-correlated in the circular basis (`psi_{+-}`, `psi_{-+}` populated).
    pub fn circular_anti(self) -> bool {
        matches!(self, BellKind::Bell11 | BellKind::Bell12)
    }

    /// Anti-correlated in the linear basis.
    pub fn linear_anti(self) -> bool {
        matches!(self, BellKind::Bell11 | BellKind::Bell21)
    }

    pub fn active_pairs(self) -> [(Helicity, Helicity); 2] {
        if self.circular_anti() {
            [(Helicity::Plus, Helicity::Minus), (Helicity::Minus, Helicity::Plus)]
        } else {
            [(Helicity::Plus, Helicity::Plus), (Helicity::Minus, Helicity::Minus)]
        }
    }
}

/// Tetrad contraction for a Bell kind; zero outside the kind's helicity support.
fn tetrad_contraction(kind: BellKind, s: Helicity, s2: Helicity, m1: &CFourVector, m2: &CFourVector) -> C64 {
    use Helicity::*;
    let conj = |v: &CFourVector| v.map(|z| z.conj());
    match (kind.circular_anti(), s, s2) {
        (true, Plus, Minus) => cminkowski(m1, &conj(m2)),
        (true, Minus, Plus) => cminkowski(&conj(m1), m2),
        (false, Plus, Plus) => cminkowski(m1, m2),
        (false, Minus, Minus) => cminkowski(&conj(m1), &conj(m2)),
        _ => C64::new(0.0, 0.0),
    }
}

/// Bare tetrad amplitude (unit envelope).
pub fn bell_amplitude(kind: BellKind, k: &NullMomentum, k2: &NullMomentum, s: Helicity, s2: Helicity) -> Result<C64> {
    let m1 = null_tetrad(k)?.m_vec;
    let m2 = null_tetrad(k2)?.m_vec;
    Ok(tetrad_contraction(kind, s, s2, &m1, &m2))
}

/// Pair factor multiplying the helicity structure.
#[derive(Clone, Debug, PartialEq)]
pub enum Envelope {
    /// Integrate over all momenta.
    Unit,
    /// Product of indicators of the union of these (disjoint) regions.
    Regions(Vec<DetectorRegion>),
    /// `exp(-k.k' / scale^2)`; Lorentz invariant.
    PairGaussian { scale: f64 },
}

impl Envelope {
    pub fn factor(&self, k: &NullMomentum, k2: &NullMomentum) -> f64 {
        match self {
            Envelope::Unit => 1.0,
            Envelope::Regions(rs) => {
                let inside = |q: &NullMomentum| rs.iter().any(|r| r.contains(q));
                if inside(k) && inside(k2) {
                    1.0
                } else {
                    0.0
                }
            }
            Envelope::PairGaussian { scale } => {
                (-minkowski(&k.four_vector(), &k2.four_vector()) / (scale * scale)).exp()
            }
        }
    }

    pub fn is_invariant(&self) -> bool {
        !matches!(self, Envelope::Regions(_))
    }
}

pub type AmplitudeFn = dyn Fn(Helicity, Helicity, &NullMomentum, &NullMomentum) -> C64 + Send + Sync;

#[derive(Clone)]
pub enum GeneralForm {
    /// `psi_{ss'} = coeffs[s][s'] * T_{ss'}` with T the four tetrad contractions
    /// (`m.m'`, `m.mbar'`, `mbar.m'`, `mbar.mbar'`); index 0 is `+`.
    TetradTable { coeffs: [[C64; 2]; 2] },
    /// `psi_{++} = conj(<k k'>)^2`, `psi_{--} = <k k'>^2` with `<k k'>` the
    /// symplectic product of the momentum spinors; exactly covariant under every map.
    SpinorProduct,
    /// Arbitrary evaluator.
    Custom(Arc<AmplitudeFn>),
}

impl fmt::Debug for GeneralForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneralForm::TetradTable { coeffs } => write!(f, "TetradTable({coeffs:?})"),
            GeneralForm::SpinorProduct => write!(f, "SpinorProduct"),
            GeneralForm::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub enum AmplitudeKind {
    Bell(BellKind),
    General(GeneralForm),
}

#[derive(Clone, Debug)]
pub struct TwoPhotonAmplitude {
    pub kind: AmplitudeKind,
    pub envelope: Envelope,
}

/// Per-momentum data reused across many pair evaluations.
#[derive(Clone, Copy, Debug)]
pub struct Prepared {
    pub k: NullMomentum,
    pub m: CFourVector,
    pub pi: Spinor,
}

pub fn prepare(k: &NullMomentum) -> Result<Prepared> {
    Ok(Prepared { k: *k, m: null_tetrad(k)?.m_vec, pi: standard_spinor(k)? })
}

impl TwoPhotonAmplitude {
    pub fn bell(kind: BellKind, envelope: Envelope) -> Self {
        Self { kind: AmplitudeKind::Bell(kind), envelope }
    }

    pub fn general(form: GeneralForm, envelope: Envelope) -> Self {
        Self { kind: AmplitudeKind::General(form), envelope }
    }

    pub fn bell_kind(&self) -> Option<BellKind> {
        match self.kind {
            AmplitudeKind::Bell(b) => Some(b),
            AmplitudeKind::General(_) => None,
        }
    }

    /// Helicity pairs that can be nonzero.
    pub fn active_pairs(&self) -> Vec<(Helicity, Helicity)> {
        match &self.kind {
            AmplitudeKind::Bell(b) => b.active_pairs().to_vec(),
            AmplitudeKind::General(GeneralForm::SpinorProduct) => {
                vec![(Helicity::Plus, Helicity::Plus), (Helicity::Minus, Helicity::Minus)]
            }
            AmplitudeKind::General(_) => {
                let mut v = Vec::with_capacity(4);
                for s in Helicity::BOTH {
                    for s2 in Helicity::BOTH {
                        v.push((s, s2));
                    }
                }
                v
            }
        }
    }

    pub fn psi_prepared(&self, s: Helicity, s2: Helicity, a: &Prepared, b: &Prepared) -> C64 {
        let env = self.envelope.factor(&a.k, &b.k);
        if env == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let core = match &self.kind {
            AmplitudeKind::Bell(kind) => tetrad_contraction(*kind, s, s2, &a.m, &b.m),
            AmplitudeKind::General(GeneralForm::TetradTable { coeffs }) => {
                let kind = if s == s2 { BellKind::Bell21 } else { BellKind::Bell11 };
                coeffs[s.index()][s2.index()] * tetrad_contraction(kind, s, s2, &a.m, &b.m)
            }
            AmplitudeKind::General(GeneralForm::SpinorProduct) => {
                let br = pairing(&a.pi, &b.pi);
                match (s, s2) {
                    (Helicity::Plus, Helicity::Plus) => (br * br).conj(),
                    (Helicity::Minus, Helicity::Minus) => br * br,
                    _ => C64::new(0.0, 0.0),
                }
            }
            AmplitudeKind::General(GeneralForm::Custom(f)) => f(s, s2, &a.k, &b.k),
        };
        core * env
    }

    pub fn psi(&self, s: Helicity, s2: Helicity, k: &NullMomentum, k2: &NullMomentum) -> Result<C64> {
        Ok(self.psi_prepared(s, s2, &prepare(k)?, &prepare(k2)?))
    }
}

/// `max_{s s'} |psi_{ss'}(k, k') - psi_{s's}(k', k)|`
pub fn symmetry_residual(amp: &TwoPhotonAmplitude, k: &NullMomentum, k2: &NullMomentum) -> Result<f64> {
    let (a, b) = (prepare(k)?, prepare(k2)?);
    let mut worst: f64 = 0.0;
    for s in Helicity::BOTH {
        for s2 in Helicity::BOTH {
            worst = worst.max((amp.psi_prepared(s, s2, &a, &b) - amp.psi_prepared(s2, s, &b, &a)).norm());
        }
    }
    Ok(worst)
}

/// Piecewise-linear angle on a cone: `offset + grad . (d.e1, d.e2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConePatch {
    pub axis: Vec3,
    pub half_angle: f64,
    pub offset: f64,
    pub grad: [f64; 2],
}

impl ConePatch {
    fn local(&self, d: &Vec3) -> [f64; 2] {
        let (e1, e2) = transverse_frame(&self.axis);
        [dot3(d, &e1), dot3(d, &e2)]
    }

    fn value(&self, d: &Vec3) -> f64 {
        let u = self.local(d);
        self.offset + self.grad[0] * u[0] + self.grad[1] * u[1]
    }
}

fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ThetaKind {
    Constant { theta0: f64 },
    /// `theta0 + slope * azimuth(k)`
    Azimuthal { theta0: f64, slope: f64 },
    /// Nearest tabulated direction wins.
    Tabulated { points: Vec<(Vec3, f64)> },
    /// Nearest cone (by angle to its axis) wins.
    ConeLinear { patches: Vec<ConePatch> },
}

/// Polarization reference angle `theta(k)`, optionally in transformed form
/// `theta(map^-1 k) + 2 Theta(map, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaField {
    pub kind: ThetaKind,
    transform: Option<LorentzMap>,
}

impl ThetaField {
    pub fn new(kind: ThetaKind) -> Result<Self> {
        match &kind {
            ThetaKind::Tabulated { points } if points.is_empty() => {
                return Err(Error::Input("tabulated theta field needs at least one point".into()))
            }
            ThetaKind::ConeLinear { patches } if patches.is_empty() => {
                return Err(Error::Input("cone-linear theta field needs at least one patch".into()))
            }
            _ => {}
        }
        Ok(Self { kind, transform: None })
    }

    pub fn constant(theta0: f64) -> Self {
        Self { kind: ThetaKind::Constant { theta0 }, transform: None }
    }

    pub fn transform(&self) -> Option<&LorentzMap> {
        self.transform.as_ref()
    }

    /// The same field with any transform removed.
    pub fn base(&self) -> ThetaField {
        Self { kind: self.kind.clone(), transform: None }
    }

    fn base_value(&self, k: &NullMomentum) -> f64 {
        let d = k.dir();
        match &self.kind {
            ThetaKind::Constant { theta0 } => *theta0,
            ThetaKind::Azimuthal { theta0, slope } => theta0 + slope * k.azimuth(),
            ThetaKind::Tabulated { points } => {
                let best = points
                    .iter()
                    .max_by(|a, b| dot3(&a.0, &d).total_cmp(&dot3(&b.0, &d)))
                    .expect("non-empty table");
                best.1
            }
            ThetaKind::ConeLinear { patches } => {
                let best = patches
                    .iter()
                    .max_by(|a, b| dot3(&a.axis, &d).total_cmp(&dot3(&b.axis, &d)))
                    .expect("non-empty patch list");
                best.value(&d)
            }
        }
    }

    pub fn value(&self, k: &NullMomentum) -> Result<f64> {
        match &self.transform {
            None => Ok(wrap_angle(self.base_value(k))),
            Some(map) => {
                let back = map.inverse().apply(k);
                Ok(wrap_angle(self.base_value(&back) + wigner_phase(map, k)?))
            }
        }
    }

    /// Transformed-field form; composes with an existing transform.
    pub fn with_transform(&self, map: &LorentzMap) -> ThetaField {
        let total = match &self.transform {
            Some(t) => map.compose(t),
            None => *map,
        };
        Self { kind: self.kind.clone(), transform: Some(total) }
    }

    /// Adds `delta` to every patch of a cone-linear field whose axis matches `axis`.
    pub fn shifted_on(&self, axis: &Vec3, delta: f64) -> ThetaField {
        let mut out = self.clone();
        if let ThetaKind::ConeLinear { patches } = &mut out.kind {
            for p in patches.iter_mut() {
                if dot3(&p.axis, axis) > 1.0 - 1e-12 {
                    p.offset += delta;
                }
            }
        }
        out
    }
}

/// `|LHS - RHS|` of the Bell condition for `condition`.
pub fn bell_condition_residual(
    condition: BellKind,
    amp: &TwoPhotonAmplitude,
    theta: &ThetaField,
    k: &NullMomentum,
    k2: &NullMomentum,
) -> Result<f64> {
    let (a, b) = (prepare(k)?, prepare(k2)?);
    let (t1, t2) = (theta.value(k)?, theta.value(k2)?);
    Ok(condition_defect(condition, amp, &a, &b, t1, t2))
}

fn condition_defect(condition: BellKind, amp: &TwoPhotonAmplitude, a: &Prepared, b: &Prepared, t1: f64, t2: f64) -> f64 {
    use Helicity::*;
    let e = |x: f64| C64::from_polar(1.0, x);
    match condition {
        BellKind::Bell11 => {
            (e(t1 - t2) * amp.psi_prepared(Plus, Minus, a, b) + e(t2 - t1) * amp.psi_prepared(Minus, Plus, a, b)).norm()
        }
        BellKind::Bell12 => {
            (e(t1 - t2) * amp.psi_prepared(Plus, Minus, a, b) - e(t2 - t1) * amp.psi_prepared(Minus, Plus, a, b)).norm()
        }
        BellKind::Bell21 => {
            (e(t1 + t2) * amp.psi_prepared(Plus, Plus, a, b) + e(-t1 - t2) * amp.psi_prepared(Minus, Minus, a, b)).norm()
        }
        BellKind::Bell22 => {
            (e(t1 + t2) * amp.psi_prepared(Plus, Plus, a, b) - e(-t1 - t2) * amp.psi_prepared(Minus, Minus, a, b)).norm()
        }
    }
}

/// Scale of the amplitude entering a condition (for relative residuals).
fn condition_scale(condition: BellKind, amp: &TwoPhotonAmplitude, a: &Prepared, b: &Prepared) -> f64 {
    let (s, s2) = condition.active_pairs()[0];
    amp.psi_prepared(s, s2, a, b).norm()
}

/// `|wrap(source(map^-1 k) - theta(k) + 2 Theta(map, k))|`, where `source` is the
/// untransformed field when `theta` carries a transform and `theta` itself otherwise.
pub fn theta_wigner_residual(theta: &ThetaField, map: &LorentzMap, k: &NullMomentum) -> Result<f64> {
    let source = theta.base();
    let back = map.inverse().apply(k);
    Ok(wrap_angle(source.value(&back)? - theta.value(k)? + wigner_phase(map, k)?).abs())
}

/// `max |psi(L^-1 k, L^-1 k') - e^{2is Theta(k)} e^{2is' Theta(k')} psi(k, k')|` over active pairs.
pub fn covariance_residual(amp: &TwoPhotonAmplitude, map: &LorentzMap, k: &NullMomentum, k2: &NullMomentum) -> Result<f64> {
    let inv = map.inverse();
    let (a, b) = (prepare(k)?, prepare(k2)?);
    let (ab, bb) = (prepare(&inv.apply(k))?, prepare(&inv.apply(k2))?);
    let (w1, w2) = (wigner_phase(map, k)?, wigner_phase(map, k2)?);
    let mut worst: f64 = 0.0;
    for (s, s2) in amp.active_pairs() {
        let phase = C64::from_polar(1.0, s.sign() * w1 + s2.sign() * w2);
        let d = amp.psi_prepared(s, s2, &ab, &bb) - phase * amp.psi_prepared(s, s2, &a, &b);
        worst = worst.max(d.norm());
    }
    Ok(worst)
}

/// Oscillator count `N` of the reducible representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OscillatorCount {
    Finite(u64),
    Infinite,
}

impl OscillatorCount {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("oscillator count N must be at least 1".into()));
        }
        Ok(OscillatorCount::Finite(n))
    }

    /// `1/N`
    pub fn inverse(&self) -> f64 {
        match self {
            OscillatorCount::Finite(n) => 1.0 / *n as f64,
            OscillatorCount::Infinite => 0.0,
        }
    }

    /// `(N-1)/N`
    pub fn separated_fraction(&self) -> f64 {
        1.0 - self.inverse()
    }
}

impl fmt::Display for OscillatorCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OscillatorCount::Finite(n) => write!(f, "{n}"),
            OscillatorCount::Infinite => write!(f, "inf"),
        }
    }
}

const FULL_SPACE_AXIS: Vec3 = [0.8, 0.36, 0.48];

/// Quadrature nodes covering the support of an envelope, with prepared tetrads.
#[derive(Clone, Debug)]
pub struct SupportNodes {
    pub nodes: Vec<Node>,
    pub prepared: Vec<Prepared>,
}

pub fn support_nodes(envelope: &Envelope, z: &VacuumDensity, spec: &QuadratureSpec) -> Result<SupportNodes> {
    let nodes = match envelope {
        Envelope::Regions(rs) => {
            for (i, a) in rs.iter().enumerate() {
                for b in &rs[i + 1..] {
                    if !regions_disjoint(a, b) {
                        return Err(Error::Precondition(
                            "envelope regions must be directionally disjoint".into(),
                        ));
                    }
                }
            }
            let mut all = Vec::new();
            for r in rs {
                all.extend(invariant_node_set(r, spec)?);
            }
            all
        }
        _ => {
            spec.validate()?;
            // A tilted polar axis keeps every node off the chart cut at -z.
            full_space_nodes(&z.radial_rule(), &FULL_SPACE_AXIS, spec)
        }
    };
    let prepared = nodes.iter().map(|n| prepare(&n.k)).collect::<Result<Vec<_>>>()?;
    Ok(SupportNodes { nodes, prepared })
}

/// The two integrals entering the norm: coincident `sum int |psi(k,k)|^2 Z` and
/// separated `sum intint |psi(k,k')|^2 Z Z'`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormParts {
    pub coincident: f64,
    pub separated: f64,
}

pub fn norm_parts_on(amp: &TwoPhotonAmplitude, z: &VacuumDensity, sup: &SupportNodes) -> NormParts {
    let zs: Vec<f64> = sup.nodes.iter().map(|n| z.evaluate(&n.k) * n.weight).collect();
    let pairs = amp.active_pairs();
    let diag: Vec<f64> = (0..zs.len())
        .map(|i| {
            let p = &sup.prepared[i];
            pairs.iter().map(|&(s, s2)| amp.psi_prepared(s, s2, p, p).norm_sqr()).sum::<f64>() * zs[i]
        })
        .collect();
    let coincident = crate::measure::pairwise_sum_real(&diag);
    let separated = sum_pairs(zs.len(), zs.len(), |i, j| {
        let (a, b) = (&sup.prepared[i], &sup.prepared[j]);
        let v: f64 = pairs.iter().map(|&(s, s2)| amp.psi_prepared(s, s2, a, b).norm_sqr()).sum();
        C64::new(v * zs[i] * zs[j], 0.0)
    })
    .re;
    NormParts { coincident, separated }
}

impl NormParts {
    /// `(2/N) coincident + (2(N-1)/N) separated`
    pub fn combine(&self, n: OscillatorCount) -> f64 {
        2.0 * n.inverse() * self.coincident + 2.0 * n.separated_fraction() * self.separated
    }
}

/// `<Psi|Psi>` with the N-oscillator weights; error from node-count refinement.
pub fn two_photon_norm(
    amp: &TwoPhotonAmplitude,
    z: &VacuumDensity,
    n_osc: OscillatorCount,
    spec: &QuadratureSpec,
) -> Result<Estimate> {
    let fine = norm_parts_on(amp, z, &support_nodes(&amp.envelope, z, spec)?).combine(n_osc);
    let coarse = norm_parts_on(amp, z, &support_nodes(&amp.envelope, z, &spec.coarsened())?).combine(n_osc);
    Ok(Estimate { value: C64::new(fine, 0.0), err: (fine - coarse).abs() })
}

/// Quality of a fitted angle field over the sampled pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub max_relative_residual: f64,
    pub rms_relative_residual: f64,
    pub pairs: usize,
}

/// Least-squares cone-linear field on two regions minimizing the Bell-condition
/// phase mismatch over region-pair samples.
pub fn fit_theta(
    condition: BellKind,
    amp: &TwoPhotonAmplitude,
    region_a: &DetectorRegion,
    region_b: &DetectorRegion,
    spec: &QuadratureSpec,
) -> Result<(ThetaField, FitReport)> {
    let sample = QuadratureSpec { n_freq: 2, ..*spec };
    let na = invariant_node_set(region_a, &sample)?;
    let nb = invariant_node_set(region_b, &sample)?;
    let pa = na.iter().map(|n| prepare(&n.k)).collect::<Result<Vec<_>>>()?;
    let pb = nb.iter().map(|n| prepare(&n.k)).collect::<Result<Vec<_>>>()?;
    let target = |a: &Prepared, b: &Prepared| -> Option<f64> {
        use Helicity::*;
        let (num, den, sign) = match condition {
            BellKind::Bell11 => (amp.psi_prepared(Minus, Plus, a, b), amp.psi_prepared(Plus, Minus, a, b), -1.0),
            BellKind::Bell12 => (amp.psi_prepared(Minus, Plus, a, b), amp.psi_prepared(Plus, Minus, a, b), 1.0),
            BellKind::Bell21 => (amp.psi_prepared(Minus, Minus, a, b), amp.psi_prepared(Plus, Plus, a, b), -1.0),
            BellKind::Bell22 => (amp.psi_prepared(Minus, Minus, a, b), amp.psi_prepared(Plus, Plus, a, b), 1.0),
        };
        if den.norm() < 1e-300 || num.norm() < 1e-300 {
            return None;
        }
        Some((num / den * sign).arg())
    };
    let center_a = prepare(&NullMomentum::new(0.5 * (region_a.freq_lo() + region_a.freq_hi()), region_a.axis())?)?;
    let center_b = prepare(&NullMomentum::new(0.5 * (region_b.freq_lo() + region_b.freq_hi()), region_b.axis())?)?;
    let phi0 = target(&center_a, &center_b)
        .ok_or_else(|| Error::Precondition("amplitude vanishes between the region axes; cannot fit theta".into()))?;
    let patch = |r: &DetectorRegion| ConePatch { axis: r.axis(), half_angle: r.half_angle(), offset: 0.0, grad: [0.0, 0.0] };
    let (ga, gb) = (patch(region_a), patch(region_b));
    let difference = condition.circular_anti();
    let mut rows: Vec<[f64; 5]> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for a in &pa {
        let ua = ga.local(&a.k.dir());
        for b in &pb {
            if let Some(phi) = target(a, b) {
                let ub = gb.local(&b.k.dir());
                let sb = if difference { -2.0 } else { 2.0 };
                rows.push([2.0, 2.0 * ua[0], 2.0 * ua[1], sb * ub[0], sb * ub[1]]);
                rhs.push(phi0 + wrap_angle(phi - phi0));
            }
        }
    }
    if rows.len() < 5 {
        return Err(Error::Precondition("too few usable sample pairs to fit theta".into()));
    }
    let m = DMatrix::from_fn(rows.len(), 5, |i, j| rows[i][j]);
    let y = DVector::from_vec(rhs);
    let sol = m
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Consistency(format!("theta least squares failed: {e}")))?;
    let (offset_a, offset_b) = if difference { (sol[0], 0.0) } else { (0.5 * sol[0], 0.5 * sol[0]) };
    let field = ThetaField::new(ThetaKind::ConeLinear {
        patches: vec![
            ConePatch { offset: offset_a, grad: [sol[1], sol[2]], ..ga },
            ConePatch { offset: offset_b, grad: [sol[3], sol[4]], ..gb },
        ],
    })?;
    let mut worst: f64 = 0.0;
    let mut sq = 0.0;
    let mut count = 0usize;
    for a in &pa {
        for b in &pb {
            let scale = condition_scale(condition, amp, a, b);
            if scale < 1e-300 {
                continue;
            }
            let r = condition_defect(condition, amp, a, b, field.value(&a.k)?, field.value(&b.k)?) / scale;
            worst = worst.max(r);
            sq += r * r;
            count += 1;
        }
    }
    Ok((field, FitReport { max_relative_residual: worst, rms_relative_residual: (sq / count as f64).sqrt(), pairs: count }))
}
