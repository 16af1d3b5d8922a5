//! Normalized EPR averages for two-photon states: rest frame, both detectors
//! transformed (case 1) and one detector transformed (case 2).
//!
//! Convention: the first momentum slot of `psi` is Alice's (angle `alpha`), the
//! second Bob's (angle `beta`). The numerator is
//! `(4(N-1)/N) sum_{ss'} intint_{A x B} e^{2i(s alpha + s' beta)} conj(psi_{-s,-s'}) psi_{ss'} Z Z'`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::measure::{invariant_node_set, regions_disjoint, sum_pairs, DetectorRegion, Node, QuadratureSpec};
use crate::spinor_tetrad::{wigner_phase, LorentzMap, NullMomentum};
use crate::states::{
    norm_parts_on, prepare, support_nodes, BellKind, Helicity, NormParts, OscillatorCount, Prepared, ThetaField,
    TwoPhotonAmplitude,
};
use crate::vacuum::VacuumDensity;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorSetting {
    pub region: DetectorRegion,
    pub angle: f64,
}

impl DetectorSetting {
    pub fn new(region: DetectorRegion, angle: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::Input(format!("analyzer angle must be finite, got {angle}")));
        }
        Ok(Self { region, angle })
    }
}

/// Which frame change is applied and to whom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransformCase {
    Rest,
    /// Both detectors (case 1).
    Joint(LorentzMap),
    /// Alice's detector only (case 2).
    AliceOnly(LorentzMap),
    /// Bob's detector only; `BobOnly(L.inverse())` is the partner ordering of `AliceOnly(L)`.
    BobOnly(LorentzMap),
}

/// Two equivalent-in-principle ways of writing case 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Picture {
    /// Detector regions and analyzer angles transformed, vacuum at rest.
    #[default]
    Detector,
    /// Vacuum density transformed, detectors at rest.
    Vacuum,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub amplitude: TwoPhotonAmplitude,
    pub theta: Option<ThetaField>,
    pub vacuum: VacuumDensity,
    pub n_osc: OscillatorCount,
    pub alice: DetectorSetting,
    pub bob: DetectorSetting,
    pub case: TransformCase,
    pub picture: Picture,
    pub quadrature: QuadratureSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationResult {
    pub numerator: f64,
    pub denominator: f64,
    pub value: f64,
    pub err_estimate: f64,
    /// `(2/N)`-weighted same-momentum part of the denominator.
    pub coincident: f64,
    /// Max relative Bell-condition residual over sampled node pairs (bell kinds with a theta field).
    pub bell_residual_max: Option<f64>,
    /// Bell-specialized value, reported when the condition residual is below 1e-3.
    pub bell_value: Option<f64>,
}

/// Per-node data on one detector side.
#[derive(Clone, Debug, Default)]
pub struct SideNodes {
    /// Momentum at which the amplitude is evaluated.
    pub prepared: Vec<Prepared>,
    /// Effective analyzer angle at the node.
    pub angle: Vec<f64>,
    /// Quadrature weight times vacuum density.
    pub weight: Vec<f64>,
}

impl SideNodes {
    pub fn len(&self) -> usize {
        self.prepared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prepared.is_empty()
    }
}

/// `sum_{ss'} e^{2i(s a + s' b)} conj(psi_{-s,-s'}) psi_{ss'}` for a 2x2 table (index 0 is `+`).
pub fn pair_kernel(psi: &[[C64; 2]; 2], a: f64, b: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for s in Helicity::BOTH {
        for s2 in Helicity::BOTH {
            let phase = C64::from_polar(1.0, 2.0 * (s.sign() * a + s2.sign() * b));
            acc += phase * psi[s.flip().index()][s2.flip().index()].conj() * psi[s.index()][s2.index()];
        }
    }
    acc
}

fn psi_table(amp: &TwoPhotonAmplitude, a: &Prepared, b: &Prepared) -> [[C64; 2]; 2] {
    let mut t = [[C64::new(0.0, 0.0); 2]; 2];
    for s in Helicity::BOTH {
        for s2 in Helicity::BOTH {
            t[s.index()][s2.index()] = amp.psi_prepared(s, s2, a, b);
        }
    }
    t
}

/// Numerator on explicit nodes; `psi(i, j)` is the table for Alice node i, Bob node j.
pub fn four_term_numerator<F>(
    n_osc: OscillatorCount,
    alice_weight: &[f64],
    alice_angle: &[f64],
    bob_weight: &[f64],
    bob_angle: &[f64],
    psi: F,
) -> C64
where
    F: Fn(usize, usize) -> [[C64; 2]; 2] + Sync,
{
    let s = sum_pairs(alice_weight.len(), bob_weight.len(), |i, j| {
        pair_kernel(&psi(i, j), alice_angle[i], bob_angle[j]) * (alice_weight[i] * bob_weight[j])
    });
    s * (4.0 * n_osc.separated_fraction())
}

/// Four-term numerator between two prepared sides.
pub fn side_numerator(amp: &TwoPhotonAmplitude, n_osc: OscillatorCount, a: &SideNodes, b: &SideNodes) -> C64 {
    four_term_numerator(n_osc, &a.weight, &a.angle, &b.weight, &b.angle, |i, j| {
        psi_table(amp, &a.prepared[i], &b.prepared[j])
    })
}

/// Bell-specialized numerator using the angle field in place of the amplitude phases.
fn bell_numerator_on(
    kind: BellKind,
    amp: &TwoPhotonAmplitude,
    theta: &ThetaField,
    n_osc: OscillatorCount,
    a: &SideNodes,
    b: &SideNodes,
) -> Result<f64> {
    let ta = a.prepared.iter().map(|p| theta.value(&p.k)).collect::<Result<Vec<_>>>()?;
    let tb = b.prepared.iter().map(|p| theta.value(&p.k)).collect::<Result<Vec<_>>>()?;
    let (sign, diff) = match kind {
        BellKind::Bell11 => (-1.0, true),
        BellKind::Bell12 => (1.0, true),
        BellKind::Bell21 => (-1.0, false),
        BellKind::Bell22 => (1.0, false),
    };
    let (s, s2) = kind.active_pairs()[1];
    let total = sum_pairs(a.len(), b.len(), |i, j| {
        let arg = if diff {
            b.angle[j] - a.angle[i] + ta[i] - tb[j]
        } else {
            a.angle[i] + b.angle[j] - ta[i] - tb[j]
        };
        let mag = amp.psi_prepared(s, s2, &a.prepared[i], &b.prepared[j]).norm_sqr();
        C64::new((2.0 * arg).cos() * mag * a.weight[i] * b.weight[j], 0.0)
    });
    Ok(sign * 8.0 * n_osc.separated_fraction() * total.re)
}

fn bell_residual_on(
    kind: BellKind,
    amp: &TwoPhotonAmplitude,
    theta: &ThetaField,
    a: &SideNodes,
    b: &SideNodes,
) -> Result<f64> {
    let (s, s2) = kind.active_pairs()[0];
    let mut worst: f64 = 0.0;
    // Every pair on small grids, a strided sample on large ones.
    let stride_a = (a.len() / 64).max(1);
    let stride_b = (b.len() / 64).max(1);
    for i in (0..a.len()).step_by(stride_a) {
        for j in (0..b.len()).step_by(stride_b) {
            let (pa, pb) = (&a.prepared[i], &b.prepared[j]);
            let scale = amp.psi_prepared(s, s2, pa, pb).norm();
            if scale < 1e-300 {
                continue;
            }
            let r = crate::states::bell_condition_residual(kind, amp, theta, &pa.k, &pb.k)?;
            worst = worst.max(r / scale);
        }
    }
    Ok(worst)
}

/// Per-node data for one detector; with `map`, the amplitude is read at `map^-1 v`
/// and the angle shifted by `-2 Theta(map, v)` when `move_detector`; otherwise only
/// the vacuum density is read at `map^-1 v`.
pub fn detector_side<Z>(
    nodes: &[Node],
    angle: f64,
    z: Z,
    map: Option<&LorentzMap>,
    move_detector: bool,
) -> Result<SideNodes>
where
    Z: Fn(&NullMomentum) -> f64,
{
    let inv = map.map(|m| m.inverse());
    let mut out = SideNodes::default();
    for n in nodes {
        let (p, a, zk) = match (map, &inv) {
            (Some(m), Some(inv)) if move_detector => {
                let back = inv.apply(&n.k);
                (back, angle - wigner_phase(m, &n.k)?, z(&back))
            }
            (Some(_), Some(inv)) => (n.k, angle, z(&inv.apply(&n.k))),
            _ => (n.k, angle, z(&n.k)),
        };
        out.prepared.push(prepare(&p)?);
        out.angle.push(a);
        out.weight.push(n.weight * zk);
    }
    Ok(out)
}

fn side_nodes(
    setting: &DetectorSetting,
    spec: &QuadratureSpec,
    z: &VacuumDensity,
    map: Option<&LorentzMap>,
    move_detector: bool,
) -> Result<SideNodes> {
    let nodes = invariant_node_set(&setting.region, spec)?;
    detector_side(&nodes, setting.angle, |k| z.evaluate(k), map, move_detector)
}

fn is_identity(map: &LorentzMap) -> bool {
    let id = LorentzMap::identity();
    let m = map.matrix();
    let e = id.matrix();
    (0..4).all(|i| (0..4).all(|j| (m[i][j] - e[i][j]).abs() < 1e-14))
}

/// Directional disjointness of `map(region)` and `other`, using that Lorentz maps
/// send caps on the celestial sphere to caps.
pub fn mapped_regions_disjoint(region: &DetectorRegion, map: &LorentzMap, other: &DetectorRegion) -> Result<bool> {
    let axis = region.axis();
    let (e1, e2) = crate::measure::transverse_frame(&axis);
    let (c, s) = (region.half_angle().cos(), region.half_angle().sin());
    let oa = other.axis();
    let cos_limit = other.half_angle().cos();
    for j in 0..256 {
        let phi = 2.0 * PI * j as f64 / 256.0;
        let d = [
            c * axis[0] + s * (phi.cos() * e1[0] + phi.sin() * e2[0]),
            c * axis[1] + s * (phi.cos() * e1[1] + phi.sin() * e2[1]),
            c * axis[2] + s * (phi.cos() * e1[2] + phi.sin() * e2[2]),
        ];
        let img = map.apply(&NullMomentum::new(1.0, d)?).dir();
        if img[0] * oa[0] + img[1] * oa[1] + img[2] * oa[2] >= cos_limit {
            return Ok(false);
        }
    }
    let center_img = map.apply(&NullMomentum::new(1.0, axis)?);
    let other_back = map.inverse().apply(&NullMomentum::new(1.0, oa)?);
    Ok(!other.contains(&NullMomentum::new(other.freq_lo(), center_img.dir())?)
        && !region.contains(&NullMomentum::new(region.freq_lo(), other_back.dir())?))
}

fn check_preconditions(sc: &Scenario) -> Result<()> {
    if sc.n_osc == OscillatorCount::Finite(1) {
        return Err(Error::Precondition(
            "N = 1: the (N-1)/N factor makes every disjoint-detector EPR numerator vanish; use N >= 2".into(),
        ));
    }
    if !regions_disjoint(&sc.alice.region, &sc.bob.region) {
        return Err(Error::Precondition(
            "detector regions overlap; the coincident delta term is only handled by the Fock oracle".into(),
        ));
    }
    let map = match &sc.case {
        TransformCase::Rest => None,
        TransformCase::Joint(m) | TransformCase::AliceOnly(m) | TransformCase::BobOnly(m) => Some(m),
    };
    if let Some(m) = map {
        if !is_identity(m) && !sc.amplitude.envelope.is_invariant() {
            return Err(Error::Precondition(
                "transformed cases need a Lorentz-invariant envelope (unit or pair-gaussian)".into(),
            ));
        }
        let inv = m.inverse();
        let ok = match &sc.case {
            TransformCase::AliceOnly(_) => mapped_regions_disjoint(&sc.alice.region, &inv, &sc.bob.region)?,
            TransformCase::BobOnly(_) => mapped_regions_disjoint(&sc.bob.region, &inv, &sc.alice.region)?,
            _ => true,
        };
        if !ok {
            return Err(Error::Precondition("transformed detector region overlaps the other detector".into()));
        }
    }
    Ok(())
}

struct Evaluated {
    numerator: C64,
    parts: NormParts,
    denominator: f64,
    bell_numerator: Option<f64>,
    bell_residual: Option<f64>,
}

fn evaluate_once(sc: &Scenario, spec: &QuadratureSpec, with_bell: bool) -> Result<Evaluated> {
    let z = &sc.vacuum;
    let (alice, bob, norm_z) = match (&sc.case, sc.picture) {
        (TransformCase::Rest, _) => (side_nodes(&sc.alice, spec, z, None, false)?, side_nodes(&sc.bob, spec, z, None, false)?, *z),
        (TransformCase::Joint(m), Picture::Detector) => (
            side_nodes(&sc.alice, spec, z, Some(m), true)?,
            side_nodes(&sc.bob, spec, z, Some(m), true)?,
            *z,
        ),
        (TransformCase::Joint(m), Picture::Vacuum) => (
            side_nodes(&sc.alice, spec, z, Some(m), false)?,
            side_nodes(&sc.bob, spec, z, Some(m), false)?,
            z.with_transform(m),
        ),
        (TransformCase::AliceOnly(m), _) => {
            (side_nodes(&sc.alice, spec, z, Some(m), true)?, side_nodes(&sc.bob, spec, z, None, false)?, *z)
        }
        (TransformCase::BobOnly(m), _) => {
            (side_nodes(&sc.alice, spec, z, None, false)?, side_nodes(&sc.bob, spec, z, Some(m), true)?, *z)
        }
    };
    let numerator = side_numerator(&sc.amplitude, sc.n_osc, &alice, &bob);
    let parts = norm_parts_on(&sc.amplitude, &norm_z, &support_nodes(&sc.amplitude.envelope, &norm_z, spec)?);
    let denominator = parts.combine(sc.n_osc);
    let (mut bell_numerator, mut bell_residual) = (None, None);
    if let (true, Some(kind), Some(theta)) = (with_bell, sc.amplitude.bell_kind(), &sc.theta) {
        bell_numerator = Some(bell_numerator_on(kind, &sc.amplitude, theta, sc.n_osc, &alice, &bob)?);
        bell_residual = Some(bell_residual_on(kind, &sc.amplitude, theta, &alice, &bob)?);
    }
    Ok(Evaluated { numerator, parts, denominator, bell_numerator, bell_residual })
}

/// Any scenario; dispatches on the transform case.
pub fn evaluate(sc: &Scenario) -> Result<CorrelationResult> {
    check_preconditions(sc)?;
    let fine = evaluate_once(sc, &sc.quadrature, true)?;
    let coarse = evaluate_once(sc, &sc.quadrature.coarsened(), false)?;
    if !(fine.denominator > 0.0) {
        return Err(Error::Precondition("two-photon state has zero norm on the envelope support".into()));
    }
    let value = fine.numerator.re / fine.denominator;
    let coarse_value = coarse.numerator.re / coarse.denominator;
    let scale = fine.numerator.norm().max(fine.denominator) * 1e-12;
    if fine.numerator.im.abs() > scale.max(1e-14) {
        return Err(Error::Consistency(format!("EPR numerator has imaginary part {}", fine.numerator.im)));
    }
    let bell_value = match (fine.bell_numerator, fine.bell_residual) {
        (Some(bn), Some(r)) if r < 1e-3 => Some(bn / fine.denominator),
        _ => None,
    };
    Ok(CorrelationResult {
        numerator: fine.numerator.re,
        denominator: fine.denominator,
        value,
        err_estimate: (value - coarse_value).abs(),
        coincident: 2.0 * sc.n_osc.inverse() * fine.parts.coincident,
        bell_residual_max: fine.bell_residual,
        bell_value,
    })
}

fn require_case(sc: &Scenario, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!("scenario transform case {:?} does not match {what}", sc.case)))
    }
}

pub fn epr_general_rest(sc: &Scenario) -> Result<CorrelationResult> {
    require_case(sc, matches!(sc.case, TransformCase::Rest), "a rest-frame evaluation")?;
    evaluate(sc)
}

/// Rest-frame Bell average; the returned value is the Bell-specialized formula.
pub fn epr_bell_rest(sc: &Scenario) -> Result<CorrelationResult> {
    require_case(sc, matches!(sc.case, TransformCase::Rest), "a rest-frame evaluation")?;
    bell_specialized(sc)
}

fn bell_specialized(sc: &Scenario) -> Result<CorrelationResult> {
    if sc.amplitude.bell_kind().is_none() {
        return Err(Error::Input("Bell-specialized average needs a Bell amplitude".into()));
    }
    if sc.theta.is_none() {
        return Err(Error::Input("Bell-specialized average needs a theta field".into()));
    }
    check_preconditions(sc)?;
    let fine = evaluate_once(sc, &sc.quadrature, true)?;
    let coarse_sc = Scenario { quadrature: sc.quadrature.coarsened(), ..sc.clone() };
    let coarse = evaluate_once(&coarse_sc, &coarse_sc.quadrature, true)?;
    let bn = fine.bell_numerator.expect("bell numerator computed");
    let value = bn / fine.denominator;
    let coarse_value = coarse.bell_numerator.expect("bell numerator computed") / coarse.denominator;
    Ok(CorrelationResult {
        numerator: bn,
        denominator: fine.denominator,
        value,
        err_estimate: (value - coarse_value).abs(),
        coincident: 2.0 * sc.n_osc.inverse() * fine.parts.coincident,
        bell_residual_max: fine.bell_residual,
        bell_value: Some(value),
    })
}

pub fn epr_case1(sc: &Scenario) -> Result<CorrelationResult> {
    require_case(sc, matches!(sc.case, TransformCase::Joint(_)), "case 1 (joint map)")?;
    evaluate(sc)
}

pub fn epr_case2(sc: &Scenario) -> Result<CorrelationResult> {
    require_case(
        sc,
        matches!(sc.case, TransformCase::AliceOnly(_) | TransformCase::BobOnly(_)),
        "case 2 (single-detector map)",
    )?;
    evaluate(sc)
}

/// The three integrals behind the Bell-11 N-dependence
/// `v(N) = -(N-1) A / (B + (N-1) C)`:
/// `A = 2 intint_{AxB} cos2(...)|psi|^2 ZZ'` (sign-free), `B = int |psi_{+-}(k,k)|^2 Z`,
/// `C = intint |psi_{+-}|^2 ZZ'` over the envelope support.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NDependence {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl NDependence {
    pub fn value(&self, n_osc: OscillatorCount) -> f64 {
        match n_osc {
            OscillatorCount::Infinite => -self.a / self.c,
            OscillatorCount::Finite(n) => {
                let m = n as f64 - 1.0;
                -m * self.a / (self.b + m * self.c)
            }
        }
    }
}

/// Computes A, B, C for a rest-frame circular-anti Bell scenario from the general numerator.
pub fn n_dependence(sc: &Scenario) -> Result<NDependence> {
    require_case(sc, matches!(sc.case, TransformCase::Rest), "a rest-frame evaluation")?;
    if !sc.amplitude.bell_kind().is_some_and(|k| k.circular_anti()) {
        return Err(Error::Input("N-dependence fit applies to circular-anticorrelated Bell amplitudes".into()));
    }
    check_preconditions(&Scenario { n_osc: OscillatorCount::Infinite, ..sc.clone() })?;
    let spec = &sc.quadrature;
    let z = &sc.vacuum;
    let a_nodes = side_nodes(&sc.alice, spec, z, None, false)?;
    let b_nodes = side_nodes(&sc.bob, spec, z, None, false)?;
    // With N = infinity the numerator prefactor is 4, and A absorbs -1/4 of it.
    let num = side_numerator(&sc.amplitude, OscillatorCount::Infinite, &a_nodes, &b_nodes).re;
    let parts = norm_parts_on(&sc.amplitude, z, &support_nodes(&sc.amplitude.envelope, z, spec)?);
    // norm = (4/N)(B + (N-1)C) with the two helicity pairs summed in `parts`.
    Ok(NDependence { a: -num / 4.0, b: parts.coincident / 2.0, c: parts.separated / 2.0 })
}

/// `|value| <= 1 + err`.
pub fn bound_check(result: &CorrelationResult) -> bool {
    result.value.is_finite() && result.value.abs() <= 1.0 + result.err_estimate
}

/// Relative difference between the numerator integrated over Alice x Bob and over
/// Bob x Alice (the two halves of the doubled domain behind the factor 2).
pub fn doubled_domain_residual(sc: &Scenario) -> Result<f64> {
    require_case(sc, matches!(sc.case, TransformCase::Rest), "a rest-frame evaluation")?;
    check_preconditions(sc)?;
    let z = &sc.vacuum;
    let a = side_nodes(&sc.alice, &sc.quadrature, z, None, false)?;
    let b = side_nodes(&sc.bob, &sc.quadrature, z, None, false)?;
    let ab = side_numerator(&sc.amplitude, sc.n_osc, &a, &b);
    let ba = side_numerator(&sc.amplitude, sc.n_osc, &b, &a);
    Ok((ab - ba).norm() / ab.norm().max(ba.norm()).max(1e-300))
}
