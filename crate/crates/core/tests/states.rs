use num_complex::Complex64 as C64;
use photon_epr::measure::{DetectorRegion, QuadratureSpec};
use photon_epr::spinor_tetrad::*;
use photon_epr::states::*;
use photon_epr::vacuum::{normalize, VacuumFamily};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn dir(theta: f64, phi: f64) -> Vec3 {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

prop_compose! {
    fn momentum()(w in 0.05f64..20.0, theta in 0.0f64..3.0, phi in -PI..PI) -> NullMomentum {
        NullMomentum::new(w, dir(theta, phi)).unwrap()
    }
}

fn kinds() -> [BellKind; 4] {
    [BellKind::Bell11, BellKind::Bell12, BellKind::Bell21, BellKind::Bell22]
}

fn all_amplitudes() -> Vec<TwoPhotonAmplitude> {
    let mut v: Vec<TwoPhotonAmplitude> = kinds().iter().map(|&k| TwoPhotonAmplitude::bell(k, Envelope::Unit)).collect();
    v.push(TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, Envelope::PairGaussian { scale: 2.0 }));
    let c = |re: f64, im: f64| C64::new(re, im);
    v.push(TwoPhotonAmplitude::general(
        GeneralForm::TetradTable { coeffs: [[c(1.0, 0.2), c(0.3, -0.4)], [c(0.3, -0.4), c(-0.7, 0.1)]] },
        Envelope::Unit,
    ));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exchange_symmetry(k in momentum(), k2 in momentum()) {
        for amp in all_amplitudes() {
            prop_assert!(symmetry_residual(&amp, &k, &k2).unwrap() < 1e-12);
        }
    }

    /// The two active helicity pairs of a Bell kind carry equal magnitudes; the rest vanish.
    #[test]
    fn active_pairs_have_equal_magnitude(k in momentum(), k2 in momentum()) {
        for kind in kinds() {
            let amp = TwoPhotonAmplitude::bell(kind, Envelope::Unit);
            let [(a, b), (c, d)] = kind.active_pairs();
            let x = amp.psi(a, b, &k, &k2).unwrap().norm();
            let y = amp.psi(c, d, &k, &k2).unwrap().norm();
            prop_assert!((x - y).abs() < 1e-12 * x.max(1.0));
            for s in Helicity::BOTH {
                for s2 in Helicity::BOTH {
                    if !kind.active_pairs().contains(&(s, s2)) {
                        prop_assert_eq!(amp.psi(s, s2, &k, &k2).unwrap(), C64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    /// A transformed theta field absorbs the Wigner phase exactly.
    #[test]
    fn transformed_theta_absorbs_wigner(rap in 0.0f64..1.0, k in momentum(), t0 in -1.0f64..1.0, slope in -2.0f64..2.0) {
        let map = LorentzMap::boost(rap, [0.0, 0.6, 0.8]).unwrap();
        prop_assume!(map.inverse().apply(&k).dir()[2] > -0.99 && k.dir()[2] > -0.99);
        let theta = ThetaField::new(ThetaKind::Azimuthal { theta0: t0, slope }).unwrap();
        prop_assert!(theta_wigner_residual(&theta.with_transform(&map), &map, &k).unwrap() < 1e-10);
    }

    #[test]
    fn amplitudes_covariant_under_rotations(a in -PI..PI, k in momentum(), k2 in momentum()) {
        let r = LorentzMap::rotation(a, [0.36, 0.48, 0.8]).unwrap();
        let inv = r.inverse();
        prop_assume!([k, k2, inv.apply(&k), inv.apply(&k2)].iter().all(|q| q.dir()[2] > -0.99));
        for amp in all_amplitudes() {
            prop_assert!(covariance_residual(&amp, &r, &k, &k2).unwrap() < 1e-9);
        }
    }

    #[test]
    fn spinor_product_covariant_under_boosts(rap in 0.0f64..1.0, k in momentum(), k2 in momentum()) {
        let b = LorentzMap::boost(rap, [1.0, 0.0, 0.0]).unwrap();
        let inv = b.inverse();
        prop_assume!([k, k2, inv.apply(&k), inv.apply(&k2)].iter().all(|q| q.dir()[2] > -0.99));
        let amp = TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, Envelope::Unit);
        let scale = amp.psi(Helicity::Plus, Helicity::Plus, &k, &k2).unwrap().norm().max(1e-3);
        prop_assert!(covariance_residual(&amp, &b, &k, &k2).unwrap() < 1e-9 * scale.max(1.0));
    }
}

#[test]
fn tetrad_amplitudes_not_boost_covariant() {
    let b = LorentzMap::boost(0.7, [0.0, 0.6, 0.8]).unwrap();
    let k = NullMomentum::new(1.0, [1.0, 0.0, 0.0]).unwrap();
    let k2 = NullMomentum::new(2.0, [0.0, 1.0, 0.0]).unwrap();
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell11, Envelope::Unit);
    assert!(covariance_residual(&amp, &b, &k, &k2).unwrap() > 1e-3);
}

#[test]
fn frozen_bell_values() {
    // m(x) = (0, 0, 1, -i)/sqrt2 up to phase, m(y) likewise; contraction m(x).conj(m(y)) has modulus 1/2.
    let kx = NullMomentum::new(1.0, [1.0, 0.0, 0.0]).unwrap();
    let ky = NullMomentum::new(1.0, [0.0, 1.0, 0.0]).unwrap();
    let v = bell_amplitude(BellKind::Bell11, &kx, &ky, Helicity::Plus, Helicity::Minus).unwrap();
    assert!((v.norm() - 0.5).abs() < 1e-14);
    // antiparallel momenta: m(x).conj(m(-x)) vanishes, m(x).m(-x) has modulus 1
    let kmx = NullMomentum::new(1.0, [-1.0, 0.0, 0.0]).unwrap();
    assert!(bell_amplitude(BellKind::Bell11, &kx, &kmx, Helicity::Plus, Helicity::Minus).unwrap().norm() < 1e-14);
    assert!((bell_amplitude(BellKind::Bell21, &kx, &kmx, Helicity::Plus, Helicity::Plus).unwrap().norm() - 1.0).abs() < 1e-14);
    // collinear: m.conj(m) = -1
    let v = bell_amplitude(BellKind::Bell11, &kx, &kx.scaled(3.0).unwrap(), Helicity::Plus, Helicity::Minus).unwrap();
    assert!((v - C64::new(-1.0, 0.0)).norm() < 1e-14);
}

#[test]
fn envelopes() {
    let r1 = DetectorRegion::new([1.0, 0.0, 0.0], 0.1, 1.0, 2.0).unwrap();
    let r2 = DetectorRegion::new([-1.0, 0.0, 0.0], 0.1, 1.0, 2.0).unwrap();
    let inside = NullMomentum::new(1.5, [1.0, 0.0, 0.0]).unwrap();
    let other = NullMomentum::new(1.5, [-1.0, 0.0, 0.0]).unwrap();
    let outside = NullMomentum::new(1.5, [0.0, 1.0, 0.0]).unwrap();
    let env = Envelope::Regions(vec![r1, r2]);
    assert_eq!(env.factor(&inside, &other), 1.0);
    assert_eq!(env.factor(&inside, &outside), 0.0);
    assert!(!env.is_invariant());
    let g = Envelope::PairGaussian { scale: 2.0 };
    // k.k' = w w' (1 - cos) = 1.5 * 1.5 * 2
    assert!((g.factor(&inside, &other) - (-4.5f64 / 4.0).exp()).abs() < 1e-14);
    assert!(g.is_invariant() && Envelope::Unit.is_invariant());
}

#[test]
fn custom_amplitude() {
    let f: Arc<AmplitudeFn> = Arc::new(|s, s2, k: &NullMomentum, k2: &NullMomentum| {
        if s == s2 { C64::new(k.freq() * k2.freq(), 0.0) } else { C64::new(0.0, 0.0) }
    });
    let amp = TwoPhotonAmplitude::general(GeneralForm::Custom(f), Envelope::Unit);
    let k = NullMomentum::new(2.0, [1.0, 0.0, 0.0]).unwrap();
    let k2 = NullMomentum::new(3.0, [0.0, 1.0, 0.0]).unwrap();
    assert_eq!(amp.psi(Helicity::Plus, Helicity::Plus, &k, &k2).unwrap(), C64::new(6.0, 0.0));
}

#[test]
fn norm_weights() {
    let spec = QuadratureSpec::default();
    let z = normalize(VacuumFamily::PowerExponential { exponent: 2.0, scale: 1.0 }, &spec).unwrap();
    let r1 = DetectorRegion::new([1.0, 0.0, 0.0], 0.1, 1.0, 2.0).unwrap();
    let r2 = DetectorRegion::new([0.0, 1.0, 0.0], 0.1, 1.0, 2.0).unwrap();
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell21, Envelope::Regions(vec![r1, r2]));
    let parts = norm_parts_on(&amp, &z, &support_nodes(&amp.envelope, &z, &spec).unwrap());
    for n in [1u64, 2, 7] {
        let count = OscillatorCount::new(n).unwrap();
        let nf = n as f64;
        let expected = 2.0 / nf * parts.coincident + 2.0 * (nf - 1.0) / nf * parts.separated;
        assert!((parts.combine(count) - expected).abs() < 1e-15 * expected);
        let est = two_photon_norm(&amp, &z, count, &spec).unwrap();
        assert!((est.value.re - expected).abs() < 1e-12 * expected);
    }
    assert_eq!(parts.combine(OscillatorCount::Infinite), 2.0 * parts.separated);
    assert!(OscillatorCount::new(0).is_err());
}

#[test]
fn fitted_theta_meets_condition() {
    let spec = QuadratureSpec::default();
    let d = 2f64.to_radians();
    let ra = DetectorRegion::new([1.0, 0.0, 0.0], d, 1.0, 3.0).unwrap();
    let rb = DetectorRegion::new([-1.0, 0.0, 0.0], d, 1.0, 3.0).unwrap();
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell21, Envelope::Regions(vec![ra, rb]));
    let (theta, report) = fit_theta(BellKind::Bell21, &amp, &ra, &rb, &spec).unwrap();
    assert!(report.max_relative_residual < 1e-2, "{report:?}");
    let k = NullMomentum::new(2.0, [1.0, 0.0, 0.0]).unwrap();
    let k2 = NullMomentum::new(2.0, [-1.0, 0.0, 0.0]).unwrap();
    let scale = amp.psi(Helicity::Plus, Helicity::Plus, &k, &k2).unwrap().norm();
    assert!(bell_condition_residual(BellKind::Bell21, &amp, &theta, &k, &k2).unwrap() < 1e-2 * scale);
}

#[test]
fn theta_kinds() {
    assert!(ThetaField::new(ThetaKind::Tabulated { points: vec![] }).is_err());
    let t = ThetaField::new(ThetaKind::Tabulated { points: vec![([1.0, 0.0, 0.0], 0.3), ([0.0, 1.0, 0.0], -0.2)] }).unwrap();
    let k = NullMomentum::from_spatial([0.9, 0.1, 0.0]).unwrap();
    assert_eq!(t.value(&k).unwrap(), 0.3);
    let a = ThetaField::new(ThetaKind::Azimuthal { theta0: 0.1, slope: 0.5 }).unwrap();
    let ky = NullMomentum::new(1.0, [0.0, 1.0, 0.0]).unwrap();
    assert!((a.value(&ky).unwrap() - (0.1 + 0.25 * PI)).abs() < 1e-14);
    assert_eq!(ThetaField::constant(0.7).value(&ky).unwrap(), 0.7);
}
