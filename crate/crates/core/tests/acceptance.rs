//! Acceptance harness: one PASS/FAIL line per criterion, then supplementary lines.
//! Red criteria are reported, not hidden; the process exits non-zero only on
//! harness errors.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64 as C64;
use photon_epr::cli::{self, amplitude_table, oracle_suite, CellConfig, OracleConfig};
use photon_epr::correlators::*;
use photon_epr::fock_oracle::*;
use photon_epr::measure::*;
use photon_epr::spinor_tetrad::*;
use photon_epr::states::*;
use photon_epr::vacuum::*;
use photon_epr::wrap_angle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Harness {
    lines: Vec<(String, bool, String)>,
}

impl Harness {
    fn record(&mut self, label: &str, outcome: Outcome) {
        let (ok, detail) = match outcome {
            Ok(x) => x,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{label}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((label.to_string(), ok, detail));
    }
}

fn e<T>(r: photon_epr::Result<T>) -> Result<T, String> {
    r.map_err(|x| x.to_string())
}

fn cells(dirs: &[(f64, Vec3, f64)]) -> Vec<CellConfig> {
    dirs.iter().map(|&(freq, dir, weight)| CellConfig { freq, dir, weight }).collect()
}

fn tetra() -> Vec<Vec3> {
    let s = 1.0 / 3f64.sqrt();
    vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]
}

fn grids() -> Vec<OracleConfig> {
    let t = tetra();
    vec![
        OracleConfig {
            cells: cells(&[(1.0, [1.0, 0.0, 0.0], 0.8), (1.7, [0.0, 0.6, 0.8], 0.5)]),
            z: vec![0.6, 0.9],
            alice: vec![0],
            bob: vec![1],
            overlap_alice: vec![0, 1],
            overlap_bob: vec![1],
            ..OracleConfig::default()
        },
        OracleConfig::default(),
        OracleConfig {
            cells: cells(&[(1.0, t[0], 0.5), (1.3, t[1], 0.6), (0.7, t[2], 0.4), (1.1, t[3], 0.9)]),
            z: vec![0.4, 1.0, 0.7, 1.3],
            alice: vec![0, 1],
            bob: vec![2, 3],
            overlap_alice: vec![0, 2],
            overlap_bob: vec![2, 3],
            ..OracleConfig::default()
        },
    ]
}

fn max_named(report: &cli::Report, prefixes: &[&str]) -> (f64, bool, usize) {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut n = 0;
    for c in &report.checks {
        if prefixes.iter().any(|p| c.name.starts_with(&format!("{p} "))) {
            worst = worst.max(c.residual);
            ok &= c.passed();
            n += 1;
        }
    }
    (worst, ok, n)
}

fn oracle_reports() -> Result<(Vec<cli::Report>, f64), String> {
    let t0 = Instant::now();
    let reports = grids().iter().map(|g| e(oracle_suite(g))).collect::<Result<Vec<_>, _>>()?;
    Ok((reports, t0.elapsed().as_secs_f64()))
}

fn criterion1(reports: &[cli::Report], secs: f64) -> Outcome {
    let names = ["ccr", "number-commutators", "center", "basis-change", "linear-ccr", "yes-no-forms", "yes-no-eigenvalues"];
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut n = 0;
    for r in reports {
        let (w, o, c) = max_named(r, &names);
        worst = worst.max(w);
        ok &= o && worst <= 1e-12;
        n += c;
    }
    ok &= n > 0 && secs < 30.0;
    Ok((ok, format!("{n} algebra checks on 2/3/4-cell grids, N=1..3, cutoff 2; max residual {worst:.2e}; oracle time {secs:.1} s")))
}

/// Bell scalar product with the factor-4 form over the single active helicity pair.
fn bell_factor4(grid: &DiscreteGrid, tab: &[Vec<[[C64; 2]; 2]>], z: &[f64], n: OscillatorCount, s: Helicity, s2: Helicity) -> f64 {
    let m = grid.len();
    let (a, b) = (s.index(), s2.index());
    let diag: f64 = (0..m).map(|i| grid.weight(i) * z[i] * tab[i][i][a][b].norm_sqr()).sum();
    let mut off = 0.0;
    for i in 0..m {
        for j in 0..m {
            off += grid.weight(i) * grid.weight(j) * z[i] * z[j] * tab[i][j][a][b].norm_sqr();
        }
    }
    4.0 * n.inverse() * diag + 4.0 * n.separated_fraction() * off
}

fn criterion2(reports: &[cli::Report]) -> Outcome {
    let mut worst: f64 = 0.0;
    for r in reports {
        worst = worst.max(max_named(r, &["scalar-product"]).0);
    }
    let t = tetra();
    let mut ks: Vec<(NullMomentum, f64)> = Vec::new();
    for (i, d) in t.iter().enumerate() {
        ks.push((e(NullMomentum::new(1.0 + 0.3 * i as f64, *d))?, 0.4 + 0.1 * i as f64));
    }
    let grid = e(DiscreteGrid::new(ks))?;
    let z = e(grid.normalize_density(&[0.4, 1.0, 0.7, 1.3]))?;
    let mut bell_worst: f64 = 0.0;
    for kind in [BellKind::Bell11, BellKind::Bell12, BellKind::Bell21, BellKind::Bell22] {
        let amp = TwoPhotonAmplitude::bell(kind, Envelope::Unit);
        let tab = e(amplitude_table(&amp, &grid))?;
        let (s, s2) = kind.active_pairs()[0];
        for n in 1..=3usize {
            let space = e(FockSpace::new(grid.clone(), OscillatorTruncation::default(), n))?;
            let v = e(space.two_photon_vector(|i, j| tab[i][j], &z))?;
            let oracle = inner(&v, &v).re;
            let closed = bell_factor4(&grid, &tab, &z, e(OscillatorCount::new(n as u64))?, s, s2);
            bell_worst = bell_worst.max((oracle - closed).abs() / oracle);
        }
    }
    let ok = worst <= 1e-10 && bell_worst <= 1e-10;
    Ok((ok, format!("general form max rel {worst:.2e}; Bell factor-4 forms (4 kinds, 4 cells) max rel {bell_worst:.2e}")))
}

fn criterion3(reports: &[cli::Report]) -> Outcome {
    let (mut d, mut c) = (0.0f64, 0.0f64);
    let (mut nd, mut nc) = (0, 0);
    for r in reports {
        for ch in &r.checks {
            if ch.name.contains("-disjoint") {
                d = d.max(ch.residual);
                nd += 1;
            } else if ch.name.contains("-coincident") {
                c = c.max(ch.residual);
                nc += 1;
            }
        }
    }
    let ok = nd > 0 && nc > 0 && d <= 1e-8 && c <= 1e-8;
    Ok((ok, format!("disjoint subsets ({nd} runs) max {d:.2e}; overlapping subsets minus coincident term ({nc} runs) max {c:.2e}")))
}

struct Geometry {
    invariants: f64,
    cocycle: f64,
    freq: f64,
    rot_cov: f64,
    boost_cov: f64,
    boost_gauge: f64,
}

fn geometry() -> Result<Geometry, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut g = Geometry { invariants: 0.0, cocycle: 0.0, freq: 0.0, rot_cov: 0.0, boost_cov: 0.0, boost_gauge: 0.0 };
    let charted = |k: &NullMomentum| k.dir()[2] > -0.999;
    let mut count = 0;
    while count < 1000 {
        let m = cli::random_rotation(&mut rng);
        let k = m.apply(&e(NullMomentum::new(0.1 + 5.0 * (count as f64 / 1000.0), [0.0, 0.0, 1.0]))?);
        if !charted(&k) {
            continue;
        }
        g.invariants = g.invariants.max(e(null_tetrad(&k))?.invariant_residual());
        count += 1;
    }
    let mut maps = 0;
    while maps < 100 {
        let a = cli::random_boost(&mut rng, 1.0).compose(&cli::random_rotation(&mut rng));
        let b = cli::random_boost(&mut rng, 1.0).compose(&cli::random_rotation(&mut rng));
        let k = cli::random_rotation(&mut rng).apply(&e(NullMomentum::new(1.3, [0.0, 0.0, 1.0]))?);
        let ab = a.compose(&b);
        let ka = a.inverse().apply(&k);
        if !(charted(&k) && charted(&ka) && charted(&ab.inverse().apply(&k))) {
            continue;
        }
        let lhs = e(wigner_phase(&ab, &k))?;
        let rhs = e(wigner_phase(&a, &k))? + e(wigner_phase(&b, &ka))?;
        g.cocycle = g.cocycle.max(wrap_angle(lhs - rhs).abs());
        for lam in [0.01, 0.5, 7.0, 300.0] {
            g.freq = g.freq.max(wrap_angle(e(wigner_phase(&a, &e(k.scaled(lam))?))? - e(wigner_phase(&a, &k))?).abs());
        }
        let r = cli::random_rotation(&mut rng);
        if charted(&r.inverse().apply(&k)) {
            g.rot_cov = g.rot_cov.max(e(tetrad_covariance_residual(&r, &k))?);
        }
        let bst = cli::random_boost(&mut rng, 1.0);
        if charted(&bst.inverse().apply(&k)) {
            g.boost_cov = g.boost_cov.max(e(tetrad_covariance_residual(&bst, &k))?);
            g.boost_gauge = g.boost_gauge.max(e(gauge_reduced_covariance_residual(&bst, &k))?);
        }
        maps += 1;
    }
    Ok(g)
}

fn criterion4(g: &Geometry) -> Outcome {
    let ok = g.invariants <= 1e-10
        && g.cocycle <= 1e-8
        && g.freq <= 1e-8
        && g.rot_cov <= 1e-8
        && g.boost_cov <= 1e-8;
    Ok((
        ok,
        format!(
            "invariants {:.1e} (1000 momenta); cocycle {:.1e}, frequency independence {:.1e} (100 maps); \
             m-covariance rotations {:.1e}, boosts {:.2e} (the boosted m picks up a multiple of k)",
            g.invariants, g.cocycle, g.freq, g.rot_cov, g.boost_cov
        ),
    ))
}

fn rest(amp: TwoPhotonAmplitude, theta: Option<ThetaField>, z: VacuumDensity, n: OscillatorCount, a: DetectorSetting, b: DetectorSetting) -> Scenario {
    Scenario {
        amplitude: amp,
        theta,
        vacuum: z,
        n_osc: n,
        alice: a,
        bob: b,
        case: TransformCase::Rest,
        picture: Picture::Detector,
        quadrature: QuadratureSpec::default(),
    }
}

fn pexp(scale: f64, exponent: f64) -> Result<VacuumDensity, String> {
    e(normalize(VacuumFamily::PowerExponential { exponent, scale }, &QuadratureSpec::default()))
}

fn centre_theta(theta: &ThetaField, r: &DetectorRegion) -> Result<f64, String> {
    e(theta.value(&e(NullMomentum::new(0.5 * (r.freq_lo() + r.freq_hi()), r.axis()))?))
}

fn criterion5() -> Outcome {
    let spec = QuadratureSpec::default();
    let z = pexp(1.0, 2.0)?;
    let d = 2f64.to_radians();
    let ra = e(DetectorRegion::new([1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let rb = e(DetectorRegion::new([-1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell21, Envelope::Regions(vec![ra, rb]));
    let (theta, fit) = e(fit_theta(BellKind::Bell21, &amp, &ra, &rb, &spec))?;
    let phase = centre_theta(&theta, &ra)? + centre_theta(&theta, &rb)?;
    let alpha = 0.2;
    let n = OscillatorCount::Finite(2);
    let mut all_bounded = true;
    let eval = |beta: f64| -> Result<CorrelationResult, String> {
        let sc = rest(amp.clone(), Some(theta.clone()), z, n, e(DetectorSetting::new(ra, alpha))?, e(DetectorSetting::new(rb, beta))?);
        e(evaluate(&sc))
    };
    let matched = eval(phase - alpha)?;
    all_bounded &= bound_check(&matched);
    let betas: Vec<f64> = (0..12).map(|i| i as f64 * PI / 12.0).collect();
    let mut vals = Vec::new();
    for &b in &betas {
        let r = eval(b)?;
        all_bounded &= bound_check(&r);
        vals.push(r.value);
    }
    // one-parameter regression onto -cos 2(beta + alpha - phase)
    let basis: Vec<f64> = betas.iter().map(|b| -(2.0 * (b + alpha - phase)).cos()).collect();
    let amp_fit = basis.iter().zip(&vals).map(|(x, y)| x * y).sum::<f64>() / basis.iter().map(|x| x * x).sum::<f64>();
    let resid = basis.iter().zip(&vals).map(|(x, y)| (y - amp_fit * x).abs()).fold(0.0, f64::max);

    let rb11 = e(DetectorRegion::new([0.0, 1.0, 0.0], d, 1.0, 3.0))?;
    let amp11 = TwoPhotonAmplitude::bell(BellKind::Bell11, Envelope::Regions(vec![ra, rb11]));
    let (theta11, _) = e(fit_theta(BellKind::Bell11, &amp11, &ra, &rb11, &spec))?;
    let eval11 = |a: f64, b: f64| -> Result<CorrelationResult, String> {
        let sc = rest(amp11.clone(), Some(theta11.clone()), z, OscillatorCount::Infinite, e(DetectorSetting::new(ra, a))?, e(DetectorSetting::new(rb11, b))?);
        e(evaluate(&sc))
    };
    let base = eval11(0.3, 1.0)?;
    all_bounded &= bound_check(&base);
    let mut shift: f64 = 0.0;
    for delta in [0.4, 1.3, -2.2] {
        let r = eval11(0.3 + delta, 1.0 + delta)?;
        all_bounded &= bound_check(&r);
        shift = shift.max((r.value - base.value).abs());
    }
    let ok = (matched.value + 1.0).abs() <= 5e-3 && resid <= 1e-4 && shift <= 1e-12 && all_bounded;
    Ok((
        ok,
        format!(
            "bell21 matched value {:.6} (fit max rel residual {:.1e}); cos-law regression amplitude {:.6}, max residual {resid:.1e}; \
             bell11 shift test {shift:.1e}; bound held: {all_bounded}",
            matched.value, fit.max_relative_residual, amp_fit
        ),
    ))
}

fn criterion6() -> Outcome {
    let spec = QuadratureSpec::default();
    let z = pexp(1.0, 2.0)?;
    let d = 2f64.to_radians();
    let ra = e(DetectorRegion::new([1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let rb = e(DetectorRegion::new([-1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let mut lin_spread: f64 = 0.0;
    for kind in [BellKind::Bell21, BellKind::Bell22] {
        let amp = TwoPhotonAmplitude::bell(kind, Envelope::Regions(vec![ra, rb]));
        let (theta, _) = e(fit_theta(kind, &amp, &ra, &rb, &spec))?;
        let mut vals = Vec::new();
        for n in [2u64, 5, 50] {
            let sc = rest(amp.clone(), Some(theta.clone()), z, e(OscillatorCount::new(n))?, e(DetectorSetting::new(ra, 0.1))?, e(DetectorSetting::new(rb, 0.7))?);
            vals.push(e(evaluate(&sc))?.value);
        }
        lin_spread = lin_spread.max(vals.iter().map(|v| (v - vals[0]).abs()).fold(0.0, f64::max));
    }

    let d11 = 6f64.to_radians();
    let ra11 = e(DetectorRegion::new([1.0, 0.0, 0.0], d11, 1.0, 3.0))?;
    let rb11 = e(DetectorRegion::new([0.0, 1.0, 0.0], d11, 1.0, 3.0))?;
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell11, Envelope::Regions(vec![ra11, rb11]));
    let (theta, _) = e(fit_theta(BellKind::Bell11, &amp, &ra11, &rb11, &spec))?;
    let (sa, sb) = (e(DetectorSetting::new(ra11, 0.3))?, e(DetectorSetting::new(rb11, 0.5))?);
    let at = |n: OscillatorCount| -> Result<Scenario, String> { Ok(rest(amp.clone(), Some(theta.clone()), z, n, sa, sb)) };
    let abc = e(n_dependence(&at(OscillatorCount::Infinite)?))?;
    let mut fit: f64 = 0.0;
    let mut gaps = Vec::new();
    let limit = e(evaluate(&at(OscillatorCount::Infinite)?))?.value;
    for n in [2u64, 5, 50, 5000, 1_000_000, 1_000_000_000] {
        let count = e(OscillatorCount::new(n))?;
        let v = e(evaluate(&at(count)?))?.value;
        fit = fit.max((v - abc.value(count)).abs());
        gaps.push((v - limit).abs());
    }
    let limit_fit = (limit - abc.value(OscillatorCount::Infinite)).abs();
    let converging = gaps.windows(2).all(|w| w[1] < w[0]) && gaps[gaps.len() - 1] < 1e-6;
    let ok = lin_spread <= 1e-12 && fit <= 1e-8 && limit_fit <= 1e-8 && converging;
    Ok((
        ok,
        format!(
            "bell21/bell22 spread over N=2,5,50 {lin_spread:.1e}; bell11 fit to -(N-1)A/(B+(N-1)C) max {fit:.1e}, \
             limit -A/C matched to {limit_fit:.1e}, gap to limit {:.2e} -> {:.2e} (N=2 -> 1e9)",
            gaps[0],
            gaps[gaps.len() - 1]
        ),
    ))
}

struct Pictures {
    worst_ratio: f64,
    identity_exact: bool,
}

fn picture_comparison(amp: &TwoPhotonAmplitude, maps: &[LorentzMap]) -> Result<Pictures, String> {
    let z = pexp(1.0, 2.0)?;
    let d = 10f64.to_radians();
    let ra = e(DetectorRegion::new([1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let rb = e(DetectorRegion::new([0.0, 1.0, 0.0], d, 1.0, 3.0))?;
    let base = rest(amp.clone(), None, z, OscillatorCount::Finite(3), e(DetectorSetting::new(ra, 0.3))?, e(DetectorSetting::new(rb, 1.0))?);
    let r0 = e(evaluate(&base))?;
    let mut identity_exact = true;
    for picture in [Picture::Detector, Picture::Vacuum] {
        let r = e(evaluate(&Scenario { case: TransformCase::Joint(LorentzMap::identity()), picture, ..base.clone() }))?;
        identity_exact &= r == r0;
    }
    let mut worst_ratio: f64 = 0.0;
    for m in maps {
        let det = e(evaluate(&Scenario { case: TransformCase::Joint(*m), ..base.clone() }))?;
        let vac = e(evaluate(&Scenario { case: TransformCase::Joint(*m), picture: Picture::Vacuum, ..base.clone() }))?;
        let tol = det.err_estimate + vac.err_estimate;
        worst_ratio = worst_ratio.max((det.value - vac.value).abs() / tol.max(1e-300));
    }
    Ok(Pictures { worst_ratio, identity_exact })
}

fn boosts() -> Result<Vec<LorentzMap>, String> {
    [0.25, 0.5, 1.0].iter().map(|&r| e(LorentzMap::boost(r, [0.0, 0.6, 0.8]))).collect()
}

fn criterion7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [BellKind::Bell11, BellKind::Bell21] {
        let p = picture_comparison(&TwoPhotonAmplitude::bell(kind, Envelope::Unit), &boosts()?)?;
        ok &= p.worst_ratio <= 1.0 && p.identity_exact;
        parts.push(format!("{kind:?} null-tetrad amplitude: |detector - vacuum| / combined error up to {:.2e}, identity exact {}", p.worst_ratio, p.identity_exact));
    }
    Ok((ok, format!("boosts of rapidity 0.25, 0.5, 1: {}", parts.join("; "))))
}

fn criterion8() -> Outcome {
    let d = 10f64.to_radians();
    let ra = e(DetectorRegion::new([1.0, 0.0, 0.0], d, 1.0, 3.0))?;
    let rb = e(DetectorRegion::new([0.0, 1.0, 0.0], d, 1.0, 3.0))?;
    let amp = TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, Envelope::Unit);
    let m = e(LorentzMap::boost(1.0, [0.0, 0.6, 0.8]))?;
    let make = |z: VacuumDensity| -> Result<Scenario, String> {
        Ok(rest(amp.clone(), None, z, OscillatorCount::Finite(3), e(DetectorSetting::new(ra, 0.3))?, e(DetectorSetting::new(rb, 1.0))?))
    };

    // identity maps
    let base = make(pexp(1.0, 2.0)?)?;
    let r0 = e(evaluate(&base))?;
    let mut identity_exact = true;
    for case in [TransformCase::AliceOnly(LorentzMap::identity()), TransformCase::BobOnly(LorentzMap::identity())] {
        identity_exact &= e(evaluate(&Scenario { case, ..base.clone() }))? == r0;
    }

    // stressed: steep Z, rapidity 1
    let stressed = make(pexp(0.3, 1.0)?)?;
    let a = e(evaluate(&Scenario { case: TransformCase::AliceOnly(m), ..stressed.clone() }))?;
    let b = e(evaluate(&Scenario { case: TransformCase::BobOnly(m.inverse()), ..stressed.clone() }))?;
    let ratio = (a.value - b.value).abs() / (a.err_estimate + b.err_estimate);

    // near-flat Z: relative gap against Z variation over every node the two orderings touch
    let spec = QuadratureSpec::default();
    let na = e(invariant_node_set(&ra, &spec))?;
    let nb = e(invariant_node_set(&rb, &spec))?;
    let mut touched: Vec<NullMomentum> = na.iter().chain(&nb).map(|n| n.k).collect();
    touched.extend(na.iter().map(|n| m.inverse().apply(&n.k)));
    touched.extend(nb.iter().map(|n| m.apply(&n.k)));
    let mut rows = Vec::new();
    for width in [1.0, 2.0, 3.0, 4.0] {
        let z = e(normalize(VacuumFamily::LogNormalIsotropic { center: 2.0, width }, &spec))?;
        let sc = make(z)?;
        let a = e(evaluate(&Scenario { case: TransformCase::AliceOnly(m), ..sc.clone() }))?;
        let b = e(evaluate(&Scenario { case: TransformCase::BobOnly(m.inverse()), ..sc.clone() }))?;
        // same rest norm on both sides, so the numerators carry the comparison
        let rel = (a.numerator - b.numerator).abs() / a.numerator.abs().max(b.numerator.abs());
        rows.push((z.variation(touched.iter()), rel));
    }
    let shrinking = rows.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1);
    let ratios: Vec<f64> = rows.iter().map(|(v, r)| r / v).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    let proportional = hi / lo <= 3.0;
    let ok = identity_exact && ratio > 10.0 && shrinking && proportional;
    let table: Vec<String> = rows.iter().map(|(v, r)| format!("{v:.2e}->{r:.2e}")).collect();
    Ok((
        ok,
        format!(
            "identity exact {identity_exact}; stressed gap {:.3e} vs {:.3e} = {ratio:.1}x combined error; \
             flat-Z (variation->relative gap) {}, gap/variation in [{lo:.2}, {hi:.2}]",
            a.value,
            b.value,
            table.join(", ")
        ),
    ))
}

fn criterion9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
[scenario]
state = "spinor-product"
envelope = { kind = "pair-gaussian", scale = 2.0 }
vacuum = { family = "power-exponential", exponent = 2.0, scale = 1.0 }
n_osc = 3
alice = { axis = [1.0, 0.0, 0.0], half_angle = 0.17, freq = [1.0, 3.0], angle = 0.2 }
bob = { axis = [0.0, 1.0, 0.0], half_angle = 0.17, freq = [1.0, 3.0], angle = 0.9 }

[scenario.transform]
case = "alice-only"
map = { kind = "boost", rapidity = 0.5, axis = [0.0, 0.0, 1.0] }

[sweep]
variable = "rapidity"
start = 0.0
stop = 1.0
count = 4

[quadrature]
mode = "monte-carlo"
n_samples = 2000
seed = 11
"#,
    )
    .map_err(|x| x.to_string())?;
    let bin = env!("CARGO_BIN_EXE_photon-epr");
    let mut outputs = Vec::new();
    for threads in ["1", "4", "1"] {
        let out = dir.path().join(format!("out{}.csv", outputs.len()));
        let st = std::process::Command::new(bin)
            .args(["correlate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads, "--seed", "11"])
            .status()
            .map_err(|x| x.to_string())?;
        if !st.success() {
            return Err(format!("correlate exited with {st}"));
        }
        outputs.push(std::fs::read(&out).map_err(|x| x.to_string())?);
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    Ok((identical, format!("three CLI runs (threads 1, 4, 1; Monte Carlo quadrature, seed 11): byte-identical {identical}, {} bytes", outputs[0].len())))
}

fn supplementary_rotation_pictures() -> Outcome {
    let rot = e(LorentzMap::rotation(0.7, [0.0, 0.6, 0.8]))?;
    let mut worst: f64 = 0.0;
    for kind in [BellKind::Bell11, BellKind::Bell21] {
        worst = worst.max(picture_comparison(&TwoPhotonAmplitude::bell(kind, Envelope::Unit), &[rot])?.worst_ratio);
    }
    Ok((worst <= 1.0, format!("null-tetrad Bell amplitudes under a rotation: |detector - vacuum| / combined error {worst:.2e}")))
}

fn supplementary_spinor_pictures() -> Outcome {
    let p = picture_comparison(&TwoPhotonAmplitude::general(GeneralForm::SpinorProduct, Envelope::Unit), &boosts()?)?;
    Ok((
        p.worst_ratio <= 1.0 && p.identity_exact,
        format!("spinor-product amplitude under boosts up to rapidity 1: |detector - vacuum| / combined error {:.2e}", p.worst_ratio),
    ))
}

fn supplementary_gauge(g: &Geometry) -> Outcome {
    Ok((g.boost_gauge <= 1e-8, format!("boosted m equals the phase-rotated m modulo k: {:.1e}", g.boost_gauge)))
}

/// Exact Fock-space transformation of a tetrahedral grid under a 120-degree
/// rotation against the closed-form single-detector map.
fn supplementary_rotation_oracle() -> Outcome {
    let t = tetra();
    let ks: Vec<NullMomentum> = t.iter().map(|v| NullMomentum::new(1.0, *v)).collect::<photon_epr::Result<_>>().map_err(|x| x.to_string())?;
    let grid = e(DiscreteGrid::new(ks.iter().map(|k| (*k, 0.5)).collect()))?;
    let z = e(grid.normalize_density(&[0.4, 1.0, 0.7, 1.3]))?;
    let amp = TwoPhotonAmplitude::bell(BellKind::Bell11, Envelope::Unit);
    let tab = e(amplitude_table(&amp, &grid))?;
    let psi = |i: usize, j: usize| tab[i][j];
    let rot = e(LorentzMap::rotation(2.0 * PI / 3.0, t[3]))?;
    let find = |k: &NullMomentum| {
        (0..4).find(|&i| {
            let (a, b) = (ks[i].dir(), k.dir());
            (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs() < 1e-9
        })
    };
    let perm: Vec<usize> = (0..4).map(|j| find(&rot.apply(&ks[j])).ok_or("rotation leaves the grid")).collect::<Result<_, _>>()?;
    let phase: Vec<f64> = (0..4).map(|j| wigner_phase(&rot, &rot.apply(&ks[j]))).collect::<photon_epr::Result<_>>().map_err(|x| x.to_string())?;
    let space = e(FockSpace::new(grid.clone(), OscillatorTruncation::default(), 2))?;
    let u = e(space.grid_transformation(&perm, &phase))?;
    let state = e(space.two_photon_vector(psi, &z))?;
    let (alpha, beta) = (0.3, 1.1);
    let ya = e(space.yes_no_number(&[0], alpha))?;
    let yb = e(space.yes_no_number(&[3], beta))?;
    let norm = inner(&state, &state).re;
    let oracle = expectation(&yb, &u.adjoint().mul(&ya).mul(&u), &state) / norm;
    let zf = |k: &NullMomentum| find(k).map(|i| z[i]).unwrap_or(0.0);
    let a_side = e(detector_side(&[Node { k: ks[0], weight: 0.5 }], alpha, zf, Some(&rot), true))?;
    let b_side = e(detector_side(&[Node { k: ks[3], weight: 0.5 }], beta, zf, None, false))?;
    let n = OscillatorCount::Finite(2);
    let closed = side_numerator(&amp, n, &a_side, &b_side) / discrete_norm(&grid, psi, &z, n);
    let diff = (oracle - closed).norm();
    Ok((diff <= 1e-12 && oracle.norm() > 1e-6, format!("moved-detector closed form {:.12} vs exact unitary {:.12}, diff {diff:.1e}", closed.re, oracle.re)))
}

fn main() {
    let t0 = Instant::now();
    let mut h = Harness { lines: Vec::new() };
    match oracle_reports() {
        Ok((reports, secs)) => {
            h.record("criterion 1 (oracle algebra)", criterion1(&reports, secs));
            h.record("criterion 2 (scalar product)", criterion2(&reports));
            h.record("criterion 3 (EPR oracle equivalence)", criterion3(&reports));
        }
        Err(err) => {
            for label in ["criterion 1 (oracle algebra)", "criterion 2 (scalar product)", "criterion 3 (EPR oracle equivalence)"] {
                h.record(label, Err(err.clone()));
            }
        }
    }
    let g = geometry();
    h.record("criterion 4 (geometry)", g.as_ref().map_err(|x| x.clone()).and_then(criterion4));
    h.record("criterion 5 (Bell structure)", criterion5());
    h.record("criterion 6 (N-dependence)", criterion6());
    h.record("criterion 7 (case 1 pictures)", criterion7());
    h.record("criterion 8 (case 2 orderings)", criterion8());
    h.record("criterion 9 (determinism)", criterion9());
    h.record("supplementary (rotation pictures)", supplementary_rotation_pictures());
    h.record("supplementary (spinor-product pictures)", supplementary_spinor_pictures());
    h.record("supplementary (boosted m modulo k)", g.as_ref().map_err(|x| x.clone()).and_then(supplementary_gauge));
    h.record("supplementary (moved-detector oracle)", supplementary_rotation_oracle());
    let crit: Vec<&(String, bool, String)> = h.lines.iter().filter(|l| l.0.starts_with("criterion")).collect();
    let passed = crit.iter().filter(|l| l.1).count();
    let red: Vec<&str> = crit.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    println!("acceptance: {passed}/{} criteria pass in {:.1} s", crit.len(), t0.elapsed().as_secs_f64());
    if !red.is_empty() {
        println!("red: {}", red.join(", "));
    }
    let errored = h.lines.iter().any(|l| l.2.starts_with("error:"));
    if errored {
        std::process::exit(1);
    }
}
