//! Invariant momentum measure `dGamma = omega d(omega) dOmega / (2 (2 pi)^3)`,
//! conical detector regions and deterministic quadrature over them.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spinor_tetrad::{LorentzMap, NullMomentum, Vec3};

/// `1 / (2 (2 pi)^3)`
pub const MEASURE_PREFACTOR: f64 = 1.0 / (16.0 * PI * PI * PI);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorRegion {
    axis: Vec3,
    half_angle: f64,
    freq_lo: f64,
    freq_hi: f64,
}

impl DetectorRegion {
    pub fn new(axis: Vec3, half_angle: f64, freq_lo: f64, freq_hi: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("region axis {axis:?} is not a unit vector")));
        }
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(Error::Input(format!("half_angle {half_angle} outside (0, pi/2)")));
        }
        if !(freq_lo > 0.0 && freq_lo < freq_hi && freq_hi.is_finite()) {
            return Err(Error::Input(format!("frequency band [{freq_lo}, {freq_hi}] is empty or invalid")));
        }
        Ok(Self { axis, half_angle, freq_lo, freq_hi })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }
    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }
    pub fn freq_lo(&self) -> f64 {
        self.freq_lo
    }
    pub fn freq_hi(&self) -> f64 {
        self.freq_hi
    }

    pub fn contains(&self, k: &NullMomentum) -> bool {
        let d = k.dir();
        let cosang = d[0] * self.axis[0] + d[1] * self.axis[1] + d[2] * self.axis[2];
        cosang >= self.half_angle.cos() && k.freq() >= self.freq_lo && k.freq() <= self.freq_hi
    }

    /// Closed-form `integral dGamma` over the region.
    pub fn measure(&self) -> f64 {
        shell_cap_measure(self.half_angle, self.freq_lo, self.freq_hi)
    }

    fn shell(&self) -> ShellCap {
        ShellCap { axis: self.axis, half_angle: self.half_angle, freq_lo: self.freq_lo, freq_hi: self.freq_hi }
    }
}

/// Measure of a spherical cap of `half_angle` (up to pi) times a frequency shell.
pub fn shell_cap_measure(half_angle: f64, freq_lo: f64, freq_hi: f64) -> f64 {
    MEASURE_PREFACTOR * 2.0 * PI * (1.0 - half_angle.cos()) * 0.5 * (freq_hi * freq_hi - freq_lo * freq_lo)
}

/// Cap of any half-angle in (0, pi]; a full sphere is `half_angle = pi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellCap {
    pub axis: Vec3,
    pub half_angle: f64,
    pub freq_lo: f64,
    pub freq_hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMode {
    ProductRule,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub n_freq: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub mode: QuadratureMode,
    pub seed: u64,
    pub n_samples: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { n_freq: 8, n_polar: 8, n_azimuth: 12, mode: QuadratureMode::ProductRule, seed: 0, n_samples: 4096 }
    }
}

impl QuadratureSpec {
    pub fn product(n_freq: usize, n_polar: usize, n_azimuth: usize) -> Self {
        Self { n_freq, n_polar, n_azimuth, ..Self::default() }
    }

    pub fn monte_carlo(n_samples: usize, seed: u64) -> Self {
        Self { mode: QuadratureMode::MonteCarlo, n_samples, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq < 2 || self.n_polar < 2 || self.n_azimuth < 2 {
            return Err(Error::Input("quadrature node counts must be at least 2".into()));
        }
        if self.mode == QuadratureMode::MonteCarlo && self.n_samples < 2 {
            return Err(Error::Input("monte-carlo needs at least 2 samples".into()));
        }
        Ok(())
    }

    /// Roughly half the nodes per direction; the reference for error estimates.
    pub fn coarsened(&self) -> Self {
        let h = |n: usize| (n / 2).max(2);
        Self {
            n_freq: h(self.n_freq),
            n_polar: h(self.n_polar),
            n_azimuth: h(self.n_azimuth),
            n_samples: h(self.n_samples),
            seed: self.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
            mode: self.mode,
        }
    }

    pub fn refined(&self) -> Self {
        Self {
            n_freq: 2 * self.n_freq,
            n_polar: 2 * self.n_polar,
            n_azimuth: 2 * self.n_azimuth,
            n_samples: 2 * self.n_samples,
            ..*self
        }
    }
}

/// A quadrature node: momentum and its share of `dGamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub k: NullMomentum,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: C64,
    pub err: f64,
}

/// Gauss-Legendre nodes and weights on [a, b], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid - half * x, half * w));
    }
    out
}

/// Sum with a fixed binary-tree order so results do not depend on threading.
pub fn pairwise_sum(xs: &[C64]) -> C64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().fold(C64::new(0.0, 0.0), |acc, x| acc + x);
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

pub fn pairwise_sum_real(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum_real(l) + pairwise_sum_real(r)
}

/// Orthonormal (e1, e2) completing `axis` to a right-handed frame.
pub fn transverse_frame(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = helper[0] * axis[0] + helper[1] * axis[1] + helper[2] * axis[2];
    let mut e1 = [helper[0] - d * axis[0], helper[1] - d * axis[1], helper[2] - d * axis[2]];
    let n = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = [e1[0] / n, e1[1] / n, e1[2] / n];
    let e2 = [
        axis[1] * e1[2] - axis[2] * e1[1],
        axis[2] * e1[0] - axis[0] * e1[2],
        axis[0] * e1[1] - axis[1] * e1[0],
    ];
    (e1, e2)
}

fn direction(axis: &Vec3, e1: &Vec3, e2: &Vec3, cos_t: f64, phi: f64) -> Vec3 {
    let s = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (cp, sp) = (phi.cos(), phi.sin());
    let mut d = [0.0; 3];
    for i in 0..3 {
        d[i] = cos_t * axis[i] + s * (cp * e1[i] + sp * e2[i]);
    }
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Angular product rule on a cap: (direction, solid-angle weight).
fn cap_directions(axis: &Vec3, half_angle: f64, n_polar: usize, n_azimuth: usize) -> Vec<(Vec3, f64)> {
    let (e1, e2) = transverse_frame(axis);
    let polar = gauss_legendre(n_polar, half_angle.cos(), 1.0);
    let dphi = 2.0 * PI / n_azimuth as f64;
    let mut out = Vec::with_capacity(n_polar * n_azimuth);
    for &(ct, wt) in &polar {
        for j in 0..n_azimuth {
            let phi = (j as f64 + 0.5) * dphi;
            out.push((direction(axis, &e1, &e2, ct, phi), wt * dphi));
        }
    }
    out
}

pub fn shell_cap_nodes(cap: &ShellCap, spec: &QuadratureSpec) -> Vec<Node> {
    let dirs = cap_directions(&cap.axis, cap.half_angle, spec.n_polar, spec.n_azimuth);
    let radial = gauss_legendre(spec.n_freq, cap.freq_lo, cap.freq_hi);
    let mut out = Vec::with_capacity(dirs.len() * radial.len());
    for &(w, ww) in &radial {
        for &(d, wd) in &dirs {
            out.push(Node { k: unchecked_momentum(w, d), weight: MEASURE_PREFACTOR * w * ww * wd });
        }
    }
    out
}

fn unchecked_momentum(freq: f64, dir: Vec3) -> NullMomentum {
    NullMomentum::new(freq, dir).expect("quadrature node is a valid null momentum")
}

fn monte_carlo_nodes(cap: &ShellCap, n: usize, seed: u64) -> Vec<Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (e1, e2) = transverse_frame(&cap.axis);
    let cmin = cap.half_angle.cos();
    let volume_ang = 2.0 * PI * (1.0 - cmin);
    let span = cap.freq_hi - cap.freq_lo;
    (0..n)
        .map(|_| {
            let ct = cmin + (1.0 - cmin) * rng.random::<f64>();
            let phi = 2.0 * PI * rng.random::<f64>();
            let w = cap.freq_lo + span * rng.random::<f64>();
            let d = direction(&cap.axis, &e1, &e2, ct, phi);
            Node { k: unchecked_momentum(w, d), weight: MEASURE_PREFACTOR * w * volume_ang * span / n as f64 }
        })
        .collect()
}

/// Nodes and weights realizing `dGamma` over the region.
pub fn invariant_node_set(region: &DetectorRegion, spec: &QuadratureSpec) -> Result<Vec<Node>> {
    spec.validate()?;
    Ok(match spec.mode {
        QuadratureMode::ProductRule => shell_cap_nodes(&region.shell(), spec),
        QuadratureMode::MonteCarlo => monte_carlo_nodes(&region.shell(), spec.n_samples, spec.seed),
    })
}

/// Evaluates `f` on every node (in parallel) and returns the values in node order.
pub fn evaluate_nodes<F>(nodes: &[Node], f: F) -> Result<Vec<C64>>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    nodes
        .par_iter()
        .enumerate()
        .map(|(index, n)| {
            let v = f(&n.k)?;
            if !v.is_finite() {
                return Err(Error::Evaluation { index, freq: n.k.freq(), dir: n.k.dir() });
            }
            Ok(v * n.weight)
        })
        .collect()
}

fn quadrature<F>(nodes: &[Node], f: &F) -> Result<C64>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    Ok(pairwise_sum(&evaluate_nodes(nodes, f)?))
}

/// Monte Carlo estimate with its standard error.
fn mc_estimate<F>(nodes: &[Node], f: &F) -> Result<Estimate>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    let terms = evaluate_nodes(nodes, f)?;
    let n = terms.len() as f64;
    let mean = pairwise_sum(&terms);
    let scaled: Vec<f64> = terms.iter().map(|t| (t * n - mean).norm_sqr()).collect();
    let var = pairwise_sum_real(&scaled) / (n - 1.0);
    Ok(Estimate { value: mean, err: (var / n).sqrt() })
}

pub fn integrate_region<F>(f: F, region: &DetectorRegion, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    let nodes = invariant_node_set(region, spec)?;
    match spec.mode {
        QuadratureMode::MonteCarlo => mc_estimate(&nodes, &f),
        QuadratureMode::ProductRule => {
            let fine = quadrature(&nodes, &f)?;
            let coarse = quadrature(&invariant_node_set(region, &spec.coarsened())?, &f)?;
            Ok(Estimate { value: fine, err: (fine - coarse).norm() })
        }
    }
}

/// `integral over map(region) of f dGamma`, computed as `integral over region of f(map u) dGamma(u)`.
pub fn integrate_boosted_region<F>(
    f: F,
    region: &DetectorRegion,
    map: &LorentzMap,
    spec: &QuadratureSpec,
) -> Result<Estimate>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    integrate_region(|u: &NullMomentum| f(&map.apply(u)), region, spec)
}

/// Nodes of `region` pushed forward by `map`; weights unchanged (invariant measure).
pub fn boosted_nodes(nodes: &[Node], map: &LorentzMap) -> Vec<Node> {
    nodes.iter().map(|n| Node { k: map.apply(&n.k), weight: n.weight }).collect()
}

/// `sum_ij f(i, j)` over a node product, rows in parallel, fixed summation order.
pub fn sum_pairs<F>(n_rows: usize, n_cols: usize, f: F) -> C64
where
    F: Fn(usize, usize) -> C64 + Sync,
{
    let rows: Vec<C64> = (0..n_rows)
        .into_par_iter()
        .map(|i| {
            let row: Vec<C64> = (0..n_cols).map(|j| f(i, j)).collect();
            pairwise_sum(&row)
        })
        .collect();
    pairwise_sum(&rows)
}

/// Directional disjointness: axis separation exceeds the sum of half-angles.
pub fn regions_disjoint(a: &DetectorRegion, b: &DetectorRegion) -> bool {
    let d = a.axis[0] * b.axis[0] + a.axis[1] * b.axis[1] + a.axis[2] * b.axis[2];
    d.clamp(-1.0, 1.0).acos() > a.half_angle + b.half_angle
}

/// Radial substitution used for integrals over all frequencies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialRule {
    /// `omega = -scale ln u` with Gauss-Legendre in u on (0, 1].
    Exponential { scale: f64 },
    /// `omega = center e^x`, Gauss-Legendre in x on `[-span, span]`.
    Logarithmic { center: f64, span: f64 },
}

impl RadialRule {
    /// (omega, d omega weight) pairs.
    pub fn nodes(&self, n: usize) -> Vec<(f64, f64)> {
        match *self {
            RadialRule::Exponential { scale } => gauss_legendre(n, 0.0, 1.0)
                .into_iter()
                .map(|(u, w)| (-scale * u.ln(), scale * w / u))
                .collect(),
            RadialRule::Logarithmic { center, span } => gauss_legendre(n, -span, span)
                .into_iter()
                .map(|(x, w)| {
                    let om = center * x.exp();
                    (om, om * w)
                })
                .collect(),
        }
    }
}

/// Product nodes over all of momentum space, polar grid about `axis`.
pub fn full_space_nodes(rule: &RadialRule, axis: &Vec3, spec: &QuadratureSpec) -> Vec<Node> {
    let dirs = cap_directions(axis, PI, spec.n_polar, spec.n_azimuth);
    let radial = rule.nodes(spec.n_freq);
    let mut out = Vec::with_capacity(dirs.len() * radial.len());
    for &(w, ww) in &radial {
        for &(d, wd) in &dirs {
            out.push(Node { k: unchecked_momentum(w, d), weight: MEASURE_PREFACTOR * w * ww * wd });
        }
    }
    out
}

pub fn integrate_full_space<F>(f: F, rule: &RadialRule, spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(&NullMomentum) -> Result<C64> + Sync,
{
    spec.validate()?;
    let axis = [0.0, 0.0, 1.0];
    let fine = quadrature(&full_space_nodes(rule, &axis, spec), &f)?;
    let coarse = quadrature(&full_space_nodes(rule, &axis, &spec.coarsened()), &f)?;
    Ok(Estimate { value: fine, err: (fine - coarse).norm() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(5, 0.0, 2.0);
        let s: f64 = rule.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert!((s - 2f64.powi(10) / 10.0).abs() < 1e-10);
        assert!(rule.windows(2).all(|p| p[0].0 < p[1].0));
    }

    #[test]
    fn disjointness_geometry() {
        let deg = PI / 180.0;
        let a = DetectorRegion::new([1.0, 0.0, 0.0], 10.0 * deg, 1.0, 2.0).unwrap();
        let b = DetectorRegion::new([(30.0 * deg).cos(), (30.0 * deg).sin(), 0.0], 10.0 * deg, 1.0, 2.0).unwrap();
        assert!(regions_disjoint(&a, &b));
        let a2 = DetectorRegion::new(a.axis(), 20.0 * deg, 1.0, 2.0).unwrap();
        let b2 = DetectorRegion::new(b.axis(), 20.0 * deg, 1.0, 2.0).unwrap();
        assert!(!regions_disjoint(&a2, &b2));
        assert!(!regions_disjoint(&a, &a));
    }

    #[test]
    fn region_validation() {
        assert!(DetectorRegion::new([1.0, 0.0, 0.0], 0.0, 1.0, 2.0).is_err());
        assert!(DetectorRegion::new([1.0, 0.0, 0.0], 0.2, 2.0, 1.0).is_err());
        assert!(DetectorRegion::new([1.0, 1.0, 0.0], 0.2, 1.0, 2.0).is_err());
        assert!(DetectorRegion::new([1.0, 0.0, 0.0], PI / 2.0, 1.0, 2.0).is_err());
    }
}
