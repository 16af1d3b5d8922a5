//! Minkowski four-vectors with signature (+,-,-,-), Lorentz maps carried together
//! with their SL(2,C) representative, spin-frames, null tetrads and the Wigner phase.
//!
//! Hermitian map: `K(k) = k^0 I + k . sigma`. A map acts on spinors by `s -> L s`
//! and on `K` by `K -> L K L^dagger`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::wrap_angle;

pub type Vec3 = [f64; 3];
pub type FourVector = [f64; 4];
pub type CFourVector = [C64; 4];
type Mat2 = [[C64; 2]; 2];
type Mat4 = [[f64; 4]; 4];

const AXIS_TOL: f64 = 1e-9;
const CHART_TOL: f64 = 1e-9;
const PROPORTIONALITY_TOL: f64 = 1e-8;

pub fn minkowski(a: &FourVector, b: &FourVector) -> f64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

/// Bilinear (not sesquilinear) Minkowski product of complex four-vectors.
pub fn cminkowski(a: &CFourVector, b: &CFourVector) -> C64 {
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
}

pub fn conj4(a: &CFourVector) -> CFourVector {
    [a[0].conj(), a[1].conj(), a[2].conj(), a[3].conj()]
}

/// Euclidean norm of the components; used for residuals only.
pub fn cnorm(a: &CFourVector) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn norm3(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn unit_axis(axis: Vec3) -> Result<Vec3> {
    let n = norm3(&axis);
    if !n.is_finite() || (n - 1.0).abs() > AXIS_TOL {
        return Err(Error::Input(format!("axis {axis:?} is not a unit vector (norm {n})")));
    }
    Ok(axis)
}

/// A forward null momentum `freq * (1, dir)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullMomentum {
    freq: f64,
    dir: Vec3,
}

impl NullMomentum {
    pub fn new(freq: f64, dir: Vec3) -> Result<Self> {
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::Input(format!("frequency must be positive and finite, got {freq}")));
        }
        let n = norm3(&dir);
        if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!("direction {dir:?} is not a unit vector")));
        }
        Ok(Self { freq, dir })
    }

    /// Builds from any nonzero spatial vector; the direction is normalized.
    pub fn from_spatial(p: Vec3) -> Result<Self> {
        let n = norm3(&p);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Input(format!("spatial momentum {p:?} must be nonzero and finite")));
        }
        Ok(Self { freq: n, dir: [p[0] / n, p[1] / n, p[2] / n] })
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    pub fn dir(&self) -> Vec3 {
        self.dir
    }

    pub fn four_vector(&self) -> FourVector {
        let w = self.freq;
        [w, w * self.dir[0], w * self.dir[1], w * self.dir[2]]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.freq * factor, self.dir)
    }

    /// Azimuth of the direction about the global z axis, in (-pi, pi].
    pub fn azimuth(&self) -> f64 {
        self.dir[1].atan2(self.dir[0])
    }
}

/// Proper orthochronous Lorentz transformation with its SL(2,C) lift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorentzMap {
    matrix: Mat4,
    sl2c: Mat2,
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat2_adjoint(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

const ETA: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// `K(v) = v^0 I + v . sigma` for a complex four-vector.
fn pauli_map(v: &CFourVector) -> Mat2 {
    let i = c(0.0, 1.0);
    [[v[0] + v[3], v[1] - i * v[2]], [v[1] + i * v[2], v[0] - v[3]]]
}

/// Inverse of `pauli_map`: components `tr(M sigma_mu) / 2`.
fn pauli_components(m: &Mat2) -> CFourVector {
    let i = c(0.0, 1.0);
    [
        (m[0][0] + m[1][1]) * 0.5,
        (m[0][1] + m[1][0]) * 0.5,
        i * (m[0][1] - m[1][0]) * 0.5,
        (m[0][0] - m[1][1]) * 0.5,
    ]
}

fn outer(a: &Spinor, b: &Spinor) -> Mat2 {
    [[a.c0 * b.c0.conj(), a.c0 * b.c1.conj()], [a.c1 * b.c0.conj(), a.c1 * b.c1.conj()]]
}

impl LorentzMap {
    pub fn identity() -> Self {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let mut matrix = [[0.0; 4]; 4];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { matrix, sl2c: [[one, zero], [zero, one]] }
    }

    /// Pure boost with rapidity `rapidity` along the unit `axis`.
    pub fn boost(rapidity: f64, axis: Vec3) -> Result<Self> {
        if !rapidity.is_finite() {
            return Err(Error::Input(format!("rapidity must be finite, got {rapidity}")));
        }
        let n = unit_axis(axis)?;
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        let mut matrix = [[0.0; 4]; 4];
        matrix[0][0] = ch;
        for i in 0..3 {
            matrix[0][i + 1] = sh * n[i];
            matrix[i + 1][0] = sh * n[i];
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                matrix[i + 1][j + 1] = delta + (ch - 1.0) * n[i] * n[j];
            }
        }
        // exp(rapidity/2 n.sigma)
        let (hc, hs) = ((0.5 * rapidity).cosh(), (0.5 * rapidity).sinh());
        let sl2c = [
            [c(hc + hs * n[2], 0.0), c(hs * n[0], -hs * n[1])],
            [c(hs * n[0], hs * n[1]), c(hc - hs * n[2], 0.0)],
        ];
        Ok(Self { matrix, sl2c })
    }

    /// Right-handed rotation by `angle` about the unit `axis`.
    pub fn rotation(angle: f64, axis: Vec3) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::Input(format!("rotation angle must be finite, got {angle}")));
        }
        let n = unit_axis(axis)?;
        let (ca, sa) = (angle.cos(), angle.sin());
        let cross = [[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]];
        let mut matrix = [[0.0; 4]; 4];
        matrix[0][0] = 1.0;
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                matrix[i + 1][j + 1] = ca * delta + sa * cross[i][j] + (1.0 - ca) * n[i] * n[j];
            }
        }
        // exp(-i angle/2 n.sigma)
        let (hc, hs) = ((0.5 * angle).cos(), (0.5 * angle).sin());
        let sl2c = [
            [c(hc, -hs * n[2]), c(-hs * n[1], -hs * n[0])],
            [c(hs * n[1], -hs * n[0]), c(hc, hs * n[2])],
        ];
        Ok(Self { matrix, sl2c })
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn sl2c(&self) -> &Mat2 {
        &self.sl2c
    }

    /// `self` after `other`: applying the result equals applying `other` first.
    pub fn compose(&self, other: &LorentzMap) -> LorentzMap {
        LorentzMap {
            matrix: mat4_mul(&self.matrix, &other.matrix),
            sl2c: mat2_mul(&self.sl2c, &other.sl2c),
        }
    }

    pub fn inverse(&self) -> LorentzMap {
        // eta M^T eta for the vector part, adjugate for the unit-determinant spinor part.
        let mut matrix = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                matrix[i][j] = ETA[i] * self.matrix[j][i] * ETA[j];
            }
        }
        let s = &self.sl2c;
        let sl2c = [[s[1][1], -s[0][1]], [-s[1][0], s[0][0]]];
        LorentzMap { matrix, sl2c }
    }

    pub fn apply_vector(&self, v: &FourVector) -> FourVector {
        let mut out = [0.0; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| self.matrix[i][j] * v[j]).sum();
        }
        out
    }

    pub fn apply_cvector(&self, v: &CFourVector) -> CFourVector {
        let mut out = [C64::new(0.0, 0.0); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| v[j] * self.matrix[i][j]).sum();
        }
        out
    }

    pub fn apply(&self, k: &NullMomentum) -> NullMomentum {
        // exact identity passes momenta through untouched, so identity scenarios stay bitwise equal to rest ones
        if *self == LorentzMap::identity() {
            return *k;
        }
        let v = self.apply_vector(&k.four_vector());
        // The time component is kept only implicitly: null by construction.
        let spatial = [v[1], v[2], v[3]];
        let n = norm3(&spatial);
        NullMomentum { freq: n, dir: [spatial[0] / n, spatial[1] / n, spatial[2] / n] }
    }

    pub fn apply_spinor(&self, s: &Spinor) -> Spinor {
        let l = &self.sl2c;
        Spinor { c0: l[0][0] * s.c0 + l[0][1] * s.c1, c1: l[1][0] * s.c0 + l[1][1] * s.c1 }
    }

    /// max |(M^T eta M - eta)_{ij}|
    pub fn metric_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let g: f64 = (0..4).map(|k| self.matrix[k][i] * ETA[k] * self.matrix[k][j]).sum();
                let target = if i == j { ETA[i] } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// max over basis vectors of |L K(e) L^dagger - K(M e)|, plus |det L - 1|.
    pub fn consistency_residual(&self) -> f64 {
        let l = &self.sl2c;
        let ld = mat2_adjoint(l);
        let mut worst: f64 = 0.0;
        for nu in 0..4 {
            let mut e = [C64::new(0.0, 0.0); 4];
            e[nu] = c(1.0, 0.0);
            let conj = mat2_mul(&mat2_mul(l, &pauli_map(&e)), &ld);
            let got = pauli_components(&conj);
            for mu in 0..4 {
                worst = worst.max((got[mu] - self.matrix[mu][nu]).norm());
            }
        }
        let det = l[0][0] * l[1][1] - l[0][1] * l[1][0];
        worst.max((det - 1.0).norm())
    }
}

/// Two-component unprimed spinor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spinor {
    pub c0: C64,
    pub c1: C64,
}

impl Spinor {
    pub fn norm(&self) -> f64 {
        (self.c0.norm_sqr() + self.c1.norm_sqr()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.c0.is_finite() && self.c1.is_finite()
    }
}

/// Symplectic pairing `a_0 b_1 - a_1 b_0`; equals +1 on a spin-frame `(pi, omicron)`.
pub fn pairing(a: &Spinor, b: &Spinor) -> C64 {
    a.c0 * b.c1 - a.c1 * b.c0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinFrame {
    pub pi: Spinor,
    pub omicron: Spinor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullTetrad {
    pub k_vec: FourVector,
    pub q_vec: FourVector,
    pub m_vec: CFourVector,
    pub mbar_vec: CFourVector,
}

/// `(cos(theta/2), sin(theta/2) e^{i phi})` for the polar angles of `dir`.
fn half_angle_chart(k: &NullMomentum) -> Result<(f64, C64)> {
    let d = k.dir;
    let gap = norm3(&[d[0], d[1], d[2] + 1.0]);
    if gap < CHART_TOL {
        return Err(Error::Chart { dir: d });
    }
    let ch = (0.5 * (1.0 + d[2])).max(0.0).sqrt();
    let se = c(d[0], d[1]) / (2.0 * ch);
    Ok((ch, se))
}

pub fn standard_spinor(k: &NullMomentum) -> Result<Spinor> {
    let (ch, se) = half_angle_chart(k)?;
    let r = (2.0 * k.freq).sqrt();
    Ok(Spinor { c0: c(r * ch, 0.0), c1: se * r })
}

pub fn spin_frame(k: &NullMomentum) -> Result<SpinFrame> {
    let (ch, se) = half_angle_chart(k)?;
    let r = (2.0 * k.freq).sqrt();
    let pi = Spinor { c0: c(r * ch, 0.0), c1: se * r };
    let omicron = Spinor { c0: -se.conj() / r, c1: c(ch / r, 0.0) };
    Ok(SpinFrame { pi, omicron })
}

/// `|pi pi^dagger - K(k)|` (max entry).
pub fn flagpole_residual(k: &NullMomentum) -> Result<f64> {
    let pi = standard_spinor(k)?;
    let kv = k.four_vector();
    let target = pauli_map(&[c(kv[0], 0.0), c(kv[1], 0.0), c(kv[2], 0.0), c(kv[3], 0.0)]);
    let got = outer(&pi, &pi);
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((got[i][j] - target[i][j]).norm());
        }
    }
    Ok(worst)
}

pub fn tetrad_from_frame(frame: &SpinFrame) -> NullTetrad {
    let kc = pauli_components(&outer(&frame.pi, &frame.pi));
    let qc = pauli_components(&outer(&frame.omicron, &frame.omicron));
    let mc = pauli_components(&outer(&frame.omicron, &frame.pi));
    let s2 = std::f64::consts::SQRT_2;
    let k_vec = [kc[0].re, kc[1].re, kc[2].re, kc[3].re];
    let q_vec = [2.0 * qc[0].re, 2.0 * qc[1].re, 2.0 * qc[2].re, 2.0 * qc[3].re];
    let m_vec = [mc[0] * s2, mc[1] * s2, mc[2] * s2, mc[3] * s2];
    NullTetrad { k_vec, q_vec, mbar_vec: conj4(&m_vec), m_vec }
}

pub fn null_tetrad(k: &NullMomentum) -> Result<NullTetrad> {
    Ok(tetrad_from_frame(&spin_frame(k)?))
}

impl NullTetrad {
    /// Largest deviation among the null-tetrad normalization relations.
    pub fn invariant_residual(&self) -> f64 {
        let kc = self.k_vec.map(|x| C64::new(x, 0.0));
        let qc = self.q_vec.map(|x| C64::new(x, 0.0));
        let checks = [
            minkowski(&self.k_vec, &self.k_vec).abs(),
            minkowski(&self.q_vec, &self.q_vec).abs(),
            cminkowski(&self.m_vec, &self.m_vec).norm(),
            cminkowski(&kc, &self.m_vec).norm(),
            cminkowski(&qc, &self.m_vec).norm(),
            (minkowski(&self.k_vec, &self.q_vec) - 1.0).abs(),
            (cminkowski(&self.m_vec, &self.mbar_vec) + 1.0).norm(),
            cnorm(&[
                self.mbar_vec[0] - self.m_vec[0].conj(),
                self.mbar_vec[1] - self.m_vec[1].conj(),
                self.mbar_vec[2] - self.m_vec[2].conj(),
                self.mbar_vec[3] - self.m_vec[3].conj(),
            ]),
        ];
        checks.into_iter().fold(0.0, f64::max)
    }
}

/// Phase `e^{-i Theta}` relating `L pi(L^-1 k)` to `pi(k)`.
fn wigner_factor(map: &LorentzMap, k: &NullMomentum) -> Result<C64> {
    let back = map.inverse().apply(k);
    let s = map.apply_spinor(&standard_spinor(&back)?);
    let p = standard_spinor(k)?;
    let ratio = if p.c0.norm() >= p.c1.norm() { s.c0 / p.c0 } else { s.c1 / p.c1 };
    let resid = Spinor { c0: s.c0 - ratio * p.c0, c1: s.c1 - ratio * p.c1 }.norm() / s.norm();
    if !(resid < PROPORTIONALITY_TOL) {
        return Err(Error::Consistency(format!(
            "transported spinor is not proportional to pi(k) (relative residual {resid:e})"
        )));
    }
    Ok(ratio / ratio.norm())
}

/// The doubled Wigner phase `2 Theta(map, k)`, wrapped to (-pi, pi].
pub fn wigner_phase(map: &LorentzMap, k: &NullMomentum) -> Result<f64> {
    let f = wigner_factor(map, k)?;
    Ok(wrap_angle(-2.0 * f.arg()))
}

/// Residual vector `M m(L^-1 k) - e^{2i Theta} m(k)`.
fn m_transport_defect(map: &LorentzMap, k: &NullMomentum) -> Result<(CFourVector, NullTetrad)> {
    let back = map.inverse().apply(k);
    let moved = map.apply_cvector(&null_tetrad(&back)?.m_vec);
    let here = null_tetrad(k)?;
    let phase = C64::from_polar(1.0, wigner_phase(map, k)?);
    let mut r = [C64::new(0.0, 0.0); 4];
    for mu in 0..4 {
        r[mu] = moved[mu] - phase * here.m_vec[mu];
    }
    Ok((r, here))
}

/// `|M m(L^-1 k) - e^{2i Theta} m(k)|`; the conjugate relation has the same modulus.
pub fn tetrad_covariance_residual(map: &LorentzMap, k: &NullMomentum) -> Result<f64> {
    let (r, _) = m_transport_defect(map, k)?;
    Ok(cnorm(&r).max(cnorm(&conj4(&r))))
}

/// Same defect after removing its component along `k` (the null-rotation gauge
/// direction `m -> m + c k`, which leaves every `m.m'`-type contraction with the
/// same `k` unchanged only when the partner is orthogonal to `k`).
pub fn gauge_reduced_covariance_residual(map: &LorentzMap, k: &NullMomentum) -> Result<f64> {
    let (r, t) = m_transport_defect(map, k)?;
    let qc = t.q_vec.map(|x| C64::new(x, 0.0));
    let along = cminkowski(&r, &qc);
    let mut reduced = r;
    for mu in 0..4 {
        reduced[mu] -= along * t.k_vec[mu];
    }
    Ok(cnorm(&reduced))
}

/// `|L omicron(L^-1 k) - e^{+i Theta} omicron(k)|`, the optional spin-frame diagnostic.
pub fn omicron_covariance_residual(map: &LorentzMap, k: &NullMomentum) -> Result<f64> {
    let f = wigner_factor(map, k)?;
    let back = map.inverse().apply(k);
    let moved = map.apply_spinor(&spin_frame(&back)?.omicron);
    let here = spin_frame(k)?.omicron;
    let e = f.conj();
    Ok(Spinor { c0: moved.c0 - e * here.c0, c1: moved.c1 - e * here.c1 }.norm() * (2.0 * k.freq).sqrt())
}
