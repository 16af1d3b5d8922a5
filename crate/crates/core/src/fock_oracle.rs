//! Finite-dimensional realization of the reducible N-oscillator representation on
//! a momentum grid. The one-oscillator space is `grid (x) mode1 (x) mode2`, each
//! mode truncated at `cutoff`; the N-oscillator space is its N-fold tensor power.
//!
//! Grid kets are orthonormal `|i>`; the delta-normalized momentum ket is
//! `|k_i> = |i> / sqrt(w_i)`, so `delta_Gamma(k_i, k_j) -> delta_ij / w_i`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64 as C64;

use crate::correlators::four_term_numerator;
use crate::error::{Error, Result};
use crate::spinor_tetrad::NullMomentum;
use crate::states::OscillatorCount;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Compressed sparse row complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, indptr: vec![0; rows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![ONE; n] }
    }

    /// Duplicates are summed; exact zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut per_row: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); rows];
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            *per_row[r].entry(c).or_insert(ZERO) += v;
        }
        Self::from_rows(rows, cols, per_row)
    }

    fn from_rows(rows: usize, cols: usize, per_row: Vec<BTreeMap<usize, C64>>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (r, row) in per_row.into_iter().enumerate() {
            for (c, v) in row {
                if v != ZERO {
                    m.indices.push(c);
                    m.data.push(v);
                }
            }
            m.indptr[r + 1] = m.indices.len();
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).find(|&(j, _)| j == c).map(|(_, v)| v).unwrap_or(ZERO)
    }

    pub fn kron(&self, other: &SparseMatrix) -> SparseMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut m = Self::zeros(rows, cols);
        m.indices.reserve(self.nnz() * other.nnz());
        m.data.reserve(self.nnz() * other.nnz());
        for r1 in 0..self.rows {
            for r2 in 0..other.rows {
                for (c1, v1) in self.row(r1) {
                    for (c2, v2) in other.row(r2) {
                        m.indices.push(c1 * other.cols + c2);
                        m.data.push(v1 * v2);
                    }
                }
                m.indptr[r1 * other.rows + r2 + 1] = m.indices.len();
            }
        }
        m
    }

    pub fn mul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.cols, other.rows, "shape mismatch in product");
        let mut per_row = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut acc: BTreeMap<usize, C64> = BTreeMap::new();
            for (k, v) in self.row(r) {
                for (c, w) in other.row(k) {
                    *acc.entry(c).or_insert(ZERO) += v * w;
                }
            }
            per_row.push(acc);
        }
        Self::from_rows(self.rows, other.cols, per_row)
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, other: &SparseMatrix, alpha: C64) -> SparseMatrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in sum");
        let mut per_row = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut acc: BTreeMap<usize, C64> = self.row(r).collect();
            for (c, w) in other.row(r) {
                *acc.entry(c).or_insert(ZERO) += alpha * w;
            }
            per_row.push(acc);
        }
        Self::from_rows(self.rows, self.cols, per_row)
    }

    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        self.add_scaled(other, ONE)
    }

    pub fn sub(&self, other: &SparseMatrix) -> SparseMatrix {
        self.add_scaled(other, -ONE)
    }

    pub fn scale(&self, alpha: C64) -> SparseMatrix {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= alpha;
        }
        m
    }

    pub fn adjoint(&self) -> SparseMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.push((c, r, v.conj()));
            }
        }
        Self::from_triplets(self.cols, self.rows, t)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        (0..self.rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &SparseMatrix) -> SparseMatrix {
        self.mul(other).sub(&other.mul(self))
    }

    /// Drops the columns whose mask entry is false.
    pub fn restrict_columns(&self, keep: &[bool]) -> SparseMatrix {
        let mut t = Vec::new();
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                if keep[c] {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(self.rows, self.cols, t)
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(a: &[C64]) -> f64 {
    inner(a, a).re.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGrid {
    cells: Vec<(NullMomentum, f64)>,
}

impl DiscreteGrid {
    pub fn new(cells: Vec<(NullMomentum, f64)>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Input("grid needs at least one cell".into()));
        }
        for (i, (k, w)) in cells.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::Input(format!("cell {i} has non-positive weight {w}")));
            }
            for (j, (k2, _)) in cells[..i].iter().enumerate() {
                if k == k2 {
                    return Err(Error::Input(format!("cells {j} and {i} share a momentum")));
                }
            }
        }
        Ok(Self { cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn momentum(&self, i: usize) -> &NullMomentum {
        &self.cells[i].0
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.cells[i].1
    }

    pub fn weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.1).collect()
    }

    /// Rescales `z` so that `sum_i w_i z_i = 1`.
    pub fn normalize_density(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.len() || z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input("density table must be non-negative, one entry per cell".into()));
        }
        let total: f64 = z.iter().zip(&self.cells).map(|(v, c)| v * c.1).sum();
        if total <= 0.0 {
            return Err(Error::Input("density table vanishes on the grid".into()));
        }
        Ok(z.iter().map(|v| v / total).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OscillatorTruncation {
    max_occupation: usize,
}

impl OscillatorTruncation {
    pub fn new(max_occupation: usize) -> Result<Self> {
        if max_occupation < 2 {
            return Err(Error::Input("occupation cutoff must be at least 2 for two-photon states".into()));
        }
        Ok(Self { max_occupation })
    }

    pub fn max_occupation(&self) -> usize {
        self.max_occupation
    }
}

impl Default for OscillatorTruncation {
    fn default() -> Self {
        Self { max_occupation: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderKind {
    Lower,
    Raise,
}

/// Largest Fock dimension the oracle will build.
pub const MAX_DIMENSION: usize = 2_000_000;

#[derive(Clone, Debug)]
pub struct FockSpace {
    grid: DiscreteGrid,
    trunc: OscillatorTruncation,
    n_osc: usize,
    levels: usize,
    slot_dim: usize,
    dim: usize,
}

impl FockSpace {
    pub fn new(grid: DiscreteGrid, trunc: OscillatorTruncation, n_osc: usize) -> Result<Self> {
        if n_osc == 0 {
            return Err(Error::Input("oscillator count N must be at least 1".into()));
        }
        let levels = trunc.max_occupation + 1;
        let slot_dim = grid.len() * levels * levels;
        let dim = (0..n_osc).try_fold(1usize, |acc, _| acc.checked_mul(slot_dim)).filter(|&d| d <= MAX_DIMENSION);
        let dim = dim.ok_or_else(|| {
            Error::Input(format!("Fock dimension ({slot_dim})^{n_osc} exceeds the oracle limit {MAX_DIMENSION}"))
        })?;
        Ok(Self { grid, trunc, n_osc, levels, slot_dim, dim })
    }

    pub fn grid(&self) -> &DiscreteGrid {
        &self.grid
    }

    pub fn n_osc(&self) -> usize {
        self.n_osc
    }

    pub fn count(&self) -> OscillatorCount {
        OscillatorCount::Finite(self.n_osc as u64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slot_dim(&self) -> usize {
        self.slot_dim
    }

    fn modes_dim(&self) -> usize {
        self.levels * self.levels
    }

    /// Truncated single-mode lowering operator.
    fn lower1(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.levels,
            self.levels,
            (1..self.levels).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
        )
    }

    /// Two-mode lowering operator for `mode`.
    pub fn mode_lower(&self, mode: Mode) -> SparseMatrix {
        let id = SparseMatrix::identity(self.levels);
        match mode {
            Mode::First => self.lower1().kron(&id),
            Mode::Second => id.kron(&self.lower1()),
        }
    }

    /// Two-mode circular lowering `(a1 - i s a2)/sqrt2`.
    pub fn mode_circular(&self, s: f64) -> SparseMatrix {
        self.mode_lower(Mode::First)
            .add_scaled(&self.mode_lower(Mode::Second), C64::new(0.0, -s))
            .scale(C64::new(FRAC_1_SQRT_2, 0.0))
    }

    /// Two-mode linear lowering `cos(theta) a1 + sin(theta) a2`.
    pub fn mode_linear(&self, theta: f64) -> SparseMatrix {
        self.mode_lower(Mode::First)
            .scale(C64::new(theta.cos(), 0.0))
            .add_scaled(&self.mode_lower(Mode::Second), C64::new(theta.sin(), 0.0))
    }

    fn cell_projector(&self, cells: &[usize], scale: impl Fn(usize) -> f64) -> SparseMatrix {
        SparseMatrix::from_triplets(self.grid.len(), self.grid.len(), cells.iter().map(|&i| (i, i, C64::new(scale(i), 0.0))))
    }

    /// `op` on slot `n`, identity elsewhere.
    pub fn embed(&self, slot_op: &SparseMatrix, n: usize) -> SparseMatrix {
        let mut m = SparseMatrix::identity(1);
        for slot in 0..self.n_osc {
            m = if slot == n { m.kron(slot_op) } else { m.kron(&SparseMatrix::identity(self.slot_dim)) };
        }
        m
    }

    /// `sum_n op^(n)`
    pub fn slot_sum(&self, slot_op: &SparseMatrix) -> SparseMatrix {
        let mut acc = SparseMatrix::zeros(self.dim, self.dim);
        for n in 0..self.n_osc {
            acc = acc.add(&self.embed(slot_op, n));
        }
        acc
    }

    fn check_cell(&self, i: usize) -> Result<()> {
        if i >= self.grid.len() {
            return Err(Error::Input(format!("cell index {i} outside grid of {} cells", self.grid.len())));
        }
        Ok(())
    }

    /// `|k_i><k_i| (x) mode_op` on one oscillator.
    fn cell_op(&self, i: usize, mode_op: &SparseMatrix) -> SparseMatrix {
        self.cell_projector(&[i], |j| 1.0 / self.grid.weight(j)).kron(mode_op)
    }

    /// `N^{-1/2} sum_n (|k_i><k_i| (x) mode_op)^(n)`
    fn reducible(&self, i: usize, mode_op: &SparseMatrix) -> SparseMatrix {
        self.slot_sum(&self.cell_op(i, mode_op)).scale(C64::new(1.0 / (self.n_osc as f64).sqrt(), 0.0))
    }

    pub fn ladder(&self, i: usize, mode: Mode, kind: LadderKind) -> Result<SparseMatrix> {
        self.check_cell(i)?;
        let a = self.reducible(i, &self.mode_lower(mode));
        Ok(match kind {
            LadderKind::Lower => a,
            LadderKind::Raise => a.adjoint(),
        })
    }

    /// Circular lowering `a_s(k_i, N)`, `s = +-1`.
    pub fn circular(&self, i: usize, s: f64) -> Result<SparseMatrix> {
        self.check_cell(i)?;
        let a1 = self.ladder(i, Mode::First, LadderKind::Lower)?;
        let a2 = self.ladder(i, Mode::Second, LadderKind::Lower)?;
        Ok(a1.add_scaled(&a2, C64::new(0.0, -s)).scale(C64::new(FRAC_1_SQRT_2, 0.0)))
    }

    /// Linear lowering `a_theta(k_i, N)` from the rotation of `(a1, a2)`.
    pub fn linear(&self, i: usize, theta: f64) -> Result<SparseMatrix> {
        self.check_cell(i)?;
        let a1 = self.ladder(i, Mode::First, LadderKind::Lower)?;
        let a2 = self.ladder(i, Mode::Second, LadderKind::Lower)?;
        Ok(a1.scale(C64::new(theta.cos(), 0.0)).add_scaled(&a2, C64::new(theta.sin(), 0.0)))
    }

    /// `a_theta = sum_s a_s e^{i s theta} / sqrt2`
    pub fn linear_from_circular(&self, i: usize, theta: f64) -> Result<SparseMatrix> {
        let plus = self.circular(i, 1.0)?.scale(C64::from_polar(FRAC_1_SQRT_2, theta));
        let minus = self.circular(i, -1.0)?.scale(C64::from_polar(FRAC_1_SQRT_2, -theta));
        Ok(plus.add(&minus))
    }

    /// Number operator as a sum of per-oscillator number operators (the form Y uses).
    pub fn number_op(&self, i: usize, mode: Mode) -> Result<SparseMatrix> {
        self.check_cell(i)?;
        let a = self.mode_lower(mode);
        Ok(self.slot_sum(&self.cell_op(i, &a.adjoint().mul(&a))))
    }

    /// The alternative `a(k_i,N)^dagger a(k_i,N)`.
    pub fn number_op_alt(&self, i: usize, mode: Mode) -> Result<SparseMatrix> {
        let a = self.ladder(i, mode, LadderKind::Lower)?;
        Ok(a.adjoint().mul(&a))
    }

    /// `I(k_i, N) = N^{-1} sum_n (|k_i><k_i| (x) 1)^(n)`
    pub fn center(&self, i: usize) -> Result<SparseMatrix> {
        self.check_cell(i)?;
        let id = SparseMatrix::identity(self.modes_dim());
        Ok(self.slot_sum(&self.cell_op(i, &id)).scale(C64::new(1.0 / self.n_osc as f64, 0.0)))
    }

    /// `a(N) = sum_i w_i a(k_i, N)`
    pub fn whole_lower(&self, mode: Mode) -> Result<SparseMatrix> {
        let mut acc = SparseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.grid.len() {
            acc = acc.add_scaled(&self.ladder(i, mode, LadderKind::Lower)?, C64::new(self.grid.weight(i), 0.0));
        }
        Ok(acc)
    }

    /// `n(N) = sum_i w_i n(k_i, N)`
    pub fn whole_number(&self, mode: Mode) -> Result<SparseMatrix> {
        let mut acc = SparseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.grid.len() {
            acc = acc.add_scaled(&self.number_op(i, mode)?, C64::new(self.grid.weight(i), 0.0));
        }
        Ok(acc)
    }

    /// `sum_i w_i omega_i (n(k_i, N) + I(k_i, N)/2)` for one polarization mode.
    pub fn hamiltonian(&self, mode: Mode) -> Result<SparseMatrix> {
        let mut acc = SparseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.grid.len() {
            let term = self.number_op(i, mode)?.add_scaled(&self.center(i)?, C64::new(0.5, 0.0));
            acc = acc.add_scaled(&term, C64::new(self.grid.weight(i) * self.grid.momentum(i).freq(), 0.0));
        }
        Ok(acc)
    }

    /// Decomposes a basis index into per-slot (cell, n1, n2).
    pub fn decompose(&self, mut index: usize) -> Vec<(usize, usize, usize)> {
        let mut out = vec![(0, 0, 0); self.n_osc];
        for slot in (0..self.n_osc).rev() {
            let local = index % self.slot_dim;
            index /= self.slot_dim;
            let cell = local / self.modes_dim();
            let m = local % self.modes_dim();
            out[slot] = (cell, m / self.levels, m % self.levels);
        }
        out
    }

    /// Mask of basis states on which no mode sits at the cutoff.
    pub fn sub_cutoff_mask(&self) -> Vec<bool> {
        let top = self.trunc.max_occupation;
        (0..self.dim).map(|b| self.decompose(b).iter().all(|&(_, n1, n2)| n1 < top && n2 < top)).collect()
    }

    /// `sum_i sqrt(w_i) O_i |i,0,0>` per oscillator, tensored N times; `z` must satisfy `sum w z = 1`.
    pub fn vacuum_vector(&self, z: &[f64]) -> Result<Vec<C64>> {
        let total: f64 = z.iter().enumerate().map(|(i, v)| v * self.grid.weight(i)).sum();
        if z.len() != self.grid.len() || (total - 1.0).abs() > 1e-10 {
            return Err(Error::Input(format!("vacuum density must satisfy sum w z = 1 (got {total})")));
        }
        let mut one = vec![ZERO; self.slot_dim];
        for (i, v) in z.iter().enumerate() {
            one[i * self.modes_dim()] = C64::new((self.grid.weight(i) * v).sqrt(), 0.0);
        }
        let mut out = vec![ONE];
        for _ in 0..self.n_osc {
            let mut next = Vec::with_capacity(out.len() * self.slot_dim);
            for a in &out {
                for b in &one {
                    next.push(a * b);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// `sum_{ss'} sum_ij w_i w_j psi_{ss'}(i,j) a_s^dag(k_i,N) a_s'^dag(k_j,N) |O(N)>`.
    pub fn two_photon_vector<F>(&self, psi: F, z: &[f64]) -> Result<Vec<C64>>
    where
        F: Fn(usize, usize) -> [[C64; 2]; 2],
    {
        let vac = self.vacuum_vector(z)?;
        let m = self.grid.len();
        let signs = [1.0, -1.0];
        let mut raised = Vec::with_capacity(2 * m);
        let mut creators = Vec::with_capacity(2 * m);
        for j in 0..m {
            for &s in &signs {
                let c = self.circular(j, s)?.adjoint();
                raised.push(c.matvec(&vac));
                creators.push(c);
            }
        }
        let table: Vec<Vec<[[C64; 2]; 2]>> = (0..m).map(|i| (0..m).map(|j| psi(i, j)).collect()).collect();
        let mut out = vec![ZERO; self.dim];
        for i in 0..m {
            for (si, _) in signs.iter().enumerate() {
                let mut acc = vec![ZERO; self.dim];
                for j in 0..m {
                    for (sj, _) in signs.iter().enumerate() {
                        let coeff = table[i][j][si][sj] * (self.grid.weight(i) * self.grid.weight(j));
                        if coeff == ZERO {
                            continue;
                        }
                        for (a, b) in acc.iter_mut().zip(&raised[2 * j + sj]) {
                            *a += coeff * b;
                        }
                    }
                }
                for (o, v) in out.iter_mut().zip(creators[2 * i + si].matvec(&acc)) {
                    *o += v;
                }
            }
        }
        Ok(out)
    }

    /// `sum_n (P_L (x) (n_alpha - n_alpha'))^(n)` with `n_alpha = a_alpha^dag a_alpha` per oscillator.
    pub fn yes_no_number(&self, cells: &[usize], angle: f64) -> Result<SparseMatrix> {
        for &i in cells {
            self.check_cell(i)?;
        }
        let a = self.mode_linear(angle);
        let b = self.mode_linear(angle + std::f64::consts::FRAC_PI_2);
        let y = a.adjoint().mul(&a).sub(&b.adjoint().mul(&b));
        Ok(self.slot_sum(&self.cell_projector(cells, |_| 1.0).kron(&y)))
    }

    /// Circular form `sum_n (P_L (x) (e^{-2i alpha} a_+^dag a_- + e^{2i alpha} a_-^dag a_+))^(n)`.
    pub fn yes_no_circular(&self, cells: &[usize], angle: f64) -> Result<SparseMatrix> {
        for &i in cells {
            self.check_cell(i)?;
        }
        let (p, m) = (self.mode_circular(1.0), self.mode_circular(-1.0));
        let y = p
            .adjoint()
            .mul(&m)
            .scale(C64::from_polar(1.0, -2.0 * angle))
            .add(&m.adjoint().mul(&p).scale(C64::from_polar(1.0, 2.0 * angle)));
        Ok(self.slot_sum(&self.cell_projector(cells, |_| 1.0).kron(&y)))
    }

    /// Two-mode operator `exp(-i phi (n_+ - n_-))` on total occupation <= 2, identity above.
    pub fn mode_phase_rotation(&self, phi: f64) -> SparseMatrix {
        let d = self.modes_dim();
        let (p, m) = (self.mode_circular(1.0).adjoint(), self.mode_circular(-1.0).adjoint());
        let mut vac = vec![ZERO; d];
        vac[0] = ONE;
        let mut basis: Vec<(i32, Vec<C64>)> = Vec::new();
        for np in 0..=2usize {
            for nm in 0..=(2 - np) {
                let mut v = vac.clone();
                for _ in 0..np {
                    v = p.matvec(&v);
                }
                for _ in 0..nm {
                    v = m.matvec(&v);
                }
                let norm = vec_norm(&v);
                basis.push((np as i32 - nm as i32, v.iter().map(|x| x / norm).collect()));
            }
        }
        let mut trip = Vec::new();
        let mut low = vec![false; d];
        for (r, flag) in low.iter_mut().enumerate() {
            *flag = r / self.levels + r % self.levels <= 2;
        }
        for (h, v) in &basis {
            let ph = C64::from_polar(1.0, -phi * *h as f64);
            for r in 0..d {
                for c in 0..d {
                    let x = ph * v[r] * v[c].conj();
                    if x.norm() > 1e-15 {
                        trip.push((r, c, x));
                    }
                }
            }
        }
        for (r, flag) in low.iter().enumerate() {
            if !flag {
                trip.push((r, r, ONE));
            }
        }
        SparseMatrix::from_triplets(d, d, trip)
    }

    /// One-oscillator `sum_j |perm[j]><j| (x) exp(-i phase[j] (n_+ - n_-))`, tensored N times.
    pub fn grid_transformation(&self, perm: &[usize], phase: &[f64]) -> Result<SparseMatrix> {
        let m = self.grid.len();
        let mut seen = vec![false; m];
        if perm.len() != m || phase.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Input("grid transformation needs a permutation and one phase per cell".into()));
        }
        let mut one = SparseMatrix::zeros(self.slot_dim, self.slot_dim);
        for j in 0..m {
            let shift = SparseMatrix::from_triplets(m, m, [(perm[j], j, ONE)]);
            one = one.add(&shift.kron(&self.mode_phase_rotation(phase[j])));
        }
        let mut u = SparseMatrix::identity(1);
        for _ in 0..self.n_osc {
            u = u.kron(&one);
        }
        Ok(u)
    }
}

/// `<Psi| Y_beta(L_B) Y_alpha(L_A) |Psi>` and `<Psi|Psi>` by explicit linear algebra.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEpr {
    pub numerator: C64,
    pub norm: f64,
    pub value: C64,
}

pub fn expectation(op_outer: &SparseMatrix, op_inner: &SparseMatrix, psi: &[C64]) -> C64 {
    inner(psi, &op_outer.matvec(&op_inner.matvec(psi)))
}

#[allow(clippy::too_many_arguments)]
pub fn epr_oracle<F>(
    space: &FockSpace,
    psi: F,
    z: &[f64],
    alice: &[usize],
    bob: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<OracleEpr>
where
    F: Fn(usize, usize) -> [[C64; 2]; 2],
{
    let state = space.two_photon_vector(psi, z)?;
    let ya = space.yes_no_number(alice, alpha)?;
    let yb = space.yes_no_number(bob, beta)?;
    let numerator = expectation(&yb, &ya, &state);
    let norm = inner(&state, &state).re;
    Ok(OracleEpr { numerator, norm, value: numerator / norm })
}

/// Discretized norm `(2/N) sum_i w_i Z_i |psi(i,i)|^2 + (2(N-1)/N) sum_ij w_i w_j Z_i Z_j |psi(i,j)|^2`.
pub fn discrete_norm<F>(grid: &DiscreteGrid, psi: F, z: &[f64], n_osc: OscillatorCount) -> f64
where
    F: Fn(usize, usize) -> [[C64; 2]; 2],
{
    let m = grid.len();
    let sq = |t: [[C64; 2]; 2]| t.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>();
    let diag: f64 = (0..m).map(|i| grid.weight(i) * z[i] * sq(psi(i, i))).sum();
    let mut off = 0.0;
    for i in 0..m {
        for j in 0..m {
            off += grid.weight(i) * grid.weight(j) * z[i] * z[j] * sq(psi(i, j));
        }
    }
    2.0 * n_osc.inverse() * diag + 2.0 * n_osc.separated_fraction() * off
}

/// Discretized four-term numerator over `alice x bob` cells (overlaps included as ordinary pairs).
#[allow(clippy::too_many_arguments)]
pub fn discrete_four_term<F>(
    grid: &DiscreteGrid,
    psi: F,
    z: &[f64],
    n_osc: OscillatorCount,
    alice: &[usize],
    bob: &[usize],
    alpha: f64,
    beta: f64,
) -> C64
where
    F: Fn(usize, usize) -> [[C64; 2]; 2] + Sync,
{
    let wa: Vec<f64> = alice.iter().map(|&i| grid.weight(i) * z[i]).collect();
    let wb: Vec<f64> = bob.iter().map(|&j| grid.weight(j) * z[j]).collect();
    four_term_numerator(n_osc, &wa, &vec![alpha; wa.len()], &wb, &vec![beta; wb.len()], |i, j| psi(alice[i], bob[j]))
}

/// Discretized coincident contribution for cells in both subsets: the same-oscillator
/// two-photon piece and the piece where both analyzers act on one photon.
#[allow(clippy::too_many_arguments)]
pub fn discrete_coincident<F>(
    grid: &DiscreteGrid,
    psi: F,
    z: &[f64],
    n_osc: OscillatorCount,
    alice: &[usize],
    bob: &[usize],
    alpha: f64,
    beta: f64,
) -> C64
where
    F: Fn(usize, usize) -> [[C64; 2]; 2],
{
    let shared: Vec<usize> = alice.iter().copied().filter(|i| bob.contains(i)).collect();
    let mut same_osc = ZERO;
    let mut one_photon = ZERO;
    for &i in &shared {
        let t = psi(i, i);
        // circular two-photon basis |2,0>, |1,1>, |0,2>
        let s2 = std::f64::consts::SQRT_2;
        let chi = [t[0][0] * s2, t[0][1] + t[1][0], t[1][1] * s2];
        let y = |a: f64, v: [C64; 3]| -> [C64; 3] {
            let (em, ep) = (C64::from_polar(s2, -2.0 * a), C64::from_polar(s2, 2.0 * a));
            [em * v[1], ep * v[0] + em * v[2], ep * v[1]]
        };
        let yy = y(beta, y(alpha, chi));
        let amp: C64 = chi.iter().zip(&yy).map(|(a, b)| a.conj() * b).sum();
        same_osc += amp * (grid.weight(i) * z[i]);
        for j in 0..grid.len() {
            let u = psi(i, j);
            let w = grid.weight(i) * grid.weight(j) * z[i] * z[j];
            for (si, s) in [1.0, -1.0].iter().enumerate() {
                let mag: f64 = u[si].iter().map(|v| v.norm_sqr()).sum();
                one_photon += C64::from_polar(mag * w, 2.0 * s * (alpha - beta));
            }
        }
    }
    same_osc * n_osc.inverse() + one_photon * (4.0 * n_osc.separated_fraction())
}
