//! Truncated spin ⊗ Fock spaces, sparse operators, states and measurements.
//!
//! Tensor factors are ordered spin first, then motional modes in declaration
//! order. Slot 0 addresses the whole spin factor (dimension 2^n_spins), slot
//! `k ≥ 1` addresses mode `k`. Two-spin basis index is `2·b₁ + b₂` with
//! `|↑⟩ = 0`, so the order is |↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩ and σ_z = diag(1, −1).

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

const HERMITIAN_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

pub const UU: usize = 0;
pub const UD: usize = 1;
pub const DU: usize = 2;
pub const DD: usize = 3;

/// Dimensions of a spin register tensored with truncated motional modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpec {
    pub n_spins: usize,
    pub fock_dims: Vec<usize>,
}

impl HilbertSpec {
    pub fn new(n_spins: usize, fock_dims: Vec<usize>) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidDimension {
                dim: 0,
                reason: "need at least one spin",
            });
        }
        if let Some(&d) = fock_dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension {
                dim: d,
                reason: "fock dimension must be >= 2",
            });
        }
        Ok(Self { n_spins, fock_dims })
    }

    /// Two spins and the given motional truncations.
    pub fn two_spins(fock_dims: Vec<usize>) -> Result<Self> {
        Self::new(2, fock_dims)
    }

    pub fn spin_dim(&self) -> usize {
        1 << self.n_spins
    }

    pub fn n_modes(&self) -> usize {
        self.fock_dims.len()
    }

    /// Product of all motional dimensions.
    pub fn motional_dim(&self) -> usize {
        self.fock_dims.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.spin_dim() * self.motional_dim()
    }

    /// Dimension of every tensor slot: spin factor first.
    pub fn factor_dims(&self) -> Vec<usize> {
        std::iter::once(self.spin_dim())
            .chain(self.fock_dims.iter().copied())
            .collect()
    }
}

/// Compressed-sparse-row complex square matrix.
#[derive(Debug, Clone)]
pub struct Operator {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
    hermitian: bool,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            data: Vec::new(),
            hermitian: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            indptr: (0..=dim).collect(),
            indices: (0..dim).collect(),
            data: vec![C64::new(1.0, 0.0); dim],
            hermitian: true,
        }
    }

    /// Builds from (row, col, value) triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(
                r < dim && c < dim,
                "triplet ({r}, {c}) outside dimension {dim}"
            );
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            indptr[r + 1] += indptr[r];
        }
        let mut op = Self {
            dim,
            indptr,
            indices,
            data,
            hermitian: false,
        };
        op.prune();
        op
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        let triplets = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .filter_map(|(r, c)| {
                let v = m[(r, c)];
                (v != C64::new(0.0, 0.0)).then_some((r, c, v))
            })
            .collect();
        Ok(Self::from_triplets(n, triplets))
    }

    fn prune(&mut self) {
        let zero = C64::new(0.0, 0.0);
        if self.data.iter().all(|&v| v != zero) {
            return;
        }
        let mut indptr = vec![0usize; self.dim + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.dim {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.data[k] != zero {
                    indices.push(self.indices[k]);
                    data.push(self.data[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.data = data;
    }

    /// Marks the operator Hermitian after checking `max |A − A†| ≤ 1e-12`.
    pub fn into_hermitian(mut self) -> Result<Self> {
        let defect = self.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotHermitian { defect });
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let row = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.data[self.indptr[r] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Iterates stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let triplets = self.entries().map(|(r, c, v)| (c, r, v.conj())).collect();
        let mut op = Self::from_triplets(self.dim, triplets);
        op.hermitian = self.hermitian;
        op
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut op = self.clone();
        op.data.iter_mut().for_each(|v| *v *= s);
        op.hermitian = self.hermitian && s.im == 0.0;
        op.prune();
        op
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let triplets = self.entries().chain(other.entries()).collect();
        Ok(Self::from_triplets(self.dim, triplets))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        let mut triplets = Vec::new();
        for (r, k, a) in self.entries() {
            for j in other.indptr[k]..other.indptr[k + 1] {
                triplets.push((r, other.indices[j], a * other.data[j]));
            }
        }
        Ok(Self::from_triplets(self.dim, triplets))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let n = other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, a) in self.entries() {
            for (r2, c2, b) in other.entries() {
                triplets.push((r1 * n + r2, c1 * n + c2, a * b));
            }
        }
        let mut op = Self::from_triplets(self.dim * n, triplets);
        op.hermitian = self.hermitian && other.hermitian;
        op
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `A·x` as a new vector.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_add(C64::new(1.0, 0.0), x, &mut y);
        y
    }

    /// `y += coef · A·x`.
    pub fn apply_add(&self, coef: C64, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yr += coef * acc;
        }
    }

    /// Largest entry of `|A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Largest absolute row sum; bounds the spectral norm for Hermitian
    /// operators.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|r| {
                self.data[self.indptr[r]..self.indptr[r + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self
            .sub(other)?
            .data
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max))
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

/// Pure state with unit 2-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    /// Wraps amplitudes whose norm is already 1 ± 1e-9.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amps);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self { amps })
    }

    /// Rescales to unit norm.
    pub fn normalized(mut amps: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amps);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState(format!(
                "cannot normalize vector of norm {norm}"
            )));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { amps })
    }

    /// Propagated amplitudes whose norm drift has been reported elsewhere.
    pub(crate) fn from_raw(amps: Vec<C64>) -> Self {
        Self { amps }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amps)
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn kron(&self, other: &Self) -> Self {
        let amps = self
            .amps
            .iter()
            .flat_map(|&a| other.amps.iter().map(move |&b| a * b))
            .collect();
        Self { amps }
    }

    pub fn expectation(&self, op: &Operator) -> C64 {
        let y = op.apply(&self.amps);
        self.amps.iter().zip(&y).map(|(a, b)| a.conj() * b).sum()
    }
}

fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Mixed state, either dense or as a weighted ensemble of pure states.
#[derive(Debug, Clone)]
pub enum DensityMatrix {
    Dense(DMatrix<C64>),
    Ensemble(Vec<(f64, StateVector)>),
}

impl DensityMatrix {
    pub fn pure(psi: StateVector) -> Self {
        Self::Ensemble(vec![(1.0, psi)])
    }

    /// Validated ensemble: weights non-negative, summing to 1, equal dims.
    pub fn ensemble(branches: Vec<(f64, StateVector)>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidState("empty ensemble".into()));
        }
        let dim = branches[0].1.dim();
        if let Some((_, s)) = branches.iter().find(|(_, s)| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        if branches.iter().any(|(w, _)| !(*w >= 0.0)) {
            return Err(Error::InvalidState("negative ensemble weight".into()));
        }
        let total: f64 = branches.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!(
                "ensemble weights sum to {total}"
            )));
        }
        Ok(Self::Ensemble(branches))
    }

    /// Validated dense matrix: square, trace 1, Hermitian and positive
    /// semidefinite.
    pub fn dense(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let defect = (&m - m.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if defect > NORM_TOL {
            return Err(Error::NotHermitian { defect });
        }
        let min_eig = m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -NORM_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig}"
            )));
        }
        Ok(Self::Dense(m))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Ensemble(b) => b[0].1.dim(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Self::Dense(m) => m.trace().re,
            Self::Ensemble(b) => b.iter().map(|(w, s)| w * s.norm().powi(2)).sum(),
        }
    }

    pub fn expectation(&self, op: &Operator) -> C64 {
        match self {
            Self::Dense(m) => {
                let o = op.to_dense();
                (o * m).trace()
            }
            Self::Ensemble(b) => b.iter().map(|(w, s)| s.expectation(op) * *w).sum(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Ensemble(b) => {
                let n = self.dim();
                let mut m = DMatrix::zeros(n, n);
                for (w, s) in b {
                    let a = s.amplitudes();
                    for r in 0..n {
                        for c in 0..n {
                            m[(r, c)] += a[r] * a[c].conj() * *w;
                        }
                    }
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinSign {
    InPhase,
    OutOfPhase,
}

impl SpinSign {
    pub fn factor(self) -> f64 {
        match self {
            Self::InPhase => 1.0,
            Self::OutOfPhase => -1.0,
        }
    }
}

pub fn pauli(axis: Axis) -> Operator {
    let (z, o, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    let m = match axis {
        Axis::X => [[z, o], [o, z]],
        Axis::Y => [[z, -i], [i, z]],
        Axis::Z => [[o, z], [z, -o]],
    };
    let mut op = Operator::from_triplets(
        2,
        vec![
            (0, 0, m[0][0]),
            (0, 1, m[0][1]),
            (1, 0, m[1][0]),
            (1, 1, m[1][1]),
        ],
    );
    op.hermitian = true;
    op
}

/// Annihilation and creation operators on a `dim`-level truncated mode.
pub fn ladder(dim: usize) -> Result<(Operator, Operator)> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "ladder needs dim >= 2",
        });
    }
    let a = Operator::from_triplets(
        dim,
        (1..dim)
            .map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0)))
            .collect(),
    );
    let ad = a.adjoint();
    Ok((a, ad))
}

/// Two-spin collective operator `σ_i ⊗ 𝕀 ± 𝕀 ⊗ σ_i` on the spin factor.
pub fn spin_collective(axis: Axis, sign: SpinSign) -> Operator {
    let s = pauli(axis);
    let id = Operator::identity(2);
    let first = s.kron(&id);
    let second = id.kron(&s).scale(C64::new(sign.factor(), 0.0));
    let mut op = first.add(&second).expect("equal dimensions");
    op.hermitian = true;
    op
}

/// Collective spin operator embedded in the full space.
pub fn collective_spin(axis: Axis, sign: SpinSign, spec: &HilbertSpec) -> Result<Operator> {
    if spec.n_spins != 2 {
        return Err(Error::Unsupported(format!(
            "collective spin operators need 2 spins, spec has {}",
            spec.n_spins
        )));
    }
    embed(&spin_collective(axis, sign), 0, spec)
}

/// Places `op` on tensor slot `slot` with identities elsewhere.
pub fn embed(op: &Operator, slot: usize, spec: &HilbertSpec) -> Result<Operator> {
    let dims = spec.factor_dims();
    if slot >= dims.len() {
        return Err(Error::SlotOutOfRange {
            slot,
            factors: dims.len(),
        });
    }
    if op.dim() != dims[slot] {
        return Err(Error::DimensionMismatch {
            expected: dims[slot],
            found: op.dim(),
        });
    }
    let left: usize = dims[..slot].iter().product();
    let right: usize = dims[slot + 1..].iter().product();
    let mut out = Operator::identity(left)
        .kron(op)
        .kron(&Operator::identity(right));
    out.hermitian = op.hermitian;
    Ok(out)
}

/// Annihilation and creation operators of motional mode `mode` (0-based)
/// embedded in the full space.
pub fn mode_ladder(mode: usize, spec: &HilbertSpec) -> Result<(Operator, Operator)> {
    let d = *spec.fock_dims.get(mode).ok_or(Error::SlotOutOfRange {
        slot: mode + 1,
        factors: spec.n_modes() + 1,
    })?;
    let (a, ad) = ladder(d)?;
    Ok((embed(&a, mode + 1, spec)?, embed(&ad, mode + 1, spec)?))
}

/// Rejects mean occupations above a quarter of the Fock dimension.
pub fn truncation_guard(dim: usize, mean: f64) -> Result<()> {
    if mean > dim as f64 / 4.0 {
        return Err(Error::TruncationGuard {
            mean,
            dim,
            required: (4.0 * mean).ceil() as usize,
        });
    }
    Ok(())
}

/// Coherent state `|ξ⟩` truncated to `dim` levels and renormalized.
pub fn coherent_state(dim: usize, xi: C64) -> Result<StateVector> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "fock dimension must be >= 2",
        });
    }
    truncation_guard(dim, xi.norm_sqr())?;
    let mut amps = Vec::with_capacity(dim);
    let mut c = C64::new((-0.5 * xi.norm_sqr()).exp(), 0.0);
    amps.push(c);
    for n in 1..dim {
        c *= xi / (n as f64).sqrt();
        amps.push(c);
    }
    StateVector::normalized(amps)
}

/// Poisson weights `e^{−n̄} n̄ⁿ/n!` for n < dim, renormalized to sum 1.
pub fn poisson_weights(nbar: f64, dim: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(dim);
    let mut p = (-nbar).exp();
    w.push(p);
    for n in 1..dim {
        p *= nbar / n as f64;
        w.push(p);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Untruncated Poisson mass at indices ≥ dim.
pub fn poisson_tail(nbar: f64, dim: usize) -> f64 {
    let mut p = (-nbar).exp();
    let mut head = p;
    for n in 1..dim {
        p *= nbar / n as f64;
        head += p;
    }
    (1.0 - head).max(0.0)
}

/// Phase-randomized coherent state: a diagonal Poisson mixture of Fock
/// states in ensemble form.
pub fn phase_averaged_coherent(dim: usize, xi_abs: f64) -> Result<DensityMatrix> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "fock dimension must be >= 2",
        });
    }
    let nbar = xi_abs * xi_abs;
    truncation_guard(dim, nbar)?;
    let branches = poisson_weights(nbar, dim)
        .into_iter()
        .enumerate()
        .filter(|&(_, w)| w > 0.0)
        .map(|(n, w)| (w, StateVector::basis(dim, n)))
        .collect();
    DensityMatrix::ensemble(branches)
}

/// `L_n(x)` by the three-term recurrence.
pub fn laguerre(n: usize, x: f64) -> f64 {
    let (mut l0, mut l1) = (1.0, 1.0 - x);
    if n == 0 {
        return l0;
    }
    for k in 1..n {
        let k = k as f64;
        let l2 = ((2.0 * k + 1.0 - x) * l1 - k * l0) / (k + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// `⟨n|D(γ)|n⟩ = e^{−|γ|²/2} L_n(|γ|²)`.
pub fn fock_displacement_overlap(n: usize, gamma: C64) -> f64 {
    let x = gamma.norm_sqr();
    (-0.5 * x).exp() * laguerre(n, x)
}

pub type SpinMatrix = Matrix4<C64>;

/// Reduced two-spin density matrix, tracing out every motional factor.
pub fn spin_reduced(state: &DensityMatrix, spec: &HilbertSpec) -> Result<SpinMatrix> {
    if spec.n_spins != 2 {
        return Err(Error::Unsupported(
            "spin reduction implemented for 2 spins".into(),
        ));
    }
    if state.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: state.dim(),
        });
    }
    let m = spec.motional_dim();
    let mut rho = SpinMatrix::zeros();
    match state {
        DensityMatrix::Ensemble(branches) => {
            for (w, psi) in branches {
                let a = psi.amplitudes();
                for r in 0..4 {
                    for c in 0..4 {
                        let s: C64 = (0..m).map(|k| a[r * m + k] * a[c * m + k].conj()).sum();
                        rho[(r, c)] += s * *w;
                    }
                }
            }
        }
        DensityMatrix::Dense(full) => {
            for r in 0..4 {
                for c in 0..4 {
                    rho[(r, c)] = (0..m).map(|k| full[(r * m + k, c * m + k)]).sum();
                }
            }
        }
    }
    Ok(rho)
}

/// Spin-subspace populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p_dd: f64,
    pub p_mixed: f64,
    pub p_uu: f64,
}

impl Populations {
    pub fn from_spin(rho: &SpinMatrix) -> Self {
        Self {
            p_dd: rho[(DD, DD)].re,
            p_mixed: rho[(UD, UD)].re + rho[(DU, DU)].re,
            p_uu: rho[(UU, UU)].re,
        }
    }

    pub fn total(&self) -> f64 {
        self.p_dd + self.p_mixed + self.p_uu
    }
}

/// Populations of |↓↓⟩, {|↑↓⟩, |↓↑⟩} and |↑↑⟩ after tracing out motion.
pub fn measure_populations(state: &DensityMatrix, spec: &HilbertSpec) -> Result<Populations> {
    Ok(Populations::from_spin(&spin_reduced(state, spec)?))
}
