//! Time evolution: exact unitary propagation and Lindblad integration.
//!
//! The master equation is integrated in the standard form
//!
//! ```text
//! d rho / dt = -i [H, rho] + sum_k gamma_k (L_k rho L_k^+ - {L_k^+ L_k, rho} / 2)
//! ```
//!
//! which is the same equation as `i [rho, H] + sum_k (gamma_k / 2)
//! (2 L rho L^+ - L^+ L rho - rho L^+ L)`.
//!
//! The production integrator is classical fourth-order Runge-Kutta on the
//! vectorised density matrix. Only entries reachable from the support of
//! `rho0` under the generator are carried: the loss channels never create
//! coherences between different per-well atom numbers, so for the
//! detection problems this keeps a few thousand entries instead of `d^2`.
//! The number of RK4 substeps per sample interval is doubled until the
//! final-time state moves by less than the tolerance.

use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::fock::{annihilation, max_abs, same_basis, FockBasis, Operator};
use crate::hamiltonian::{E_L, E_R, G_L, G_R};
use crate::{CMatrix, CVector, Error, Result, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Norm tolerance for pure states.
pub const PURE_NORM_TOL: f64 = 1e-10;
/// Hermiticity tolerance for density matrices.
pub const MIXED_HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const MIXED_TRACE_TOL: f64 = 1e-8;
/// Smallest eigenvalue accepted when constructing a density matrix.
pub const MIXED_POSITIVITY_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Pure,
    Mixed,
}

#[derive(Clone, Debug)]
enum StateData {
    Pure(CVector),
    Mixed(CMatrix),
}

/// Pure state vector or density matrix on a [`FockBasis`].
#[derive(Clone, Debug)]
pub struct QuantumState {
    basis: Arc<FockBasis>,
    data: StateData,
}

impl QuantumState {
    pub fn pure(basis: Arc<FockBasis>, amplitudes: CVector) -> Result<Self> {
        check_len(&basis, amplitudes.len())?;
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > PURE_NORM_TOL {
            return Err(Error::InvalidState(format!("pure state has norm {norm}")));
        }
        Ok(Self {
            basis,
            data: StateData::Pure(amplitudes),
        })
    }

    pub fn pure_normalized(basis: Arc<FockBasis>, amplitudes: CVector) -> Result<Self> {
        check_len(&basis, amplitudes.len())?;
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalise a zero vector".into()));
        }
        Ok(Self {
            basis,
            data: StateData::Pure(amplitudes / C64::new(norm, 0.0)),
        })
    }

    /// Occupation-number eigenstate.
    pub fn fock(basis: Arc<FockBasis>, occupation: &[u32]) -> Result<Self> {
        let idx = basis.index_of(occupation).ok_or_else(|| {
            Error::InvalidState(format!("{occupation:?} is not in the basis"))
        })?;
        let mut v = CVector::zeros(basis.dim());
        v[idx] = C64::new(1.0, 0.0);
        Self::pure(basis, v)
    }

    pub fn mixed(basis: Arc<FockBasis>, rho: CMatrix) -> Result<Self> {
        let d = basis.dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::InvalidState(format!(
                "density matrix is {}x{}, basis has dimension {d}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let defect = max_abs(&(&rho - rho.adjoint()));
        if defect > MIXED_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        let trace = rho.trace().re;
        if (trace - 1.0).abs() > MIXED_TRACE_TOL {
            return Err(Error::InvalidState(format!("density matrix has trace {trace}")));
        }
        let herm = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let min = herm.symmetric_eigenvalues().min();
        if min < -MIXED_POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self {
            basis,
            data: StateData::Mixed(rho),
        })
    }

    /// Density matrix produced by an integrator that enforces its own
    /// tolerances.
    pub(crate) fn mixed_unchecked(basis: Arc<FockBasis>, rho: CMatrix) -> Self {
        Self {
            basis,
            data: StateData::Mixed(rho),
        }
    }

    pub fn kind(&self) -> StateKind {
        match self.data {
            StateData::Pure(_) => StateKind::Pure,
            StateData::Mixed(_) => StateKind::Mixed,
        }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn amplitudes(&self) -> Option<&CVector> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Mixed(_) => None,
        }
    }

    pub fn density(&self) -> Option<&CMatrix> {
        match &self.data {
            StateData::Pure(_) => None,
            StateData::Mixed(m) => Some(m),
        }
    }

    pub fn to_density(&self) -> CMatrix {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Mixed(m) => m.clone(),
        }
    }

    pub fn to_mixed(&self) -> QuantumState {
        Self {
            basis: self.basis.clone(),
            data: StateData::Mixed(self.to_density()),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared(),
            StateData::Mixed(m) => m.trace().re,
        }
    }

    /// Probability of each occupation basis state.
    pub fn populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            StateData::Mixed(m) => (0..m.nrows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    /// `<O>` for a pure state, `tr(O rho)` for a mixed one.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if !same_basis(&self.basis, op.basis()) {
            return Err(Error::BasisMismatch);
        }
        let o = op.matrix();
        Ok(match &self.data {
            StateData::Pure(v) => v.dotc(&(o * v)),
            StateData::Mixed(m) => {
                let d = m.nrows();
                let mut acc = ZERO;
                for j in 0..d {
                    for i in 0..d {
                        acc += o[(j, i)] * m[(i, j)];
                    }
                }
                acc
            }
        })
    }

    /// Re-expresses the state on `target`, matching basis states by their
    /// occupation tuples. Fails if any weight would be dropped.
    pub fn embed_into(&self, target: &Arc<FockBasis>) -> Result<QuantumState> {
        let map = self.index_map(target);
        for (i, slot) in map.iter().enumerate() {
            if slot.is_none() && self.populations()[i] > 0.0 {
                return Err(Error::InvalidState(format!(
                    "state {:?} carries weight but is absent from the target basis",
                    self.basis.state(i)
                )));
            }
        }
        Ok(self.remap(target, &map))
    }

    /// Keeps only the components present in `target` and renormalises.
    /// Returns the state and the retained weight.
    pub fn project_onto(&self, target: &Arc<FockBasis>) -> Result<(QuantumState, f64)> {
        let map = self.index_map(target);
        let projected = self.remap(target, &map);
        let weight = projected.trace();
        if weight <= 0.0 {
            return Err(Error::InvalidState("projection removes all weight".into()));
        }
        let normalized = match projected.data {
            StateData::Pure(v) => {
                QuantumState::pure_normalized(target.clone(), v)?
            }
            StateData::Mixed(m) => QuantumState::mixed_unchecked(
                target.clone(),
                m / C64::new(weight, 0.0),
            ),
        };
        Ok((normalized, weight))
    }

    fn index_map(&self, target: &FockBasis) -> Vec<Option<usize>> {
        self.basis
            .states()
            .iter()
            .map(|occ| target.index_of(occ))
            .collect()
    }

    fn remap(&self, target: &Arc<FockBasis>, map: &[Option<usize>]) -> QuantumState {
        let data = match &self.data {
            StateData::Pure(v) => {
                let mut out = CVector::zeros(target.dim());
                for (i, slot) in map.iter().enumerate() {
                    if let Some(k) = slot {
                        out[*k] = v[i];
                    }
                }
                StateData::Pure(out)
            }
            StateData::Mixed(m) => {
                let mut out = CMatrix::zeros(target.dim(), target.dim());
                for (i, si) in map.iter().enumerate() {
                    for (j, sj) in map.iter().enumerate() {
                        if let (Some(a), Some(b)) = (si, sj) {
                            out[(*a, *b)] = m[(i, j)];
                        }
                    }
                }
                StateData::Mixed(out)
            }
        };
        QuantumState {
            basis: target.clone(),
            data,
        }
    }
}

fn check_len(basis: &FockBasis, len: usize) -> Result<()> {
    if len == basis.dim() {
        Ok(())
    } else {
        Err(Error::InvalidState(format!(
            "amplitude vector has length {len}, basis has dimension {}",
            basis.dim()
        )))
    }
}

/// Uniform sampling of `[t_start, t_end]` (both ends included).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, samples: usize) -> Result<Self> {
        let grid = Self {
            t_start,
            t_end,
            samples,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) {
            return Err(Error::InvalidGrid("grid ends must be finite".into()));
        }
        if self.t_end <= self.t_start {
            return Err(Error::InvalidGrid(format!(
                "t_end ({}) must exceed t_start ({})",
                self.t_end, self.t_start
            )));
        }
        if self.samples < 2 {
            return Err(Error::InvalidGrid("at least two samples are needed".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.t_end - self.t_start) / (self.samples - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.samples {
            self.t_end
        } else {
            self.t_start + k as f64 * self.spacing()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|k| self.time(k)).collect()
    }
}

/// `exp(-iHt)` from a single eigendecomposition of `H`.
#[derive(Clone, Debug)]
pub struct UnitaryPropagator {
    basis: Arc<FockBasis>,
    energies: Vec<f64>,
    eigenvectors: CMatrix,
}

impl UnitaryPropagator {
    pub fn new(h: &Operator) -> Result<Self> {
        let scale = h.max_norm().max(1.0);
        h.ensure_hermitian(1e-12 * scale)?;
        let herm = (h.matrix() + h.matrix().adjoint()) * C64::new(0.5, 0.0);
        // Real symmetric matrices (every Hamiltonian here without a phase
        // convention) take the much cheaper real solver.
        let (energies, eigenvectors) = if herm.iter().all(|z| z.im == 0.0) {
            let eig = SymmetricEigen::new(herm.map(|z| z.re));
            (eig.eigenvalues, eig.eigenvectors.map(|x| C64::new(x, 0.0)))
        } else {
            let eig = SymmetricEigen::new(herm);
            (eig.eigenvalues, eig.eigenvectors)
        };
        Ok(Self {
            basis: h.basis().clone(),
            energies: energies.iter().copied().collect(),
            eigenvectors,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Projects `psi0` onto the eigenbasis once; the result evaluates
    /// `psi(t)` in `O(d^2)` per time.
    pub fn start(&self, psi0: &QuantumState) -> Result<Evolution<'_>> {
        if !same_basis(&self.basis, psi0.basis()) {
            return Err(Error::BasisMismatch);
        }
        let v = psi0
            .amplitudes()
            .ok_or_else(|| Error::InvalidState("unitary propagation needs a pure state".into()))?;
        Ok(Evolution {
            propagator: self,
            coefficients: self.eigenvectors.adjoint() * v,
        })
    }
}

pub struct Evolution<'a> {
    propagator: &'a UnitaryPropagator,
    coefficients: CVector,
}

impl Evolution<'_> {
    pub fn amplitudes_at(&self, t: f64) -> CVector {
        let phased = CVector::from_iterator(
            self.coefficients.len(),
            self.coefficients
                .iter()
                .zip(&self.propagator.energies)
                .map(|(c, &e)| c * C64::from_polar(1.0, -e * t)),
        );
        let mut v = &self.propagator.eigenvectors * phased;
        let norm = v.norm();
        v /= C64::new(norm, 0.0);
        v
    }

    pub fn state_at(&self, t: f64) -> QuantumState {
        QuantumState {
            basis: self.propagator.basis.clone(),
            data: StateData::Pure(self.amplitudes_at(t)),
        }
    }
}

/// `psi(t) = exp(-iHt) psi0` at every grid sample.
pub fn evolve_unitary(h: &Operator, psi0: &QuantumState, grid: &TimeGrid) -> Result<Vec<QuantumState>> {
    grid.validate()?;
    let propagator = UnitaryPropagator::new(h)?;
    let evolution = propagator.start(psi0)?;
    Ok(grid.times().into_iter().map(|t| evolution.state_at(t)).collect())
}

/// One dissipative channel `gamma * D[L]`.
#[derive(Clone, Debug)]
pub struct Jump {
    pub rate: f64,
    pub operator: Operator,
}

/// Hamiltonian plus jump operators.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: Operator,
    jumps: Vec<Jump>,
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, jumps: Vec<Jump>) -> Result<Self> {
        let scale = hamiltonian.max_norm().max(1.0);
        hamiltonian.ensure_hermitian(1e-12 * scale)?;
        for j in &jumps {
            if !(j.rate.is_finite() && j.rate >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "jump rate must be finite and non-negative, got {}",
                    j.rate
                )));
            }
            if !j.operator.same_basis(&hamiltonian) {
                return Err(Error::BasisMismatch);
            }
        }
        Ok(Self { hamiltonian, jumps })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        self.hamiltonian.basis()
    }

    pub fn is_closed(&self) -> bool {
        self.jumps.iter().all(|j| j.rate == 0.0)
    }
}

/// Single-atom loss from every mode: `e_L, e_R` at `gamma_e` and
/// `g_L, g_R` at `gamma_g`. Zero-rate channels are omitted.
pub fn one_body_loss(basis: &Arc<FockBasis>, gamma_e: f64, gamma_g: f64) -> Result<Vec<Jump>> {
    let mut jumps = Vec::new();
    for (mode, rate) in [(E_L, gamma_e), (E_R, gamma_e), (G_L, gamma_g), (G_R, gamma_g)] {
        if rate != 0.0 {
            jumps.push(Jump {
                rate,
                operator: annihilation(basis, mode)?,
            });
        }
    }
    Ok(jumps)
}

/// Pair loss within each well: `e_a^2` at `gamma_ee` and `e_a g_a` at
/// `gamma_eg`. Zero-rate channels are omitted.
pub fn two_body_loss(basis: &Arc<FockBasis>, gamma_ee: f64, gamma_eg: f64) -> Result<Vec<Jump>> {
    let mut jumps = Vec::new();
    for (e_mode, g_mode) in [(E_L, G_L), (E_R, G_R)] {
        let e = annihilation(basis, e_mode)?;
        let g = annihilation(basis, g_mode)?;
        if gamma_ee != 0.0 {
            jumps.push(Jump {
                rate: gamma_ee,
                operator: &e * &e,
            });
        }
        if gamma_eg != 0.0 {
            jumps.push(Jump {
                rate: gamma_eg,
                operator: &e * &g,
            });
        }
    }
    Ok(jumps)
}

#[derive(Clone, Copy, Debug)]
pub struct LindbladOptions {
    /// Step halving stops once the final state changes by less than this
    /// (max-norm).
    pub tolerance: f64,
    pub max_doublings: u32,
    pub trace_tolerance: f64,
    pub hermiticity_tolerance: f64,
    pub positivity_tolerance: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_doublings: 16,
            trace_tolerance: 1e-8,
            hermiticity_tolerance: 1e-10,
            positivity_tolerance: 1e-6,
        }
    }
}

/// Integration diagnostics, worst case over all samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct Diagnostics {
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub substeps_per_interval: usize,
    pub doublings: u32,
    pub last_change: f64,
    pub support: usize,
}

/// Integrates the master equation and returns the state at every sample.
pub fn evolve_lindblad(
    model: &LindbladModel,
    rho0: &QuantumState,
    grid: &TimeGrid,
) -> Result<Vec<QuantumState>> {
    let mut out = Vec::with_capacity(grid.samples);
    evolve_lindblad_observed(model, rho0, grid, &LindbladOptions::default(), |_, _, s| {
        out.push(s.clone())
    })?;
    Ok(out)
}

/// Like [`evolve_lindblad`] but hands each sample to `observer` instead of
/// collecting them, which keeps memory flat for long grids.
pub fn evolve_lindblad_observed(
    model: &LindbladModel,
    rho0: &QuantumState,
    grid: &TimeGrid,
    options: &LindbladOptions,
    mut observer: impl FnMut(usize, f64, &QuantumState),
) -> Result<Diagnostics> {
    grid.validate()?;
    if !same_basis(model.basis(), rho0.basis()) {
        return Err(Error::BasisMismatch);
    }
    let rho0 = rho0.to_density();
    let generator = RestrictedLiouvillian::new(model, &rho0);
    let v0 = generator.support.gather(&rho0);

    let interval = grid.spacing();
    let norm = generator.norm_estimate();
    let mut substeps = if norm > 0.0 {
        ((interval * norm / 0.5).ceil() as usize).max(1)
    } else {
        1
    };

    let mut previous = generator.integrate(&v0, grid, substeps, None);
    let mut doublings = 0;
    let change = loop {
        substeps *= 2;
        doublings += 1;
        let current = generator.integrate(&v0, grid, substeps, None);
        let change = previous
            .iter()
            .zip(&current)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).norm()));
        if change < options.tolerance {
            break change;
        }
        if doublings >= options.max_doublings {
            return Err(Error::StepUnderflow {
                tolerance: options.tolerance,
                step: interval / substeps as f64,
                change,
                doublings,
            });
        }
        previous = current;
    };

    let mut diag = Diagnostics {
        max_trace_drift: 0.0,
        max_hermiticity_defect: 0.0,
        min_eigenvalue: f64::INFINITY,
        substeps_per_interval: substeps,
        doublings,
        last_change: change,
        support: generator.support.len(),
    };
    let basis = model.basis().clone();
    let support = &generator.support;
    let mut failure = None;
    generator.integrate(
        &v0,
        grid,
        substeps,
        Some(&mut |k: usize, t: f64, v: &[C64]| {
            let trace_drift = (support.trace(v) - 1.0).abs();
            let herm = support.hermiticity_defect(v);
            let min_eig = support.min_eigenvalue(v);
            diag.max_trace_drift = diag.max_trace_drift.max(trace_drift);
            diag.max_hermiticity_defect = diag.max_hermiticity_defect.max(herm);
            diag.min_eigenvalue = diag.min_eigenvalue.min(min_eig);
            if failure.is_none() {
                failure = if trace_drift > options.trace_tolerance {
                    Some(("trace drift", trace_drift, options.trace_tolerance, t))
                } else if herm > options.hermiticity_tolerance {
                    Some(("hermiticity defect", herm, options.hermiticity_tolerance, t))
                } else if min_eig < -options.positivity_tolerance {
                    Some(("negative eigenvalue", -min_eig, options.positivity_tolerance, t))
                } else {
                    None
                };
            }
            let state = QuantumState::mixed_unchecked(basis.clone(), support.scatter(v));
            observer(k, t, &state);
        }),
    );
    if let Some((what, value, limit, time)) = failure {
        return Err(Error::InvariantViolated {
            what,
            value,
            limit,
            time,
        });
    }
    Ok(diag)
}

/// Non-zero entries of a dense matrix, by row and by column.
struct SparsePattern {
    rows: Vec<Vec<(usize, C64)>>,
    cols: Vec<Vec<(usize, C64)>>,
}

impl SparsePattern {
    fn new(m: &CMatrix) -> Self {
        let d = m.nrows();
        let mut rows = vec![Vec::new(); d];
        let mut cols = vec![Vec::new(); d];
        for j in 0..d {
            for i in 0..d {
                let z = m[(i, j)];
                if z != ZERO {
                    rows[i].push((j, z));
                    cols[j].push((i, z));
                }
            }
        }
        Self { rows, cols }
    }
}

/// Set of density-matrix entries `(i, j)` that can become non-zero.
struct Support {
    dim: usize,
    pairs: Vec<(usize, usize)>,
    lookup: Vec<u32>,
    mirror: Vec<usize>,
    diagonal: Vec<usize>,
    /// Index groups on which rho is block diagonal.
    blocks: Vec<Vec<usize>>,
}

const ABSENT: u32 = u32::MAX;

impl Support {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        match self.lookup[i * self.dim + j] {
            ABSENT => None,
            p => Some(p as usize),
        }
    }

    fn gather(&self, rho: &CMatrix) -> Vec<C64> {
        self.pairs.iter().map(|&(i, j)| rho[(i, j)]).collect()
    }

    fn scatter(&self, v: &[C64]) -> CMatrix {
        let mut rho = CMatrix::zeros(self.dim, self.dim);
        for (&(i, j), z) in self.pairs.iter().zip(v) {
            rho[(i, j)] = *z;
        }
        rho
    }

    fn symmetrize(&self, v: &mut [C64]) {
        for p in 0..v.len() {
            let q = self.mirror[p];
            if q > p {
                let avg = (v[p] + v[q].conj()) * 0.5;
                v[p] = avg;
                v[q] = avg.conj();
            } else if q == p {
                v[p] = C64::new(v[p].re, 0.0);
            }
        }
    }

    fn trace(&self, v: &[C64]) -> f64 {
        self.diagonal.iter().map(|&p| v[p].re).sum()
    }

    fn hermiticity_defect(&self, v: &[C64]) -> f64 {
        (0..v.len()).fold(0.0f64, |acc, p| acc.max((v[p] - v[self.mirror[p]].conj()).norm()))
    }

    fn min_eigenvalue(&self, v: &[C64]) -> f64 {
        let mut min = f64::INFINITY;
        for block in &self.blocks {
            let n = block.len();
            let mut m = CMatrix::zeros(n, n);
            for (a, &i) in block.iter().enumerate() {
                for (b, &j) in block.iter().enumerate() {
                    if let Some(p) = self.position(i, j) {
                        m[(a, b)] = v[p];
                    }
                }
            }
            let low = if n == 1 {
                m[(0, 0)].re
            } else {
                m.symmetric_eigenvalues().min()
            };
            min = min.min(low);
        }
        min
    }
}

type SampleObserver<'a> = dyn FnMut(usize, f64, &[C64]) + 'a;

/// Master-equation generator in CSR form on the reachable support.
struct RestrictedLiouvillian {
    support: Support,
    row_start: Vec<usize>,
    sources: Vec<u32>,
    coefficients: Vec<C64>,
}

impl RestrictedLiouvillian {
    fn new(model: &LindbladModel, rho0: &CMatrix) -> Self {
        let d = model.basis().dim();
        let i_unit = C64::new(0.0, 1.0);

        // Effective non-Hermitian generator G = -iH - (1/2) sum gamma L^+ L,
        // so that d rho = G rho + rho G^+ + sum gamma L rho L^+.
        let mut g = model.hamiltonian.matrix() * (-i_unit);
        let mut jumps = Vec::new();
        for jump in model.jumps.iter().filter(|j| j.rate > 0.0) {
            let l = jump.operator.matrix();
            g -= (l.adjoint() * l) * C64::new(0.5 * jump.rate, 0.0);
            jumps.push((jump.rate, SparsePattern::new(l)));
        }
        let g = SparsePattern::new(&g);

        let support = Self::reachable(d, rho0, &g, &jumps);

        let mut row_start = Vec::with_capacity(support.len() + 1);
        let mut sources = Vec::new();
        let mut coefficients = Vec::new();
        let mut row: Vec<(u32, C64)> = Vec::new();
        row_start.push(0);
        for &(i, j) in &support.pairs {
            row.clear();
            for &(k, z) in &g.rows[i] {
                if let Some(p) = support.position(k, j) {
                    row.push((p as u32, z));
                }
            }
            for &(k, z) in &g.rows[j] {
                if let Some(p) = support.position(i, k) {
                    row.push((p as u32, z.conj()));
                }
            }
            for (rate, l) in &jumps {
                for &(k, a) in &l.rows[i] {
                    for &(m, b) in &l.rows[j] {
                        if let Some(p) = support.position(k, m) {
                            row.push((p as u32, a * b.conj() * *rate));
                        }
                    }
                }
            }
            row.sort_by_key(|&(p, _)| p);
            let mut last: Option<u32> = None;
            for &(p, z) in row.iter() {
                if last == Some(p) {
                    *coefficients.last_mut().unwrap() += z;
                } else {
                    sources.push(p);
                    coefficients.push(z);
                    last = Some(p);
                }
            }
            row_start.push(sources.len());
        }

        Self {
            support,
            row_start,
            sources,
            coefficients,
        }
    }

    /// Breadth-first closure of the support of `rho0` under the generator.
    fn reachable(d: usize, rho0: &CMatrix, g: &SparsePattern, jumps: &[(f64, SparsePattern)]) -> Support {
        let mut seen = vec![false; d * d];
        let mut queue = Vec::new();
        for j in 0..d {
            for i in 0..d {
                if rho0[(i, j)] != ZERO {
                    seen[i * d + j] = true;
                    queue.push((i, j));
                }
            }
        }
        let mut head = 0;
        let mut visit = |i: usize, j: usize, queue: &mut Vec<(usize, usize)>| {
            for (a, b) in [(i, j), (j, i)] {
                if !seen[a * d + b] {
                    seen[a * d + b] = true;
                    queue.push((a, b));
                }
            }
        };
        while head < queue.len() {
            let (k, l) = queue[head];
            head += 1;
            for &(i, _) in &g.cols[k] {
                visit(i, l, &mut queue);
            }
            for &(j, _) in &g.cols[l] {
                visit(k, j, &mut queue);
            }
            for (_, op) in jumps {
                for &(i, _) in &op.cols[k] {
                    for &(j, _) in &op.cols[l] {
                        visit(i, j, &mut queue);
                    }
                }
            }
        }

        let mut pairs: Vec<(usize, usize)> = queue;
        pairs.sort_unstable();
        let mut lookup = vec![ABSENT; d * d];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            lookup[i * d + j] = p as u32;
        }
        let mirror = pairs
            .iter()
            .map(|&(i, j)| lookup[j * d + i] as usize)
            .collect();
        let diagonal = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| i == j)
            .map(|(p, _)| p)
            .collect();

        // Union-find over basis indices joined by support entries.
        let mut parent: Vec<usize> = (0..d).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &pairs {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for &(i, j) in &pairs {
            if i == j {
                let root = find(&mut parent, i);
                groups.entry(root).or_default().push(i);
            }
        }

        Support {
            dim: d,
            pairs,
            lookup,
            mirror,
            diagonal,
            blocks: groups.into_values().collect(),
        }
    }

    fn norm_estimate(&self) -> f64 {
        (0..self.support.len())
            .map(|p| {
                self.coefficients[self.row_start[p]..self.row_start[p + 1]]
                    .iter()
                    .map(|z| z.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    fn apply(&self, v: &[C64], out: &mut [C64]) {
        for (p, slot) in out.iter_mut().enumerate() {
            let range = self.row_start[p]..self.row_start[p + 1];
            let mut acc = ZERO;
            for (&s, &c) in self.sources[range.clone()].iter().zip(&self.coefficients[range]) {
                acc += c * v[s as usize];
            }
            *slot = acc;
        }
    }

    /// Classical RK4 with `substeps` steps per sample interval. Returns the
    /// final vector; `observer` sees every sample.
    fn integrate(
        &self,
        v0: &[C64],
        grid: &TimeGrid,
        substeps: usize,
        mut observer: Option<&mut SampleObserver<'_>>,
    ) -> Vec<C64> {
        let n = v0.len();
        let h = grid.spacing() / substeps as f64;
        let mut v = v0.to_vec();
        self.support.symmetrize(&mut v);
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);

        if let Some(obs) = observer.as_mut() {
            obs(0, grid.time(0), &v);
        }
        for k in 1..grid.samples {
            for _ in 0..substeps {
                self.apply(&v, &mut k1);
                for p in 0..n {
                    tmp[p] = v[p] + k1[p] * (0.5 * h);
                }
                self.apply(&tmp, &mut k2);
                for p in 0..n {
                    tmp[p] = v[p] + k2[p] * (0.5 * h);
                }
                self.apply(&tmp, &mut k3);
                for p in 0..n {
                    tmp[p] = v[p] + k3[p] * h;
                }
                self.apply(&tmp, &mut k4);
                for p in 0..n {
                    v[p] += (k1[p] + (k2[p] + k3[p]) * 2.0 + k4[p]) * (h / 6.0);
                }
                self.support.symmetrize(&mut v);
            }
            if let Some(obs) = observer.as_mut() {
                obs(k, grid.time(k), &v);
            }
        }
        v
    }
}
