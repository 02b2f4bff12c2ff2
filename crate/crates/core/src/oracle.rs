//! Brute-force reference implementations.
//!
//! Nothing here shares code with the production paths it checks: the
//! Liouvillian is assembled on the full `d^2` space from Kronecker
//! products, and propagation uses a truncated Taylor series of the
//! exponential action instead of eigendecomposition or Runge-Kutta.

use std::sync::Arc;

use crate::dynamics::{LindbladModel, QuantumState};
use crate::fock::{same_basis, FockBasis, Operator};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Largest Hilbert-space dimension the superoperator oracle accepts.
pub const MAX_ORACLE_DIM: usize = 100;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Compressed sparse rows.
struct Csr {
    dim: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Csr {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_start = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_start[r + 1] = cols.len();
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_start[r + 1] = row_start[r + 1].max(row_start[r]);
        }
        Self {
            dim,
            row_start,
            cols,
            vals,
        }
    }

    fn apply(&self, v: &[C64], out: &mut [C64]) {
        for (r, slot) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = ZERO;
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[k] * v[self.cols[k]];
            }
            *slot = acc;
        }
    }

    /// Induced infinity norm (max absolute row sum).
    fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|r| {
                self.vals[self.row_start[r]..self.row_start[r + 1]]
                    .iter()
                    .map(|z| z.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

fn entries(m: &CMatrix) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != ZERO {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Appends `scale * (a kron b)` to `triplets`, with `d` the size of `b`.
fn push_kron(
    triplets: &mut Vec<(usize, usize, C64)>,
    a: &[(usize, usize, C64)],
    b: &[(usize, usize, C64)],
    d: usize,
    scale: C64,
) {
    for &(ra, ca, va) in a {
        for &(rb, cb, vb) in b {
            triplets.push((ra * d + rb, ca * d + cb, scale * va * vb));
        }
    }
}

/// `exp(t A) v` by Taylor series on slices with `|h A| <= 1`.
fn expm_action(a: &Csr, v: &[C64], t: f64) -> Vec<C64> {
    let norm = a.norm_inf() * t.abs();
    let slices = norm.ceil().max(1.0) as usize;
    let h = t / slices as f64;
    let mut x = v.to_vec();
    let mut term = vec![ZERO; v.len()];
    let mut next = vec![ZERO; v.len()];
    for _ in 0..slices {
        term.copy_from_slice(&x);
        let mut acc = x.clone();
        let mut quiet = 0;
        for k in 1..=80 {
            a.apply(&term, &mut next);
            let f = h / k as f64;
            for (t_i, n_i) in term.iter_mut().zip(&next) {
                *t_i = n_i * f;
            }
            for (a_i, t_i) in acc.iter_mut().zip(&term) {
                *a_i += t_i;
            }
            let term_max = term.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            let acc_max = acc.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if term_max <= 1e-18 * acc_max.max(1e-300) {
                quiet += 1;
                if quiet == 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        x = acc;
    }
    x
}

/// Full Liouvillian on column-stacked `vec(rho)`, built with
/// `vec(A X B) = (B^T kron A) vec(X)`.
fn liouvillian(model: &LindbladModel) -> Csr {
    let d = model.basis().dim();
    let i_unit = C64::new(0.0, 1.0);
    let id = entries(&CMatrix::identity(d, d));
    let h = model.hamiltonian().matrix();
    let mut triplets = Vec::new();

    // -i (I kron H) + i (H^T kron I)
    push_kron(&mut triplets, &id, &entries(h), d, -i_unit);
    push_kron(&mut triplets, &entries(&h.transpose()), &id, d, i_unit);

    for jump in model.jumps() {
        if jump.rate == 0.0 {
            continue;
        }
        let l = jump.operator.matrix();
        let k = l.adjoint() * l;
        let g = C64::new(jump.rate, 0.0);
        push_kron(&mut triplets, &entries(&l.conjugate()), &entries(l), d, g);
        push_kron(&mut triplets, &id, &entries(&k), d, -g * 0.5);
        push_kron(&mut triplets, &entries(&k.transpose()), &id, d, -g * 0.5);
    }
    Csr::from_triplets(d * d, triplets)
}

/// `rho(t) = exp(t L) rho0` with the full superoperator `L`.
pub fn lindblad_exact(model: &LindbladModel, rho0: &QuantumState, t: f64) -> Result<QuantumState> {
    let d = model.basis().dim();
    if d > MAX_ORACLE_DIM {
        return Err(Error::DimensionTooLarge {
            dim: d,
            max: MAX_ORACLE_DIM,
        });
    }
    if !same_basis(model.basis(), rho0.basis()) {
        return Err(Error::BasisMismatch);
    }
    let rho = rho0.to_density();
    // Column-major storage is exactly vec(rho).
    let v: Vec<C64> = rho.iter().copied().collect();
    let out = expm_action(&liouvillian(model), &v, t);
    let rho_t = CMatrix::from_column_slice(d, d, &out);
    QuantumState::mixed(model.basis().clone(), rho_t)
}

/// `exp(-iHt) psi0` by Taylor series, without diagonalising `H`.
pub fn unitary_exact(h: &Operator, psi0: &QuantumState, t: f64) -> Result<QuantumState> {
    if !same_basis(h.basis(), psi0.basis()) {
        return Err(Error::BasisMismatch);
    }
    let v = psi0
        .amplitudes()
        .ok_or_else(|| Error::InvalidState("expected a pure state".into()))?;
    let a = Csr::from_triplets(
        h.dim(),
        entries(h.matrix())
            .into_iter()
            .map(|(i, j, z)| (i, j, z * C64::new(0.0, -1.0)))
            .collect(),
    );
    let out = expm_action(&a, v.as_slice(), t);
    QuantumState::pure_normalized(h.basis().clone(), CVector::from_vec(out))
}

/// `<O>` by explicit double summation.
pub fn expectation_direct(op: &Operator, state: &QuantumState) -> Result<C64> {
    if !same_basis(op.basis(), state.basis()) {
        return Err(Error::BasisMismatch);
    }
    let o = op.matrix();
    let d = op.dim();
    let mut acc = ZERO;
    if let Some(psi) = state.amplitudes() {
        for i in 0..d {
            for j in 0..d {
                acc += psi[i].conj() * o[(i, j)] * psi[j];
            }
        }
    } else {
        let rho = state.density().expect("mixed state");
        for i in 0..d {
            for j in 0..d {
                acc += o[(i, j)] * rho[(j, i)];
            }
        }
    }
    Ok(acc)
}

/// First time `<observable>` changes sign, found by stepping `samples`
/// Taylor propagations over `[0, t_end]` and interpolating linearly inside
/// the bracketing interval.
pub fn scan_first_crossing(
    h: &Operator,
    psi0: &QuantumState,
    observable: &Operator,
    t_end: f64,
    samples: usize,
) -> Result<Option<f64>> {
    let dt = t_end / (samples - 1) as f64;
    let mut psi = psi0.clone();
    let mut prev = expectation_direct(observable, &psi)?.re;
    for k in 1..samples {
        psi = unitary_exact(h, &psi, dt)?;
        let cur = expectation_direct(observable, &psi)?.re;
        if prev != 0.0 && prev.signum() != cur.signum() {
            let t0 = (k - 1) as f64 * dt;
            return Ok(Some(t0 + dt * prev / (prev - cur)));
        }
        prev = cur;
    }
    Ok(None)
}

/// Basis states of `basis` as a dense identity, used to check that an
/// operator built on it is unchanged by a round trip through `vec`.
pub fn identity_on(basis: &Arc<FockBasis>) -> Operator {
    Operator::identity(basis)
}
