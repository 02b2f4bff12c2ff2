//! Truncated multi-mode bosonic Fock spaces.
//!
//! A [`FockBasis`] enumerates occupation tuples `(n_1, ..., n_modes)` with
//! total occupation at most `max_total`, optionally restricted by
//! [`SectorConstraint`]s on subsets of modes. States are kept in ascending
//! lexicographic order so every matrix built on a basis is reproducible
//! bit for bit.
//!
//! Truncation is exact for everything in this crate: the Hamiltonians
//! conserve per-species or per-well atom number and the loss channels only
//! ever remove atoms, so `max_total` equal to the initial atom count never
//! clips a reachable state.

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{CMatrix, Error, Result, C64};

/// Bound placed on the summed occupation of a group of modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Exactly(usize),
    AtMost(usize),
}

impl Bound {
    fn admits(self, total: usize) -> bool {
        match self {
            Bound::Exactly(n) => total == n,
            Bound::AtMost(n) => total <= n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorConstraint {
    pub modes: Vec<usize>,
    pub bound: Bound,
}

impl SectorConstraint {
    pub fn exactly(modes: &[usize], total: usize) -> Self {
        Self {
            modes: modes.to_vec(),
            bound: Bound::Exactly(total),
        }
    }

    pub fn at_most(modes: &[usize], total: usize) -> Self {
        Self {
            modes: modes.to_vec(),
            bound: Bound::AtMost(total),
        }
    }

    fn admits(&self, occupation: &[u32]) -> bool {
        let total: usize = self.modes.iter().map(|&m| occupation[m] as usize).sum();
        self.bound.admits(total)
    }
}

/// Ordered set of occupation tuples spanning a truncated Fock space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FockBasis {
    modes: usize,
    max_total: usize,
    sector: Vec<SectorConstraint>,
    states: Vec<Vec<u32>>,
}

impl FockBasis {
    /// Enumerates every tuple with `sum <= max_total` that satisfies all
    /// `sector` constraints, in ascending lexicographic order.
    pub fn new(modes: usize, max_total: usize, sector: &[SectorConstraint]) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidBasis("a basis needs at least one mode".into()));
        }
        for c in sector {
            if c.modes.is_empty() {
                return Err(Error::InvalidBasis("sector constraint over no modes".into()));
            }
            if let Some(&m) = c.modes.iter().find(|&&m| m >= modes) {
                return Err(Error::ModeOutOfRange { mode: m, modes });
            }
        }

        let mut states = Vec::new();
        let mut current = vec![0u32; modes];
        enumerate(&mut current, 0, max_total, &mut |occ| {
            if sector.iter().all(|c| c.admits(occ)) {
                states.push(occ.to_vec());
            }
        });

        Ok(Self {
            modes,
            max_total,
            sector: sector.to_vec(),
            states,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn sector(&self) -> &[SectorConstraint] {
        &self.sector
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u32>] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &[u32] {
        &self.states[index]
    }

    pub fn index_of(&self, occupation: &[u32]) -> Option<usize> {
        if occupation.len() != self.modes {
            return None;
        }
        self.states
            .binary_search_by(|s| s.as_slice().cmp(occupation))
            .ok()
    }

    pub fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.modes {
            Ok(())
        } else {
            Err(Error::ModeOutOfRange {
                mode,
                modes: self.modes,
            })
        }
    }
}

fn enumerate(current: &mut [u32], mode: usize, budget: usize, visit: &mut impl FnMut(&[u32])) {
    if mode == current.len() {
        visit(current);
        return;
    }
    for n in 0..=budget {
        current[mode] = n as u32;
        enumerate(current, mode + 1, budget - n, visit);
    }
    current[mode] = 0;
}

/// Dense complex operator on a [`FockBasis`].
#[derive(Clone, Debug)]
pub struct Operator {
    basis: Arc<FockBasis>,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(basis: Arc<FockBasis>, matrix: CMatrix) -> Result<Self> {
        let d = basis.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::InvalidParams(format!(
                "matrix is {}x{} but the basis has dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { basis, matrix })
    }

    pub fn zeros(basis: &Arc<FockBasis>) -> Self {
        let d = basis.dim();
        Self {
            basis: basis.clone(),
            matrix: CMatrix::zeros(d, d),
        }
    }

    pub fn identity(basis: &Arc<FockBasis>) -> Self {
        let d = basis.dim();
        Self {
            basis: basis.clone(),
            matrix: CMatrix::identity(d, d),
        }
    }

    /// Diagonal operator whose entries are `f(occupation)`.
    pub fn diagonal(basis: &Arc<FockBasis>, f: impl Fn(&[u32]) -> f64) -> Self {
        let mut op = Self::zeros(basis);
        for (i, occ) in basis.states().iter().enumerate() {
            op.matrix[(i, i)] = C64::new(f(occ), 0.0);
        }
        op
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            basis: self.basis.clone(),
            matrix: &self.matrix * factor,
        }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn same_basis(&self, other: &Operator) -> bool {
        same_basis(&self.basis, &other.basis)
    }

    fn check_basis(&self, other: &Operator) -> Result<()> {
        if self.same_basis(other) {
            Ok(())
        } else {
            Err(Error::BasisMismatch)
        }
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        self.check_basis(other)?;
        Ok(Self {
            basis: self.basis.clone(),
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Operator> {
        self.check_basis(other)?;
        Ok(Self {
            basis: self.basis.clone(),
            matrix: &self.matrix - &other.matrix,
        })
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        self.check_basis(other)?;
        Ok(Self {
            basis: self.basis.clone(),
            matrix: &self.matrix * &other.matrix,
        })
    }

    /// `[self, other] = self*other - other*self`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.check_basis(other)?;
        Ok(Self {
            basis: self.basis.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    /// Largest absolute entry.
    pub fn max_norm(&self) -> f64 {
        max_abs(&self.matrix)
    }

    /// Max-norm of `A - A^dagger`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn ensure_hermitian(&self, tol: f64) -> Result<()> {
        let defect = self.hermiticity_defect();
        if defect <= tol {
            Ok(())
        } else {
            Err(Error::NotHermitian { defect })
        }
    }
}

pub(crate) fn same_basis(a: &Arc<FockBasis>, b: &Arc<FockBasis>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

// The panicking operator impls are for building Hamiltonians out of
// operators that share a basis by construction.
impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator basis mismatch")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.try_sub(rhs).expect("operator basis mismatch")
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.try_mul(rhs).expect("operator basis mismatch")
    }
}

/// Annihilation operator `a|..., n, ...> = sqrt(n) |..., n-1, ...>` for
/// `mode`. Transitions leaving the basis are dropped.
pub fn annihilation(basis: &Arc<FockBasis>, mode: usize) -> Result<Operator> {
    basis.check_mode(mode)?;
    let mut op = Operator::zeros(basis);
    let mut target = vec![0u32; basis.modes()];
    for (col, occ) in basis.states().iter().enumerate() {
        let n = occ[mode];
        if n == 0 {
            continue;
        }
        target.copy_from_slice(occ);
        target[mode] -= 1;
        if let Some(row) = basis.index_of(&target) {
            op.matrix[(row, col)] = C64::new((n as f64).sqrt(), 0.0);
        }
    }
    Ok(op)
}

pub fn creation(basis: &Arc<FockBasis>, mode: usize) -> Result<Operator> {
    Ok(annihilation(basis, mode)?.adjoint())
}

/// Bilinear `a_to^+ a_from`, evaluated directly on each basis state.
///
/// On a fixed-number sector `a_from` alone leaves the basis, so the matrix
/// product of truncated ladder operators would vanish; this builds the
/// number-conserving product exactly.
pub fn hopping(basis: &Arc<FockBasis>, to: usize, from: usize) -> Result<Operator> {
    basis.check_mode(to)?;
    basis.check_mode(from)?;
    if to == from {
        return number(basis, to);
    }
    let mut op = Operator::zeros(basis);
    let mut target = vec![0u32; basis.modes()];
    for (col, occ) in basis.states().iter().enumerate() {
        let n_from = occ[from];
        if n_from == 0 {
            continue;
        }
        target.copy_from_slice(occ);
        target[from] -= 1;
        target[to] += 1;
        if let Some(row) = basis.index_of(&target) {
            let amp = (n_from as f64 * target[to] as f64).sqrt();
            op.matrix[(row, col)] = C64::new(amp, 0.0);
        }
    }
    Ok(op)
}

pub fn number(basis: &Arc<FockBasis>, mode: usize) -> Result<Operator> {
    basis.check_mode(mode)?;
    Ok(Operator::diagonal(basis, |occ| occ[mode] as f64))
}

/// Schwinger-boson angular momentum of a pair of modes.
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub x: Operator,
    pub y: Operator,
    pub z: Operator,
}

impl SpinOps {
    /// `J^2 = Jx^2 + Jy^2 + Jz^2`.
    pub fn casimir(&self) -> Operator {
        &(&(&self.x * &self.x) + &(&self.y * &self.y)) + &(&self.z * &self.z)
    }
}

/// Builds `Jx = (e^+ g + g^+ e)/2`, `Jy = (e^+ g - g^+ e)/(2i)` and
/// `Jz = (e^+ e - g^+ g)/2` from the mode operators of `mode_e`, `mode_g`.
pub fn schwinger_spin(basis: &Arc<FockBasis>, mode_e: usize, mode_g: usize) -> Result<SpinOps> {
    if mode_e == mode_g {
        return Err(Error::InvalidParams(
            "Schwinger modes must be distinct".into(),
        ));
    }
    let raise = hopping(basis, mode_e, mode_g)?;
    let lower = raise.adjoint();

    let x = (&raise + &lower).scale_real(0.5);
    let y = (&raise - &lower).scale(C64::new(0.0, -0.5));
    let z = (&number(basis, mode_e)? - &number(basis, mode_g)?).scale_real(0.5);
    Ok(SpinOps { x, y, z })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(modes: usize, max_total: usize, sector: &[SectorConstraint]) -> Arc<FockBasis> {
        Arc::new(FockBasis::new(modes, max_total, sector).unwrap())
    }

    #[test]
    fn two_mode_single_quantum_listing() {
        let b = basis(2, 1, &[]);
        assert_eq!(b.states(), &[vec![0, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn unconstrained_two_mode_dimension() {
        for m in 0..12 {
            assert_eq!(basis(2, m, &[]).dim(), (m + 1) * (m + 2) / 2);
        }
    }

    #[test]
    fn four_mode_fixed_pair_sector_matches_brute_force() {
        let sector = [
            SectorConstraint::exactly(&[0, 1], 2),
            SectorConstraint::exactly(&[2, 3], 2),
        ];
        let b = basis(4, 4, &sector);
        let mut brute = 0;
        for n0 in 0..=4u32 {
            for n1 in 0..=4u32 {
                for n2 in 0..=4u32 {
                    for n3 in 0..=4u32 {
                        if n0 + n1 + n2 + n3 <= 4 && n0 + n1 == 2 && n2 + n3 == 2 {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(brute, 9);
        assert_eq!(b.dim(), 9);
    }

    #[test]
    fn rejects_constraint_on_missing_mode() {
        let err = FockBasis::new(2, 2, &[SectorConstraint::exactly(&[0, 2], 1)]).unwrap_err();
        assert!(matches!(err, Error::ModeOutOfRange { mode: 2, modes: 2 }));
        assert!(FockBasis::new(0, 2, &[]).is_err());
    }

    #[test]
    fn states_sorted_and_indexable() {
        let b = basis(3, 4, &[SectorConstraint::at_most(&[0, 1], 2)]);
        for w in b.states().windows(2) {
            assert!(w[0] < w[1]);
        }
        for (i, s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
            assert!(s[0] + s[1] <= 2);
        }
        assert_eq!(b.index_of(&[3, 0, 0]), None);
    }

    #[test]
    fn annihilation_elements() {
        let b = basis(2, 2, &[]);
        let a0 = annihilation(&b, 0).unwrap();
        let row = b.index_of(&[1, 0]).unwrap();
        let col = b.index_of(&[2, 0]).unwrap();
        assert!((a0.matrix()[(row, col)].re - 2f64.sqrt()).abs() < 1e-15);

        let vac = b.index_of(&[0, 0]).unwrap();
        for i in 0..b.dim() {
            assert_eq!(a0.matrix()[(i, vac)], C64::new(0.0, 0.0));
        }
        assert!(annihilation(&b, 2).is_err());
    }

    #[test]
    fn canonical_commutator_below_cutoff() {
        let b = basis(2, 4, &[]);
        for mode in 0..2 {
            let a = annihilation(&b, mode).unwrap();
            let comm = a.commutator(&a.adjoint()).unwrap();
            for (i, occ) in b.states().iter().enumerate() {
                let headroom = (occ.iter().sum::<u32>() as usize) < b.max_total();
                for j in 0..b.dim() {
                    let expected = if i == j && headroom { 1.0 } else { 0.0 };
                    if headroom {
                        assert!((comm.matrix()[(i, j)] - C64::new(expected, 0.0)).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn number_is_a_dagger_a() {
        let b = basis(3, 3, &[]);
        for mode in 0..3 {
            let a = annihilation(&b, mode).unwrap();
            let n = number(&b, mode).unwrap();
            let ada = &a.adjoint() * &a;
            assert!((&ada - &n).max_norm() < 1e-14);
        }
    }

    #[test]
    fn hopping_matches_ladder_product_with_headroom() {
        let b = basis(3, 4, &[]);
        for (to, from) in [(0, 1), (2, 0), (1, 2)] {
            let direct = hopping(&b, to, from).unwrap();
            let product = &creation(&b, to).unwrap() * &annihilation(&b, from).unwrap();
            // Only states whose intermediate (one atom fewer) stays in the
            // basis can differ; with no sector that is all of them.
            assert!((&direct - &product).max_norm() < 1e-14);
        }
    }

    #[test]
    fn su2_algebra_on_fixed_sectors() {
        for nw in 0..7usize {
            let b = basis(2, nw, &[SectorConstraint::exactly(&[0, 1], nw)]);
            let s = schwinger_spin(&b, 0, 1).unwrap();
            for op in [&s.x, &s.y, &s.z] {
                assert!(op.is_hermitian(1e-12));
            }
            let i = C64::new(0.0, 1.0);
            let cases = [(&s.x, &s.y, &s.z), (&s.y, &s.z, &s.x), (&s.z, &s.x, &s.y)];
            for (a, bb, c) in cases {
                let lhs = a.commutator(bb).unwrap();
                assert!((&lhs - &c.scale(i)).max_norm() < 1e-12);
            }
            let j = nw as f64 / 2.0;
            let casimir = s.casimir();
            let expect = Operator::identity(&b).scale_real(j * (j + 1.0));
            assert!((&casimir - &expect).max_norm() < 1e-12);
        }
    }

    #[test]
    fn spin_half_jz_spectrum() {
        let b = basis(2, 1, &[SectorConstraint::exactly(&[0, 1], 1)]);
        let s = schwinger_spin(&b, 0, 1).unwrap();
        let mut eig: Vec<f64> = (0..b.dim()).map(|i| s.z.matrix()[(i, i)].re).collect();
        eig.sort_by(f64::total_cmp);
        assert_eq!(eig, vec![-0.5, 0.5]);
        assert!(schwinger_spin(&b, 1, 1).is_err());
    }
}
