//! Initial states for the detection stage.
//!
//! The target is the two-well singlet
//! `|Psi_in> = (2j+1)^{-1/2} sum_m (-1)^{j-m} |j,m>_L |j,-m>_R` with
//! `j = N/4`. It is prepared dynamically in two steps:
//!
//! 1. Pair tunnelling. All `e` atoms start in the left well and all `g`
//!    atoms in the right one. Under the double-well Hamiltonian with
//!    `U_ee = U_gg = U_eg = U` (a `2U n_e n_g` cross term, so the
//!    interaction energy of a well depends only on its total atom number)
//!    and `E_J << U` the two species hop
//!    together; the state at the first zero of `<n_gL - n_gR>` (`t*`) is an
//!    almost uniform superposition of anti-correlated well spins.
//! 2. Relative phase. `exp(-i H_rp t)` with `H_rp = delta_L J_Lz +
//!    delta_R J_Rz` restores the alternating signs; the duration is the
//!    fidelity maximiser.
//!
//! The `(-1)^{j-m}` sign equals `(-1)^m` up to the global phase `(-1)^j`
//! and stays real for half-integer `j`, so any even `N` is accepted.
//! In the occupation basis `j - m` is the number of `g` atoms in the left
//! well.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{QuantumState, TimeGrid, UnitaryPropagator};
use crate::fock::{same_basis, FockBasis, Operator, SectorConstraint};
use crate::hamiltonian::{build_bose_hubbard, build_phase_shift_on, PhysicalParams, WellPair, E_L, E_R, G_L, G_R};
use crate::{CVector, Error, Result, C64};

/// Time resolution of the `t*` bisection.
pub const CROSSING_TOLERANCE: f64 = 1e-6;
/// Time resolution of the golden-section fidelity refinement.
pub const PHASE_TOLERANCE: f64 = 1e-8;

fn check_even(n: usize) -> Result<()> {
    if n >= 2 && n.is_multiple_of(2) {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "atom number must be even and at least 2, got {n}"
        )))
    }
}

/// The singlet on the fixed `N/2`-per-well joint basis.
pub fn singlet_state(n: usize) -> Result<QuantumState> {
    check_even(n)?;
    let pair = WellPair::fixed(n / 2)?;
    singlet_on(pair.joint(), n)
}

/// The singlet expressed on any four-mode basis that contains it.
pub fn singlet_on(basis: &Arc<FockBasis>, n: usize) -> Result<QuantumState> {
    check_even(n)?;
    let half = n / 2;
    let norm = 1.0 / ((half + 1) as f64).sqrt();
    let mut amps = CVector::zeros(basis.dim());
    for g_left in 0..=half {
        let e_left = half - g_left;
        // m_R = -m_L forces e_R = g_L and g_R = e_L.
        let occ = [e_left as u32, g_left as u32, g_left as u32, e_left as u32];
        let idx = basis.index_of(&occ).ok_or_else(|| {
            Error::InvalidState(format!("basis lacks singlet component {occ:?}"))
        })?;
        let sign = if g_left % 2 == 0 { 1.0 } else { -1.0 };
        amps[idx] = C64::new(sign * norm, 0.0);
    }
    QuantumState::pure(basis.clone(), amps)
}

/// Both wells with every atom in `g` (an uncorrelated coherent-spin
/// product).
pub fn product_state(n: usize) -> Result<QuantumState> {
    check_even(n)?;
    let pair = WellPair::fixed(n / 2)?;
    let half = (n / 2) as u32;
    QuantumState::fock(pair.joint().clone(), &[0, half, 0, half])
}

/// `|<a|b>|^2` for pure states on the same basis.
pub fn fidelity(a: &QuantumState, b: &QuantumState) -> Result<f64> {
    if !same_basis(a.basis(), b.basis()) {
        return Err(Error::BasisMismatch);
    }
    let (va, vb) = match (a.amplitudes(), b.amplitudes()) {
        (Some(va), Some(vb)) => (va, vb),
        _ => return Err(Error::InvalidState("fidelity needs pure states".into())),
    };
    Ok(va.dotc(vb).norm_sqr().min(1.0))
}

/// Outcome of entangled-state preparation.
#[derive(Clone, Debug, Serialize)]
pub struct SynthesisReport {
    /// First zero of the `g` population imbalance.
    pub t_star: f64,
    /// Best fidelity with the singlet reached so far.
    pub fidelity_max: f64,
    /// Phase-evolution time achieving `fidelity_max` (0 before correction).
    pub t_phase: f64,
    /// `(t, <n_gL - n_gR>)` on the tunnelling grid.
    pub population_series: Vec<(f64, f64)>,
    /// `(t, fidelity)` on the phase-search grid.
    pub fidelity_series: Vec<(f64, f64)>,
}

impl SynthesisReport {
    pub fn with_phase(mut self, phase: &PhaseReport) -> Self {
        self.fidelity_max = phase.fidelity_max;
        self.t_phase = phase.t_phase;
        self.fidelity_series = phase.fidelity_series.clone();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseReport {
    pub t_phase: f64,
    pub fidelity_max: f64,
    pub fidelity_series: Vec<(f64, f64)>,
}

/// Four-mode basis with `N/2` atoms of each species.
pub fn species_basis(n: usize) -> Result<Arc<FockBasis>> {
    check_even(n)?;
    let half = n / 2;
    Ok(Arc::new(FockBasis::new(
        4,
        n,
        &[
            SectorConstraint::exactly(&[E_L, E_R], half),
            SectorConstraint::exactly(&[G_L, G_R], half),
        ],
    )?))
}

/// Evolves `e`-left/`g`-right under the double-well Hamiltonian and stops
/// at the first zero crossing of `<n_gL - n_gR>`, refined by bisection.
pub fn generate_entangled(params: &PhysicalParams, grid: &TimeGrid) -> Result<(QuantumState, SynthesisReport)> {
    params.validate()?;
    grid.validate()?;
    let n = params.n;
    let half = (n / 2) as u32;
    let basis = species_basis(n)?;
    let h = build_bose_hubbard(params, &basis)?;
    let start = QuantumState::fock(basis.clone(), &[half, 0, 0, half])?;
    let imbalance: Vec<f64> = basis
        .states()
        .iter()
        .map(|occ| occ[G_L] as f64 - occ[G_R] as f64)
        .collect();
    let observe = |psi: &CVector| -> f64 {
        psi.iter().zip(&imbalance).map(|(z, w)| z.norm_sqr() * w).sum()
    };

    let propagator = UnitaryPropagator::new(&h)?;
    let evolution = propagator.start(&start)?;

    let mut series = Vec::with_capacity(grid.samples);
    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for t in grid.times() {
        let value = observe(&evolution.amplitudes_at(t));
        series.push((t, value));
        if bracket.is_none() {
            if let Some((t0, v0)) = prev {
                if v0 < 0.0 && value >= 0.0 || v0 > 0.0 && value <= 0.0 {
                    bracket = Some((t0, v0, t));
                }
            }
        }
        prev = Some((t, value));
    }
    let (mut lo, v_lo, mut hi) = bracket.ok_or(Error::NoZeroCrossing { t_end: grid.t_end })?;
    while hi - lo > CROSSING_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let v = observe(&evolution.amplitudes_at(mid));
        if v.signum() == v_lo.signum() && v != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let state = evolution.state_at(t_star);
    let target = singlet_on(&basis, n)?;
    let report = SynthesisReport {
        t_star,
        fidelity_max: fidelity(&target, &state)?,
        t_phase: 0.0,
        population_series: series,
        fidelity_series: Vec::new(),
    };
    Ok((state, report))
}

/// Applies `exp(-i H_rp t)` for the `t` in `search` (refined by
/// golden-section search) that maximises the fidelity with the singlet.
pub fn apply_phase_correction(
    state: &QuantumState,
    params: &PhysicalParams,
    search: &TimeGrid,
) -> Result<(QuantumState, PhaseReport)> {
    params.validate()?;
    search.validate()?;
    if params.delta_l == params.delta_r {
        return Err(Error::InvalidParams(
            "phase correction needs delta_L != delta_R".into(),
        ));
    }
    let psi = state
        .amplitudes()
        .ok_or_else(|| Error::InvalidState("phase correction needs a pure state".into()))?;
    let basis = state.basis().clone();
    let h_rp = build_phase_shift_on(params, &basis)?;
    let phases: Vec<f64> = (0..basis.dim()).map(|i| h_rp.matrix()[(i, i)].re).collect();
    let target = singlet_on(&basis, params.n)?;
    let target = target.amplitudes().expect("pure");

    let rotate = |t: f64| -> CVector {
        CVector::from_iterator(
            psi.len(),
            psi.iter().zip(&phases).map(|(z, &e)| z * C64::from_polar(1.0, -e * t)),
        )
    };
    let fid = |t: f64| target.dotc(&rotate(t)).norm_sqr().min(1.0);

    let times = search.times();
    let series: Vec<(f64, f64)> = times.iter().map(|&t| (t, fid(t))).collect();
    let best = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)
        .expect("grid has samples");
    let lo = times[best.saturating_sub(1)];
    let hi = times[(best + 1).min(times.len() - 1)];
    let (mut t_phase, mut f_max) = golden_section_max(&fid, lo, hi, PHASE_TOLERANCE);
    if series[best].1 > f_max {
        t_phase = series[best].0;
        f_max = series[best].1;
    }
    let corrected = QuantumState::pure_normalized(basis, rotate(t_phase))?;
    Ok((
        corrected,
        PhaseReport {
            t_phase,
            fidelity_max: f_max,
            fidelity_series: series,
        },
    ))
}

fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Parameters of the preparation stage in units of `E_J = 1`:
/// `U_ee = U_gg = U_eg = U`, `delta_L = E_J`, `delta_R = 0`.
///
/// The `U` quoted for the cross term refers to the coefficient of
/// `n_e n_g` being `2U`. Taking `U_eg = 2U` in the `2 U_eg n_e n_g` form
/// detunes the pair-exchange path by `4U` and the imbalance never crosses
/// zero.
pub fn synthesis_params(n: usize, u_over_ej: f64) -> PhysicalParams {
    PhysicalParams {
        n,
        ej_e: 1.0,
        ej_g: 1.0,
        u_ee: u_over_ej,
        u_gg: u_over_ej,
        u_eg: u_over_ej,
        detuning: 0.0,
        omega: 0.0,
        omega_d: 0.0,
        chi: 0.0,
        delta_l: 1.0,
        delta_r: 0.0,
    }
}

/// Tunnelling grid long enough to contain the first crossing: the pair
/// hopping rate scales like `E_J^2 / U`, so the window grows with `U/E_J`.
pub fn default_tunnel_grid(n: usize, u_over_ej: f64) -> TimeGrid {
    let t_end = (4.0 * u_over_ej.max(1.0) * n as f64).max(20.0);
    let samples = ((t_end / 0.02).ceil() as usize).max(200) + 1;
    TimeGrid {
        t_start: 0.0,
        t_end,
        samples,
    }
}

/// One period of the relative-phase evolution, `2 pi / |delta_L - delta_R|`.
pub fn default_phase_grid(params: &PhysicalParams) -> TimeGrid {
    let period = 2.0 * PI / (params.delta_l - params.delta_r).abs();
    TimeGrid {
        t_start: 0.0,
        t_end: period,
        samples: 2001,
    }
}

/// Result of the full preparation pipeline.
#[derive(Clone, Debug)]
pub struct Synthesized {
    /// `|Psi~>` on the four-mode species basis.
    pub modes_state: QuantumState,
    /// `|Psi~>` projected onto `N/2` atoms per well and renormalised, ready
    /// for the detection stage.
    pub well_state: QuantumState,
    /// Weight of `modes_state` inside the `N/2`-per-well sector.
    pub well_weight: f64,
    pub report: SynthesisReport,
}

/// Tunnelling, `t*` detection and phase correction with default grids. The
/// tunnelling window is doubled (up to four times) if no crossing is found.
pub fn synthesize(n: usize, u_over_ej: f64) -> Result<Synthesized> {
    let params = synthesis_params(n, u_over_ej);
    let mut grid = default_tunnel_grid(n, u_over_ej);
    let mut attempts = 0;
    let (state, report) = loop {
        match generate_entangled(&params, &grid) {
            Err(Error::NoZeroCrossing { .. }) if attempts < 4 => {
                grid.t_end *= 2.0;
                grid.samples = 2 * grid.samples - 1;
                attempts += 1;
            }
            other => break other?,
        }
    };
    let (corrected, phase) = apply_phase_correction(&state, &params, &default_phase_grid(&params))?;
    let pair = WellPair::fixed(n / 2)?;
    let (well_state, well_weight) = corrected.project_onto(pair.joint())?;
    Ok(Synthesized {
        modes_state: corrected,
        well_state,
        well_weight,
        report: report.with_phase(&phase),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FidelityRow {
    pub n: usize,
    pub u_over_ej: f64,
    pub t_star: f64,
    pub t_phase: f64,
    pub fidelity: f64,
}

/// Peak singlet fidelity of the prepared state for every `(N, U/E_J)`.
pub fn fidelity_vs_n_sweep(u_over_ej: &[f64], n_list: &[usize]) -> Result<Vec<FidelityRow>> {
    let points: Vec<(usize, f64)> = n_list
        .iter()
        .flat_map(|&n| u_over_ej.iter().map(move |&u| (n, u)))
        .collect();
    points
        .par_iter()
        .map(|&(n, u)| {
            let s = synthesize(n, u)?;
            Ok(FidelityRow {
                n,
                u_over_ej: u,
                t_star: s.report.t_star,
                t_phase: s.report.t_phase,
                fidelity: s.report.fidelity_max,
            })
        })
        .collect()
}

/// Operator `n_gL - n_gR` on a four-mode basis.
pub fn imbalance_operator(basis: &Arc<FockBasis>) -> Operator {
    Operator::diagonal(basis, |occ| occ[G_L] as f64 - occ[G_R] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::WellSpins;

    #[test]
    fn four_atom_singlet_amplitudes() {
        let s = singlet_state(4).unwrap();
        let amps: Vec<f64> = s
            .amplitudes()
            .unwrap()
            .iter()
            .filter(|z| z.norm() > 0.0)
            .map(|z| z.re)
            .collect();
        assert_eq!(amps.len(), 3);
        for a in &amps {
            assert!((a.abs() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
        assert!((s.amplitudes().unwrap().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singlet_is_annihilated_by_total_spin() {
        for n in [2, 4, 6, 8] {
            let s = singlet_state(n).unwrap();
            let spins = WellSpins::new(s.basis()).unwrap();
            let psi = s.amplitudes().unwrap();
            for (l, r) in [
                (&spins.left.x, &spins.right.x),
                (&spins.left.y, &spins.right.y),
                (&spins.left.z, &spins.right.z),
            ] {
                let total = l + r;
                assert!((total.matrix() * psi).norm() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn fidelity_basics() {
        let s = singlet_state(4).unwrap();
        assert!((fidelity(&s, &s).unwrap() - 1.0).abs() < 1e-15);
        let basis = s.basis().clone();
        let a = QuantumState::fock(basis.clone(), &[2, 0, 0, 2]).unwrap();
        let b = QuantumState::fock(basis.clone(), &[1, 1, 1, 1]).unwrap();
        assert_eq!(fidelity(&a, &b).unwrap(), 0.0);

        // Unsigned uniform superposition: (sum_m (-1)^m / 3)^2 = 1/9.
        let uniform = CVector::from_iterator(
            basis.dim(),
            s.amplitudes().unwrap().iter().map(|z| C64::new(z.norm(), 0.0)),
        );
        let u = QuantumState::pure(basis, uniform).unwrap();
        assert!((fidelity(&s, &u).unwrap() - 1.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn no_tunnelling_means_no_crossing() {
        let mut p = synthesis_params(4, 10.0);
        p.ej_e = 0.0;
        p.ej_g = 0.0;
        let grid = TimeGrid::new(0.0, 50.0, 501).unwrap();
        assert!(matches!(
            generate_entangled(&p, &grid),
            Err(Error::NoZeroCrossing { .. })
        ));
    }

    #[test]
    fn tunnelling_conserves_species_and_norm() {
        let p = synthesis_params(4, 10.0);
        let basis = species_basis(4).unwrap();
        let h = build_bose_hubbard(&p, &basis).unwrap();
        let start = QuantumState::fock(basis.clone(), &[2, 0, 0, 2]).unwrap();
        let prop = UnitaryPropagator::new(&h).unwrap();
        let ev = prop.start(&start).unwrap();
        for k in 0..50 {
            let v = ev.amplitudes_at(k as f64 * 3.7);
            assert!((v.norm() - 1.0).abs() < 1e-10);
        }
        // The basis itself pins both species numbers.
        for occ in basis.states() {
            assert_eq!(occ[E_L] + occ[E_R], 2);
            assert_eq!(occ[G_L] + occ[G_R], 2);
        }
    }

    #[test]
    fn phase_correction_of_the_target_is_trivial() {
        let p = synthesis_params(4, 10.0);
        let s = singlet_on(&species_basis(4).unwrap(), 4).unwrap();
        let (out, report) = apply_phase_correction(&s, &p, &default_phase_grid(&p)).unwrap();
        assert!((report.fidelity_max - 1.0).abs() < 1e-12);
        // j = 1: the phase pattern repeats after 2 pi / delta, both ends qualify.
        let period = 2.0 * PI;
        assert!(report.t_phase.abs() < 1e-6 || (report.t_phase - period).abs() < 1e-6);
        assert!((fidelity(&out, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_correction_preserves_populations() {
        let p = synthesis_params(4, 10.0);
        let (state, _) = generate_entangled(&p, &default_tunnel_grid(4, 10.0)).unwrap();
        let (out, _) = apply_phase_correction(&state, &p, &default_phase_grid(&p)).unwrap();
        for (a, b) in state.populations().iter().zip(out.populations()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_correction_needs_distinct_shifts() {
        let mut p = synthesis_params(4, 10.0);
        p.delta_r = p.delta_l;
        let s = singlet_on(&species_basis(4).unwrap(), 4).unwrap();
        assert!(apply_phase_correction(&s, &p, &TimeGrid::new(0.0, 1.0, 3).unwrap()).is_err());
    }
}
