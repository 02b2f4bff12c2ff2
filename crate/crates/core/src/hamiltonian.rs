//! Hamiltonians of the two-well, two-component condensate.
//!
//! Everything lives on a four-mode basis with the fixed mode layout
//! [`E_L`], [`G_L`], [`E_R`], [`G_R`]. [`WellPair`] builds the joint basis
//! for the detection stage, where each well holds either exactly or at most
//! `N/2` atoms. Because the joint states are sorted lexicographically, the
//! joint index factorises as `left_index * right_dim + right_index`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fock::{hopping, number, schwinger_spin, FockBasis, Operator, SectorConstraint, SpinOps};
use crate::{Error, Result};

pub const E_L: usize = 0;
pub const G_L: usize = 1;
pub const E_R: usize = 2;
pub const G_R: usize = 3;

/// Model parameters. Frequencies are in units of the mean coupling `omega`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    /// Total atom count over both wells.
    pub n: usize,
    pub ej_e: f64,
    pub ej_g: f64,
    pub u_ee: f64,
    pub u_gg: f64,
    pub u_eg: f64,
    /// `omega_e - omega` in the rotating frame.
    pub detuning: f64,
    pub omega: f64,
    pub omega_d: f64,
    pub chi: f64,
    pub delta_l: f64,
    pub delta_r: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            n: 4,
            ej_e: 0.0,
            ej_g: 0.0,
            u_ee: 0.0,
            u_gg: 0.0,
            u_eg: 0.0,
            detuning: 0.0,
            omega: 1.0,
            omega_d: 0.05,
            chi: 0.0,
            delta_l: 0.0,
            delta_r: 0.0,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "atom number must be even and at least 2, got {}",
                self.n
            )));
        }
        let values = [
            ("ej_e", self.ej_e),
            ("ej_g", self.ej_g),
            ("u_ee", self.u_ee),
            ("u_gg", self.u_gg),
            ("u_eg", self.u_eg),
            ("detuning", self.detuning),
            ("omega", self.omega),
            ("omega_d", self.omega_d),
            ("chi", self.chi),
            ("delta_l", self.delta_l),
            ("delta_r", self.delta_r),
        ];
        if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} is not finite ({v})")));
        }
        Ok(())
    }

    pub fn per_well(&self) -> usize {
        self.n / 2
    }

    pub fn omega_left(&self) -> f64 {
        self.omega + self.omega_d / 2.0
    }

    pub fn omega_right(&self) -> f64 {
        self.omega - self.omega_d / 2.0
    }

    /// `U_ee + U_gg - 2 U_eg`, the one-axis-twisting strength implied by the
    /// mode interactions.
    pub fn derived_chi(&self) -> f64 {
        self.u_ee + self.u_gg - 2.0 * self.u_eg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellOccupancy {
    /// Exactly `N/2` atoms per well (closed dynamics).
    Fixed,
    /// At most `N/2` atoms per well (atom-loss dynamics).
    Truncated,
}

/// The two wells of the detection stage and their joint basis.
#[derive(Clone, Debug)]
pub struct WellPair {
    per_well: usize,
    occupancy: WellOccupancy,
    well: Arc<FockBasis>,
    joint: Arc<FockBasis>,
}

impl WellPair {
    pub fn new(per_well: usize, occupancy: WellOccupancy) -> Result<Self> {
        let (well_c, left_c, right_c) = match occupancy {
            WellOccupancy::Fixed => (
                SectorConstraint::exactly(&[0, 1], per_well),
                SectorConstraint::exactly(&[E_L, G_L], per_well),
                SectorConstraint::exactly(&[E_R, G_R], per_well),
            ),
            WellOccupancy::Truncated => (
                SectorConstraint::at_most(&[0, 1], per_well),
                SectorConstraint::at_most(&[E_L, G_L], per_well),
                SectorConstraint::at_most(&[E_R, G_R], per_well),
            ),
        };
        let well = Arc::new(FockBasis::new(2, per_well, &[well_c])?);
        let joint = Arc::new(FockBasis::new(4, 2 * per_well, &[left_c, right_c])?);
        debug_assert_eq!(joint.dim(), well.dim() * well.dim());
        Ok(Self {
            per_well,
            occupancy,
            well,
            joint,
        })
    }

    pub fn fixed(per_well: usize) -> Result<Self> {
        Self::new(per_well, WellOccupancy::Fixed)
    }

    pub fn truncated(per_well: usize) -> Result<Self> {
        Self::new(per_well, WellOccupancy::Truncated)
    }

    pub fn per_well(&self) -> usize {
        self.per_well
    }

    pub fn occupancy(&self) -> WellOccupancy {
        self.occupancy
    }

    /// Two-mode `(e, g)` basis of a single well; both wells share it.
    pub fn well(&self) -> &Arc<FockBasis> {
        &self.well
    }

    pub fn joint(&self) -> &Arc<FockBasis> {
        &self.joint
    }

    pub fn spins(&self) -> Result<WellSpins> {
        WellSpins::new(&self.joint)
    }
}

/// Schwinger spins of both wells on a four-mode basis.
#[derive(Clone, Debug)]
pub struct WellSpins {
    pub left: SpinOps,
    pub right: SpinOps,
}

impl WellSpins {
    pub fn new(basis: &Arc<FockBasis>) -> Result<Self> {
        require_four_modes(basis)?;
        Ok(Self {
            left: schwinger_spin(basis, E_L, G_L)?,
            right: schwinger_spin(basis, E_R, G_R)?,
        })
    }
}

fn require_four_modes(basis: &FockBasis) -> Result<()> {
    if basis.modes() == 4 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "expected the four-mode (e_L, g_L, e_R, g_R) basis, got {} modes",
            basis.modes()
        )))
    }
}

/// Two-mode Bose-Hubbard dimer for both species:
/// `-(EJe e_L^+ e_R + EJg g_L^+ g_R + h.c.)/2
///  + sum_a (Uee n_ea^2 + 2 Ueg n_ea n_ga + Ugg n_ga^2)`.
pub fn build_bose_hubbard(params: &PhysicalParams, basis: &Arc<FockBasis>) -> Result<Operator> {
    params.validate()?;
    require_four_modes(basis)?;
    let hop = &hopping(basis, E_L, E_R)?.scale_real(params.ej_e)
        + &hopping(basis, G_L, G_R)?.scale_real(params.ej_g);
    let tunnelling = (&hop + &hop.adjoint()).scale_real(-0.5);

    let interaction = Operator::diagonal(basis, |occ| {
        [(E_L, G_L), (E_R, G_R)]
            .iter()
            .map(|&(e, g)| {
                let (ne, ng) = (occ[e] as f64, occ[g] as f64);
                params.u_ee * ne * ne + 2.0 * params.u_eg * ne * ng + params.u_gg * ng * ng
            })
            .sum()
    });
    Ok(&tunnelling + &interaction)
}

/// Rotating-frame microwave coupling
/// `sum_a [Delta n_ea + (Omega_a/2)(e_a^+ g_a + h.c.)]` with
/// `Omega_L = Omega + Omega_D/2` and `Omega_R = Omega - Omega_D/2`.
pub fn build_coupling(params: &PhysicalParams, basis: &Arc<FockBasis>) -> Result<Operator> {
    params.validate()?;
    require_four_modes(basis)?;
    let mut h = Operator::zeros(basis);
    for (e_mode, g_mode, omega) in [
        (E_L, G_L, params.omega_left()),
        (E_R, G_R, params.omega_right()),
    ] {
        let flip = hopping(basis, e_mode, g_mode)?;
        h = &h + &number(basis, e_mode)?.scale_real(params.detuning);
        h = &h + &(&flip + &flip.adjoint()).scale_real(omega / 2.0);
    }
    Ok(h)
}

/// Resonant detection Hamiltonian in collective-spin form,
/// `Omega (J_Lx + J_Rx) + (Omega_D / 2)(J_Lx - J_Rx)`.
pub fn build_gradient_spin(params: &PhysicalParams, pair: &WellPair) -> Result<Operator> {
    params.validate()?;
    let s = pair.spins()?;
    let common = (&s.left.x + &s.right.x).scale_real(params.omega);
    let gradient = (&s.left.x - &s.right.x).scale_real(params.omega_d / 2.0);
    Ok(&common + &gradient)
}

/// Relative-phase generator `delta_L J_Lz + delta_R J_Rz` on any four-mode
/// basis.
pub fn build_phase_shift_on(params: &PhysicalParams, basis: &Arc<FockBasis>) -> Result<Operator> {
    params.validate()?;
    require_four_modes(basis)?;
    let (dl, dr) = (params.delta_l, params.delta_r);
    Ok(Operator::diagonal(basis, |occ| {
        let jz_l = (occ[E_L] as f64 - occ[G_L] as f64) / 2.0;
        let jz_r = (occ[E_R] as f64 - occ[G_R] as f64) / 2.0;
        dl * jz_l + dr * jz_r
    }))
}

pub fn build_phase_shift(params: &PhysicalParams, pair: &WellPair) -> Result<Operator> {
    build_phase_shift_on(params, pair.joint())
}

/// Collective form of the on-site interaction,
/// `sum_a [ (U_ee - U_gg) N J_az / 2 + chi J_az^2 ]`, with the constant
/// `(U_ee + U_gg + 2 U_eg) N^2 / 8` dropped.
pub fn build_collective(params: &PhysicalParams, pair: &WellPair) -> Result<Operator> {
    params.validate()?;
    let linear = 0.5 * (params.u_ee - params.u_gg) * params.n as f64;
    let chi = params.chi;
    Ok(Operator::diagonal(pair.joint(), |occ| {
        [(E_L, G_L), (E_R, G_R)]
            .iter()
            .map(|&(e, g)| {
                let jz = (occ[e] as f64 - occ[g] as f64) / 2.0;
                linear * jz + chi * jz * jz
            })
            .sum()
    }))
}

/// Full detection-stage Hamiltonian: gradient coupling plus the collective
/// nonlinearity.
pub fn build_detection(params: &PhysicalParams, pair: &WellPair) -> Result<Operator> {
    let h1 = build_gradient_spin(params, pair)?;
    if params.chi == 0.0 && params.u_ee == params.u_gg {
        return Ok(h1);
    }
    Ok(&h1 + &build_collective(params, pair)?)
}
