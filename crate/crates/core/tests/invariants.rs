use std::sync::Arc;

use becgrad::dynamics::{evolve_lindblad, QuantumState, TimeGrid, UnitaryPropagator};
use becgrad::fock::FockBasis;
use becgrad::hamiltonian::{build_bose_hubbard, build_detection, PhysicalParams, WellPair, WellSpins};
use becgrad::metrology::{detection_model, DetectionSetup, EstimatorOps, LossRates};
use becgrad::statesynth::{apply_phase_correction, singlet_on, species_basis, synthesis_params, default_phase_grid};
use becgrad::{CMatrix, CVector, C64};
use proptest::prelude::*;

fn random_state(basis: &Arc<FockBasis>, raw: &[(f64, f64)]) -> QuantumState {
    let d = basis.dim();
    let v = CVector::from_iterator(d, (0..d).map(|i| {
        let (re, im) = raw[i % raw.len()];
        C64::new(re + 1e-3 * i as f64, im)
    }));
    QuantumState::pure_normalized(basis.clone(), v).unwrap()
}

fn amplitudes() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..40)
}

fn even_n(max_half: usize) -> impl Strategy<Value = usize> {
    (1..=max_half).prop_map(|h| 2 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn estimator_variance_is_nonnegative(n in even_n(5), raw in amplitudes(), mix in 0.0..1.0f64) {
        let pair = WellPair::fixed(n / 2).unwrap();
        let ops = EstimatorOps::new(&WellSpins::new(pair.joint()).unwrap()).unwrap();
        let psi = random_state(pair.joint(), &raw);
        let (m1, m2) = ops.moments(&psi).unwrap();
        prop_assert!(m2 - m1 * m1 >= -1e-9 * m2.abs().max(1.0));

        let singlet = singlet_on(pair.joint(), n).unwrap();
        let rho = psi.to_density().scale(mix) + singlet.to_density().scale(1.0 - mix);
        let mixed = QuantumState::mixed(pair.joint().clone(), rho).unwrap();
        let (m1, m2) = ops.moments(&mixed).unwrap();
        prop_assert!(m2 - m1 * m1 >= -1e-9 * m2.abs().max(1.0));
    }

    #[test]
    fn hamiltonians_are_hermitian(
        n in even_n(4),
        omega in 0.1..2.0f64,
        omega_d in -0.5..0.5f64,
        chi in -0.01..0.01f64,
        u in 0.0..20.0f64,
    ) {
        let pair = WellPair::fixed(n / 2).unwrap();
        let params = PhysicalParams { n, omega, omega_d, chi, ..PhysicalParams::default() };
        prop_assert!(build_detection(&params, &pair).unwrap().hermiticity_defect() < 1e-12);
        let bh = build_bose_hubbard(&synthesis_params(n, u.max(0.1)), &species_basis(n).unwrap()).unwrap();
        prop_assert!(bh.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn unitary_evolution_preserves_norm(n in even_n(4), raw in amplitudes(), t in 0.0..200.0f64, chi in 0.0..0.01f64) {
        let pair = WellPair::fixed(n / 2).unwrap();
        let params = PhysicalParams { n, chi, ..PhysicalParams::default() };
        let h = build_detection(&params, &pair).unwrap();
        let psi = random_state(pair.joint(), &raw);
        let out = UnitaryPropagator::new(&h).unwrap().start(&psi).unwrap().amplitudes_at(t);
        prop_assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lindblad_evolution_stays_physical(
        gamma_o in 0.0..0.02f64,
        gamma_t_ee in 0.0..0.01f64,
        gamma_t_eg in 0.0..0.01f64,
        t in 1.0..40.0f64,
    ) {
        let setup = DetectionSetup {
            n: 2,
            rates: LossRates { gamma_o, gamma_t_ee, gamma_t_eg },
            ..Default::default()
        };
        let pair = WellPair::truncated(1).unwrap();
        let model = detection_model(&setup, &pair).unwrap();
        let rho0 = singlet_on(pair.joint(), 2).unwrap();
        let states = evolve_lindblad(&model, &rho0, &TimeGrid::new(0.0, t, 5).unwrap()).unwrap();
        for s in &states {
            let rho = s.to_density();
            prop_assert!((s.trace() - 1.0).abs() < 1e-8);
            prop_assert!((&rho - rho.adjoint()).camax() < 1e-10);
            let eig = rho.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-6));
        }
    }

    #[test]
    fn singlet_is_annihilated_by_total_spin(n in even_n(8)) {
        let pair = WellPair::fixed(n / 2).unwrap();
        let psi = singlet_on(pair.joint(), n).unwrap();
        let amps = psi.amplitudes().unwrap();
        let s = WellSpins::new(pair.joint()).unwrap();
        for (l, r) in [(&s.left.x, &s.right.x), (&s.left.y, &s.right.y), (&s.left.z, &s.right.z)] {
            prop_assert!(((l + r).matrix() * amps).norm() < 1e-12);
        }
    }

    #[test]
    fn phase_correction_preserves_populations(n in even_n(3), raw in amplitudes(), u in 2.0..50.0f64) {
        let basis = species_basis(n).unwrap();
        let psi = random_state(&basis, &raw);
        let params = synthesis_params(n, u);
        let (out, report) = apply_phase_correction(&psi, &params, &default_phase_grid(&params)).unwrap();
        for (a, b) in psi.populations().iter().zip(out.populations()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0 + 1e-12).contains(&report.fidelity_max));
    }
}

#[test]
fn hermitian_check_rejects_asymmetric_density() {
    let pair = WellPair::fixed(1).unwrap();
    let mut rho = CMatrix::identity(4, 4).scale(0.25);
    rho[(0, 1)] = C64::new(0.1, 0.0);
    assert!(QuantumState::mixed(pair.joint().clone(), rho).is_err());
}
