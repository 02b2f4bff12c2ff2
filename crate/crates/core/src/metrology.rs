//! Gradient estimation from the two-well spin variance.
//!
//! The measured quantity is `O = (J_Ly - J_Ry)^2 - (J_Lz + J_Rz)^2`. For the
//! singlet under the gradient coupling `<O> = N(N+4)/12 cos(Omega_D t)`, so
//! the accumulated phase `phi_D = Omega_D t` is read off through the
//! error-propagation formula
//! `dphi = sqrt(<O^2> - <O>^2) / |d<O>/dphi|`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_lindblad_observed, one_body_loss, two_body_loss, Diagnostics, LindbladModel, LindbladOptions,
    QuantumState, TimeGrid, UnitaryPropagator,
};
use crate::fock::{same_basis, Operator};
use crate::hamiltonian::{build_detection, PhysicalParams, WellPair, WellSpins};
use crate::statesynth::{product_state, singlet_on, synthesize};
use crate::{CMatrix, Error, Result, C64};

/// Bohr magneton over reduced Planck constant, rad s^-1 T^-1.
pub const MU_B_OVER_HBAR: f64 = 9.274_010_065_7e-24 / 1.054_571_817e-34;

/// Slopes smaller than this fraction of the signal scale count as
/// stationary points.
pub const STATIONARY_FRACTION: f64 = 1e-6;

/// Tolerance on `<O^2> - <O>^2` before a negative variance is an error.
pub const VARIANCE_SLACK: f64 = 1e-9;

/// Samples per quarter period used when the uncertainty is wanted at
/// `t = pi / (2 Omega_D)`; keeps the central-difference slope error near
/// `1e-7` relative.
pub const QUARTER_PERIOD_SAMPLES: usize = 1600;

/// `O` and `O^2` on one basis, built once and reused for every sample.
/// Both are stored sparsely: the spin operators only connect neighbouring
/// occupations, so `O` has a handful of entries per row.
#[derive(Clone, Debug)]
pub struct EstimatorOps {
    estimator: Operator,
    sparse: SparseRows,
    sparse_sq: SparseRows,
}

impl EstimatorOps {
    pub fn new(spins: &WellSpins) -> Result<Self> {
        let estimator = estimator_from_spins(spins)?;
        let sparse = SparseRows::from_dense(estimator.matrix());
        let sparse_sq = sparse.square();
        Ok(Self {
            estimator,
            sparse,
            sparse_sq,
        })
    }

    pub fn estimator(&self) -> &Operator {
        &self.estimator
    }

    /// `(<O>, <O^2>)` in `state`.
    pub fn moments(&self, state: &QuantumState) -> Result<(f64, f64)> {
        if !same_basis(state.basis(), self.estimator.basis()) {
            return Err(Error::BasisMismatch);
        }
        if let Some(psi) = state.amplitudes() {
            // O is Hermitian, so <O^2> = |O psi|^2.
            let o_psi = self.sparse.mul_vec(psi.as_slice());
            let m1: C64 = psi.iter().zip(&o_psi).map(|(a, b)| a.conj() * b).sum();
            let m2: f64 = o_psi.iter().map(|z| z.norm_sqr()).sum();
            Ok((m1.re, m2))
        } else {
            let rho = state.density().expect("mixed state");
            Ok((self.sparse.trace_with(rho), self.sparse_sq.trace_with(rho)))
        }
    }
}

/// Row-compressed copy of a dense operator, exact zeros dropped.
#[derive(Clone, Debug)]
struct SparseRows {
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseRows {
    fn from_dense(m: &CMatrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != C64::new(0.0, 0.0))
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    fn square(&self) -> Self {
        let dim = self.rows.len();
        let mut acc = vec![C64::new(0.0, 0.0); dim];
        let mut touched = Vec::new();
        let rows = self
            .rows
            .iter()
            .map(|row| {
                for &(k, a) in row {
                    for &(j, b) in &self.rows[k] {
                        if acc[j] == C64::new(0.0, 0.0) {
                            touched.push(j);
                        }
                        acc[j] += a * b;
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                let out = touched
                    .iter()
                    .map(|&j| (j, std::mem::replace(&mut acc[j], C64::new(0.0, 0.0))))
                    .filter(|&(_, v)| v != C64::new(0.0, 0.0))
                    .collect();
                touched.clear();
                out
            })
            .collect();
        Self { rows }
    }

    fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, a)| a * v[j]).sum())
            .collect()
    }

    /// `Re tr(A rho)`.
    fn trace_with(&self, rho: &CMatrix) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, a)| (a * rho[(j, i)]).re).sum::<f64>())
            .sum()
    }
}

/// `O = (J_Ly - J_Ry)^2 - (J_Lz + J_Rz)^2` on the pair's joint basis.
pub fn estimator_operator(pair: &WellPair) -> Result<Operator> {
    estimator_from_spins(&pair.spins()?)
}

fn estimator_from_spins(spins: &WellSpins) -> Result<Operator> {
    let y_minus = spins.left.y.try_sub(&spins.right.y)?;
    let z_plus = spins.left.z.try_add(&spins.right.z)?;
    let o = y_minus.try_mul(&y_minus)?.try_sub(&z_plus.try_mul(&z_plus)?)?;
    o.ensure_hermitian(1e-12)?;
    Ok(o)
}

/// Phase uncertainty at one sample. Stationary points of `<O>` have no
/// finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Uncertainty {
    Finite(f64),
    Unbounded,
}

impl Uncertainty {
    pub fn value(self) -> f64 {
        match self {
            Uncertainty::Finite(v) => v,
            Uncertainty::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Uncertainty::Finite(_))
    }
}

impl Serialize for Uncertainty {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Uncertainty::Finite(v) => s.serialize_f64(*v),
            Uncertainty::Unbounded => s.serialize_str("inf"),
        }
    }
}

/// Rates of the loss channels, in units of `Omega`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossRates {
    /// One-body loss, same rate on all four modes.
    pub gamma_o: f64,
    /// Two-body `e e` loss in each well.
    pub gamma_t_ee: f64,
    /// Two-body `e g` loss in each well.
    pub gamma_t_eg: f64,
}

impl LossRates {
    pub fn is_lossless(&self) -> bool {
        self.gamma_o == 0.0 && self.gamma_t_ee == 0.0 && self.gamma_t_eg == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_o", self.gamma_o),
            ("gamma_t_ee", self.gamma_t_ee),
            ("gamma_t_eg", self.gamma_t_eg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `<O>`, `<O^2>` and `dphi` on a uniform time grid.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorSeries {
    pub times: Vec<f64>,
    pub estimator: Vec<f64>,
    pub estimator_sq: Vec<f64>,
    pub uncertainty: Vec<Uncertainty>,
    pub params: PhysicalParams,
    pub rates: LossRates,
}

impl EstimatorSeries {
    /// Builds the series from sampled moments. `times` must be uniform.
    pub fn from_moments(
        times: Vec<f64>,
        estimator: Vec<f64>,
        estimator_sq: Vec<f64>,
        params: PhysicalParams,
        rates: LossRates,
    ) -> Result<Self> {
        let len = times.len();
        if len < 3 {
            return Err(Error::InvalidGrid(format!(
                "uncertainty needs at least 3 samples, got {len}"
            )));
        }
        if estimator.len() != len || estimator_sq.len() != len {
            return Err(Error::InvalidGrid("moment series length differs from time grid".into()));
        }
        if params.omega_d == 0.0 {
            return Err(Error::InvalidParams("Omega_D must be nonzero to define phi_D".into()));
        }
        for (k, (&m1, &m2)) in estimator.iter().zip(&estimator_sq).enumerate() {
            let var = m2 - m1 * m1;
            if var < -VARIANCE_SLACK {
                return Err(Error::InvariantViolated {
                    what: "variance non-negativity",
                    value: var,
                    limit: -VARIANCE_SLACK,
                    time: times[k],
                });
            }
        }
        let dt = (times[len - 1] - times[0]) / (len - 1) as f64;
        let slopes = time_derivative(&estimator, dt);
        let scale = estimator.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let uncertainty = slopes
            .iter()
            .zip(estimator.iter().zip(&estimator_sq))
            .map(|(&slope, (&m1, &m2))| {
                let dphi_slope = slope / params.omega_d;
                if dphi_slope.abs() < STATIONARY_FRACTION * scale {
                    Uncertainty::Unbounded
                } else {
                    Uncertainty::Finite((m2 - m1 * m1).max(0.0).sqrt() / dphi_slope.abs())
                }
            })
            .collect();
        Ok(Self {
            times,
            estimator,
            estimator_sq,
            uncertainty,
            params,
            rates,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.estimator_sq[k] - self.estimator[k] * self.estimator[k]
    }

    /// Index of the sample closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let dt = (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64;
        (((t - self.times[0]) / dt).round().max(0.0) as usize).min(self.len() - 1)
    }
}

/// Second-order finite differences: central inside, one-sided at the ends.
fn time_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt)
            } else if k == n - 1 {
                (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dt)
            } else {
                (f[k + 1] - f[k - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

/// Moments of `ops` in every state followed by [`EstimatorSeries::from_moments`].
pub fn estimator_series(
    states: &[QuantumState],
    times: Vec<f64>,
    ops: &EstimatorOps,
    params: PhysicalParams,
    rates: LossRates,
) -> Result<EstimatorSeries> {
    let mut m1 = Vec::with_capacity(states.len());
    let mut m2 = Vec::with_capacity(states.len());
    for s in states {
        let (a, b) = ops.moments(s)?;
        m1.push(a);
        m2.push(b);
    }
    EstimatorSeries::from_moments(times, m1, m2, params, rates)
}

/// `N(N+4)/12 cos(phi_D)`: the singlet's loss-free estimator.
pub fn analytic_variance(n: usize, phi_d: f64) -> f64 {
    let n = n as f64;
    n * (n + 4.0) / 12.0 * phi_d.cos()
}

/// Loss-free singlet phase uncertainty as a function of `phi_D`.
pub fn analytic_uncertainty(n: usize, phi_d: f64) -> f64 {
    let nf = n as f64;
    let (s2, c2) = (phi_d.sin().powi(2), phi_d.cos().powi(2));
    ((15.0 * s2 + (nf - 2.0) * (nf + 6.0) * c2) / (5.0 * nf * (nf + 4.0) * s2)).sqrt()
}

/// Minimum of [`analytic_uncertainty`], reached at `phi_D = pi/2`.
pub fn heisenberg_uncertainty(n: usize) -> f64 {
    let nf = n as f64;
    (3.0 / (nf * (nf + 4.0))).sqrt()
}

/// Quantum Cramer-Rao bound `1/sqrt(F)` for the singlet under the
/// relative rotation `exp(-i phi (J_Lx - J_Rx)/2)`. The quantum Fisher
/// information is `F = 4 Var((J_Lx - J_Rx)/2) = 4 j(j+1)/3 = N(N+4)/12`
/// with `j = N/4`. The variance estimator saturates it at `phi = pi/2`,
/// which is exactly twice [`heisenberg_uncertainty`].
pub fn cramer_rao_bound(n: usize) -> f64 {
    let nf = n as f64;
    (12.0 / (nf * (nf + 4.0))).sqrt()
}

/// Standard quantum limit `1/sqrt(N)` for uncorrelated atoms.
pub fn sql_baseline(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Field in tesla for a coupling `omega` (in units of the reference
/// frequency, given in Hz): `B = hbar Omega / mu_B`.
pub fn field_from_coupling(omega: f64, omega_ref_hz: f64) -> f64 {
    omega * 2.0 * PI * omega_ref_hz / MU_B_OVER_HBAR
}

/// Angular frequency (rad/s) whose Zeeman coupling equals `field` tesla.
pub fn coupling_from_field(field: f64) -> f64 {
    field * MU_B_OVER_HBAR
}

/// Parameters of one detection run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSetup {
    pub n: usize,
    pub omega: f64,
    pub omega_d: f64,
    pub chi: f64,
    pub rates: LossRates,
}

impl Default for DetectionSetup {
    fn default() -> Self {
        Self {
            n: 4,
            omega: 1.0,
            omega_d: 0.05,
            chi: 0.0,
            rates: LossRates::default(),
        }
    }
}

impl DetectionSetup {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            n: self.n,
            omega: self.omega,
            omega_d: self.omega_d,
            chi: self.chi,
            ..PhysicalParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        self.rates.validate()?;
        if self.omega_d == 0.0 {
            return Err(Error::InvalidParams("Omega_D must be nonzero".into()));
        }
        Ok(())
    }

    /// `pi / (2 Omega_D)`, where the loss-free singlet estimator vanishes.
    pub fn quarter_period(&self) -> f64 {
        PI / (2.0 * self.omega_d.abs())
    }

    /// Fixed `N/2` per well without losses, otherwise "at most `N/2`" so
    /// that lost atoms stay representable.
    pub fn well_pair(&self) -> Result<WellPair> {
        if self.rates.is_lossless() {
            WellPair::fixed(self.n / 2)
        } else {
            WellPair::truncated(self.n / 2)
        }
    }
}

/// Which state enters the detection stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitialState {
    Singlet,
    Synthesized { u_over_ej: f64 },
    Product,
}

impl InitialState {
    pub fn label(&self) -> &'static str {
        match self {
            InitialState::Singlet => "singlet",
            InitialState::Synthesized { .. } => "synthesized",
            InitialState::Product => "product",
        }
    }

    /// The state on `pair`'s joint basis.
    pub fn prepare(&self, n: usize, pair: &WellPair) -> Result<QuantumState> {
        match *self {
            InitialState::Singlet => singlet_on(pair.joint(), n),
            InitialState::Synthesized { u_over_ej } => synthesize(n, u_over_ej)?.well_state.embed_into(pair.joint()),
            InitialState::Product => product_state(n)?.embed_into(pair.joint()),
        }
    }
}

/// Everything a detection run produces.
#[derive(Clone, Debug)]
pub struct DetectionRun {
    pub series: EstimatorSeries,
    /// Present for Lindblad runs.
    pub diagnostics: Option<Diagnostics>,
    pub final_state: QuantumState,
}

/// Detection Hamiltonian plus loss channels on `pair`.
pub fn detection_model(setup: &DetectionSetup, pair: &WellPair) -> Result<LindbladModel> {
    setup.validate()?;
    let h = build_detection(&setup.params(), pair)?;
    let basis = pair.joint();
    let mut jumps = one_body_loss(basis, setup.rates.gamma_o, setup.rates.gamma_o)?;
    jumps.extend(two_body_loss(basis, setup.rates.gamma_t_ee, setup.rates.gamma_t_eg)?);
    LindbladModel::new(h, jumps)
}

/// Evolves `initial` under the detection dynamics (unitary when loss-free)
/// and evaluates the estimator series on `grid`.
pub fn run_detection(setup: &DetectionSetup, initial: &InitialState, grid: &TimeGrid) -> Result<DetectionRun> {
    setup.validate()?;
    grid.validate()?;
    let pair = setup.well_pair()?;
    let state = initial.prepare(setup.n, &pair)?;
    run_detection_from(setup, &pair, &state, grid)
}

/// [`run_detection`] with an explicit initial state on `pair`.
pub fn run_detection_from(
    setup: &DetectionSetup,
    pair: &WellPair,
    state: &QuantumState,
    grid: &TimeGrid,
) -> Result<DetectionRun> {
    let model = detection_model(setup, pair)?;
    let ops = EstimatorOps::new(&pair.spins()?)?;
    let times = grid.times();
    let mut m1 = Vec::with_capacity(times.len());
    let mut m2 = Vec::with_capacity(times.len());

    let (diagnostics, final_state) = if model.is_closed() && state.amplitudes().is_some() {
        let propagator = UnitaryPropagator::new(model.hamiltonian())?;
        let evolution = propagator.start(state)?;
        let mut last = state.clone();
        for &t in &times {
            last = evolution.state_at(t);
            let (a, b) = ops.moments(&last)?;
            m1.push(a);
            m2.push(b);
        }
        (None, last)
    } else {
        let mut last = None;
        let mut failure = None;
        let diag = evolve_lindblad_observed(&model, state, grid, &LindbladOptions::default(), |_, _, s| {
            match ops.moments(s) {
                Ok((a, b)) => {
                    m1.push(a);
                    m2.push(b);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
            last = Some(s.clone());
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        (Some(diag), last.expect("grid has samples"))
    };

    let series = EstimatorSeries::from_moments(times, m1, m2, setup.params(), setup.rates)?;
    Ok(DetectionRun {
        series,
        diagnostics,
        final_state,
    })
}

/// Grid `[0, t_q + 2 dt]` with `t_q = pi/(2 Omega_D)` landing exactly on
/// sample `QUARTER_PERIOD_SAMPLES`. Returns the grid and that index.
pub fn quarter_period_grid(setup: &DetectionSetup) -> (TimeGrid, usize) {
    let k = QUARTER_PERIOD_SAMPLES;
    let dt = setup.quarter_period() / k as f64;
    let grid = TimeGrid {
        t_start: 0.0,
        t_end: (k + 2) as f64 * dt,
        samples: k + 3,
    };
    (grid, k)
}

/// Uncertainty of the run at exactly `t = pi/(2 Omega_D)`.
pub fn uncertainty_at_quarter_period(setup: &DetectionSetup, initial: &InitialState) -> Result<(Uncertainty, DetectionRun)> {
    let (grid, k) = quarter_period_grid(setup);
    let run = run_detection(setup, initial, &grid)?;
    Ok((run.series.uncertainty[k], run))
}

#[derive(Clone, Debug, Serialize)]
pub struct UncertaintyRow {
    pub n: usize,
    pub uncertainty: Uncertainty,
    pub heisenberg: f64,
    pub sql: f64,
}

/// `dphi` at `t = pi/(2 Omega_D)` for each `N`, in parallel.
pub fn min_uncertainty_vs_n(
    base: &DetectionSetup,
    initial: &InitialState,
    n_list: &[usize],
) -> Result<Vec<UncertaintyRow>> {
    use rayon::prelude::*;
    n_list
        .par_iter()
        .map(|&n| {
            let setup = DetectionSetup { n, ..*base };
            let (u, _) = uncertainty_at_quarter_period(&setup, initial)?;
            Ok(UncertaintyRow {
                n,
                uncertainty: u,
                heisenberg: heisenberg_uncertainty(n),
                sql: sql_baseline(n),
            })
        })
        .collect()
}
