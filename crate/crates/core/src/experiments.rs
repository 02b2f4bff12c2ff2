//! Figure recipes, configuration and artifact emission.
//!
//! A run resolves an [`ExperimentConfig`] (recipe preset, then an optional
//! TOML/JSON file, then command-line overrides), computes every curve,
//! writes one CSV per curve or table and finally `manifest.json`. The
//! manifest is the completion marker: if anything fails, the files written
//! so far are removed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{Diagnostics, QuantumState, TimeGrid};
use crate::hamiltonian::PhysicalParams;
use crate::metrology::{
    cramer_rao_bound, detection_model, heisenberg_uncertainty, quarter_period_grid, run_detection,
    sql_baseline, DetectionRun, DetectionSetup, EstimatorOps, EstimatorSeries, InitialState, LossRates,
    Uncertainty,
};
use crate::oracle::{self, MAX_ORACLE_DIM};
use crate::statesynth::{
    apply_phase_correction, default_phase_grid, fidelity_vs_n_sweep, generate_entangled, imbalance_operator,
    species_basis, synthesis_params, synthesize, Synthesized,
};
use crate::{Error, Result};

/// Oracle agreement required in verify mode.
pub const VERIFY_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
    Fig8,
    Fig9,
    Fig10,
    Fig11,
    Custom,
}

/// What a recipe computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecipeKind {
    /// Pair tunnelling and phase correction time series.
    Synthesis,
    /// Singlet fidelity of the prepared state per `(N, U/E_J)`.
    FidelityTable,
    /// Estimator time series, one CSV per curve.
    Series,
    /// `dphi` at `t = pi/(2 Omega_D)` versus `N`.
    UncertaintyTable,
}

impl Recipe {
    pub const ALL: [Recipe; 11] = [
        Recipe::Fig2,
        Recipe::Fig3,
        Recipe::Fig4,
        Recipe::Fig5,
        Recipe::Fig6,
        Recipe::Fig7,
        Recipe::Fig8,
        Recipe::Fig9,
        Recipe::Fig10,
        Recipe::Fig11,
        Recipe::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Fig2 => "fig2",
            Recipe::Fig3 => "fig3",
            Recipe::Fig4 => "fig4",
            Recipe::Fig5 => "fig5",
            Recipe::Fig6 => "fig6",
            Recipe::Fig7 => "fig7",
            Recipe::Fig8 => "fig8",
            Recipe::Fig9 => "fig9",
            Recipe::Fig10 => "fig10",
            Recipe::Fig11 => "fig11",
            Recipe::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Recipe::Fig2 => "pair tunnelling imbalance and phase-correction fidelity, N=4, U=10E_J",
            Recipe::Fig3 => "peak singlet fidelity vs N for U/E_J in {5, 10, 50}",
            Recipe::Fig4 => "estimator vs time, N=4, singlet and synthesized inputs",
            Recipe::Fig5 => "dphi at pi/(2 Omega_D) vs N, singlet and synthesized inputs",
            Recipe::Fig6 => "estimator vs time with one-body loss, N=2",
            Recipe::Fig7 => "dphi vs N with one-body loss",
            Recipe::Fig8 => "estimator vs time with two-body loss, N=4",
            Recipe::Fig9 => "dphi vs N with two-body loss (gamma_t_ee = 0 and 1.5 gamma_t_eg)",
            Recipe::Fig10 => "estimator vs time with nonlinearity chi, N=50",
            Recipe::Fig11 => "dphi at pi/(2 Omega_D) vs N for several chi",
            Recipe::Custom => "single estimator series from explicit parameters",
        }
    }

    pub fn kind(self) -> RecipeKind {
        match self {
            Recipe::Fig2 => RecipeKind::Synthesis,
            Recipe::Fig3 => RecipeKind::FidelityTable,
            Recipe::Fig4 | Recipe::Fig6 | Recipe::Fig8 | Recipe::Fig10 | Recipe::Custom => RecipeKind::Series,
            Recipe::Fig5 | Recipe::Fig7 | Recipe::Fig9 | Recipe::Fig11 => RecipeKind::UncertaintyTable,
        }
    }

    /// Caption parameters of the figure.
    pub fn preset(self) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            recipe: self,
            params: PhysicalParams::default(),
            rates: LossRates::default(),
            grid: period_grid(PhysicalParams::default().omega_d),
            initial_state: InitialKind::Singlet,
            u_over_ej: 10.0,
            sweep: Sweep::default(),
            output_dir: PathBuf::from(format!("out/{}", self.name())),
            verify: false,
        };
        let one_body = |g: f64| LossRates {
            gamma_o: g,
            ..LossRates::default()
        };
        let two_body = |ee: f64, eg: f64| LossRates {
            gamma_t_ee: ee,
            gamma_t_eg: eg,
            ..LossRates::default()
        };
        match self {
            Recipe::Fig2 => {
                c.grid = crate::statesynth::default_tunnel_grid(4, 10.0);
            }
            Recipe::Fig3 => {
                c.sweep.n = vec![2, 4, 6, 8, 10, 12];
                c.sweep.u_over_ej = vec![5.0, 10.0, 50.0];
            }
            Recipe::Fig4 => {
                c.sweep.initial_states = vec![InitialKind::Singlet, InitialKind::Synthesized];
            }
            Recipe::Fig5 => {
                c.sweep.n = (1..=10).map(|k| 2 * k).collect();
                c.sweep.initial_states = vec![InitialKind::Singlet, InitialKind::Synthesized];
            }
            Recipe::Fig6 => {
                c.params.n = 2;
                c.sweep.rates = [0.0, 0.0025, 0.005, 0.0075, 0.01].map(one_body).to_vec();
            }
            Recipe::Fig7 => {
                c.sweep.n = vec![2, 4, 6, 8, 10];
                c.sweep.rates = [0.0, 0.005, 0.01].map(one_body).to_vec();
            }
            Recipe::Fig8 => {
                c.sweep.rates = vec![
                    two_body(0.0, 0.0),
                    two_body(0.0, 0.005),
                    two_body(0.0, 0.01),
                    two_body(0.0015, 0.001),
                    two_body(0.003, 0.002),
                ];
            }
            Recipe::Fig9 => {
                c.sweep.n = vec![2, 4, 6, 8, 10];
                let mut rates: Vec<LossRates> =
                    [0.0, 0.0025, 0.005, 0.0075, 0.01].iter().map(|&g| two_body(0.0, g)).collect();
                rates.extend([two_body(0.0015, 0.001), two_body(0.003, 0.002)]);
                c.sweep.rates = rates;
            }
            Recipe::Fig10 => {
                c.params.n = 50;
                c.sweep.chi = vec![0.0, 1e-4, 5e-4, 1e-3];
            }
            Recipe::Fig11 => {
                c.sweep.n = vec![2, 4, 6, 8, 10, 20, 30, 40, 50];
                c.sweep.chi = vec![0.0, 1e-4, 5e-4, 1e-3];
            }
            Recipe::Custom => {}
        }
        c
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config {
                key: "recipe".into(),
                message: format!(
                    "unknown recipe `{s}`; expected one of {}",
                    Recipe::ALL.map(|r| r.name()).join(", ")
                ),
            })
    }
}

/// One period `[0, 2 pi / Omega_D]`, 1601 samples.
pub fn period_grid(omega_d: f64) -> TimeGrid {
    TimeGrid {
        t_start: 0.0,
        t_end: 2.0 * PI / omega_d.abs(),
        samples: 1601,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Singlet,
    Synthesized,
    Product,
}

impl InitialKind {
    pub fn with_u(self, u_over_ej: f64) -> InitialState {
        match self {
            InitialKind::Singlet => InitialState::Singlet,
            InitialKind::Synthesized => InitialState::Synthesized { u_over_ej },
            InitialKind::Product => InitialState::Product,
        }
    }
}

impl FromStr for InitialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "singlet" => Ok(InitialKind::Singlet),
            "synthesized" => Ok(InitialKind::Synthesized),
            "product" => Ok(InitialKind::Product),
            _ => Err(Error::Config {
                key: "initial_state".into(),
                message: format!("unknown initial state `{s}`; expected singlet, synthesized or product"),
            }),
        }
    }
}

/// Lists a recipe iterates over. An empty list means "use the single base
/// value from the config".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub n: Vec<usize>,
    pub chi: Vec<f64>,
    pub rates: Vec<LossRates>,
    pub initial_states: Vec<InitialKind>,
    pub u_over_ej: Vec<f64>,
}

/// Fully resolved run description. Serialised verbatim into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub params: PhysicalParams,
    pub rates: LossRates,
    /// Detection time grid (tunnelling grid for `fig2`).
    pub grid: TimeGrid,
    pub initial_state: InitialKind,
    /// Interaction ratio used whenever a synthesized state is prepared.
    pub u_over_ej: f64,
    pub sweep: Sweep,
    pub output_dir: PathBuf,
    pub verify: bool,
}

/// Command-line values. Each one that is set pins its quantity: it
/// replaces the base value and clears the matching sweep list.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub omega_d: Option<f64>,
    pub gamma_o: Option<f64>,
    pub chi: Option<f64>,
    pub u_over_ej: Option<f64>,
    pub initial_state: Option<InitialKind>,
    pub output_dir: Option<PathBuf>,
    pub verify: bool,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: e.to_string(),
        })
    } else {
        toml::from_str::<Value>(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: e.message().to_string(),
        })
    }
}

/// Preset for `recipe` (or the file's `recipe` key), overlaid with the
/// file's values and then with `overrides`. Unknown keys are rejected with
/// their full path.
pub fn parse_config(recipe: Option<Recipe>, file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let file_value = match file {
        Some(p) => Some(read_config_file(p)?),
        None => None,
    };
    let file_recipe = match file_value.as_ref().and_then(|v| v.get("recipe")) {
        Some(Value::String(s)) => Some(s.parse::<Recipe>()?),
        Some(other) => {
            return Err(Error::Config {
                key: "recipe".into(),
                message: format!("expected a string, found {other}"),
            })
        }
        None => None,
    };
    let recipe = recipe.or(file_recipe).ok_or_else(|| Error::Config {
        key: "recipe".into(),
        message: "no recipe given".into(),
    })?;

    let mut value = serde_json::to_value(recipe.preset())?;
    if let Some(mut patch) = file_value {
        if let Value::Object(m) = &mut patch {
            m.insert("recipe".into(), Value::String(recipe.name().into()));
        }
        merge(&mut value, patch);
    }
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    apply_overrides(&mut config, overrides);
    validate_config(&config)?;
    Ok(config)
}

fn apply_overrides(c: &mut ExperimentConfig, o: &Overrides) {
    if let Some(n) = o.n {
        c.params.n = n;
        c.sweep.n.clear();
    }
    if let Some(w) = o.omega_d {
        let old = c.params.omega_d;
        c.params.omega_d = w;
        // Keep the time window covering the same phase range.
        if c.recipe.kind() == RecipeKind::Series && old != 0.0 && w != 0.0 {
            c.grid.t_start *= old / w;
            c.grid.t_end *= (old / w).abs();
        }
    }
    if let Some(g) = o.gamma_o {
        c.rates.gamma_o = g;
        c.sweep.rates.clear();
    }
    if let Some(chi) = o.chi {
        c.params.chi = chi;
        c.sweep.chi.clear();
    }
    if let Some(u) = o.u_over_ej {
        c.u_over_ej = u;
        c.sweep.u_over_ej.clear();
    }
    if let Some(s) = o.initial_state {
        c.initial_state = s;
        c.sweep.initial_states.clear();
    }
    if let Some(dir) = &o.output_dir {
        c.output_dir = dir.clone();
    }
    if o.verify {
        c.verify = true;
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Recipe-specific completeness checks, run before any computation.
pub fn validate_config(c: &ExperimentConfig) -> Result<()> {
    let check_n = |key: &str, n: usize| -> Result<()> {
        if n >= 2 && n.is_multiple_of(2) {
            Ok(())
        } else {
            Err(config_error(key, format!("atom number must be even and at least 2, got {n}")))
        }
    };
    check_n("params.n", c.params.n)?;
    for &n in &c.sweep.n {
        check_n("sweep.n", n)?;
    }
    c.params
        .validate()
        .map_err(|e| config_error("params", e.to_string()))?;
    c.grid.validate().map_err(|e| config_error("grid", e.to_string()))?;
    c.rates.validate().map_err(|e| config_error("rates", e.to_string()))?;
    for r in &c.sweep.rates {
        r.validate().map_err(|e| config_error("sweep.rates", e.to_string()))?;
    }
    for &chi in &c.sweep.chi {
        if !chi.is_finite() {
            return Err(config_error("sweep.chi", "values must be finite"));
        }
    }
    let uses_synthesis = c.recipe.kind() == RecipeKind::Synthesis
        || c.recipe.kind() == RecipeKind::FidelityTable
        || c.initial_state == InitialKind::Synthesized
        || c.sweep.initial_states.contains(&InitialKind::Synthesized);
    if uses_synthesis {
        for u in std::iter::once(c.u_over_ej).chain(c.sweep.u_over_ej.iter().copied()) {
            if !(u.is_finite() && u > 0.0) {
                return Err(config_error("u_over_ej", format!("must be positive, got {u}")));
            }
        }
    }
    match c.recipe.kind() {
        RecipeKind::Series | RecipeKind::UncertaintyTable => {
            if c.params.omega_d == 0.0 {
                return Err(config_error("params.omega_d", "the gradient coupling must be nonzero"));
            }
            if c.grid.t_start != 0.0 {
                return Err(config_error("grid.t_start", "detection starts at t = 0"));
            }
            if c.grid.samples < 3 {
                return Err(config_error("grid.samples", "uncertainty needs at least 3 samples"));
            }
        }
        RecipeKind::Synthesis => {
            if c.grid.t_start != 0.0 {
                return Err(config_error("grid.t_start", "tunnelling starts at t = 0"));
            }
        }
        RecipeKind::FidelityTable => {}
    }
    Ok(())
}

/// One oracle comparison.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationRecord {
    pub subject: String,
    pub check: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerificationRecord {
    fn new(subject: &str, check: &str, value: f64, tolerance: f64) -> Self {
        Self {
            subject: subject.into(),
            check: check.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

/// In-memory result of a run, before anything touches the disk.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    /// `(file name, CSV text)` in emission order.
    pub tables: Vec<(String, String)>,
    pub results: BTreeMap<String, Value>,
    pub diagnostics: BTreeMap<String, Diagnostics>,
    pub verification: Vec<VerificationRecord>,
}

/// Summary returned after the artifacts are on disk.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub verification: Vec<VerificationRecord>,
    pub wall_time: f64,
}

/// Fixed float formatting: 12 significant digits, shortest representation
/// of the rounded value, `inf` for unbounded values.
pub fn format_float(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x.is_nan() {
        return "nan".into();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0.0".into()
    } else {
        format!("{rounded:?}")
    }
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::InvalidState(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidState(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `t, estimator, variance, uncertainty` rows of a series.
pub fn series_csv(series: &EstimatorSeries) -> Result<String> {
    csv_text(
        &["t", "estimator", "variance", "uncertainty"],
        (0..series.len()).map(|k| {
            vec![
                format_float(series.times[k]),
                format_float(series.estimator[k]),
                format_float(series.variance(k).max(0.0)),
                format_float(series.uncertainty[k].value()),
            ]
        }),
    )
}

/// One curve of a series or table recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curve {
    pub initial: InitialKind,
    pub rates: LossRates,
    pub chi: f64,
}

/// Curves of `config`: the product of its initial-state, rate and `chi`
/// lists, each falling back to the base value.
pub fn curves(config: &ExperimentConfig) -> Vec<(String, Curve)> {
    let initials = if config.sweep.initial_states.is_empty() {
        vec![config.initial_state]
    } else {
        config.sweep.initial_states.clone()
    };
    let rates = if config.sweep.rates.is_empty() {
        vec![config.rates]
    } else {
        config.sweep.rates.clone()
    };
    let chis = if config.sweep.chi.is_empty() {
        vec![config.params.chi]
    } else {
        config.sweep.chi.clone()
    };
    let mut out = Vec::new();
    for &initial in &initials {
        for &r in &rates {
            for &chi in &chis {
                let mut parts = Vec::new();
                if initials.len() > 1 {
                    parts.push(format!("{initial:?}").to_lowercase());
                }
                if rates.len() > 1 {
                    parts.push(rates_label(&r));
                }
                if chis.len() > 1 {
                    parts.push(format!("chi_{}", format_float(chi)));
                }
                let label = if parts.is_empty() {
                    "series".to_string()
                } else {
                    parts.join("__")
                };
                out.push((
                    label,
                    Curve {
                        initial,
                        rates: r,
                        chi,
                    },
                ));
            }
        }
    }
    out
}

fn rates_label(r: &LossRates) -> String {
    let mut parts = Vec::new();
    for (name, v) in [
        ("gamma_o", r.gamma_o),
        ("gamma_t_ee", r.gamma_t_ee),
        ("gamma_t_eg", r.gamma_t_eg),
    ] {
        if v != 0.0 {
            parts.push(format!("{name}_{}", format_float(v)));
        }
    }
    if parts.is_empty() {
        "lossless".into()
    } else {
        parts.join("_")
    }
}

fn setup_for(config: &ExperimentConfig, n: usize, curve: &Curve) -> DetectionSetup {
    DetectionSetup {
        n,
        omega: config.params.omega,
        omega_d: config.params.omega_d,
        chi: curve.chi,
        rates: curve.rates,
    }
}

/// Compares the final state of `run` with the superoperator oracle when the
/// basis is small enough, and the final `<O>` with direct summation.
fn verify_detection(
    label: &str,
    setup: &DetectionSetup,
    initial: &InitialState,
    run: &DetectionRun,
    t: f64,
) -> Result<Vec<VerificationRecord>> {
    let pair = setup.well_pair()?;
    let dim = pair.joint().dim();
    if dim > MAX_ORACLE_DIM {
        return Ok(Vec::new());
    }
    let model = detection_model(setup, &pair)?;
    let rho0 = initial.prepare(setup.n, &pair)?;
    let exact = oracle::lindblad_exact(&model, &rho0, t)?;
    let diff = crate::fock::max_abs(&(exact.to_density() - run.final_state.to_density()));
    let ops = EstimatorOps::new(&pair.spins()?)?;
    let direct = oracle::expectation_direct(ops.estimator(), &exact)?.re;
    let last = *run.series.estimator.last().expect("series is non-empty");
    Ok(vec![
        VerificationRecord::new(label, "final_state_max_abs_diff", diff, VERIFY_TOLERANCE),
        VerificationRecord::new(label, "final_estimator_abs_diff", (direct - last).abs(), VERIFY_TOLERANCE),
    ])
}

fn diagnostics_invariants(label: &str, d: &Diagnostics) -> Vec<VerificationRecord> {
    vec![
        VerificationRecord::new(label, "trace_drift", d.max_trace_drift, 1e-8),
        VerificationRecord::new(label, "negative_eigenvalue", (-d.min_eigenvalue).max(0.0), 1e-6),
    ]
}

fn run_series(config: &ExperimentConfig) -> Result<RunOutput> {
    let curves = curves(config);
    let computed: Vec<Result<(String, DetectionRun, Vec<VerificationRecord>)>> = curves
        .par_iter()
        .map(|(label, curve)| {
            let setup = setup_for(config, config.params.n, curve);
            let initial = curve.initial.with_u(config.u_over_ej);
            let run = run_detection(&setup, &initial, &config.grid)?;
            let checks = if config.verify {
                verify_detection(label, &setup, &initial, &run, config.grid.t_end)?
            } else {
                Vec::new()
            };
            Ok((label.clone(), run, checks))
        })
        .collect();
    let mut out = RunOutput::default();
    let mut summary = Vec::new();
    for item in computed {
        let (label, run, checks) = item?;
        out.tables.push((format!("{label}.csv"), series_csv(&run.series)?));
        if let Some(d) = run.diagnostics {
            if config.verify {
                out.verification.extend(diagnostics_invariants(&label, &d));
            }
            out.diagnostics.insert(label.clone(), d);
        }
        out.verification.extend(checks);
        let s = &run.series;
        let e = &s.estimator;
        let (lo, hi) = e.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        summary.push(json!({
            "curve": label,
            "amplitude": (hi - lo) / 2.0,
            "zero_crossings": zero_crossings(&s.times, e),
        }));
    }
    out.results.insert("curves".into(), Value::Array(summary));
    Ok(out)
}

/// Times where the sampled series changes sign, linearly interpolated.
pub fn zero_crossings(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..values.len() {
        let (a, b) = (values[k - 1], values[k]);
        if a != 0.0 && (b == 0.0 || a.signum() != b.signum()) {
            out.push(times[k - 1] + (times[k] - times[k - 1]) * a / (a - b));
        }
    }
    out
}

/// `(n index, curve index, dphi, diagnostics, checks)`.
type TablePoint = (usize, usize, Uncertainty, Option<Diagnostics>, Vec<VerificationRecord>);

fn run_uncertainty_table(config: &ExperimentConfig) -> Result<RunOutput> {
    let curves = curves(config);
    let ns = if config.sweep.n.is_empty() {
        vec![config.params.n]
    } else {
        config.sweep.n.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..ns.len())
        .flat_map(|i| (0..curves.len()).map(move |j| (i, j)))
        .collect();
    let computed: Vec<Result<TablePoint>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (label, curve) = &curves[j];
            let setup = setup_for(config, ns[i], curve);
            let initial = curve.initial.with_u(config.u_over_ej);
            let (grid, k) = quarter_period_grid(&setup);
            let run = run_detection(&setup, &initial, &grid)?;
            let checks = if config.verify {
                verify_detection(&format!("{label}/n_{}", ns[i]), &setup, &initial, &run, grid.t_end)?
            } else {
                Vec::new()
            };
            Ok((i, j, run.series.uncertainty[k], run.diagnostics, checks))
        })
        .collect();

    let mut grid_values = vec![vec![Uncertainty::Unbounded; curves.len()]; ns.len()];
    let mut out = RunOutput::default();
    for item in computed {
        let (i, j, u, diag, checks) = item?;
        grid_values[i][j] = u;
        let key = format!("{}/n_{}", curves[j].0, ns[i]);
        if let Some(d) = diag {
            if config.verify {
                out.verification.extend(diagnostics_invariants(&key, &d));
            }
            out.diagnostics.insert(key, d);
        }
        out.verification.extend(checks);
    }
    let mut header: Vec<&str> = vec!["n"];
    header.extend(curves.iter().map(|(l, _)| l.as_str()));
    header.extend(["heisenberg_closed_form", "cramer_rao", "sql"]);
    let rows = ns.iter().enumerate().map(|(i, &n)| {
        let mut row = vec![n.to_string()];
        row.extend(grid_values[i].iter().map(|u| format_float(u.value())));
        row.push(format_float(heisenberg_uncertainty(n)));
        row.push(format_float(cramer_rao_bound(n)));
        row.push(format_float(sql_baseline(n)));
        row
    });
    out.tables.push(("uncertainty_vs_n.csv".into(), csv_text(&header, rows)?));
    Ok(out)
}

fn run_synthesis(config: &ExperimentConfig) -> Result<RunOutput> {
    let n = config.params.n;
    let params = synthesis_params(n, config.u_over_ej);
    let (state, report) = generate_entangled(&params, &config.grid)?;
    let (corrected, phase) = apply_phase_correction(&state, &params, &default_phase_grid(&params))?;
    let report = report.with_phase(&phase);
    let pair = crate::hamiltonian::WellPair::fixed(n / 2)?;
    let (_, weight) = corrected.project_onto(pair.joint())?;

    let mut out = RunOutput::default();
    out.tables.push((
        "population.csv".into(),
        csv_text(
            &["t", "imbalance_g"],
            report
                .population_series
                .iter()
                .map(|&(t, v)| vec![format_float(t), format_float(v)]),
        )?,
    ));
    out.tables.push((
        "fidelity.csv".into(),
        csv_text(
            &["t", "fidelity"],
            report
                .fidelity_series
                .iter()
                .map(|&(t, v)| vec![format_float(t), format_float(v)]),
        )?,
    ));
    out.results.insert(
        "synthesis".into(),
        json!({
            "t_star": report.t_star,
            "t_phase": report.t_phase,
            "fidelity_max": report.fidelity_max,
            "well_weight": weight,
        }),
    );
    if config.verify {
        out.verification.push(verify_t_star(&params, config, report.t_star)?);
    }
    Ok(out)
}

/// `t*` against an independent Taylor-propagation scan at ten times the
/// grid resolution.
fn verify_t_star(params: &PhysicalParams, config: &ExperimentConfig, t_star: f64) -> Result<VerificationRecord> {
    let basis = species_basis(params.n)?;
    let h = crate::hamiltonian::build_bose_hubbard(params, &basis)?;
    let half = (params.n / 2) as u32;
    let start = QuantumState::fock(basis.clone(), &[half, 0, 0, half])?;
    let spacing = config.grid.spacing();
    let window = (t_star + 2.0 * spacing).min(config.grid.t_end);
    let coarse = (window / spacing).ceil() as usize;
    let samples = 10 * coarse + 1;
    let fine = window / (samples - 1) as f64;
    let scanned = oracle::scan_first_crossing(&h, &start, &imbalance_operator(&basis), window, samples)?
        .ok_or(Error::NoZeroCrossing { t_end: window })?;
    Ok(VerificationRecord::new(
        "synthesis",
        "t_star_vs_dense_scan",
        (scanned - t_star).abs(),
        fine,
    ))
}

fn run_fidelity_table(config: &ExperimentConfig) -> Result<RunOutput> {
    let ns = if config.sweep.n.is_empty() {
        vec![config.params.n]
    } else {
        config.sweep.n.clone()
    };
    let us = if config.sweep.u_over_ej.is_empty() {
        vec![config.u_over_ej]
    } else {
        config.sweep.u_over_ej.clone()
    };
    let rows = fidelity_vs_n_sweep(&us, &ns)?;
    let mut out = RunOutput::default();
    out.tables.push((
        "fidelity_vs_n.csv".into(),
        csv_text(
            &["n", "u_over_ej", "t_star", "t_phase", "fidelity"],
            rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    format_float(r.u_over_ej),
                    format_float(r.t_star),
                    format_float(r.t_phase),
                    format_float(r.fidelity),
                ]
            }),
        )?,
    ));
    Ok(out)
}

/// Computes every artifact of `config` without writing anything.
pub fn compute(config: &ExperimentConfig) -> Result<RunOutput> {
    validate_config(config)?;
    match config.recipe.kind() {
        RecipeKind::Synthesis => run_synthesis(config),
        RecipeKind::FidelityTable => run_fidelity_table(config),
        RecipeKind::Series => run_series(config),
        RecipeKind::UncertaintyTable => run_uncertainty_table(config),
    }
}

/// Computes `config` and writes its CSVs and `manifest.json` (last). On
/// failure every file this call created is removed again.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let output = compute(config)?;
    let dir = &config.output_dir;
    let dir_existed = dir.exists();
    let mut written: Vec<PathBuf> = Vec::new();
    let result = write_outputs(config, &output, started, &mut written);
    match result {
        Ok(wall_time) => Ok(RunSummary {
            output_dir: dir.clone(),
            files: written,
            verification: output.verification,
            wall_time,
        }),
        Err(e) => {
            for f in &written {
                let _ = fs::remove_file(f);
            }
            if !dir_existed {
                let _ = fs::remove_dir(dir);
            }
            Err(e)
        }
    }
}

fn write_outputs(
    config: &ExperimentConfig,
    output: &RunOutput,
    started: Instant,
    written: &mut Vec<PathBuf>,
) -> Result<f64> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in &output.tables {
        let path = dir.join(name);
        written.push(path.clone());
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let wall_time = started.elapsed().as_secs_f64();
    let manifest = json!({
        "recipe": config.recipe,
        "description": config.recipe.description(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "outputs": output.tables.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "results": output.results,
        "diagnostics": output.diagnostics,
        "verification": if config.verify { serde_json::to_value(&output.verification)? } else { Value::Null },
        "wall_time_s": wall_time,
    });
    let path = dir.join("manifest.json");
    written.push(path.clone());
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(wall_time)
}

/// Serialised pure state: basis occupations plus `[re, im]` amplitudes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    pub modes: Vec<String>,
    pub occupations: Vec<Vec<u32>>,
    pub amplitudes: Vec<[f64; 2]>,
    #[serde(default)]
    pub metadata: Value,
}

pub const MODE_LABELS: [&str; 4] = ["e_L", "g_L", "e_R", "g_R"];

impl StateFile {
    pub fn from_state(state: &QuantumState, metadata: Value) -> Result<Self> {
        let amps = state
            .amplitudes()
            .ok_or_else(|| Error::InvalidState("only pure states are serialised".into()))?;
        Ok(Self {
            modes: MODE_LABELS.iter().map(|s| s.to_string()).collect(),
            occupations: state.basis().states().to_vec(),
            amplitudes: amps.iter().map(|z| [z.re, z.im]).collect(),
            metadata,
        })
    }

    /// Rebuilds the state on `basis`, matching occupations.
    pub fn to_state(&self, basis: &std::sync::Arc<crate::fock::FockBasis>) -> Result<QuantumState> {
        if self.occupations.len() != self.amplitudes.len() {
            return Err(Error::InvalidState("occupation and amplitude counts differ".into()));
        }
        let mut v = crate::CVector::zeros(basis.dim());
        for (occ, a) in self.occupations.iter().zip(&self.amplitudes) {
            let idx = basis
                .index_of(occ)
                .ok_or_else(|| Error::InvalidState(format!("occupation {occ:?} not in basis")))?;
            v[idx] = crate::C64::new(a[0], a[1]);
        }
        QuantumState::pure(basis.clone(), v)
    }
}

/// Runs the preparation pipeline and writes the detection-ready state.
pub fn write_synthesized_state(n: usize, u_over_ej: f64, path: &Path) -> Result<Synthesized> {
    let s = synthesize(n, u_over_ej)?;
    let meta = json!({
        "n": n,
        "u_over_ej": u_over_ej,
        "t_star": s.report.t_star,
        "t_phase": s.report.t_phase,
        "fidelity_max": s.report.fidelity_max,
        "well_weight": s.well_weight,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let file = StateFile::from_state(&s.well_state, meta)?;
    let text = serde_json::to_string_pretty(&file)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(-0.0), "0.0");
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(format_float(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_float(1e-7), "1e-7");
        assert_eq!(format_float(123_456_789.123_456_79), "123456789.123");
    }

    #[test]
    fn recipe_names_round_trip() {
        for r in Recipe::ALL {
            assert_eq!(r.name().parse::<Recipe>().unwrap(), r);
            validate_config(&r.preset()).unwrap();
        }
        assert!("fig12".parse::<Recipe>().is_err());
    }

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"params": {"n": 4, "omega": 1.0}, "verify": false});
        merge(&mut a, json!({"params": {"n": 8}}));
        assert_eq!(a, json!({"params": {"n": 8, "omega": 1.0}, "verify": false}));
    }

    #[test]
    fn curve_labels_follow_the_varying_quantity() {
        let c = Recipe::Fig6.preset();
        let labels: Vec<String> = curves(&c).into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels[0], "lossless");
        assert_eq!(labels[1], "gamma_o_0.0025");
        let c = Recipe::Fig4.preset();
        let labels: Vec<String> = curves(&c).into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["singlet", "synthesized"]);
        assert_eq!(curves(&Recipe::Custom.preset())[0].0, "series");
    }

    #[test]
    fn zero_crossings_interpolate() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [1.0, -1.0, -3.0, 1.0];
        let z = zero_crossings(&t, &v);
        assert_eq!(z, vec![0.5, 2.75]);
    }
}
