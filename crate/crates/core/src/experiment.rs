//! Sweep harness: run offloading schemes across a swept parameter and
//! repetitions, producing a tidy metric table, a manifest and diagnostics.
//!
//! Every cell (scheme × sweep value × repetition) is independent and runs on
//! a worker pool; output order is fixed by cell index, so results do not
//! depend on the number of workers.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consensus::{run_consensus, ChainCosts, ConsensusKind, FaultPlan, LatencyModel};
use crate::game::GameError;
use crate::offload::{self, LocalRv, MarketOptions, OffloadError, OffloadScheme};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::selection::Strategy;

/// Version of the CSV column layout; bumped on any change to columns or
/// metric names.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 8] = [
    "experiment",
    "scheme",
    "sweep_variable",
    "sweep_value",
    "repetition",
    "metric",
    "value",
    "status",
];

/// Metrics emitted for every cell, in output order.
pub const METRICS: [&str; 19] = [
    "epsilon_mean",
    "p_pa_mean",
    "p_rsu_mean",
    "u_rv_mean",
    "u_rv_total",
    "u_pv_total",
    "u_pv_avg",
    "u_rsu_total",
    "u_rsu_avg",
    "consensus_energy_pv_j",
    "consensus_energy_rsu_j",
    "committee_size",
    "computing_pvs",
    "n_rsu",
    "n_rv",
    "solved",
    "infeasible",
    "converged_frac",
    "deadline_met_frac",
];

/// Experiment specs shipped with the crate, by name.
pub const SHIPPED_SPECS: [(&str, &str); 10] = [
    ("fig3a", include_str!("../assets/experiments/fig3a.toml")),
    ("fig3b", include_str!("../assets/experiments/fig3b.toml")),
    ("fig4", include_str!("../assets/experiments/fig4.toml")),
    ("fig5a", include_str!("../assets/experiments/fig5a.toml")),
    ("fig5b", include_str!("../assets/experiments/fig5b.toml")),
    ("fig5c", include_str!("../assets/experiments/fig5c.toml")),
    ("fig6a", include_str!("../assets/experiments/fig6a.toml")),
    ("fig6b", include_str!("../assets/experiments/fig6b.toml")),
    ("fig7", include_str!("../assets/experiments/fig7.toml")),
    ("smoke", include_str!("../assets/experiments/smoke.toml")),
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot parse experiment spec: {0}")]
    Parse(String),
    #[error("invalid experiment spec: {0}")]
    Invalid(String),
    #[error("unknown shipped experiment '{0}'")]
    UnknownShipped(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// RV→PV rate override, MB/s.
    RatePa,
    /// RV→RSU rate override, MB/s.
    RateRsu,
    NRv,
    NPv,
    NRsu,
    /// PV committee size.
    NConsensus,
    /// PV price for `fixed_price` schemes.
    PricePa,
    /// RSU price for `fixed_price` schemes.
    PriceRsu,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::RatePa => "rate_pa",
            SweepVariable::RateRsu => "rate_rsu",
            SweepVariable::NRv => "n_rv",
            SweepVariable::NPv => "n_pv",
            SweepVariable::NRsu => "n_rsu",
            SweepVariable::NConsensus => "n_consensus",
            SweepVariable::PricePa => "price_pa",
            SweepVariable::PriceRsu => "price_rsu",
        }
    }

    fn is_count(&self) -> bool {
        matches!(
            self,
            SweepVariable::NRv
                | SweepVariable::NPv
                | SweepVariable::NRsu
                | SweepVariable::NConsensus
        )
    }

    fn is_price(&self) -> bool {
        matches!(self, SweepVariable::PricePa | SweepVariable::PriceRsu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Bpvec,
    RsuAndLocal,
    RsuOnly,
    PvOnly,
    LocalOnly,
    FixedPrice,
}

/// One compared series: an offloading scheme plus the committee selection
/// strategy and consensus protocol it runs under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub consensus: ConsensusKind,
    /// Fixed PV price (`fixed_price` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_pa: Option<f64>,
    /// Fixed RSU price (`fixed_price` only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_rsu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            strategy: Strategy::Cds,
            consensus: ConsensusKind::Hotstuff,
            p_pa: None,
            p_rsu: None,
            label: None,
        }
    }

    /// Series label: the explicit label, or the scheme kind with any
    /// non-default strategy or consensus appended.
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let mut s = match self.kind {
            SchemeKind::FixedPrice => format!(
                "fixed_price(p_pa={},p_rsu={})",
                fmt_opt(self.p_pa),
                fmt_opt(self.p_rsu)
            ),
            k => serde_json::to_value(k)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        };
        if self.strategy != Strategy::Cds {
            s.push('+');
            s.push_str(self.strategy.name());
        }
        if self.consensus != ConsensusKind::Hotstuff {
            s.push('+');
            s.push_str(self.consensus.name());
        }
        s
    }

    fn offload(&self, sweep: SweepVariable, value: f64) -> OffloadScheme {
        match self.kind {
            SchemeKind::Bpvec => OffloadScheme::Bpvec,
            SchemeKind::RsuAndLocal => OffloadScheme::RsuAndLocal,
            SchemeKind::RsuOnly => OffloadScheme::RsuOnly,
            SchemeKind::PvOnly => OffloadScheme::PvOnly,
            SchemeKind::LocalOnly => OffloadScheme::LocalOnly,
            SchemeKind::FixedPrice => {
                let mut p_pa = self.p_pa.unwrap_or(f64::NAN);
                let mut p_rsu = self.p_rsu.unwrap_or(f64::NAN);
                match sweep {
                    SweepVariable::PricePa => p_pa = value,
                    SweepVariable::PriceRsu => p_rsu = value,
                    _ => {}
                }
                OffloadScheme::FixedPrice { p_pa, p_rsu }
            }
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "swept".into())
}

/// Where each repetition's entities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    /// Draw a fresh nested population per repetition from the scenario's
    /// generation ranges; sizes default to the scenario's entity counts.
    #[default]
    Resample,
    /// Use the scenario's entities as listed (count sweeps take prefixes).
    Scenario,
}

/// Population sizes overriding the scenario's counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PopulationSizes {
    pub pvs: Option<usize>,
    pub rsus: Option<usize>,
    pub rvs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub sweep_variable: SweepVariable,
    pub sweep_values: Vec<f64>,
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub population_source: PopulationSource,
    #[serde(default)]
    pub population: PopulationSizes,
    /// Consensus rounds simulated per cell when traces are requested.
    #[serde(default = "one")]
    pub trace_rounds: u32,
    pub schemes: Vec<SchemeSpec>,
}

fn one() -> u32 {
    1
}

impl ExperimentSpec {
    /// Structural checks that need no scenario.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(invalid("name must be non-empty [A-Za-z0-9_-]"));
        }
        if self.sweep_values.is_empty() {
            return Err(invalid("sweep_values must be non-empty"));
        }
        if self.sweep_values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep_values must be finite"));
        }
        let inc = self.sweep_values.windows(2).all(|w| w[1] > w[0]);
        let dec = self.sweep_values.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(invalid("sweep_values must be strictly monotone"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if self.trace_rounds == 0 {
            return Err(invalid("trace_rounds must be at least 1"));
        }
        let var = self.sweep_variable;
        for &v in &self.sweep_values {
            if var.is_count() && !(v >= 1.0 && v.fract() == 0.0) {
                return Err(invalid(format!(
                    "{} values must be positive integers, got {v}",
                    var.name()
                )));
            }
            if matches!(var, SweepVariable::RatePa | SweepVariable::RateRsu) && v <= 0.0 {
                return Err(invalid(format!("{} values must be positive", var.name())));
            }
            if var.is_price() && v < 0.0 {
                return Err(invalid(format!(
                    "{} values must be non-negative",
                    var.name()
                )));
            }
        }
        if self.schemes.is_empty() {
            return Err(invalid("at least one scheme is required"));
        }
        let mut labels = BTreeSet::new();
        for s in &self.schemes {
            if !labels.insert(s.label()) {
                return Err(invalid(format!("duplicate scheme label '{}'", s.label())));
            }
            match s.kind {
                SchemeKind::FixedPrice => {
                    let need_pa = var != SweepVariable::PricePa;
                    let need_rsu = var != SweepVariable::PriceRsu;
                    for (need, p, n) in [(need_pa, s.p_pa, "p_pa"), (need_rsu, s.p_rsu, "p_rsu")] {
                        match p {
                            Some(x) if !(x >= 0.0 && x.is_finite()) => {
                                return Err(invalid(format!("{n} must be non-negative")));
                            }
                            None if need => {
                                return Err(invalid(format!(
                                    "fixed_price scheme '{}' needs {n}",
                                    s.label()
                                )));
                            }
                            _ => {}
                        }
                    }
                }
                _ => {
                    if var.is_price() {
                        return Err(invalid(format!(
                            "{} sweeps only apply to fixed_price schemes",
                            var.name()
                        )));
                    }
                    if s.p_pa.is_some() || s.p_rsu.is_some() {
                        return Err(invalid("p_pa/p_rsu are only valid for fixed_price"));
                    }
                }
            }
        }
        for (n, v) in [
            ("population.pvs", self.population.pvs),
            ("population.rsus", self.population.rsus),
            ("population.rvs", self.population.rvs),
        ] {
            if v == Some(0) {
                return Err(invalid(format!("{n} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Checks against the scenario the spec will run on.
    pub fn validate_against(&self, cfg: &ScenarioConfig) -> Result<(), ExperimentError> {
        self.validate()?;
        cfg.validate()?;
        if self.population_source == PopulationSource::Scenario {
            let avail = |var: SweepVariable| match var {
                SweepVariable::NPv => Some(cfg.pvs.len()),
                SweepVariable::NRsu => Some(cfg.rsus.len()),
                SweepVariable::NRv => Some(cfg.rvs.len()),
                _ => None,
            };
            if let Some(n) = avail(self.sweep_variable) {
                let max = self.sweep_values.iter().cloned().fold(0.0, f64::max) as usize;
                if max > n {
                    return Err(invalid(format!(
                        "{} sweeps up to {max} but the scenario lists {n}",
                        self.sweep_variable.name()
                    )));
                }
            }
            if self.population != PopulationSizes::default() {
                return Err(invalid(
                    "population sizes cannot be overridden with population_source = \"scenario\"",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn parse_spec(text: &str) -> Result<ExperimentSpec, ExperimentError> {
    let spec: ExperimentSpec =
        toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec, ExperimentError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_spec(&text)
}

pub fn shipped_spec(name: &str) -> Result<ExperimentSpec, ExperimentError> {
    SHIPPED_SPECS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ExperimentError::UnknownShipped(name.to_owned()))
        .and_then(|(_, text)| parse_spec(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Every RV solved.
    Ok,
    /// Some RVs had no feasible split; means cover the rest.
    Partial,
    /// No RV had a feasible split; metrics other than counts are 0.
    Infeasible,
    /// The market could not be built; all metrics are 0.
    Error,
}

impl CellStatus {
    pub fn name(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Partial => "partial",
            CellStatus::Infeasible => "infeasible",
            CellStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub scheme: String,
    pub sweep_variable: &'static str,
    pub sweep_value: f64,
    pub repetition: u32,
    pub metric: &'static str,
    pub value: f64,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentTable {
    pub rows: Vec<Row>,
}

impl ExperimentTable {
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| ExperimentError::Csv(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| ExperimentError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// `(sweep_value, mean over repetitions)` of one metric for one series,
    /// in sweep order. Error cells are skipped.
    pub fn series(&self, scheme: &str, metric: &str) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64, usize)> = Vec::new();
        for r in self
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && r.metric == metric && r.status != "error")
        {
            match out.last_mut() {
                Some(last) if last.0 == r.sweep_value => {
                    last.1 += r.value;
                    last.2 += 1;
                }
                _ => out.push((r.sweep_value, r.value, 1)),
            }
        }
        out.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect()
    }

    pub fn schemes(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.scheme) {
                seen.push(r.scheme.clone());
            }
        }
        seen
    }
}

/// Per-cell notes that do not fit the tidy table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellDiagnostics {
    pub scheme: String,
    pub sweep_value: f64,
    pub repetition: u32,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub committee: Vec<u32>,
    pub infeasible_rvs: Vec<u32>,
    pub unconverged_rvs: Vec<u32>,
    pub deadline_missed_rvs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub software: String,
    pub version: String,
    pub csv_schema_version: u32,
    pub spec_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub sweep_variable: &'static str,
    pub sweep_values: Vec<f64>,
    pub repetitions: u32,
    pub schemes: Vec<String>,
    pub cells: usize,
    pub rows: usize,
    pub status_counts: StatusCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct StatusCounts {
    pub ok: usize,
    pub partial: usize,
    pub infeasible: usize,
    pub error: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub table: ExperimentTable,
    pub manifest: Manifest,
    pub diagnostics: Vec<CellDiagnostics>,
    /// `(file name, JSON lines)` per cell when traces were requested.
    pub traces: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    /// Overrides the spec's seed.
    pub seed: Option<u64>,
    pub traces: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 0,
            seed: None,
            traces: false,
        }
    }
}

struct CellOutput {
    values: [f64; METRICS.len()],
    diag: CellDiagnostics,
    trace: Option<String>,
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Population seed of a repetition. Shared by every scheme and sweep value
/// so that series are compared on the same draws.
pub fn repetition_seed(seed: u64, repetition: u32) -> u64 {
    mix(seed ^ mix(repetition as u64 + 1))
}

/// The scenario one cell runs on.
pub fn cell_config(
    spec: &ExperimentSpec,
    base: &ScenarioConfig,
    value: f64,
    pop_seed: u64,
) -> ScenarioConfig {
    let mut cfg = base.clone();
    let count = |var: SweepVariable, default: usize| {
        if spec.sweep_variable == var {
            value as usize
        } else {
            default
        }
    };
    match spec.population_source {
        PopulationSource::Resample => {
            let n_pv = count(
                SweepVariable::NPv,
                spec.population.pvs.unwrap_or(base.pvs.len()),
            );
            let n_rsu = count(
                SweepVariable::NRsu,
                spec.population.rsus.unwrap_or(base.rsus.len()),
            );
            let n_rv = count(
                SweepVariable::NRv,
                spec.population.rvs.unwrap_or(base.rvs.len()),
            );
            let pop = crate::scenario::synthesize_population(
                &base.generation,
                pop_seed,
                n_pv,
                n_rsu,
                n_rv,
            );
            cfg.pvs = pop.pvs;
            cfg.rsus = pop.rsus;
            cfg.rvs = pop.rvs;
            cfg.rng_seed = pop_seed;
        }
        PopulationSource::Scenario => {
            cfg.pvs.truncate(count(SweepVariable::NPv, base.pvs.len()));
            cfg.rsus
                .truncate(count(SweepVariable::NRsu, base.rsus.len()));
            cfg.rvs.truncate(count(SweepVariable::NRv, base.rvs.len()));
        }
    }
    cfg
}

fn run_cell(
    spec: &ExperimentSpec,
    base: &ScenarioConfig,
    scheme: &SchemeSpec,
    value: f64,
    repetition: u32,
    seed: u64,
    traces: bool,
) -> CellOutput {
    let pop_seed = repetition_seed(seed, repetition);
    let cfg = cell_config(spec, base, value, pop_seed);
    let var = spec.sweep_variable;
    let opts = MarketOptions {
        strategy: scheme.strategy,
        committee_size: (var == SweepVariable::NConsensus).then_some(value as usize),
        consensus: scheme.consensus,
        rate_pv: (var == SweepVariable::RatePa).then_some(value),
        rate_rsu: (var == SweepVariable::RateRsu).then_some(value),
        selection_seed: mix(pop_seed ^ 0x5e1e_c7),
    };
    let mut diag = CellDiagnostics {
        scheme: scheme.label(),
        sweep_value: value,
        repetition,
        status: CellStatus::Ok,
        error: None,
        committee: Vec::new(),
        infeasible_rvs: Vec::new(),
        unconverged_rvs: Vec::new(),
        deadline_missed_rvs: Vec::new(),
    };
    let fail = |mut diag: CellDiagnostics, e: String| {
        diag.status = CellStatus::Error;
        diag.error = Some(e);
        CellOutput {
            values: [0.0; METRICS.len()],
            diag,
            trace: None,
        }
    };
    let market = match offload::build_market(&cfg, &opts) {
        Ok(m) => m,
        Err(e) => return fail(diag, e.to_string()),
    };
    diag.committee = market.committee.members.clone();
    let local = LocalRv::from_config(&cfg);
    let off = scheme.offload(var, value);

    let mut sum = [0.0f64; 8]; // eps, p_pa, p_rsu, u_rv, u_pv, u_rsu, converged, deadline
    let mut solved = 0usize;
    for inst in &market.instances {
        match offload::evaluate_scheme(off, inst, &local, &cfg.game) {
            Ok(o) => {
                solved += 1;
                sum[0] += o.epsilon;
                sum[1] += o.p_pa;
                sum[2] += o.p_rsu;
                sum[3] += o.u_rv;
                sum[4] += o.u_pv;
                sum[5] += o.u_rsu;
                if o.converged {
                    sum[6] += 1.0;
                } else {
                    diag.unconverged_rvs.push(inst.rv_id);
                }
                if o.deadline_met {
                    sum[7] += 1.0;
                } else {
                    diag.deadline_missed_rvs.push(inst.rv_id);
                }
            }
            Err(GameError::Infeasible { .. }) => diag.infeasible_rvs.push(inst.rv_id),
            Err(e) => return fail(diag, OffloadError::from(e).to_string()),
        }
    }
    let n_rv = market.instances.len();
    diag.status = match (solved, n_rv) {
        (s, n) if s == n => CellStatus::Ok,
        (0, _) => CellStatus::Infeasible,
        _ => CellStatus::Partial,
    };
    let n_pv = market.computing_pvs.len() as f64;
    let n_rsu = cfg.rsus.len() as f64;
    let mean = |x: f64| if solved > 0 { x / solved as f64 } else { 0.0 };
    let values = [
        mean(sum[0]),
        mean(sum[1]),
        mean(sum[2]),
        mean(sum[3]),
        sum[3],
        sum[4],
        sum[4] / n_pv,
        sum[5],
        sum[5] / n_rsu,
        market.pv_chain.for_txs(n_rv),
        market.rsu_chain.for_txs(n_rv),
        market.committee.len() as f64,
        n_pv,
        n_rsu,
        n_rv as f64,
        solved as f64,
        diag.infeasible_rvs.len() as f64,
        mean(sum[6]),
        mean(sum[7]),
    ];

    let trace = if traces {
        let chain = ChainCosts::vehicle(&cfg.costs);
        match run_consensus(
            &market.pv_committee,
            &chain,
            &cfg.channel,
            &FaultPlan::none(),
            LatencyModel::default(),
            spec.trace_rounds as u64,
            pop_seed,
        ) {
            Ok(run) => Some(run.to_jsonl()),
            Err(e) => {
                diag.error = Some(format!("trace: {e}"));
                None
            }
        }
    } else {
        None
    };
    CellOutput {
        values,
        diag,
        trace,
    }
}

/// Run every cell of `spec` on `cfg`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    opts: &RunOptions,
) -> Result<ExperimentRun, ExperimentError> {
    spec.validate_against(cfg)?;
    let seed = opts.seed.unwrap_or(spec.seed);
    let cells: Vec<(usize, usize, u32)> = (0..spec.schemes.len())
        .flat_map(|s| {
            (0..spec.sweep_values.len())
                .flat_map(move |v| (0..spec.repetitions).map(move |r| (s, v, r)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let outputs: Vec<CellOutput> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(s, v, r)| {
                run_cell(
                    spec,
                    cfg,
                    &spec.schemes[s],
                    spec.sweep_values[v],
                    r,
                    seed,
                    opts.traces,
                )
            })
            .collect()
    });

    let var = spec.sweep_variable.name();
    let mut table = ExperimentTable::default();
    let mut diagnostics = Vec::with_capacity(outputs.len());
    let mut traces = Vec::new();
    let mut counts = StatusCounts::default();
    for (&(s, v, r), out) in cells.iter().zip(outputs) {
        let label = spec.schemes[s].label();
        let status = out.diag.status;
        match status {
            CellStatus::Ok => counts.ok += 1,
            CellStatus::Partial => counts.partial += 1,
            CellStatus::Infeasible => counts.infeasible += 1,
            CellStatus::Error => counts.error += 1,
        }
        for (metric, value) in METRICS.iter().zip(out.values) {
            table.rows.push(Row {
                experiment: spec.name.clone(),
                scheme: label.clone(),
                sweep_variable: var,
                sweep_value: spec.sweep_values[v],
                repetition: r,
                metric,
                value,
                status: status.name(),
            });
        }
        if let Some(t) = out.trace {
            traces.push((format!("{}_s{s}_v{v}_r{r}.jsonl", spec.name), t));
        }
        diagnostics.push(out.diag);
    }
    let manifest = Manifest {
        experiment: spec.name.clone(),
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        csv_schema_version: CSV_SCHEMA_VERSION,
        spec_hash: spec.hash(),
        config_hash: cfg.config_hash(),
        seed,
        sweep_variable: var,
        sweep_values: spec.sweep_values.clone(),
        repetitions: spec.repetitions,
        schemes: spec.schemes.iter().map(SchemeSpec::label).collect(),
        cells: cells.len(),
        rows: table.rows.len(),
        status_counts: counts,
    };
    Ok(ExperimentRun {
        table,
        manifest,
        diagnostics,
        traces,
    })
}

/// Write `<name>.csv`, `manifest.json`, `<name>.diagnostics.json` and any
/// traces (under `traces/`) into `dir`, creating it if needed.
pub fn write_outputs(run: &ExperimentRun, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let name = &run.manifest.experiment;
    let write = |p: &Path, s: &str| std::fs::write(p, s).map_err(io(p));
    write(&dir.join(format!("{name}.csv")), &run.table.to_csv()?)?;
    let manifest = serde_json::to_string_pretty(&run.manifest).expect("manifest serializes");
    write(&dir.join("manifest.json"), &(manifest + "\n"))?;
    let diag = serde_json::to_string_pretty(&run.diagnostics).expect("diagnostics serialize");
    write(
        &dir.join(format!("{name}.diagnostics.json")),
        &(diag + "\n"),
    )?;
    if !run.traces.is_empty() {
        let tdir = dir.join("traces");
        std::fs::create_dir_all(&tdir).map_err(io(&tdir))?;
        for (file, body) in &run.traces {
            write(&tdir.join(file), body)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;

    fn spec(text: &str) -> ExperimentSpec {
        parse_spec(text).unwrap()
    }

    const ONE: &str = r#"
name = "one"
sweep_variable = "n_rv"
sweep_values = [3]
[[schemes]]
kind = "bpvec"
[[schemes]]
kind = "pv_only"
"#;

    #[test]
    fn single_value_single_repetition_counts_rows() {
        let s = spec(ONE);
        let run = run_experiment(&s, &default_scenario(), &RunOptions::default()).unwrap();
        assert_eq!(run.manifest.cells, 2);
        assert_eq!(run.table.rows.len(), 2 * METRICS.len());
        assert!(run.table.rows.iter().all(|r| r.value.is_finite()));
        let csv = run.table.to_csv().unwrap();
        assert!(csv.starts_with(&CSV_COLUMNS.join(",")));
    }

    #[test]
    fn output_is_independent_of_worker_count() {
        let s = spec(ONE);
        let cfg = default_scenario();
        let a = run_experiment(
            &s,
            &cfg,
            &RunOptions {
                workers: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = run_experiment(
            &s,
            &cfg,
            &RunOptions {
                workers: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.table.to_csv().unwrap(), b.table.to_csv().unwrap());
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            ONE.replace("[3]", "[]"),
            ONE.replace("[3]", "[3, 3]"),
            ONE.replace("[3]", "[3, 5, 4]"),
            ONE.replace("[3]", "[2.5]"),
            ONE.replace("sweep_values", "repetitions = 0\nsweep_values"),
            ONE.replace("\"pv_only\"", "\"bpvec\""),
            ONE.replace("\"n_rv\"", "\"price_pa\""),
            ONE.replace("kind = \"pv_only\"", "kind = \"fixed_price\""),
            ONE.replace("name = \"one\"", "name = \"a b\""),
        ];
        for text in bad {
            assert!(parse_spec(&text).is_err(), "{text}");
        }
        assert!(matches!(
            parse_spec("name = 1"),
            Err(ExperimentError::Parse(_))
        ));
    }

    #[test]
    fn shipped_specs_parse() {
        for (name, _) in SHIPPED_SPECS {
            let s = shipped_spec(name).unwrap();
            assert_eq!(s.name, name);
            s.validate_against(&default_scenario()).unwrap();
        }
        assert!(shipped_spec("nope").is_err());
    }

    #[test]
    fn scenario_population_source_takes_prefixes() {
        let mut s = spec(ONE);
        s.population_source = PopulationSource::Scenario;
        let cfg = default_scenario();
        let c = cell_config(&s, &cfg, 3.0, 0);
        assert_eq!(c.rvs, cfg.rvs[..3].to_vec());
        assert_eq!(c.pvs, cfg.pvs);
        s.sweep_values = vec![cfg.rvs.len() as f64 + 1.0];
        assert!(s.validate_against(&cfg).is_err());
    }

    #[test]
    fn fixed_price_sweeps_override_the_swept_price() {
        let s = spec(
            r#"
name = "fp"
sweep_variable = "price_pa"
sweep_values = [0.5, 1.0]
[[schemes]]
kind = "fixed_price"
p_rsu = 0.5
"#,
        );
        let off = s.schemes[0].offload(s.sweep_variable, 1.0);
        assert_eq!(
            off,
            OffloadScheme::FixedPrice {
                p_pa: 1.0,
                p_rsu: 0.5
            }
        );
        assert_eq!(s.schemes[0].label(), "fixed_price(p_pa=swept,p_rsu=0.5)");
    }
}
