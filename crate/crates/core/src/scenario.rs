//! Scenario configuration: entities, physical and economic constants, and
//! the TOML file format used to load and save them.
//!
//! Unit conventions: MB = 2^20 bytes, KB = 2^10 bytes, GB = 2^30 bytes. Task
//! and block sizes are held internally in bits; the file expresses them in
//! MB/KB so every conversion is an exact power-of-two scaling. Frequencies
//! are in Hz and durations in seconds both in memory and on disk.
//!
//! Values left out of the file fall back to the default constants; entity
//! attributes left out are drawn from the `[generation]` ranges with a
//! per-entity random stream derived from `rng_seed`.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::GameSolverParams;
use crate::parking::{GammaArgMode, HourMixture, ParkingMixtureTable};
use crate::selection::{SelectionParams, Strategy};

pub const BYTE_BITS: f64 = 8.0;
pub const KB_BITS: f64 = 8.0 * 1024.0;
pub const MB_BITS: f64 = 8.0 * 1024.0 * 1024.0;
pub const GB_BITS: f64 = 8.0 * 1024.0 * 1024.0 * 1024.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field} {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.1 > self.0 {
            rng.random_range(self.0..=self.1)
        } else {
            self.0
        }
    }

    fn check(&self, field: &str) -> Result<(), ScenarioError> {
        if self.0.is_finite() && self.1.is_finite() && self.0 <= self.1 {
            Ok(())
        } else {
            Err(invalid(field, "must be a finite [min, max] range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: Span,
    pub y: Span,
}

impl Rect {
    fn sample(&self, rng: &mut impl Rng) -> Point {
        Point::new(self.x.sample(rng), self.y.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// W_b: MB/s per log2-unit of SNR.
    pub bandwidth_mb: f64,
    pub tx_power_w: f64,
    pub transceiver_eta: f64,
    pub ref_distance_m: f64,
    pub noise_w: f64,
    pub pathloss_delta: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_mb: 15.0,
            tx_power_w: 0.281_838_15,
            transceiver_eta: 1.637_26e-9,
            ref_distance_m: 100.0,
            noise_w: 1.2589e-13,
            pathloss_delta: 2.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("channel.bandwidth_mb", self.bandwidth_mb),
            ("channel.tx_power_w", self.tx_power_w),
            ("channel.transceiver_eta", self.transceiver_eta),
            ("channel.ref_distance_m", self.ref_distance_m),
            ("channel.noise_w", self.noise_w),
            ("channel.pathloss_delta", self.pathloss_delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.pathloss_delta < 1.0 {
            return Err(invalid("channel.pathloss_delta", "must be at least 1"));
        }
        Ok(())
    }
}

/// Cryptographic cycle costs, block geometry and energy prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusCostParams {
    pub sig_cycles_beta: f64,
    pub mac_cycles_theta: f64,
    /// D_Bv in bits.
    pub block_size_bits: f64,
    /// D_Br in bits (RSU main chain).
    pub rsu_block_size_bits: f64,
    /// ϖ in bits.
    pub tx_size_bits: f64,
    pub kappa_v: f64,
    pub kappa_r: f64,
    pub xi_v: f64,
    pub xi_r: f64,
    pub vote_size_bits: f64,
}

impl Default for ConsensusCostParams {
    fn default() -> Self {
        CostsFile::default().into_params()
    }
}

impl ConsensusCostParams {
    /// Transactions per vehicle block, D_Bv/ϖ rounded to an integer.
    pub fn tx_per_block(&self) -> u64 {
        (self.block_size_bits / self.tx_size_bits).round() as u64
    }

    /// Transactions per RSU block, D_Br/ϖ rounded to an integer.
    pub fn rsu_tx_per_block(&self) -> u64 {
        (self.rsu_block_size_bits / self.tx_size_bits).round() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("costs.sig_cycles_beta", self.sig_cycles_beta),
            ("costs.mac_cycles_theta", self.mac_cycles_theta),
            ("costs.tx_size_kb", self.tx_size_bits),
            ("costs.kappa_v", self.kappa_v),
            ("costs.kappa_r", self.kappa_r),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        for (name, v) in [
            ("costs.xi_v", self.xi_v),
            ("costs.xi_r", self.xi_r),
            ("costs.vote_size_bytes", self.vote_size_bits),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if !(self.block_size_bits >= self.tx_size_bits) {
            return Err(invalid(
                "costs.block_size_mb",
                "must be at least the transaction size",
            ));
        }
        if !(self.rsu_block_size_bits >= self.tx_size_bits) {
            return Err(invalid(
                "costs.rsu_block_size_mb",
                "must be at least the transaction size",
            ));
        }
        if self.tx_per_block() == 0 || self.rsu_tx_per_block() == 0 {
            return Err(invalid(
                "costs.block_size_mb",
                "yields zero transactions per block",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParkedVehicle {
    pub id: u32,
    pub position: Point,
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
    pub parked_since_s: f64,
    pub arrival_hour: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rsu {
    pub id: u32,
    pub position: Point,
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestingVehicle {
    pub id: u32,
    pub position: Point,
    pub task_size_bits: f64,
    pub max_tolerance_s: f64,
    pub alpha: f64,
}

/// RV on-board computing, used only by the local-execution baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalComputeParams {
    pub cpu_freq_hz: f64,
    pub cycles_per_bit: f64,
}

impl Default for LocalComputeParams {
    fn default() -> Self {
        Self {
            cpu_freq_hz: 0.8e9,
            cycles_per_bit: 24.0,
        }
    }
}

/// Ranges from which absent entity attributes and synthetic populations are
/// drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub task_size_mb: Span,
    pub max_tolerance_s: Span,
    pub alpha: f64,
    pub pv_cpu_hz: Span,
    pub rsu_cpu_hz: Span,
    pub cycles_per_bit: f64,
    pub parked_since_s: Span,
    pub pv_area: Rect,
    pub rsu_area: Rect,
    pub rv_area: Rect,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            task_size_mb: Span(10.0, 30.0),
            max_tolerance_s: Span(0.1, 0.2),
            alpha: 1.0,
            pv_cpu_hz: Span(1.0e9, 2.5e9),
            rsu_cpu_hz: Span(4.0e9, 6.0e9),
            cycles_per_bit: 24.0,
            parked_since_s: Span(0.0, 6.0 * 3600.0),
            pv_area: Rect {
                x: Span(0.0, 400.0),
                y: Span(30.0, 230.0),
            },
            rsu_area: Rect {
                x: Span(0.0, 400.0),
                y: Span(-30.0, -20.0),
            },
            rv_area: Rect {
                x: Span(0.0, 400.0),
                y: Span(-10.0, 10.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Pv = 1,
    Rsu = 2,
    Rv = 3,
}

/// Independent random stream for entity `index` of `kind`. Streams are
/// nested: growing a population keeps the attributes of existing members.
pub fn entity_rng(seed: u64, kind: EntityKind, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 40) | index as u64);
    rng
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.task_size_mb.check("generation.task_size_mb")?;
        self.max_tolerance_s.check("generation.max_tolerance_s")?;
        self.pv_cpu_hz.check("generation.pv_cpu_hz")?;
        self.rsu_cpu_hz.check("generation.rsu_cpu_hz")?;
        self.parked_since_s.check("generation.parked_since_s")?;
        for (name, r) in [
            ("generation.pv_area", self.pv_area),
            ("generation.rsu_area", self.rsu_area),
            ("generation.rv_area", self.rv_area),
        ] {
            r.x.check(name)?;
            r.y.check(name)?;
        }
        if !(self.task_size_mb.0 > 0.0) {
            return Err(invalid("generation.task_size_mb", "must be positive"));
        }
        if !(self.max_tolerance_s.0 > 0.0) {
            return Err(invalid("generation.max_tolerance_s", "must be positive"));
        }
        if !(self.pv_cpu_hz.0 > 0.0 && self.rsu_cpu_hz.0 > 0.0) {
            return Err(invalid("generation.pv_cpu_hz", "must be positive"));
        }
        if !(self.parked_since_s.0 >= 0.0) {
            return Err(invalid("generation.parked_since_s", "must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.cycles_per_bit > 0.0) {
            return Err(invalid(
                "generation.alpha",
                "alpha and cycles_per_bit must be positive",
            ));
        }
        Ok(())
    }

    pub fn sample_pv(&self, seed: u64, index: usize, id: u32) -> ParkedVehicle {
        let mut rng = entity_rng(seed, EntityKind::Pv, index);
        let position = self.pv_area.sample(&mut rng);
        let cpu_freq_hz = self.pv_cpu_hz.sample(&mut rng);
        let parked_since_s = self.parked_since_s.sample(&mut rng);
        let arrival_hour = rng.random_range(0..24u8);
        ParkedVehicle {
            id,
            position,
            cpu_freq_hz,
            cycles_per_bit: self.cycles_per_bit,
            parked_since_s,
            arrival_hour,
        }
    }

    pub fn sample_rsu(&self, seed: u64, index: usize, id: u32) -> Rsu {
        let mut rng = entity_rng(seed, EntityKind::Rsu, index);
        let position = self.rsu_area.sample(&mut rng);
        let cpu_freq_hz = self.rsu_cpu_hz.sample(&mut rng);
        Rsu {
            id,
            position,
            cpu_freq_hz,
            cycles_per_bit: self.cycles_per_bit,
        }
    }

    pub fn sample_rv(&self, seed: u64, index: usize, id: u32) -> RequestingVehicle {
        let mut rng = entity_rng(seed, EntityKind::Rv, index);
        let position = self.rv_area.sample(&mut rng);
        let task_size_bits = self.task_size_mb.sample(&mut rng) * MB_BITS;
        let max_tolerance_s = self.max_tolerance_s.sample(&mut rng);
        RequestingVehicle {
            id,
            position,
            task_size_bits,
            max_tolerance_s,
            alpha: self.alpha,
        }
    }
}

/// A synthetic population of `n_pv` PVs, `n_rsu` RSUs and `n_rv` RVs with ids
/// `1..=n` per kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub pvs: Vec<ParkedVehicle>,
    pub rsus: Vec<Rsu>,
    pub rvs: Vec<RequestingVehicle>,
}

pub fn synthesize_population(
    gen: &GenerationParams,
    seed: u64,
    n_pv: usize,
    n_rsu: usize,
    n_rv: usize,
) -> Population {
    Population {
        pvs: (0..n_pv)
            .map(|i| gen.sample_pv(seed, i, i as u32 + 1))
            .collect(),
        rsus: (0..n_rsu)
            .map(|i| gen.sample_rsu(seed, i, i as u32 + 1))
            .collect(),
        rvs: (0..n_rv)
            .map(|i| gen.sample_rv(seed, i, i as u32 + 1))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub channel: ChannelParams,
    pub costs: ConsensusCostParams,
    pub parking: ParkingMixtureTable,
    pub selection: SelectionParams,
    pub game: GameSolverParams,
    pub local: LocalComputeParams,
    pub generation: GenerationParams,
    pub pvs: Vec<ParkedVehicle>,
    pub rsus: Vec<Rsu>,
    pub rvs: Vec<RequestingVehicle>,
    pub rng_seed: u64,
}

pub const DEFAULT_RNG_SEED: u64 = 7;

impl ScenarioConfig {
    /// Default constants with a synthetic population of the given size.
    pub fn synthetic(n_pv: usize, n_rsu: usize, n_rv: usize, seed: u64) -> Self {
        let channel = ChannelParams::default();
        let generation = GenerationParams::default();
        let pop = synthesize_population(&generation, seed, n_pv, n_rsu, n_rv);
        Self {
            channel,
            costs: ConsensusCostParams::default(),
            parking: ParkingMixtureTable::default(),
            selection: SelectionParams::default_for(&channel),
            game: GameSolverParams::default(),
            local: LocalComputeParams::default(),
            generation,
            pvs: pop.pvs,
            rsus: pop.rsus,
            rvs: pop.rvs,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.channel.validate()?;
        self.costs.validate()?;
        self.parking
            .validate()
            .map_err(|e| invalid("parking", e.to_string()))?;
        self.selection
            .validate()
            .map_err(|e| invalid("selection", e.to_string()))?;
        self.game
            .validate()
            .map_err(|e| invalid("game", e.to_string()))?;
        self.generation.validate()?;
        if !(self.local.cpu_freq_hz > 0.0 && self.local.cycles_per_bit > 0.0) {
            return Err(invalid(
                "local",
                "cpu_freq_hz and cycles_per_bit must be positive",
            ));
        }
        if self.rsus.is_empty() {
            return Err(invalid("rsus", "empty"));
        }
        if self.pvs.is_empty() {
            return Err(invalid("pvs", "empty"));
        }
        if self.rvs.is_empty() {
            return Err(invalid("rvs", "empty"));
        }
        unique_ids("pvs", self.pvs.iter().map(|p| p.id))?;
        unique_ids("rsus", self.rsus.iter().map(|r| r.id))?;
        unique_ids("rvs", self.rvs.iter().map(|r| r.id))?;
        let range = self.generation.pv_cpu_hz;
        for pv in &self.pvs {
            let f = format!("pvs[id={}]", pv.id);
            if !range.contains(pv.cpu_freq_hz) {
                return Err(invalid(
                    format!("{f}.cpu_freq_hz"),
                    "outside generation.pv_cpu_hz",
                ));
            }
            if !(pv.cycles_per_bit > 0.0) {
                return Err(invalid(format!("{f}.cycles_per_bit"), "must be positive"));
            }
            if !(pv.parked_since_s >= 0.0 && pv.parked_since_s.is_finite()) {
                return Err(invalid(
                    format!("{f}.parked_since_s"),
                    "must be non-negative",
                ));
            }
            if pv.arrival_hour > 23 {
                return Err(invalid(format!("{f}.arrival_hour"), "must be in 0..23"));
            }
            check_point(&f, pv.position)?;
        }
        for r in &self.rsus {
            let f = format!("rsus[id={}]", r.id);
            if !(r.cpu_freq_hz > 0.0 && r.cpu_freq_hz.is_finite()) {
                return Err(invalid(format!("{f}.cpu_freq_hz"), "must be positive"));
            }
            if !(r.cycles_per_bit > 0.0) {
                return Err(invalid(format!("{f}.cycles_per_bit"), "must be positive"));
            }
            check_point(&f, r.position)?;
        }
        for rv in &self.rvs {
            let f = format!("rvs[id={}]", rv.id);
            if !(rv.task_size_bits > 0.0 && rv.task_size_bits.is_finite()) {
                return Err(invalid(format!("{f}.task_size_mb"), "must be positive"));
            }
            if !(rv.max_tolerance_s > 0.0) {
                return Err(invalid(format!("{f}.max_tolerance_s"), "must be positive"));
            }
            if !(rv.alpha > 0.0) {
                return Err(invalid(format!("{f}.alpha"), "must be positive"));
            }
            check_point(&f, rv.position)?;
        }
        Ok(())
    }

    /// Normalized JSON echo of the loaded configuration (internal units).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes to JSON")
    }

    /// SHA-256 over the JSON echo, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn check_point(field: &str, p: Point) -> Result<(), ScenarioError> {
    if p.x.is_finite() && p.y.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{field}.position"), "must be finite"))
    }
}

fn unique_ids(field: &str, ids: impl Iterator<Item = u32>) -> Result<(), ScenarioError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(field, format!("duplicate id {id}")));
        }
    }
    Ok(())
}

/// Capacity shares φ_pk = f_pk / Σ f_pk and φ_rj = f_rj / Σ f_rj.
pub fn compute_capacity_shares(
    pvs: &[ParkedVehicle],
    rsus: &[Rsu],
) -> Result<(Vec<f64>, Vec<f64>), ScenarioError> {
    if pvs.is_empty() {
        return Err(invalid("pvs", "empty"));
    }
    if rsus.is_empty() {
        return Err(invalid("rsus", "empty"));
    }
    Ok((
        shares(pvs.iter().map(|p| p.cpu_freq_hz)),
        shares(rsus.iter().map(|r| r.cpu_freq_hz)),
    ))
}

pub(crate) fn shares(freqs: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let total: f64 = freqs.clone().sum();
    freqs.map(|f| f / total).collect()
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CostsFile {
    sig_cycles_beta: f64,
    mac_cycles_theta: f64,
    block_size_mb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rsu_block_size_mb: Option<f64>,
    tx_size_kb: f64,
    kappa_v: f64,
    kappa_r: f64,
    xi_v: f64,
    xi_r: f64,
    vote_size_bytes: f64,
}

impl Default for CostsFile {
    fn default() -> Self {
        Self {
            sig_cycles_beta: 1e6,
            mac_cycles_theta: 1e7,
            block_size_mb: 4.0,
            rsu_block_size_mb: None,
            tx_size_kb: 1.0,
            kappa_v: 1e-27,
            kappa_r: 1e-28,
            xi_v: 1.0e-4,
            xi_r: 1.0e-4,
            vote_size_bytes: 256.0,
        }
    }
}

impl CostsFile {
    fn into_params(self) -> ConsensusCostParams {
        ConsensusCostParams {
            sig_cycles_beta: self.sig_cycles_beta,
            mac_cycles_theta: self.mac_cycles_theta,
            block_size_bits: self.block_size_mb * MB_BITS,
            rsu_block_size_bits: self.rsu_block_size_mb.unwrap_or(self.block_size_mb) * MB_BITS,
            tx_size_bits: self.tx_size_kb * KB_BITS,
            kappa_v: self.kappa_v,
            kappa_r: self.kappa_r,
            xi_v: self.xi_v,
            xi_r: self.xi_r,
            vote_size_bits: self.vote_size_bytes * BYTE_BITS,
        }
    }

    fn from_params(c: &ConsensusCostParams) -> Self {
        Self {
            sig_cycles_beta: c.sig_cycles_beta,
            mac_cycles_theta: c.mac_cycles_theta,
            block_size_mb: c.block_size_bits / MB_BITS,
            rsu_block_size_mb: Some(c.rsu_block_size_bits / MB_BITS),
            tx_size_kb: c.tx_size_bits / KB_BITS,
            kappa_v: c.kappa_v,
            kappa_r: c.kappa_r,
            xi_v: c.xi_v,
            xi_r: c.xi_r,
            vote_size_bytes: c.vote_size_bits / BYTE_BITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ParkingFile {
    gamma_arg_mode: GammaArgMode,
    /// Either omitted (synthetic default), a single row applied to every
    /// hour, or 24 rows.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    hours: Vec<HourMixture>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelectionFile {
    stay_threshold: f64,
    horizon_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    snr_threshold: Option<f64>,
    w1: f64,
    w2: f64,
    strategy: Strategy,
}

impl Default for SelectionFile {
    fn default() -> Self {
        let d = SelectionParams::default_for(&ChannelParams::default());
        Self {
            stay_threshold: d.stay_threshold,
            horizon_s: d.horizon_s,
            snr_threshold: None,
            w1: d.w1,
            w2: d.w2,
            strategy: d.strategy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationCounts {
    pvs: usize,
    rsus: usize,
    rvs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PvRow {
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cpu_freq_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cycles_per_bit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parked_since_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    arrival_hour: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RsuRow {
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cpu_freq_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cycles_per_bit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RvRow {
    id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_size_mb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tolerance_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
    #[serde(default)]
    channel: ChannelParams,
    #[serde(default)]
    costs: CostsFile,
    #[serde(default)]
    parking: ParkingFile,
    #[serde(default)]
    selection: SelectionFile,
    #[serde(default)]
    game: GameSolverParams,
    #[serde(default)]
    local: LocalComputeParams,
    #[serde(default)]
    generation: GenerationParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    population: Option<PopulationCounts>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pvs: Vec<PvRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rsus: Vec<RsuRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rvs: Vec<RvRow>,
}

impl ScenarioFile {
    fn into_config(self) -> Result<ScenarioConfig, ScenarioError> {
        let seed = self.rng_seed.unwrap_or(DEFAULT_RNG_SEED);
        let gen = self.generation;
        gen.validate()?;

        let parking = match self.parking.hours.len() {
            0 => ParkingMixtureTable::uniform(HourMixture::SYNTHETIC, self.parking.gamma_arg_mode),
            1 => ParkingMixtureTable::uniform(self.parking.hours[0], self.parking.gamma_arg_mode),
            _ => ParkingMixtureTable {
                gamma_arg_mode: self.parking.gamma_arg_mode,
                hours: self.parking.hours,
            },
        };

        let sel = self.selection;
        let default_sel = SelectionParams::default_for(&self.channel);
        let selection = SelectionParams {
            stay_threshold: sel.stay_threshold,
            horizon_s: sel.horizon_s,
            snr_threshold: sel.snr_threshold.unwrap_or(default_sel.snr_threshold),
            w1: sel.w1,
            w2: sel.w2,
            strategy: sel.strategy,
        };

        let (mut pvs, mut rsus, mut rvs) = (Vec::new(), Vec::new(), Vec::new());
        if let Some(counts) = self.population {
            if !(self.pvs.is_empty() && self.rsus.is_empty() && self.rvs.is_empty()) {
                return Err(invalid(
                    "population",
                    "cannot be combined with explicit pvs/rsus/rvs lists",
                ));
            }
            let pop = synthesize_population(&gen, seed, counts.pvs, counts.rsus, counts.rvs);
            pvs = pop.pvs;
            rsus = pop.rsus;
            rvs = pop.rvs;
        } else {
            for (i, row) in self.pvs.iter().enumerate() {
                let mut pv = gen.sample_pv(seed, i, row.id);
                if let Some(x) = row.x {
                    pv.position.x = x;
                }
                if let Some(y) = row.y {
                    pv.position.y = y;
                }
                pv.cpu_freq_hz = row.cpu_freq_hz.unwrap_or(pv.cpu_freq_hz);
                pv.cycles_per_bit = row.cycles_per_bit.unwrap_or(pv.cycles_per_bit);
                pv.parked_since_s = row.parked_since_s.unwrap_or(pv.parked_since_s);
                pv.arrival_hour = row.arrival_hour.unwrap_or(pv.arrival_hour);
                pvs.push(pv);
            }
            for (i, row) in self.rsus.iter().enumerate() {
                let mut r = gen.sample_rsu(seed, i, row.id);
                if let Some(x) = row.x {
                    r.position.x = x;
                }
                if let Some(y) = row.y {
                    r.position.y = y;
                }
                r.cpu_freq_hz = row.cpu_freq_hz.unwrap_or(r.cpu_freq_hz);
                r.cycles_per_bit = row.cycles_per_bit.unwrap_or(r.cycles_per_bit);
                rsus.push(r);
            }
            for (i, row) in self.rvs.iter().enumerate() {
                let mut rv = gen.sample_rv(seed, i, row.id);
                if let Some(x) = row.x {
                    rv.position.x = x;
                }
                if let Some(y) = row.y {
                    rv.position.y = y;
                }
                if let Some(mb) = row.task_size_mb {
                    rv.task_size_bits = mb * MB_BITS;
                }
                rv.max_tolerance_s = row.max_tolerance_s.unwrap_or(rv.max_tolerance_s);
                rv.alpha = row.alpha.unwrap_or(rv.alpha);
                rvs.push(rv);
            }
        }

        let cfg = ScenarioConfig {
            channel: self.channel,
            costs: self.costs.into_params(),
            parking,
            selection,
            game: self.game,
            local: self.local,
            generation: gen,
            pvs,
            rsus,
            rvs,
            rng_seed: seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_config(c: &ScenarioConfig) -> Self {
        Self {
            rng_seed: Some(c.rng_seed),
            channel: c.channel,
            costs: CostsFile::from_params(&c.costs),
            parking: ParkingFile {
                gamma_arg_mode: c.parking.gamma_arg_mode,
                hours: c.parking.hours.clone(),
            },
            selection: SelectionFile {
                stay_threshold: c.selection.stay_threshold,
                horizon_s: c.selection.horizon_s,
                snr_threshold: Some(c.selection.snr_threshold),
                w1: c.selection.w1,
                w2: c.selection.w2,
                strategy: c.selection.strategy,
            },
            game: c.game,
            local: c.local,
            generation: c.generation,
            population: None,
            pvs: c
                .pvs
                .iter()
                .map(|p| PvRow {
                    id: p.id,
                    x: Some(p.position.x),
                    y: Some(p.position.y),
                    cpu_freq_hz: Some(p.cpu_freq_hz),
                    cycles_per_bit: Some(p.cycles_per_bit),
                    parked_since_s: Some(p.parked_since_s),
                    arrival_hour: Some(p.arrival_hour),
                })
                .collect(),
            rsus: c
                .rsus
                .iter()
                .map(|r| RsuRow {
                    id: r.id,
                    x: Some(r.position.x),
                    y: Some(r.position.y),
                    cpu_freq_hz: Some(r.cpu_freq_hz),
                    cycles_per_bit: Some(r.cycles_per_bit),
                })
                .collect(),
            rvs: c
                .rvs
                .iter()
                .map(|r| RvRow {
                    id: r.id,
                    x: Some(r.position.x),
                    y: Some(r.position.y),
                    task_size_mb: Some(r.task_size_bits / MB_BITS),
                    max_tolerance_s: Some(r.max_tolerance_s),
                    alpha: Some(r.alpha),
                })
                .collect(),
        }
    }
}

/// Parse a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    file.into_config()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Serialize a configuration with every value explicit, so that
/// `parse_scenario(&save_scenario(c))` reproduces `c` exactly.
pub fn save_scenario(cfg: &ScenarioConfig) -> Result<String, ScenarioError> {
    toml::to_string(&ScenarioFile::from_config(cfg))
        .map_err(|e| ScenarioError::Serialize(e.to_string()))
}

/// The default scenario shipped with the crate.
pub const DEFAULT_SCENARIO_TOML: &str = include_str!("../assets/scenarios/default.toml");

pub fn default_scenario() -> ScenarioConfig {
    parse_scenario(DEFAULT_SCENARIO_TOML).expect("bundled default scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[pvs]]
id = 1
[[rsus]]
id = 1
[[rvs]]
id = 1
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_scenario(MINIMAL).unwrap();
        assert_eq!(c.channel.bandwidth_mb, 15.0);
        assert_eq!(c.channel.pathloss_delta, 2.0);
        assert_eq!(c.channel.tx_power_w, 0.281_838_15);
        assert_eq!(c.channel.noise_w, 1.2589e-13);
        assert_eq!(c.channel.transceiver_eta, 1.637_26e-9);
        assert_eq!(c.channel.ref_distance_m, 100.0);
        assert_eq!(c.costs.sig_cycles_beta, 1e6);
        assert_eq!(c.costs.mac_cycles_theta, 1e7);
        assert_eq!(c.costs.kappa_v, 1e-27);
        assert_eq!(c.costs.kappa_r, 1e-28);
        assert_eq!(c.costs.tx_size_bits, 1024.0 * 8.0);
        assert_eq!(c.costs.block_size_bits, 4.0 * MB_BITS);
        assert_eq!(c.costs.tx_per_block(), 4096);
        assert_eq!(c.selection.stay_threshold, 0.95);
        let pv = c.pvs[0];
        assert!(c.generation.pv_cpu_hz.contains(pv.cpu_freq_hz));
        let rv = c.rvs[0];
        assert!(rv.task_size_bits >= 10.0 * MB_BITS && rv.task_size_bits <= 30.0 * MB_BITS);
    }

    #[test]
    fn empty_rvs_rejected() {
        let err = parse_scenario("[[pvs]]\nid = 1\n[[rsus]]\nid = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "rvs empty");
    }

    #[test]
    fn bigger_block_doubles_tx_per_block() {
        let c = parse_scenario(&format!("[costs]\nblock_size_mb = 8.0\n{MINIMAL}")).unwrap();
        assert_eq!(c.costs.tx_per_block(), 8192);
        assert_eq!(c.costs.rsu_tx_per_block(), 8192);
    }

    #[test]
    fn duplicate_ids_and_bad_cpu_rejected() {
        let dup = "[[pvs]]\nid = 1\n[[pvs]]\nid = 1\n[[rsus]]\nid = 1\n[[rvs]]\nid = 1\n";
        assert!(parse_scenario(dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let cpu = "[[pvs]]\nid = 1\ncpu_freq_hz = 9e9\n[[rsus]]\nid = 1\n[[rvs]]\nid = 1\n";
        assert!(parse_scenario(cpu)
            .unwrap_err()
            .to_string()
            .contains("cpu_freq_hz"));
        assert!(matches!(
            parse_scenario("[[pvs]\n"),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ScenarioConfig::synthetic(6, 2, 3, 99);
        let text = save_scenario(&c).unwrap();
        let back = parse_scenario(&text).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.config_hash(), back.config_hash());
    }

    #[test]
    fn capacity_shares() {
        let mut c = ScenarioConfig::synthetic(2, 1, 1, 1);
        c.pvs[0].cpu_freq_hz = 1e9;
        c.pvs[1].cpu_freq_hz = 3e9;
        let (p, r) = compute_capacity_shares(&c.pvs, &c.rsus).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        assert_eq!(r, vec![1.0]);
        assert!(compute_capacity_shares(&[], &c.rsus).is_err());
    }

    #[test]
    fn default_scenario_loads() {
        let c = default_scenario();
        assert!(!c.pvs.is_empty());
    }
}
