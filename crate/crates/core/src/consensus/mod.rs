//! Committee consensus: per-phase cycle costs, the energy ledger for a
//! leader-based four-phase BFT round, a PBFT cost baseline, and an
//! executable discrete-event simulation of the protocol ([`sim`]).
//!
//! Signatures and MACs are never computed; each generation or verification
//! is charged `β` or `θ` CPU cycles and turned into joules via `κ f²`.

pub mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError};
use crate::scenario::{ChannelParams, ConsensusCostParams, Point, Rsu};
use crate::selection::{ConsensusSet, PvGraph};

pub use sim::{
    run_consensus, Behavior, ConsensusRun, CostLedger, FaultPlan, LatencyModel, MsgKind, TraceEvent,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("committee is empty")]
    EmptyCommittee,
    #[error("committee member {0} is not in the graph")]
    UnknownMember(u32),
    #[error("zero-rate link between committee members {0} and {1}")]
    ZeroRate(u32, u32),
    #[error("link between {0} and {1}: {2}")]
    Channel(u32, u32, ChannelError),
    #[error("fault plan: {0}")]
    InvalidFaultPlan(String),
    #[error("invalid latency model: {0}")]
    InvalidLatency(String),
    #[error("rounds must be at least 1")]
    NoRounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    NewView,
    Prepare,
    PreCommit,
    Commit,
    Decide,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::NewView,
        Phase::Prepare,
        Phase::PreCommit,
        Phase::Commit,
        Phase::Decide,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::NewView => "new_view",
            Phase::Prepare => "prepare",
            Phase::PreCommit => "pre_commit",
            Phase::Commit => "commit",
            Phase::Decide => "decide",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Replica,
}

/// Constants of one chain (vehicle sub-chain or RSU main chain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCosts {
    pub beta: f64,
    pub theta: f64,
    pub block_bits: f64,
    pub tx_per_block: u64,
    pub kappa: f64,
    pub vote_bits: f64,
}

impl ChainCosts {
    pub fn vehicle(c: &ConsensusCostParams) -> Self {
        Self {
            beta: c.sig_cycles_beta,
            theta: c.mac_cycles_theta,
            block_bits: c.block_size_bits,
            tx_per_block: c.tx_per_block(),
            kappa: c.kappa_v,
            vote_bits: c.vote_size_bits,
        }
    }

    pub fn rsu(c: &ConsensusCostParams) -> Self {
        Self {
            beta: c.sig_cycles_beta,
            theta: c.mac_cycles_theta,
            block_bits: c.rsu_block_size_bits,
            tx_per_block: c.rsu_tx_per_block(),
            kappa: c.kappa_r,
            vote_bits: c.vote_size_bits,
        }
    }
}

/// Consensus participants with the leader at index 0; the remaining order
/// is the leader-rotation order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Committee {
    pub ids: Vec<u32>,
    pub cpu_freq_hz: Vec<f64>,
    pub positions: Vec<Point>,
}

impl Committee {
    pub fn from_set(set: &ConsensusSet, g: &PvGraph) -> Result<Self, ConsensusError> {
        if set.is_empty() {
            return Err(ConsensusError::EmptyCommittee);
        }
        let mut ids = Vec::with_capacity(set.len());
        let mut cpu = Vec::with_capacity(set.len());
        let mut pos = Vec::with_capacity(set.len());
        // The leader first, then the remaining members in set order.
        let order = std::iter::once(set.leader)
            .chain(set.members.iter().copied().filter(|&m| m != set.leader));
        for id in order {
            let i = g.index_of(id).ok_or(ConsensusError::UnknownMember(id))?;
            ids.push(id);
            cpu.push(g.cpu_freq_hz[i]);
            pos.push(g.positions[i]);
        }
        Ok(Self {
            ids,
            cpu_freq_hz: cpu,
            positions: pos,
        })
    }

    /// Every RSU takes part in the main chain; the fastest one leads (ties
    /// by lower id).
    pub fn from_rsus(rsus: &[Rsu]) -> Result<Self, ConsensusError> {
        if rsus.is_empty() {
            return Err(ConsensusError::EmptyCommittee);
        }
        let mut sorted: Vec<&Rsu> = rsus.iter().collect();
        sorted.sort_by(|a, b| {
            b.cpu_freq_hz
                .total_cmp(&a.cpu_freq_hz)
                .then(a.id.cmp(&b.id))
        });
        Ok(Self {
            ids: sorted.iter().map(|r| r.id).collect(),
            cpu_freq_hz: sorted.iter().map(|r| r.cpu_freq_hz).collect(),
            positions: sorted.iter().map(|r| r.position).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Byzantine tolerance F = ⌊(N − 1)/3⌋.
    pub fn max_faults(&self) -> usize {
        max_faults(self.len())
    }

    /// Rate in MB/s between members `a` and `b` (indices).
    pub fn rate(&self, a: usize, b: usize, ch: &ChannelParams) -> Result<f64, ConsensusError> {
        let r = channel::rate(self.positions[a], self.positions[b], ch)
            .map_err(|e| ConsensusError::Channel(self.ids[a], self.ids[b], e))?;
        if r > 0.0 {
            Ok(r)
        } else {
            Err(ConsensusError::ZeroRate(self.ids[a], self.ids[b]))
        }
    }
}

pub fn max_faults(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// CPU cycles spent by one node in one phase.
pub fn phase_cycles(role: Role, phase: Phase, c: &ChainCosts, f: usize) -> f64 {
    let (b, t) = (c.beta, c.theta);
    let quorum = (2 * f + 1) as f64;
    let block = c.tx_per_block as f64 * (b + t);
    match (role, phase) {
        (Role::Leader, Phase::NewView) => block + b + quorum * t,
        (Role::Leader, Phase::Prepare) => b + t,
        (Role::Leader, Phase::PreCommit | Phase::Commit | Phase::Decide) => 2.0 * b + quorum * t,
        (Role::Replica, Phase::NewView) => b + t,
        (Role::Replica, Phase::Prepare) => 2.0 * b + 2.0 * t + block,
        (Role::Replica, Phase::PreCommit | Phase::Commit) => 2.0 * b + 2.0 * t,
        (Role::Replica, Phase::Decide) => 0.0,
    }
}

/// Cycles summed over all five phases for one role.
pub fn round_cycles(role: Role, c: &ChainCosts, f: usize) -> f64 {
    Phase::ALL
        .iter()
        .map(|&p| phase_cycles(role, p, c, f))
        .sum()
}

/// Signature/MAC energy of one block: leader plus every replica.
pub fn consensus_compute_energy(m: &Committee, c: &ChainCosts) -> Result<f64, ConsensusError> {
    consensus_compute_energy_led_by(m, c, 0)
}

/// [`consensus_compute_energy`] with member `leader` (index) as the leader.
pub fn consensus_compute_energy_led_by(
    m: &Committee,
    c: &ChainCosts,
    leader: usize,
) -> Result<f64, ConsensusError> {
    if m.is_empty() {
        return Err(ConsensusError::EmptyCommittee);
    }
    let f = m.max_faults();
    let replica_cycles = round_cycles(Role::Replica, c, f);
    let mut e = 0.0;
    for (i, fm) in m.cpu_freq_hz.iter().enumerate() {
        let cycles = if i == leader {
            round_cycles(Role::Leader, c, f)
        } else {
            replica_cycles
        };
        e += c.kappa * fm * fm * cycles;
    }
    Ok(e)
}

/// Block-transfer energy of one block: four block-bearing rounds in each
/// direction between the leader and every replica.
pub fn consensus_tx_energy(
    m: &Committee,
    c: &ChainCosts,
    ch: &ChannelParams,
) -> Result<f64, ConsensusError> {
    consensus_tx_energy_led_by(m, c, ch, 0)
}

/// [`consensus_tx_energy`] with member `leader` (index) as the leader.
pub fn consensus_tx_energy_led_by(
    m: &Committee,
    c: &ChainCosts,
    ch: &ChannelParams,
    leader: usize,
) -> Result<f64, ConsensusError> {
    if m.is_empty() {
        return Err(ConsensusError::EmptyCommittee);
    }
    let mut e = 0.0;
    for r in (0..m.len()).filter(|&r| r != leader) {
        let up = m.rate(r, leader, ch)?;
        let down = m.rate(leader, r, ch)?;
        e += 4.0 * channel::transfer_time(c.block_bits, up) * ch.tx_power_w;
        e += 4.0 * channel::transfer_time(c.block_bits, down) * ch.tx_power_w;
    }
    Ok(e)
}

/// Consensus energy attributable to `v_rvs` transactions:
/// `V / (D_B/ϖ) · (E^v + E^T)`.
pub fn consensus_total_energy(
    v_rvs: u64,
    m: &Committee,
    c: &ChainCosts,
    ch: &ChannelParams,
) -> Result<f64, ConsensusError> {
    let block = consensus_compute_energy(m, c)? + consensus_tx_energy(m, c, ch)?;
    Ok(v_rvs as f64 / c.tx_per_block as f64 * block)
}

/// PBFT cycles for one node in one block: pre-prepare handling plus the
/// all-to-all prepare and commit rounds.
pub fn pbft_node_cycles(role: Role, c: &ChainCosts, n: usize) -> f64 {
    let f = max_faults(n);
    let (b, t) = (c.beta, c.theta);
    let block = c.tx_per_block as f64 * (b + t);
    // Leader signs the pre-prepare; replicas verify it. Same cost either way.
    let pre_prepare = block + b + t;
    // Each voting round: sign once and MAC for every peer, then verify a
    // quorum of incoming votes.
    let vote_round = b + (n as f64 - 1.0) * t + (2 * f + 1) as f64 * (b + t);
    let _ = role;
    pre_prepare + 2.0 * vote_round
}

/// Per-block PBFT energy `(E^v, E^T)`.
pub fn pbft_block_energy(
    m: &Committee,
    c: &ChainCosts,
    ch: &ChannelParams,
) -> Result<(f64, f64), ConsensusError> {
    if m.is_empty() {
        return Err(ConsensusError::EmptyCommittee);
    }
    let n = m.len();
    let mut ev = 0.0;
    for (i, f) in m.cpu_freq_hz.iter().enumerate() {
        let role = if i == 0 { Role::Leader } else { Role::Replica };
        ev += c.kappa * f * f * pbft_node_cycles(role, c, n);
    }
    let mut et = 0.0;
    for r in 1..n {
        et += channel::transfer_time(c.block_bits, m.rate(0, r, ch)?) * ch.tx_power_w;
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                et += 2.0 * channel::transfer_time(c.vote_bits, m.rate(i, j, ch)?) * ch.tx_power_w;
            }
        }
    }
    Ok((ev, et))
}

/// PBFT baseline counterpart of [`consensus_total_energy`].
pub fn pbft_baseline_energy(
    v_rvs: u64,
    m: &Committee,
    c: &ChainCosts,
    ch: &ChannelParams,
) -> Result<f64, ConsensusError> {
    let (ev, et) = pbft_block_energy(m, c, ch)?;
    Ok(v_rvs as f64 / c.tx_per_block as f64 * (ev + et))
}

/// Which consensus cost model a scheme uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusKind {
    #[default]
    Hotstuff,
    Pbft,
}

impl ConsensusKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConsensusKind::Hotstuff => "hotstuff",
            ConsensusKind::Pbft => "pbft",
        }
    }

    pub fn total_energy(
        &self,
        v_rvs: u64,
        m: &Committee,
        c: &ChainCosts,
        ch: &ChannelParams,
    ) -> Result<f64, ConsensusError> {
        match self {
            ConsensusKind::Hotstuff => consensus_total_energy(v_rvs, m, c, ch),
            ConsensusKind::Pbft => pbft_baseline_energy(v_rvs, m, c, ch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> ChainCosts {
        ChainCosts::vehicle(&ConsensusCostParams::default())
    }

    fn line_committee(n: usize, spacing: f64, f: f64) -> Committee {
        Committee {
            ids: (1..=n as u32).collect(),
            cpu_freq_hz: vec![f; n],
            positions: (0..n)
                .map(|i| Point::new(spacing * i as f64, 0.0))
                .collect(),
        }
    }

    #[test]
    fn printed_phase_formulas() {
        let c = table2();
        assert_eq!(phase_cycles(Role::Leader, Phase::NewView, &c, 1), 4.5087e10);
        assert_eq!(phase_cycles(Role::Replica, Phase::Decide, &c, 1), 0.0);
        assert_eq!(phase_cycles(Role::Leader, Phase::Prepare, &c, 3), 1.1e7);
        assert_eq!(phase_cycles(Role::Leader, Phase::Decide, &c, 1), 3.2e7);
        assert_eq!(
            phase_cycles(Role::Replica, Phase::Prepare, &c, 0),
            2.2e7 + 4096.0 * 1.1e7
        );
        let mut z = c;
        z.beta = 0.0;
        z.theta = 0.0;
        for p in Phase::ALL {
            assert_eq!(phase_cycles(Role::Leader, p, &z, 2), 0.0);
            assert_eq!(phase_cycles(Role::Replica, p, &z, 2), 0.0);
        }
    }

    #[test]
    fn single_node_is_leader_only() {
        let c = table2();
        let m = line_committee(1, 0.0, 2e9);
        let e = consensus_compute_energy(&m, &c).unwrap();
        assert_eq!(e, c.kappa * 4e18 * round_cycles(Role::Leader, &c, 0));
        assert_eq!(
            consensus_tx_energy(&m, &c, &ChannelParams::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn symmetric_tx_energy_collapses() {
        // Replicas on a circle around the leader share one rate.
        let ch = ChannelParams::default();
        let c = table2();
        let n = 5;
        let mut m = line_committee(n, 0.0, 2e9);
        for i in 1..n {
            let a = i as f64;
            m.positions[i] = Point::new(150.0 * a.cos(), 150.0 * a.sin());
        }
        let r = channel::rate(Point::new(0.0, 0.0), Point::new(150.0, 0.0), &ch).unwrap();
        let expect =
            8.0 * (n - 1) as f64 * c.block_bits / (r * crate::scenario::MB_BITS) * ch.tx_power_w;
        let got = consensus_tx_energy(&m, &c, &ch).unwrap();
        assert!((got - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn total_energy_scaling() {
        let ch = ChannelParams::default();
        let c = table2();
        let m = line_committee(4, 60.0, 2e9);
        let block =
            consensus_compute_energy(&m, &c).unwrap() + consensus_tx_energy(&m, &c, &ch).unwrap();
        assert_eq!(consensus_total_energy(0, &m, &c, &ch).unwrap(), 0.0);
        assert_eq!(consensus_total_energy(4096, &m, &c, &ch).unwrap(), block);
        let ten = consensus_total_energy(10, &m, &c, &ch).unwrap();
        assert!((ten - 10.0 / 4096.0 * block).abs() <= 1e-15 * block);
    }

    #[test]
    fn pbft_exceeds_hotstuff() {
        let ch = ChannelParams::default();
        let c = table2();
        for n in [4, 7, 10, 13] {
            let m = line_committee(n, 20.0, 1.5e9);
            let h = consensus_total_energy(100, &m, &c, &ch).unwrap();
            let p = pbft_baseline_energy(100, &m, &c, &ch).unwrap();
            assert!(p > h, "n={n}: pbft {p} hotstuff {h}");
        }
    }

    #[test]
    fn pbft_degenerate_cases() {
        let ch = ChannelParams::default();
        let mut c = table2();
        let one = line_committee(1, 0.0, 2e9);
        let (ev, et) = pbft_block_energy(&one, &c, &ch).unwrap();
        assert_eq!(et, 0.0);
        assert_eq!(ev, c.kappa * 4e18 * pbft_node_cycles(Role::Leader, &c, 1));
        c.beta = 0.0;
        c.theta = 0.0;
        c.block_bits = 0.0;
        c.vote_bits = 0.0;
        let (ev, et) = pbft_block_energy(&line_committee(4, 30.0, 2e9), &c, &ch).unwrap();
        assert_eq!(ev + et, 0.0);
    }

    #[test]
    fn rsu_committee_leader_is_fastest() {
        let rsus = [
            Rsu {
                id: 3,
                position: Point::new(0.0, 0.0),
                cpu_freq_hz: 4e9,
                cycles_per_bit: 24.0,
            },
            Rsu {
                id: 1,
                position: Point::new(100.0, 0.0),
                cpu_freq_hz: 6e9,
                cycles_per_bit: 24.0,
            },
            Rsu {
                id: 2,
                position: Point::new(200.0, 0.0),
                cpu_freq_hz: 6e9,
                cycles_per_bit: 24.0,
            },
        ];
        let m = Committee::from_rsus(&rsus).unwrap();
        assert_eq!(m.ids, vec![1, 2, 3]);
    }
}
