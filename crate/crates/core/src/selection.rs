//! Consensus-node selection among parked vehicles.
//!
//! PVs likely to stay beyond a horizon form the computing set. They are
//! linked when their pairwise SNR clears a threshold, scored by a weighted
//! mix of communication and computing share, and a greedy connected
//! dominating set of that graph becomes the consensus committee. Three
//! simple baselines (random, capacity-only, communication-only) pick a
//! committee of a given size instead.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError};
use crate::parking::{self, ParkingError, ParkingMixtureTable, StayQuery};
use crate::scenario::{ChannelParams, ParkedVehicle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("empty node set")]
    EmptyNodeSet,
    #[error("requested {requested} nodes but only {available} are eligible")]
    SizeExceedsNodes { requested: usize, available: usize },
    #[error("invalid selection parameters: {0}")]
    InvalidParams(String),
    #[error("PVs {0} and {1}: {2}")]
    Channel(u32, u32, ChannelError),
    #[error(transparent)]
    Parking(#[from] ParkingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Cds,
    Random,
    CapacityOnly,
    CommunicationOnly,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Cds => "cds",
            Strategy::Random => "random",
            Strategy::CapacityOnly => "capacity_only",
            Strategy::CommunicationOnly => "communication_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub stay_threshold: f64,
    pub horizon_s: f64,
    pub snr_threshold: f64,
    pub w1: f64,
    pub w2: f64,
    pub strategy: Strategy,
}

impl SelectionParams {
    /// Distance at which the default SNR threshold places the adjacency edge.
    pub const ADJACENCY_RANGE_M: f64 = 300.0;

    pub fn default_for(ch: &ChannelParams) -> Self {
        Self {
            stay_threshold: 0.95,
            horizon_s: 1800.0,
            snr_threshold: channel::snr_at(Self::ADJACENCY_RANGE_M, ch)
                .expect("adjacency range is positive"),
            w1: 0.5,
            w2: 0.5,
            strategy: Strategy::Cds,
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidParams(m.to_string()));
        if !(self.stay_threshold >= 0.0 && self.stay_threshold <= 1.0) {
            return bad("stay_threshold must lie in [0, 1]");
        }
        if !(self.horizon_s >= 0.0 && self.horizon_s.is_finite()) {
            return bad("horizon_s must be non-negative");
        }
        if !(self.snr_threshold >= 0.0) {
            return bad("snr_threshold must be non-negative");
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || (self.w1 + self.w2 - 1.0).abs() > 1e-12 {
            return bad("weights must be non-negative and sum to 1");
        }
        Ok(())
    }
}

/// SNR-threshold graph over the computing set, with node qualities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvGraph {
    /// PV ids, in the order of the input computing set.
    pub nodes: Vec<u32>,
    pub positions: Vec<crate::scenario::Point>,
    pub cpu_freq_hz: Vec<f64>,
    pub adjacency: Vec<Vec<bool>>,
    pub snr: Vec<Vec<f64>>,
    pub snr_sum: Vec<f64>,
    pub quality: Vec<f64>,
}

impl PvGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v]
            .iter()
            .enumerate()
            .filter_map(|(u, &a)| a.then_some(u))
    }

    /// Indices sorted by quality descending, ties by lower PV id.
    pub fn quality_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.quality[b]
                .total_cmp(&self.quality[a])
                .then(self.nodes[a].cmp(&self.nodes[b]))
        });
        order
    }

    /// Connected-component label of every node.
    pub fn components(&self) -> Vec<usize> {
        self.components_within(&vec![true; self.len()])
    }

    /// Component labels of the subgraph induced by `mask`; nodes outside the
    /// mask get `usize::MAX`.
    fn components_within(&self, mask: &[bool]) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if !mask[s] || label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for u in self.neighbours(v) {
                    if mask[u] && label[u] == usize::MAX {
                        label[u] = next;
                        q.push_back(u);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Committee chosen from the computing set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusSet {
    /// Member PV ids ordered by quality descending (ties by lower id); the
    /// first entry is the leader and the order drives leader rotation.
    pub members: Vec<u32>,
    pub heads: Vec<u32>,
    pub connectors: Vec<u32>,
    pub leader: u32,
    /// Set when the computing-set graph was disconnected and the committee
    /// is a union of per-component dominating sets.
    pub disconnected: bool,
}

impl ConsensusSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn from_mask(
        g: &PvGraph,
        mask: &[bool],
        heads: Vec<usize>,
        connectors: Vec<usize>,
        disconnected: bool,
    ) -> Self {
        let members: Vec<u32> = g
            .quality_order()
            .into_iter()
            .filter(|&i| mask[i])
            .map(|i| g.nodes[i])
            .collect();
        let leader = members[0];
        Self {
            members,
            heads: heads.into_iter().map(|i| g.nodes[i]).collect(),
            connectors: connectors.into_iter().map(|i| g.nodes[i]).collect(),
            leader,
            disconnected,
        }
    }
}

/// PVs whose stay probability over the horizon reaches the threshold.
pub fn filter_by_stay(
    pvs: &[ParkedVehicle],
    tbl: &ParkingMixtureTable,
    params: &SelectionParams,
) -> Result<Vec<ParkedVehicle>, SelectionError> {
    let mut out = Vec::new();
    for pv in pvs {
        let p = parking::stay_probability(
            &StayQuery {
                parked_so_far_s: pv.parked_since_s,
                horizon_s: params.horizon_s,
                arrival_hour: pv.arrival_hour,
            },
            tbl,
        )?;
        if p.probability >= params.stay_threshold {
            out.push(*pv);
        }
    }
    Ok(out)
}

pub fn build_graph(
    pcs: &[ParkedVehicle],
    ch: &ChannelParams,
    params: &SelectionParams,
) -> Result<PvGraph, SelectionError> {
    if pcs.is_empty() {
        return Err(SelectionError::EmptyNodeSet);
    }
    let n = pcs.len();
    let mut snr = vec![vec![0.0; n]; n];
    let mut adjacency = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = channel::snr(pcs[i].position, pcs[j].position, ch)
                .map_err(|e| SelectionError::Channel(pcs[i].id, pcs[j].id, e))?;
            snr[i][j] = s;
            snr[j][i] = s;
            let a = s >= params.snr_threshold;
            adjacency[i][j] = a;
            adjacency[j][i] = a;
        }
    }
    let snr_sum: Vec<f64> = snr.iter().map(|row| row.iter().sum()).collect();
    let snr_total: f64 = snr_sum.iter().sum();
    let f_total: f64 = pcs.iter().map(|p| p.cpu_freq_hz).sum();
    let quality = (0..n)
        .map(|k| {
            let comm = if snr_total > 0.0 {
                snr_sum[k] / snr_total
            } else {
                1.0 / n as f64
            };
            params.w1 * comm + params.w2 * pcs[k].cpu_freq_hz / f_total
        })
        .collect();
    Ok(PvGraph {
        nodes: pcs.iter().map(|p| p.id).collect(),
        positions: pcs.iter().map(|p| p.position).collect(),
        cpu_freq_hz: pcs.iter().map(|p| p.cpu_freq_hz).collect(),
        adjacency,
        snr,
        snr_sum,
        quality,
    })
}

/// Greedy connected dominating set.
pub fn select_cds(g: &PvGraph) -> Result<ConsensusSet, SelectionError> {
    if g.is_empty() {
        return Err(SelectionError::EmptyNodeSet);
    }
    let n = g.len();
    let order = g.quality_order();
    let rank = {
        let mut r = vec![0; n];
        for (pos, &v) in order.iter().enumerate() {
            r[v] = pos;
        }
        r
    };

    // Pass 1: dominators.
    let mut covered = vec![false; n];
    let mut member = vec![false; n];
    let mut heads = Vec::new();
    for &v in &order {
        if !covered[v] {
            heads.push(v);
            member[v] = true;
            covered[v] = true;
            for u in g.neighbours(v) {
                covered[u] = true;
            }
        }
    }

    // Pass 2: connectors, merging member components inside each graph
    // component until each graph component holds one member component.
    let graph_comp = g.components();
    let disconnected = graph_comp.iter().any(|&c| c != 0);
    let mut connectors = Vec::new();
    loop {
        let mcomp = g.components_within(&member);
        // Member-component ids adjacent to each non-member node.
        let touching = |v: usize| -> Vec<usize> {
            let mut t: Vec<usize> = g
                .neighbours(v)
                .filter(|&u| member[u])
                .map(|u| mcomp[u])
                .collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        let split = (0..n).any(|v| {
            member[v]
                && (0..n)
                    .any(|u| member[u] && graph_comp[u] == graph_comp[v] && mcomp[u] != mcomp[v])
        });
        if !split {
            break;
        }
        // Single connector: best-ranked non-member touching ≥ 2 components.
        if let Some(&k) = order
            .iter()
            .find(|&&k| !member[k] && touching(k).len() >= 2)
        {
            member[k] = true;
            connectors.push(k);
            continue;
        }
        // Connector pair k–m bridging two different member components.
        let mut best: Option<(usize, usize)> = None;
        for k in 0..n {
            if member[k] {
                continue;
            }
            let tk = touching(k);
            if tk.is_empty() {
                continue;
            }
            for m in g.neighbours(k) {
                if member[m] {
                    continue;
                }
                let tm = touching(m);
                if tm.iter().any(|c| tk.iter().any(|d| d != c)) {
                    let better = match best {
                        None => true,
                        Some((bk, bm)) => {
                            let s = g.quality[k] + g.quality[m];
                            let bs = g.quality[bk] + g.quality[bm];
                            s > bs
                                || (s == bs
                                    && (rank[k].min(rank[m]), rank[k].max(rank[m]))
                                        < (rank[bk].min(rank[bm]), rank[bk].max(rank[bm])))
                        }
                    };
                    if better {
                        best = Some((k, m));
                    }
                }
            }
        }
        match best {
            Some((k, m)) => {
                for v in [k, m] {
                    member[v] = true;
                    connectors.push(v);
                }
            }
            // Unreachable for a dominating member set; stop rather than spin.
            None => break,
        }
    }
    if disconnected {
        log::warn!("computing-set graph is disconnected; committee spans several components");
    }
    Ok(ConsensusSet::from_mask(
        g,
        &member,
        heads,
        connectors,
        disconnected,
    ))
}

/// Committee of `size_n` nodes chosen by one of the baseline rules.
pub fn select_baseline(
    g: &PvGraph,
    strategy: Strategy,
    size_n: usize,
    seed: u64,
) -> Result<ConsensusSet, SelectionError> {
    if g.is_empty() {
        return Err(SelectionError::EmptyNodeSet);
    }
    if strategy == Strategy::Cds {
        return select_cds(g);
    }
    if size_n == 0 || size_n > g.len() {
        return Err(SelectionError::SizeExceedsNodes {
            requested: size_n,
            available: g.len(),
        });
    }
    let chosen: Vec<usize> = match strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, g.len(), size_n).into_vec()
        }
        Strategy::CapacityOnly => top_by(g, &g.cpu_freq_hz, size_n),
        Strategy::CommunicationOnly => top_by(g, &g.snr_sum, size_n),
        Strategy::Cds => unreachable!(),
    };
    let mut mask = vec![false; g.len()];
    for i in chosen {
        mask[i] = true;
    }
    let disconnected = g.components().iter().any(|&c| c != 0);
    Ok(ConsensusSet::from_mask(
        g,
        &mask,
        Vec::new(),
        Vec::new(),
        disconnected,
    ))
}

fn top_by(g: &PvGraph, key: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(g.nodes[a].cmp(&g.nodes[b])));
    idx.truncate(n);
    idx
}

/// Grow or shrink a committee to exactly `n` members by quality: growing
/// adds the best-ranked non-members, shrinking keeps the best-ranked members.
pub fn resize_committee(
    g: &PvGraph,
    set: &ConsensusSet,
    n: usize,
) -> Result<ConsensusSet, SelectionError> {
    if n == 0 || n > g.len() {
        return Err(SelectionError::SizeExceedsNodes {
            requested: n,
            available: g.len(),
        });
    }
    let order = g.quality_order();
    let mut mask = vec![false; g.len()];
    let mut count = 0;
    if n >= set.len() {
        for id in &set.members {
            if let Some(i) = g.index_of(*id) {
                mask[i] = true;
                count += 1;
            }
        }
        for &i in &order {
            if count == n {
                break;
            }
            if !mask[i] {
                mask[i] = true;
                count += 1;
            }
        }
    } else {
        for id in set.members.iter().take(n) {
            if let Some(i) = g.index_of(*id) {
                mask[i] = true;
            }
        }
    }
    let keep = |ids: &[u32]| -> Vec<usize> {
        ids.iter()
            .filter_map(|id| g.index_of(*id))
            .filter(|&i| mask[i])
            .collect()
    };
    Ok(ConsensusSet::from_mask(
        g,
        &mask,
        keep(&set.heads),
        keep(&set.connectors),
        set.disconnected,
    ))
}

/// True when every node is a member or adjacent to one.
pub fn is_dominating(g: &PvGraph, members: &[u32]) -> bool {
    let mask = mask_of(g, members);
    (0..g.len()).all(|v| mask[v] || g.neighbours(v).any(|u| mask[u]))
}

/// True when the members induce a connected subgraph.
pub fn is_connected(g: &PvGraph, members: &[u32]) -> bool {
    let mask = mask_of(g, members);
    let comps = g.components_within(&mask);
    let mut labels: Vec<usize> = (0..g.len())
        .filter(|&v| mask[v])
        .map(|v| comps[v])
        .collect();
    labels.dedup();
    labels.len() <= 1
}

fn mask_of(g: &PvGraph, members: &[u32]) -> Vec<bool> {
    let mut mask = vec![false; g.len()];
    for id in members {
        if let Some(i) = g.index_of(*id) {
            mask[i] = true;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Point;

    fn pv(id: u32, x: f64, y: f64, f: f64) -> ParkedVehicle {
        ParkedVehicle {
            id,
            position: Point::new(x, y),
            cpu_freq_hz: f,
            cycles_per_bit: 24.0,
            parked_since_s: 0.0,
            arrival_hour: 0,
        }
    }

    fn params() -> SelectionParams {
        SelectionParams::default_for(&ChannelParams::default())
    }

    #[test]
    fn two_identical_nodes_split_quality() {
        let g = build_graph(
            &[pv(1, 0.0, 0.0, 2e9), pv(2, 50.0, 0.0, 2e9)],
            &ChannelParams::default(),
            &params(),
        )
        .unwrap();
        assert!((g.quality[0] - 0.5).abs() < 1e-15);
        assert!((g.quality[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn capacity_only_weights() {
        let mut p = params();
        p.w1 = 0.0;
        p.w2 = 1.0;
        let g = build_graph(
            &[
                pv(1, 0.0, 0.0, 1e9),
                pv(2, 50.0, 0.0, 3e9),
                pv(3, 80.0, 10.0, 2e9),
            ],
            &ChannelParams::default(),
            &p,
        )
        .unwrap();
        let expect = [1.0 / 6.0, 0.5, 1.0 / 3.0];
        for (q, e) in g.quality.iter().zip(expect) {
            assert!((q - e).abs() < 1e-15);
        }
    }

    #[test]
    fn complete_graph_single_head() {
        let pcs = [
            pv(1, 0.0, 0.0, 1e9),
            pv(2, 10.0, 0.0, 2.4e9),
            pv(3, 0.0, 10.0, 1e9),
            pv(4, 10.0, 10.0, 1e9),
        ];
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_cds(&g).unwrap();
        assert_eq!(s.members, vec![2]);
        assert_eq!(s.leader, 2);
    }

    #[test]
    fn path_centre_dominates() {
        // 250 m spacing: a–b and b–c adjacent, a–c not.
        let pcs = [
            pv(1, 0.0, 0.0, 1e9),
            pv(2, 250.0, 0.0, 2e9),
            pv(3, 500.0, 0.0, 1e9),
        ];
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        assert!(!g.adjacency[0][2]);
        let s = select_cds(&g).unwrap();
        assert_eq!(s.members, vec![2]);
    }

    #[test]
    fn long_path_needs_connectors() {
        let pcs: Vec<_> = (0..7)
            .map(|i| pv(i + 1, 250.0 * i as f64, 0.0, 1e9 + 1e7 * i as f64))
            .collect();
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_cds(&g).unwrap();
        assert!(is_dominating(&g, &s.members));
        assert!(is_connected(&g, &s.members));
        assert!(!s.disconnected);
    }

    #[test]
    fn disconnected_graph_flags() {
        let pcs = [pv(1, 0.0, 0.0, 1e9), pv(2, 5000.0, 0.0, 1e9)];
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_cds(&g).unwrap();
        assert!(s.disconnected);
        assert_eq!(s.members.len(), 2);
        assert!(is_dominating(&g, &s.members));
    }

    #[test]
    fn baselines() {
        let pcs = [
            pv(1, 0.0, 0.0, 1.1e9),
            pv(2, 100.0, 0.0, 2.4e9),
            pv(3, 0.0, 100.0, 1.5e9),
            pv(4, 100.0, 100.0, 1.0e9),
        ];
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_baseline(&g, Strategy::CapacityOnly, 1, 0).unwrap();
        assert_eq!(s.members, vec![2]);
        let a = select_baseline(&g, Strategy::Random, 2, 42).unwrap();
        let b = select_baseline(&g, Strategy::Random, 2, 42).unwrap();
        assert_eq!(a, b);
        assert!(select_baseline(&g, Strategy::Random, 5, 42).is_err());
    }

    #[test]
    fn communication_only_picks_hub() {
        // Star: hub at origin, leaves on a circle of 200 m.
        let mut pcs = vec![pv(9, 0.0, 0.0, 1e9)];
        for k in 0..5 {
            let a = k as f64 * std::f64::consts::TAU / 5.0;
            pcs.push(pv(k + 1, 200.0 * a.cos(), 200.0 * a.sin(), 2e9));
        }
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_baseline(&g, Strategy::CommunicationOnly, 1, 0).unwrap();
        assert_eq!(s.members, vec![9]);
    }

    #[test]
    fn resize_grows_and_shrinks() {
        let pcs: Vec<_> = (0..6)
            .map(|i| pv(i + 1, 40.0 * i as f64, 0.0, 1e9 + 1e8 * i as f64))
            .collect();
        let g = build_graph(&pcs, &ChannelParams::default(), &params()).unwrap();
        let s = select_cds(&g).unwrap();
        let big = resize_committee(&g, &s, 4).unwrap();
        assert_eq!(big.len(), 4);
        assert!(big.members.contains(&s.leader));
        let small = resize_committee(&g, &big, 2).unwrap();
        assert_eq!(small.members, big.members[..2].to_vec());
    }

    #[test]
    fn filter_threshold_edges() {
        let tbl = ParkingMixtureTable::default();
        let pvs: Vec<_> = (0..10)
            .map(|i| {
                let mut p = pv(i + 1, 10.0 * i as f64, 0.0, 1e9);
                p.parked_since_s = 1800.0 * i as f64;
                p
            })
            .collect();
        let mut p = params();
        p.stay_threshold = 0.0;
        assert_eq!(filter_by_stay(&pvs, &tbl, &p).unwrap().len(), 10);
        p.stay_threshold = 0.95;
        let kept = filter_by_stay(&pvs, &tbl, &p).unwrap();
        assert!(kept.len() < 10 && !kept.is_empty());
    }
}
