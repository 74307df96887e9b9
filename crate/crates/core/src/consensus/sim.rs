//! Discrete-event execution of the four-phase leader-based BFT protocol.
//!
//! Nodes are committee members; the leader of view `v` is member
//! `(v − 1) mod N` in committee order. Each view runs new-view → prepare →
//! pre-commit → commit → decide, with quorum `2F + 1` votes (the leader's
//! own vote included). A replica that hears nothing useful from the leader
//! for `4 ×` the maximum one-way latency moves on to the next view.
//!
//! Cryptography is simulated: a vote is either valid or not, and QCs are
//! lists of signer indices. The cost ledger charges the per-phase cycle
//! counts of the analytic model, but only for phases that actually
//! completed and only to nodes that actually took part.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    consensus_tx_energy_led_by, phase_cycles, ChainCosts, Committee, ConsensusError, Phase, Role,
};
use crate::scenario::{ChannelParams, BYTE_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Sends nothing at all.
    #[default]
    Silent,
    /// As leader, proposes two conflicting blocks to the two halves of the
    /// committee; as replica, votes for every proposal without safety checks.
    Equivocate,
    /// Follows the protocol but every vote carries an invalid signature.
    VoteInvalid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlan {
    /// PV ids of Byzantine members.
    pub byzantine_ids: BTreeSet<u32>,
    pub behavior: Behavior,
    /// Views in which the (otherwise honest) leader stays silent.
    pub leader_failures: BTreeSet<u64>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self, m: &Committee) -> Result<(), ConsensusError> {
        for id in &self.byzantine_ids {
            if !m.ids.contains(id) {
                return Err(ConsensusError::InvalidFaultPlan(format!(
                    "byzantine id {id} is not a committee member"
                )));
            }
        }
        let f = m.max_faults();
        if self.byzantine_ids.len() > f {
            return Err(ConsensusError::InvalidFaultPlan(format!(
                "{} byzantine members exceed the tolerance F = {f} for N = {}",
                self.byzantine_ids.len(),
                m.len()
            )));
        }
        if self.leader_failures.contains(&0) {
            return Err(ConsensusError::InvalidFaultPlan("views start at 1".into()));
        }
        Ok(())
    }
}

/// One-way message latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { seconds: f64 },
    Uniform { min_s: f64, max_s: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { seconds: 0.01 }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let ok = match *self {
            LatencyModel::Fixed { seconds } => seconds > 0.0 && seconds.is_finite(),
            LatencyModel::Uniform { min_s, max_s } => {
                min_s >= 0.0 && max_s > 0.0 && min_s <= max_s && max_s.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ConsensusError::InvalidLatency(format!("{self:?}")))
        }
    }

    pub fn max_seconds(&self) -> f64 {
        match *self {
            LatencyModel::Fixed { seconds } => seconds,
            LatencyModel::Uniform { max_s, .. } => max_s,
        }
    }

    fn sample_ns(&self, rng: &mut ChaCha8Rng) -> u64 {
        let s = match *self {
            LatencyModel::Fixed { seconds } => seconds,
            LatencyModel::Uniform { min_s, max_s } => {
                if max_s > min_s {
                    rng.random_range(min_s..=max_s)
                } else {
                    min_s
                }
            }
        };
        secs_to_ns(s)
    }
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    NewView,
    Prepare,
    VotePrepare,
    PreCommit,
    VotePreCommit,
    Commit,
    VoteCommit,
    Decide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcKind {
    Genesis,
    Prepare,
    PreCommit,
    Commit,
}

/// Quorum certificate: the signer indices of a quorum of valid votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qc {
    pub kind: QcKind,
    pub view: u64,
    pub block: u64,
    pub signers: Vec<usize>,
}

impl Qc {
    fn genesis() -> Self {
        Self {
            kind: QcKind::Genesis,
            view: 0,
            block: GENESIS,
            signers: Vec::new(),
        }
    }
}

const GENESIS: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: u64,
    pub parent: u64,
    pub height: u64,
    pub view: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewChangeReason {
    Decide,
    Timeout,
}

/// One line of the JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Deliver {
        t: f64,
        kind: MsgKind,
        from: u32,
        to: u32,
        view: u64,
        block: Option<u64>,
        valid: bool,
        size_bytes: f64,
    },
    /// A phase finished at the leader: a proposal went out (`new_view`), a
    /// QC formed (`prepare`, `pre_commit`, `commit`), or the decision was
    /// broadcast (`decide`).
    Phase {
        t: f64,
        view: u64,
        phase: Phase,
        leader: u32,
        block: u64,
        signers: Vec<u32>,
    },
    Commit {
        t: f64,
        node: u32,
        view: u64,
        height: u64,
        block: u64,
        parent: u64,
    },
    ViewChange {
        t: f64,
        node: u32,
        from_view: u64,
        to_view: u64,
        reason: ViewChangeReason,
    },
}

/// Cycles and energy charged over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostLedger {
    pub committee_size: usize,
    pub views: u64,
    pub committed_views: u64,
    /// Leader cycles per phase, summed over views.
    pub leader_cycles: [f64; 5],
    /// Replica cycles per phase, summed over views and replicas.
    pub replica_cycles: [f64; 5],
    /// Total cycles per committee member (committee order).
    pub node_cycles: Vec<f64>,
    pub compute_energy_j: f64,
    pub tx_energy_j: f64,
}

impl CostLedger {
    pub fn total_energy_j(&self) -> f64 {
        self.compute_energy_j + self.tx_energy_j
    }

    pub fn row(&self, label: &str) -> LedgerRow {
        LedgerRow {
            label: label.to_string(),
            committee_size: self.committee_size,
            views: self.views,
            committed_views: self.committed_views,
            leader_new_view: self.leader_cycles[0],
            leader_prepare: self.leader_cycles[1],
            leader_pre_commit: self.leader_cycles[2],
            leader_commit: self.leader_cycles[3],
            leader_decide: self.leader_cycles[4],
            replica_new_view: self.replica_cycles[0],
            replica_prepare: self.replica_cycles[1],
            replica_pre_commit: self.replica_cycles[2],
            replica_commit: self.replica_cycles[3],
            replica_decide: self.replica_cycles[4],
            compute_energy_j: self.compute_energy_j,
            tx_energy_j: self.tx_energy_j,
            total_energy_j: self.total_energy_j(),
        }
    }
}

/// Flat CSV form of a [`CostLedger`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub label: String,
    pub committee_size: usize,
    pub views: u64,
    pub committed_views: u64,
    pub leader_new_view: f64,
    pub leader_prepare: f64,
    pub leader_pre_commit: f64,
    pub leader_commit: f64,
    pub leader_decide: f64,
    pub replica_new_view: f64,
    pub replica_prepare: f64,
    pub replica_pre_commit: f64,
    pub replica_commit: f64,
    pub replica_decide: f64,
    pub compute_energy_j: f64,
    pub tx_energy_j: f64,
    pub total_energy_j: f64,
}

pub fn write_ledger_csv<W: Write>(w: W, rows: &[LedgerRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewRecord {
    pub view: u64,
    pub leader: u32,
    pub proposed: Vec<u64>,
    /// Block whose commit QC formed in this view.
    pub decided: Option<u64>,
    pub phases_completed: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusRun {
    pub committee: Vec<u32>,
    pub honest: Vec<u32>,
    pub blocks: Vec<Block>,
    pub views: Vec<ViewRecord>,
    pub events: Vec<TraceEvent>,
    pub ledger: CostLedger,
    pub end_time_s: f64,
}

impl ConsensusRun {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            s.push('\n');
        }
        s
    }

    /// Blocks committed by `node` (PV id) as `(height, block)` in commit order.
    pub fn committed_by(&self, node: u32) -> Vec<(u64, u64)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Commit {
                    node: n,
                    height,
                    block,
                    ..
                } if *n == node => Some((*height, *block)),
                _ => None,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Simulation state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Body {
    NewView { justify: Qc },
    Proposal { block: u64, justify: Qc },
    Vote { block: u64, valid: bool },
    Cert { qc: Qc },
}

#[derive(Debug, Clone)]
struct Msg {
    kind: MsgKind,
    from: usize,
    to: usize,
    view: u64,
    body: Body,
}

#[derive(Debug)]
enum Event {
    Deliver { msg: Msg, replay: bool },
    Timeout { node: usize, view: u64, epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Conduct {
    Honest,
    Byzantine(Behavior),
}

#[derive(Debug)]
struct Node {
    conduct: Conduct,
    view: u64,
    finished: bool,
    prepare_qc: Qc,
    locked_qc: Qc,
    voted: BTreeSet<MsgKind>,
    committed_height: u64,
    committed_tip: u64,
    epoch: u64,
    future: Vec<Msg>,
    // Leader state for the current view.
    new_views: BTreeMap<usize, Qc>,
    proposed: Vec<u64>,
    votes: BTreeMap<(MsgKind, u64), BTreeSet<usize>>,
    qcs: BTreeMap<QcKind, Qc>,
}

struct Sim<'a> {
    m: &'a Committee,
    chain: &'a ChainCosts,
    ch: &'a ChannelParams,
    plan: &'a FaultPlan,
    net: LatencyModel,
    rounds: u64,
    n: usize,
    quorum: usize,
    timeout_ns: u64,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<u64, Event>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    blocks: Vec<Block>,
    events: Vec<TraceEvent>,
    views: BTreeMap<u64, ViewRecord>,
    /// Replicas that sent the message of each (view, phase).
    participants: BTreeMap<(u64, Phase), BTreeSet<usize>>,
}

/// Run `rounds` views of the protocol over committee `m`.
pub fn run_consensus(
    m: &Committee,
    chain: &ChainCosts,
    ch: &ChannelParams,
    plan: &FaultPlan,
    net: LatencyModel,
    rounds: u64,
    seed: u64,
) -> Result<ConsensusRun, ConsensusError> {
    if m.is_empty() {
        return Err(ConsensusError::EmptyCommittee);
    }
    if rounds == 0 {
        return Err(ConsensusError::NoRounds);
    }
    plan.validate(m)?;
    net.validate()?;
    // Every leader–replica link must carry data for the energy ledger.
    for a in 0..m.len() {
        for b in 0..m.len() {
            if a != b {
                m.rate(a, b, ch)?;
            }
        }
    }
    let n = m.len();
    let f = m.max_faults();
    let nodes = (0..n)
        .map(|i| Node {
            conduct: if plan.byzantine_ids.contains(&m.ids[i]) {
                Conduct::Byzantine(plan.behavior)
            } else {
                Conduct::Honest
            },
            view: 0,
            finished: false,
            prepare_qc: Qc::genesis(),
            locked_qc: Qc::genesis(),
            voted: BTreeSet::new(),
            committed_height: 0,
            committed_tip: GENESIS,
            epoch: 0,
            future: Vec::new(),
            new_views: BTreeMap::new(),
            proposed: Vec::new(),
            votes: BTreeMap::new(),
            qcs: BTreeMap::new(),
        })
        .collect();
    let mut sim = Sim {
        m,
        chain,
        ch,
        plan,
        net,
        rounds,
        n,
        quorum: 2 * f + 1,
        timeout_ns: secs_to_ns(4.0 * net.max_seconds()),
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        pending: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes,
        blocks: vec![Block {
            id: GENESIS,
            parent: GENESIS,
            height: 0,
            view: 0,
        }],
        events: Vec::new(),
        views: BTreeMap::new(),
        participants: BTreeMap::new(),
    };
    sim.run();
    sim.finish()
}

impl<'a> Sim<'a> {
    fn leader_of(&self, view: u64) -> usize {
        ((view - 1) % self.n as u64) as usize
    }

    fn is_silent(&self, i: usize) -> bool {
        self.nodes[i].conduct == Conduct::Byzantine(Behavior::Silent)
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.pending.insert(self.seq, ev);
    }

    fn view_record(&mut self, view: u64) -> &mut ViewRecord {
        let leader = self.m.ids[self.leader_of(view)];
        self.views.entry(view).or_insert_with(|| ViewRecord {
            view,
            leader,
            proposed: Vec::new(),
            decided: None,
            phases_completed: Vec::new(),
        })
    }

    fn msg_size_bits(&self, kind: MsgKind) -> f64 {
        match kind {
            MsgKind::Prepare => self.chain.block_bits,
            _ => self.chain.vote_bits,
        }
    }

    fn send(&mut self, from: usize, to: usize, kind: MsgKind, view: u64, body: Body) {
        if self.is_silent(from) {
            return;
        }
        let lat = if from == to {
            0
        } else {
            self.net.sample_ns(&mut self.rng)
        };
        if from != to {
            let phase = match kind {
                MsgKind::NewView => Some(Phase::NewView),
                MsgKind::VotePrepare => Some(Phase::Prepare),
                MsgKind::VotePreCommit => Some(Phase::PreCommit),
                MsgKind::VoteCommit => Some(Phase::Commit),
                _ => None,
            };
            if let Some(p) = phase {
                self.participants.entry((view, p)).or_default().insert(from);
            }
        }
        let msg = Msg {
            kind,
            from,
            to,
            view,
            body,
        };
        self.schedule(self.now + lat, Event::Deliver { msg, replay: false });
    }

    fn broadcast(&mut self, from: usize, kind: MsgKind, view: u64, body: Body) {
        for to in 0..self.n {
            self.send(from, to, kind, view, body.clone());
        }
    }

    fn arm_timer(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        node.epoch += 1;
        let (view, epoch) = (node.view, node.epoch);
        self.schedule(
            self.now + self.timeout_ns,
            Event::Timeout {
                node: i,
                view,
                epoch,
            },
        );
    }

    fn run(&mut self) {
        for i in 0..self.n {
            if self.is_silent(i) {
                self.nodes[i].finished = true;
            } else {
                self.enter_view(i, 1, None);
            }
        }
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            if self.nodes.iter().all(|n| n.finished) {
                break;
            }
            self.now = at;
            let ev = self.pending.remove(&seq).expect("scheduled event exists");
            match ev {
                Event::Deliver { msg, replay } => self.deliver(msg, replay),
                Event::Timeout { node, view, epoch } => {
                    let nd = &self.nodes[node];
                    if !nd.finished && nd.view == view && nd.epoch == epoch {
                        self.enter_view(node, view + 1, Some(ViewChangeReason::Timeout));
                    }
                }
            }
        }
    }

    fn enter_view(&mut self, i: usize, view: u64, reason: Option<ViewChangeReason>) {
        let from_view = self.nodes[i].view;
        if let Some(reason) = reason {
            self.events.push(TraceEvent::ViewChange {
                t: ns_to_secs(self.now),
                node: self.m.ids[i],
                from_view,
                to_view: view,
                reason,
            });
        }
        if view > self.rounds {
            self.nodes[i].finished = true;
            return;
        }
        self.view_record(view);
        {
            let node = &mut self.nodes[i];
            node.view = view;
            node.voted.clear();
            node.new_views.clear();
            node.proposed.clear();
            node.votes.clear();
            node.qcs.clear();
        }
        self.arm_timer(i);
        let leader = self.leader_of(view);
        let justify = self.nodes[i].prepare_qc.clone();
        self.send(i, leader, MsgKind::NewView, view, Body::NewView { justify });
        // Replay messages that arrived early for this view.
        let future = std::mem::take(&mut self.nodes[i].future);
        let (now_msgs, later): (Vec<Msg>, Vec<Msg>) =
            future.into_iter().partition(|m| m.view == view);
        self.nodes[i].future = later.into_iter().filter(|m| m.view > view).collect();
        for msg in now_msgs {
            self.schedule(self.now, Event::Deliver { msg, replay: true });
        }
    }

    fn deliver(&mut self, msg: Msg, replay: bool) {
        if !replay {
            let (block, valid) = match &msg.body {
                Body::NewView { justify } => (Some(justify.block), true),
                Body::Proposal { block, .. } => (Some(*block), true),
                Body::Vote { block, valid } => (Some(*block), *valid),
                Body::Cert { qc } => (Some(qc.block), true),
            };
            self.events.push(TraceEvent::Deliver {
                t: ns_to_secs(self.now),
                kind: msg.kind,
                from: self.m.ids[msg.from],
                to: self.m.ids[msg.to],
                view: msg.view,
                block,
                valid,
                size_bytes: self.msg_size_bits(msg.kind) / BYTE_BITS,
            });
        }
        let i = msg.to;
        let node = &mut self.nodes[i];
        if node.finished {
            return;
        }
        if msg.view > node.view {
            node.future.push(msg);
            return;
        }
        if msg.view < node.view {
            return;
        }
        let view = msg.view;
        let leader = self.leader_of(view);
        match (msg.kind, msg.body) {
            (MsgKind::NewView, Body::NewView { justify }) if i == leader => {
                self.on_new_view(i, msg.from, view, justify)
            }
            (MsgKind::Prepare, Body::Proposal { block, justify }) if msg.from == leader => {
                self.on_proposal(i, view, block, justify)
            }
            (
                MsgKind::VotePrepare | MsgKind::VotePreCommit | MsgKind::VoteCommit,
                Body::Vote { block, valid },
            ) if i == leader => self.on_vote(i, msg.from, msg.kind, view, block, valid),
            (MsgKind::PreCommit | MsgKind::Commit | MsgKind::Decide, Body::Cert { qc })
                if msg.from == leader =>
            {
                self.on_cert(i, msg.kind, view, qc)
            }
            _ => {}
        }
    }

    fn qc_valid(&self, qc: &Qc, kind: QcKind) -> bool {
        if qc.kind == QcKind::Genesis {
            return kind == QcKind::Prepare && qc.view == 0 && qc.block == GENESIS;
        }
        let distinct: BTreeSet<&usize> = qc.signers.iter().collect();
        qc.kind == kind
            && distinct.len() >= self.quorum
            && distinct.iter().all(|&&s| s < self.n)
            && (qc.block as usize) < self.blocks.len()
    }

    fn extends(&self, mut b: u64, ancestor: u64) -> bool {
        loop {
            if b == ancestor {
                return true;
            }
            if b == GENESIS {
                return false;
            }
            b = self.blocks[b as usize].parent;
        }
    }

    fn on_new_view(&mut self, i: usize, from: usize, view: u64, justify: Qc) {
        if self.plan.leader_failures.contains(&view) {
            return;
        }
        if !self.qc_valid(&justify, QcKind::Prepare) {
            return;
        }
        let node = &mut self.nodes[i];
        node.new_views.insert(from, justify);
        if node.proposed.is_empty() && node.new_views.len() >= self.quorum {
            self.propose(i, view);
        }
    }

    fn new_block(&mut self, parent: u64, view: u64) -> u64 {
        let id = self.blocks.len() as u64;
        let height = self.blocks[parent as usize].height + 1;
        self.blocks.push(Block {
            id,
            parent,
            height,
            view,
        });
        id
    }

    fn propose(&mut self, i: usize, view: u64) {
        let high = self.nodes[i]
            .new_views
            .values()
            .max_by_key(|q| q.view)
            .cloned()
            .expect("quorum of new-view messages");
        let equivocate = self.nodes[i].conduct == Conduct::Byzantine(Behavior::Equivocate);
        let b1 = self.new_block(high.block, view);
        let mut blocks = vec![b1];
        if equivocate {
            blocks.push(self.new_block(high.block, view));
        }
        self.nodes[i].proposed = blocks.clone();
        let leader_id = self.m.ids[i];
        for &b in &blocks {
            self.events.push(TraceEvent::Phase {
                t: ns_to_secs(self.now),
                view,
                phase: Phase::NewView,
                leader: leader_id,
                block: b,
                signers: Vec::new(),
            });
        }
        let rec = self.view_record(view);
        rec.proposed = blocks.clone();
        rec.phases_completed.push(Phase::NewView);
        if equivocate {
            let others: Vec<usize> = (0..self.n).filter(|&r| r != i).collect();
            let half = others.len().div_ceil(2);
            for (k, &r) in others.iter().enumerate() {
                let b = if k < half { blocks[0] } else { blocks[1] };
                let body = Body::Proposal {
                    block: b,
                    justify: high.clone(),
                };
                self.send(i, r, MsgKind::Prepare, view, body);
            }
            for &b in &blocks {
                let body = Body::Proposal {
                    block: b,
                    justify: high.clone(),
                };
                self.send(i, i, MsgKind::Prepare, view, body);
            }
        } else {
            self.broadcast(
                i,
                MsgKind::Prepare,
                view,
                Body::Proposal {
                    block: b1,
                    justify: high,
                },
            );
        }
    }

    fn vote(&mut self, i: usize, kind: MsgKind, view: u64, block: u64) {
        let valid = self.nodes[i].conduct != Conduct::Byzantine(Behavior::VoteInvalid);
        let leader = self.leader_of(view);
        self.send(i, leader, kind, view, Body::Vote { block, valid });
    }

    fn on_proposal(&mut self, i: usize, view: u64, block: u64, justify: Qc) {
        let reckless = self.nodes[i].conduct == Conduct::Byzantine(Behavior::Equivocate);
        if (block as usize) >= self.blocks.len() {
            return;
        }
        if !reckless {
            if self.nodes[i].voted.contains(&MsgKind::VotePrepare) {
                return;
            }
            if !self.qc_valid(&justify, QcKind::Prepare) {
                return;
            }
            if self.blocks[block as usize].parent != justify.block {
                return;
            }
            let locked = &self.nodes[i].locked_qc;
            let safe = self.extends(block, locked.block) || justify.view > locked.view;
            if !safe {
                return;
            }
        }
        self.nodes[i].voted.insert(MsgKind::VotePrepare);
        self.arm_timer(i);
        self.vote(i, MsgKind::VotePrepare, view, block);
    }

    fn on_vote(
        &mut self,
        i: usize,
        from: usize,
        kind: MsgKind,
        view: u64,
        block: u64,
        valid: bool,
    ) {
        if !valid {
            return;
        }
        let (needed, qc_kind, phase, next) = match kind {
            MsgKind::VotePrepare => (None, QcKind::Prepare, Phase::Prepare, MsgKind::PreCommit),
            MsgKind::VotePreCommit => (
                Some(QcKind::Prepare),
                QcKind::PreCommit,
                Phase::PreCommit,
                MsgKind::Commit,
            ),
            MsgKind::VoteCommit => (
                Some(QcKind::PreCommit),
                QcKind::Commit,
                Phase::Commit,
                MsgKind::Decide,
            ),
            _ => return,
        };
        let node = &mut self.nodes[i];
        let expected_ok = match needed {
            None => node.proposed.contains(&block),
            Some(k) => node.qcs.get(&k).is_some_and(|q| q.block == block),
        };
        if !expected_ok || node.qcs.contains_key(&qc_kind) {
            return;
        }
        let set = node.votes.entry((kind, block)).or_default();
        set.insert(from);
        if set.len() < self.quorum {
            return;
        }
        let qc = Qc {
            kind: qc_kind,
            view,
            block,
            signers: set.iter().copied().collect(),
        };
        node.qcs.insert(qc_kind, qc.clone());
        let leader_id = self.m.ids[i];
        let signers: Vec<u32> = qc.signers.iter().map(|&s| self.m.ids[s]).collect();
        self.events.push(TraceEvent::Phase {
            t: ns_to_secs(self.now),
            view,
            phase,
            leader: leader_id,
            block,
            signers: signers.clone(),
        });
        let rec = self.view_record(view);
        rec.phases_completed.push(phase);
        if qc_kind == QcKind::Commit {
            rec.decided = Some(block);
            rec.phases_completed.push(Phase::Decide);
            self.events.push(TraceEvent::Phase {
                t: ns_to_secs(self.now),
                view,
                phase: Phase::Decide,
                leader: leader_id,
                block,
                signers,
            });
        }
        self.broadcast(i, next, view, Body::Cert { qc });
    }

    fn on_cert(&mut self, i: usize, kind: MsgKind, view: u64, qc: Qc) {
        let expect = match kind {
            MsgKind::PreCommit => QcKind::Prepare,
            MsgKind::Commit => QcKind::PreCommit,
            MsgKind::Decide => QcKind::Commit,
            _ => return,
        };
        if qc.view != view || !self.qc_valid(&qc, expect) {
            return;
        }
        let reckless = self.nodes[i].conduct == Conduct::Byzantine(Behavior::Equivocate);
        match kind {
            MsgKind::PreCommit => {
                if self.nodes[i].voted.contains(&MsgKind::VotePreCommit) && !reckless {
                    return;
                }
                self.arm_timer(i);
                let node = &mut self.nodes[i];
                if qc.view > node.prepare_qc.view {
                    node.prepare_qc = qc.clone();
                }
                node.voted.insert(MsgKind::VotePreCommit);
                self.vote(i, MsgKind::VotePreCommit, view, qc.block);
            }
            MsgKind::Commit => {
                if self.nodes[i].voted.contains(&MsgKind::VoteCommit) && !reckless {
                    return;
                }
                self.arm_timer(i);
                let node = &mut self.nodes[i];
                node.locked_qc = qc.clone();
                node.voted.insert(MsgKind::VoteCommit);
                self.vote(i, MsgKind::VoteCommit, view, qc.block);
            }
            MsgKind::Decide => {
                self.commit(i, view, qc.block);
                self.enter_view(i, view + 1, Some(ViewChangeReason::Decide));
            }
            _ => {}
        }
    }

    fn commit(&mut self, i: usize, view: u64, block: u64) {
        let mut chain = Vec::new();
        let mut b = block;
        while self.blocks[b as usize].height > self.nodes[i].committed_height {
            chain.push(b);
            b = self.blocks[b as usize].parent;
        }
        for &b in chain.iter().rev() {
            let blk = self.blocks[b as usize];
            self.events.push(TraceEvent::Commit {
                t: ns_to_secs(self.now),
                node: self.m.ids[i],
                view,
                height: blk.height,
                block: b,
                parent: blk.parent,
            });
        }
        if let Some(&top) = chain.first() {
            let node = &mut self.nodes[i];
            node.committed_height = self.blocks[top as usize].height;
            node.committed_tip = top;
        }
    }

    fn finish(self) -> Result<ConsensusRun, ConsensusError> {
        let f = self.m.max_faults();
        let mut leader_cycles = [0.0; 5];
        let mut replica_cycles = [0.0; 5];
        let mut node_cycles = vec![0.0; self.n];
        let mut tx = 0.0;
        let mut committed_views = 0;
        for rec in self.views.values() {
            let leader = self.leader_of(rec.view);
            for &p in &rec.phases_completed {
                let lc = phase_cycles(Role::Leader, p, self.chain, f);
                leader_cycles[p.index()] += lc;
                node_cycles[leader] += lc;
                if let Some(parts) = self.participants.get(&(rec.view, p)) {
                    let rc = phase_cycles(Role::Replica, p, self.chain, f);
                    for &r in parts.iter().filter(|&&r| r != leader) {
                        replica_cycles[p.index()] += rc;
                        node_cycles[r] += rc;
                    }
                }
            }
            if rec.decided.is_some() {
                committed_views += 1;
                tx += consensus_tx_energy_led_by(self.m, self.chain, self.ch, leader)?;
            }
        }
        let compute: f64 = node_cycles
            .iter()
            .zip(&self.m.cpu_freq_hz)
            .map(|(c, fq)| self.chain.kappa * fq * fq * c)
            .sum();
        let honest = (0..self.n)
            .filter(|&i| self.nodes[i].conduct == Conduct::Honest)
            .map(|i| self.m.ids[i])
            .collect();
        Ok(ConsensusRun {
            committee: self.m.ids.clone(),
            honest,
            blocks: self.blocks,
            views: self.views.into_values().collect(),
            events: self.events,
            ledger: CostLedger {
                committee_size: self.n,
                views: self.rounds,
                committed_views,
                leader_cycles,
                replica_cycles,
                node_cycles,
                compute_energy_j: compute,
                tx_energy_j: tx,
            },
            end_time_s: ns_to_secs(self.now),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::consensus_compute_energy;
    use crate::scenario::{ConsensusCostParams, Point};

    fn committee(n: usize) -> Committee {
        Committee {
            ids: (10..10 + n as u32).collect(),
            cpu_freq_hz: (0..n).map(|i| 1e9 + 1e8 * i as f64).collect(),
            positions: (0..n)
                .map(|i| Point::new(30.0 * i as f64, 5.0 * (i % 2) as f64))
                .collect(),
        }
    }

    fn run(n: usize, plan: &FaultPlan, rounds: u64) -> ConsensusRun {
        run_consensus(
            &committee(n),
            &ChainCosts::vehicle(&ConsensusCostParams::default()),
            &ChannelParams::default(),
            plan,
            LatencyModel::default(),
            rounds,
            1,
        )
        .unwrap()
    }

    #[test]
    fn fault_free_single_view_matches_analytic() {
        let r = run(4, &FaultPlan::none(), 1);
        assert_eq!(r.ledger.committed_views, 1);
        let c = ChainCosts::vehicle(&ConsensusCostParams::default());
        let e = consensus_compute_energy(&committee(4), &c).unwrap();
        assert!((r.ledger.compute_energy_j - e).abs() / e < 1e-12);
        for id in &r.honest {
            assert_eq!(r.committed_by(*id).len(), 1);
        }
        // Four leader broadcasts of one message each to four nodes, plus
        // new-view and three vote rounds.
        let delivers = r
            .events
            .iter()
            .filter(|e| matches!(e, TraceEvent::Deliver { .. }))
            .count();
        assert_eq!(delivers, 8 * 4);
    }

    #[test]
    fn silent_leader_forces_view_change() {
        let plan = FaultPlan {
            leader_failures: [1].into(),
            ..FaultPlan::default()
        };
        let r = run(4, &plan, 2);
        assert!(r.views[0].decided.is_none());
        assert!(r.views[1].decided.is_some());
        assert!(r.events.iter().any(|e| matches!(
            e,
            TraceEvent::ViewChange {
                reason: ViewChangeReason::Timeout,
                ..
            }
        )));
    }

    #[test]
    fn too_many_byzantine_rejected() {
        let plan = FaultPlan {
            byzantine_ids: [10, 11].into(),
            ..FaultPlan::default()
        };
        let err = run_consensus(
            &committee(4),
            &ChainCosts::vehicle(&ConsensusCostParams::default()),
            &ChannelParams::default(),
            &plan,
            LatencyModel::default(),
            1,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, ConsensusError::InvalidFaultPlan(_)));
    }

    #[test]
    fn single_node_commits_alone() {
        let r = run(1, &FaultPlan::none(), 3);
        assert_eq!(r.ledger.committed_views, 3);
        assert_eq!(r.ledger.tx_energy_j, 0.0);
    }

    #[test]
    fn invalid_votes_do_not_count() {
        let plan = FaultPlan {
            byzantine_ids: [11].into(),
            behavior: Behavior::VoteInvalid,
            ..FaultPlan::default()
        };
        let r = run(4, &plan, 4);
        assert_eq!(r.ledger.committed_views, 4);
        for e in &r.events {
            if let TraceEvent::Phase { signers, .. } = e {
                assert!(!signers.contains(&11));
            }
        }
    }
}
