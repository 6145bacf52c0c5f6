// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! One replica: `k` DAG instances, their commit engines and the global log,
//! driven by inputs from the event loop.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::commit::{CommitConfig, CommitEngine, LogSegment};
use crate::dag::{CertificateRef, DagError, DagNode, Digest, LocalDag, NodeProposal, Vote};
use crate::multi_dag::{submit_txn, GlobalEntry, GlobalLog, Interleave, StaggerConfig};
use crate::types::{Committee, DagId, NodeKey, ReplicaId, Round, SimTime, TxnId};

/// Round length assumed before one has been observed.
const DEFAULT_ROUND: SimTime = SimTime(3 * crate::types::TICKS_PER_MD);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Proposal(NodeProposal),
    Vote(Vote),
    Certificate(DagNode),
    FetchRequest { dag_id: DagId, reference: CertificateRef },
    FetchResponse(DagNode),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Proposal(_) => "proposal",
            Message::Vote(_) => "vote",
            Message::Certificate(_) => "certificate",
            Message::FetchRequest { .. } => "fetch_req",
            Message::FetchResponse(_) => "fetch_resp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    DagStart(DagId),
    RoundTimeout(DagId, Round),
    FetchRetry { dag_id: DagId, reference: CertificateRef, peers: Vec<ReplicaId>, attempt: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Message { from: ReplicaId, msg: Message },
    Timer(Timer),
    Submit(TxnId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Send {
        to: ReplicaId,
        msg: Message,
    },
    /// To every replica except the sender.
    Broadcast(Message),
    Timer {
        at: SimTime,
        timer: Timer,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub dag_id: DagId,
    pub key: NodeKey,
    pub digest: Digest,
    pub time: SimTime,
    pub batch: Vec<TxnId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub txn: TxnId,
    pub dag_id: DagId,
    pub time: SimTime,
}

/// Everything a replica reports to the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observation {
    Proposed(ProposalRecord),
    Submitted(Submission),
    Segment(LogSegment),
    Appended(GlobalEntry),
    Fault { time: SimTime, detail: String },
}

#[derive(Clone, Debug)]
pub struct ReplicaConfig {
    pub id: ReplicaId,
    pub committee: Committee,
    pub commit: CommitConfig,
    pub stagger: StaggerConfig,
    pub round_timeout: SimTime,
    pub interleave: Interleave,
    pub fetch_retry: SimTime,
    /// Sends conflicting proposals to the two halves of the committee.
    pub equivocate: bool,
}

#[derive(Clone, Debug)]
struct Instance {
    dag: LocalDag,
    engine: CommitEngine,
    mempool: Vec<TxnId>,
    started: bool,
    timeout_armed: Option<Round>,
}

#[derive(Clone, Debug)]
pub struct Replica {
    cfg: ReplicaConfig,
    dags: Vec<Instance>,
    ready: Vec<VecDeque<LogSegment>>,
    log: GlobalLog,
    out: Vec<Output>,
    obs: Vec<Observation>,
}

impl Replica {
    pub fn new(cfg: ReplicaConfig) -> Self {
        let k = cfg.stagger.k;
        let dags = (0..k)
            .map(|d| Instance {
                dag: LocalDag::new(cfg.committee, d, cfg.id),
                engine: CommitEngine::new(cfg.committee, d, cfg.commit),
                mempool: Vec::new(),
                started: false,
                timeout_armed: None,
            })
            .collect();
        let log = GlobalLog::new(k, cfg.interleave);
        Self { cfg, dags, ready: vec![VecDeque::new(); k], log, out: Vec::new(), obs: Vec::new() }
    }

    pub fn id(&self) -> ReplicaId {
        self.cfg.id
    }

    pub fn dag(&self, d: DagId) -> &LocalDag {
        &self.dags[d].dag
    }

    pub fn engine(&self, d: DagId) -> &CommitEngine {
        &self.dags[d].engine
    }

    pub fn global_log(&self) -> &GlobalLog {
        &self.log
    }

    /// Timers that start each staggered instance.
    pub fn boot(&mut self) -> Vec<Output> {
        (0..self.cfg.stagger.k)
            .map(|d| Output::Timer { at: self.cfg.stagger.start_time(d), timer: Timer::DagStart(d) })
            .collect()
    }

    pub fn take_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }

    pub fn take_observations(&mut self) -> Vec<Observation> {
        std::mem::take(&mut self.obs)
    }

    pub fn handle(&mut self, input: Input, now: SimTime) {
        match input {
            Input::Submit(txn) => self.on_submit(txn, now),
            Input::Timer(Timer::DagStart(d)) => {
                let inst = &mut self.dags[d];
                inst.started = true;
                inst.dag.set_start_time(now);
            }
            // Advancement is re-checked in `step`.
            Input::Timer(Timer::RoundTimeout(..)) => {}
            Input::Timer(Timer::FetchRetry { dag_id, reference, peers, attempt }) => {
                if self.dags[dag_id].dag.is_missing(reference.key()) {
                    self.request(dag_id, reference, peers, attempt + 1, now);
                }
            }
            Input::Message { from, msg } => self.on_message(from, msg, now),
        }
    }

    /// Proposes, advances rounds, polls commit engines and extends the
    /// global log. Called once all inputs of an instant are applied.
    pub fn step(&mut self, now: SimTime) {
        for d in 0..self.dags.len() {
            if !self.dags[d].started {
                continue;
            }
            loop {
                if !self.dags[d].dag.has_proposed_current() {
                    self.propose(d, now);
                }
                if self.dags[d].dag.try_advance_round(now, self.cfg.round_timeout).is_none() {
                    break;
                }
            }
            let inst = &mut self.dags[d];
            let round = inst.dag.current_round();
            if let Some(at) = inst.dag.timeout_deadline(self.cfg.round_timeout) {
                if inst.timeout_armed != Some(round) {
                    inst.timeout_armed = Some(round);
                    self.out.push(Output::Timer { at, timer: Timer::RoundTimeout(d, round) });
                }
            }
            while let Some(seg) = inst.engine.next_ordered_nodes(&inst.dag, now) {
                self.obs.push(Observation::Segment(seg.clone()));
                self.ready[d].push_back(seg);
            }
            inst.dag.compact(inst.engine.compaction_floor());
        }
        for e in self.log.advance_global_log(&mut self.ready, now) {
            self.obs.push(Observation::Appended(e.clone()));
        }
    }

    fn on_submit(&mut self, txn: TxnId, now: SimTime) {
        let next: Vec<SimTime> = (0..self.dags.len()).map(|d| self.next_proposal(d, now)).collect();
        let dag_id = submit_txn(now, &next);
        self.dags[dag_id].mempool.push(txn);
        self.obs.push(Observation::Submitted(Submission { txn, dag_id, time: now }));
    }

    /// Predicted time of the instance's next proposal.
    fn next_proposal(&self, d: DagId, now: SimTime) -> SimTime {
        let inst = &self.dags[d];
        if !inst.started {
            return self.cfg.stagger.start_time(d);
        }
        let dag = &inst.dag;
        let r = dag.current_round();
        match dag.proposal_time(r) {
            None => now,
            Some(last) => {
                let len = r
                    .checked_sub(1)
                    .and_then(|p| dag.proposal_time(p))
                    .map_or(DEFAULT_ROUND, |prev| last - prev);
                last + len
            }
        }
    }

    fn propose(&mut self, d: DagId, now: SimTime) {
        let id = self.cfg.id;
        let inst = &mut self.dags[d];
        let batch = std::mem::take(&mut inst.mempool);
        let p = match inst.dag.create_proposal(batch, now) {
            Ok(p) => p,
            Err(e) => {
                self.fault(now, format!("propose on dag {d}: {e}"));
                return;
            }
        };
        self.record_proposal(&p, now);
        if self.cfg.equivocate {
            let b = equivocate(&self.dags[d].dag, &p);
            self.dags[d].dag.register_own_proposal(b.clone());
            self.record_proposal(&b, now);
            let others: Vec<ReplicaId> = self.cfg.committee.replicas().filter(|r| *r != id).collect();
            let half = others.len().div_ceil(2);
            for (i, to) in others.into_iter().enumerate() {
                let variant = if i < half { &p } else { &b };
                self.out.push(Output::Send { to, msg: Message::Proposal(variant.clone()) });
            }
            let vote = Vote { dag_id: d, round: b.round, source: id, digest: b.digest, voter: id };
            self.on_vote(d, vote, now);
        } else {
            self.out.push(Output::Broadcast(Message::Proposal(p.clone())));
        }
        self.on_proposal(id, p, now);
    }

    fn record_proposal(&mut self, p: &NodeProposal, now: SimTime) {
        self.obs.push(Observation::Proposed(ProposalRecord {
            dag_id: p.dag_id,
            key: p.key(),
            digest: p.digest,
            time: now,
            batch: p.batch.clone(),
        }));
    }

    fn on_message(&mut self, from: ReplicaId, msg: Message, now: SimTime) {
        let d = match &msg {
            Message::Proposal(p) => p.dag_id,
            Message::Vote(v) => v.dag_id,
            Message::Certificate(n) | Message::FetchResponse(n) => n.proposal.dag_id,
            Message::FetchRequest { dag_id, .. } => *dag_id,
        };
        if d >= self.dags.len() {
            self.fault(now, format!("{} from {from} for unknown dag {d}", msg.kind()));
            return;
        }
        match msg {
            Message::Proposal(p) => self.on_proposal(from, p, now),
            Message::Vote(v) => self.on_vote(d, v, now),
            Message::Certificate(n) | Message::FetchResponse(n) => self.on_certificate(n, now),
            Message::FetchRequest { reference, .. } => {
                if let Some(n) = self.dags[d].dag.node(reference.key()) {
                    if n.digest() == reference.digest {
                        self.out.push(Output::Send { to: from, msg: Message::FetchResponse(n.clone()) });
                    }
                }
            }
        }
    }

    fn on_proposal(&mut self, from: ReplicaId, p: NodeProposal, now: SimTime) {
        let d = p.dag_id;
        if p.source != from {
            self.fault(now, format!("proposal {} relayed by {from}", p.key()));
            return;
        }
        match self.dags[d].dag.on_receive_proposal(&p) {
            Ok(Some(vote)) if from == self.cfg.id => self.on_vote(d, vote, now),
            Ok(Some(vote)) => self.out.push(Output::Send { to: from, msg: Message::Vote(vote) }),
            Ok(None) => {}
            Err(e) => self.fault(now, e.to_string()),
        }
    }

    fn on_vote(&mut self, d: DagId, vote: Vote, now: SimTime) {
        let inst = &mut self.dags[d];
        let Some(cert) = inst.dag.on_receive_vote(&vote) else { return };
        let node = inst.dag.own_certified_node(&cert).expect("own proposal");
        self.out.push(Output::Broadcast(Message::Certificate(node.clone())));
        self.on_certificate(node, now);
    }

    fn on_certificate(&mut self, node: DagNode, now: SimTime) {
        let d = node.proposal.dag_id;
        let mut peers: Vec<ReplicaId> = std::iter::once(node.source())
            .chain(node.certificate.signers.iter().copied())
            .filter(|r| *r != self.cfg.id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        // The child's author certainly held the parents; ask it first.
        if let Some(i) = peers.iter().position(|r| *r == node.source()) {
            peers.swap(0, i);
        }
        match self.dags[d].dag.on_receive_certificate(node) {
            Ok(delta) => {
                for reference in delta.fetch {
                    self.request(d, reference, peers.clone(), 0, now);
                }
            }
            Err(e @ DagError::ConflictingCertificate { .. }) => {
                self.fault(now, format!("protocol violation: {e}"))
            }
            Err(e) => self.fault(now, e.to_string()),
        }
    }

    fn request(
        &mut self,
        dag_id: DagId,
        reference: CertificateRef,
        peers: Vec<ReplicaId>,
        attempt: u32,
        now: SimTime,
    ) {
        if peers.is_empty() {
            return;
        }
        let to =
            if attempt == 0 { peers[0] } else { peers[pick(self.cfg.id, reference, attempt) % peers.len()] };
        self.out.push(Output::Send { to, msg: Message::FetchRequest { dag_id, reference } });
        self.out.push(Output::Timer {
            at: now + self.cfg.fetch_retry,
            timer: Timer::FetchRetry { dag_id, reference, peers, attempt },
        });
    }

    fn fault(&mut self, time: SimTime, detail: String) {
        self.obs.push(Observation::Fault { time, detail });
    }
}

/// Deterministic spread of fetch retries over candidate peers.
fn pick(requester: ReplicaId, reference: CertificateRef, attempt: u32) -> usize {
    let mut x = reference.round ^ ((reference.source.0 as u64) << 32) ^ ((requester.0 as u64) << 48);
    x ^= u64::from_le_bytes(reference.digest.0[..8].try_into().expect("8 bytes"));
    x = x.wrapping_add(attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (x ^ (x >> 29)) as usize
}

/// A digest-distinct twin of `p`: a different parent subset when the
/// previous round allows one, otherwise a filler transaction.
pub fn equivocate(dag: &LocalDag, p: &NodeProposal) -> NodeProposal {
    let quorum = dag.committee().quorum();
    if p.round > 0 && p.parents.len() > quorum {
        let mut parents = p.parents.clone();
        parents.remove(0);
        NodeProposal::new(p.dag_id, p.round, p.source, p.batch.clone(), parents)
    } else {
        let mut batch = p.batch.clone();
        batch.push(TxnId::filler(p.round, 1));
        NodeProposal::new(p.dag_id, p.round, p.source, batch, p.parents.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reputation::ProtocolMode;

    fn config(id: u16, k: usize, equivocate: bool) -> ReplicaConfig {
        ReplicaConfig {
            id: ReplicaId(id),
            committee: Committee::new(4),
            commit: CommitConfig::new(ProtocolMode::ShoalPlusPlus),
            stagger: StaggerConfig::new(k, SimTime::from_md(1.0)),
            round_timeout: SimTime::ZERO,
            interleave: Interleave::PerRound,
            fetch_retry: SimTime::from_md(4.0),
            equivocate,
        }
    }

    #[test]
    fn starts_and_broadcasts_genesis_proposal() {
        let mut r = Replica::new(config(0, 2, false));
        let boot = r.boot();
        assert_eq!(boot.len(), 2);
        r.handle(Input::Submit(TxnId(7)), SimTime::ZERO);
        r.handle(Input::Timer(Timer::DagStart(0)), SimTime::ZERO);
        r.step(SimTime::ZERO);
        let out = r.take_outputs();
        assert_eq!(out.len(), 1);
        let Output::Broadcast(Message::Proposal(p)) = &out[0] else { panic!("{out:?}") };
        assert_eq!((p.dag_id, p.round, p.batch.clone()), (0, 0, vec![TxnId(7)]));
        // Own proposal counts as a weak vote source and a self vote.
        assert_eq!(r.dag(0).first_seen_digest(p.key()), Some(p.digest));
    }

    #[test]
    fn submission_joins_soonest_instance() {
        let mut r = Replica::new(config(0, 3, false));
        r.handle(Input::Timer(Timer::DagStart(0)), SimTime::ZERO);
        r.step(SimTime::ZERO);
        r.handle(Input::Submit(TxnId(1)), SimTime::from_md(0.2));
        let obs = r.take_observations();
        let sub = obs.iter().find_map(|o| match o {
            Observation::Submitted(s) => Some(*s),
            _ => None,
        });
        assert_eq!(sub.unwrap().dag_id, 1);
    }

    #[test]
    fn equivocator_splits_variants() {
        let mut r = Replica::new(config(3, 1, true));
        r.handle(Input::Timer(Timer::DagStart(0)), SimTime::ZERO);
        r.step(SimTime::ZERO);
        let digests: Vec<(ReplicaId, Digest)> = r
            .take_outputs()
            .into_iter()
            .filter_map(|o| match o {
                Output::Send { to, msg: Message::Proposal(p) } => Some((to, p.digest)),
                _ => None,
            })
            .collect();
        assert_eq!(digests.len(), 3);
        assert_eq!(digests[0].1, digests[1].1);
        assert_ne!(digests[1].1, digests[2].1);
    }

    #[test]
    fn twin_uses_other_parents_when_possible() {
        use crate::dag::test_support::node;
        let c = Committee::new(4);
        let g: Vec<_> = (0..4).map(|s| node(&c, 0, s, &[])).collect();
        let mut dag = LocalDag::new(c, 0, ReplicaId(3));
        dag.create_proposal(vec![], SimTime::ZERO).unwrap();
        for n in &g {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        dag.try_advance_round(SimTime::ZERO, SimTime::ZERO);
        let p = dag.create_proposal(vec![TxnId(5)], SimTime::ZERO).unwrap();
        let b = equivocate(&dag, &p);
        assert_ne!(p.digest, b.digest);
        assert_eq!(b.parents.len(), 3);
        assert_eq!(b.batch, p.batch);
    }
}
