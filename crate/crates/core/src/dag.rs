// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! One replica's view of one certified, round-based DAG.
//!
//! A vertex goes through three stages:
//!
//! 1. the source broadcasts a [`NodeProposal`] referencing `n - f` (or more)
//!    certificates of the previous round;
//! 2. every replica votes for the *first* proposal it receives per
//!    `(round, source)` and records a weak vote for each referenced parent;
//! 3. `n - f` matching votes form a [`Certificate`], which is broadcast
//!    together with the proposal as a [`DagNode`];
//! 4. the node is inserted once all of its parents are present locally.
//!    Missing parents are fetched asynchronously; voting and round
//!    advancement never wait for them.
//!
//! [`LocalDag`] is a pure state machine: callers drive it with messages and
//! the current simulated time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{Committee, DagId, NodeKey, ReplicaId, Round, SimTime, TxnId};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Edge to a certified node of the previous round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CertificateRef {
    pub round: Round,
    pub source: ReplicaId,
    pub digest: Digest,
}

impl CertificateRef {
    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.round, self.source)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeProposal {
    pub dag_id: DagId,
    pub round: Round,
    pub source: ReplicaId,
    pub batch: Vec<TxnId>,
    /// Sorted by source.
    pub parents: Vec<CertificateRef>,
    pub digest: Digest,
}

impl NodeProposal {
    pub fn new(
        dag_id: DagId,
        round: Round,
        source: ReplicaId,
        batch: Vec<TxnId>,
        mut parents: Vec<CertificateRef>,
    ) -> Self {
        parents.sort();
        let digest = Self::compute_digest(round, source, &batch, &parents);
        Self { dag_id, round, source, batch, parents, digest }
    }

    pub fn compute_digest(
        round: Round,
        source: ReplicaId,
        batch: &[TxnId],
        parents: &[CertificateRef],
    ) -> Digest {
        let mut h = Sha256::new();
        h.update(round.to_le_bytes());
        h.update(source.0.to_le_bytes());
        h.update((batch.len() as u64).to_le_bytes());
        for t in batch {
            h.update(t.0.to_le_bytes());
        }
        for p in parents {
            h.update(p.round.to_le_bytes());
            h.update(p.source.0.to_le_bytes());
            h.update(p.digest.0);
        }
        Digest(h.finalize().into())
    }

    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.round, self.source)
    }

    pub fn links(&self, key: NodeKey) -> bool {
        self.parents.iter().any(|p| p.key() == key)
    }

    /// Structural validity: parent count and numbering, distinct parent
    /// sources, and a digest matching the content.
    pub fn validate(&self, committee: &Committee) -> Result<(), DagError> {
        let bad = |why: String| Err(DagError::MalformedProposal { key: self.key(), why });
        if !committee.contains(self.source) {
            return bad(format!("unknown source {}", self.source));
        }
        if self.round == 0 {
            if !self.parents.is_empty() {
                return bad("genesis proposal with parents".into());
            }
        } else if self.parents.len() < committee.quorum() {
            return bad(format!("{} parents, need {}", self.parents.len(), committee.quorum()));
        }
        let mut sources = BTreeSet::new();
        for p in &self.parents {
            if p.round + 1 != self.round {
                return bad(format!("parent {} not from round {}", p.key(), self.round - 1));
            }
            if !committee.contains(p.source) || !sources.insert(p.source) {
                return bad(format!("bad or duplicate parent source {}", p.source));
            }
        }
        if Self::compute_digest(self.round, self.source, &self.batch, &self.parents) != self.digest {
            return bad("digest mismatch".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub dag_id: DagId,
    pub round: Round,
    /// Author of the proposal being voted for.
    pub source: ReplicaId,
    pub digest: Digest,
    pub voter: ReplicaId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub dag_id: DagId,
    pub round: Round,
    pub source: ReplicaId,
    pub digest: Digest,
    pub signers: BTreeSet<ReplicaId>,
}

impl Certificate {
    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.round, self.source)
    }

    pub fn reference(&self) -> CertificateRef {
        CertificateRef { round: self.round, source: self.source, digest: self.digest }
    }
}

/// Checks the quorum evidence carried by a certificate. Signatures are
/// simulated as plain signer sets, so the default check is structural;
/// a real scheme would verify an aggregate signature here.
pub trait CertificateVerifier: fmt::Debug + Send + Sync {
    fn verify(&self, committee: &Committee, cert: &Certificate) -> Result<(), DagError>;
}

#[derive(Debug, Default)]
pub struct StructuralVerifier;

impl CertificateVerifier for StructuralVerifier {
    fn verify(&self, committee: &Committee, cert: &Certificate) -> Result<(), DagError> {
        if cert.signers.len() < committee.quorum() {
            return Err(DagError::InvalidCertificate {
                key: cert.key(),
                why: format!("{} signers, need {}", cert.signers.len(), committee.quorum()),
            });
        }
        if let Some(s) = cert.signers.iter().find(|s| !committee.contains(**s)) {
            return Err(DagError::InvalidCertificate { key: cert.key(), why: format!("unknown signer {s}") });
        }
        Ok(())
    }
}

/// A certified vertex. Batches travel inline with the proposal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagNode {
    pub certificate: Certificate,
    pub proposal: NodeProposal,
}

impl DagNode {
    pub fn key(&self) -> NodeKey {
        self.proposal.key()
    }

    pub fn round(&self) -> Round {
        self.proposal.round
    }

    pub fn source(&self) -> ReplicaId {
        self.proposal.source
    }

    pub fn digest(&self) -> Digest {
        self.proposal.digest
    }

    pub fn parents(&self) -> &[CertificateRef] {
        &self.proposal.parents
    }

    pub fn reference(&self) -> CertificateRef {
        self.certificate.reference()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("round {round} not ready: {have} certificates in round {prev}, need {need}", prev = round.saturating_sub(1))]
    RoundNotReady { round: Round, have: usize, need: usize },
    #[error("already proposed in round {0}")]
    AlreadyProposed(Round),
    #[error("malformed proposal {key}: {why}")]
    MalformedProposal { key: NodeKey, why: String },
    #[error("invalid certificate {key}: {why}")]
    InvalidCertificate { key: NodeKey, why: String },
    #[error("conflicting certified nodes at {key}: {existing:?} vs {incoming:?}")]
    ConflictingCertificate { key: NodeKey, existing: Digest, incoming: Digest },
    #[error("history of {key} unavailable: {missing} not yet local")]
    HistoryUnavailable { key: NodeKey, missing: NodeKey },
    #[error("message for dag {got} delivered to dag {expected}")]
    WrongDag { expected: DagId, got: DagId },
}

/// Misbehaviour observed but tolerated (first-received proposal wins).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquivocationRecord {
    pub key: NodeKey,
    pub first: Digest,
    pub conflicting: Digest,
}

/// Outcome of delivering a certified node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DagDelta {
    /// Newly inserted nodes in insertion order: the delivered node followed
    /// by any buffered descendants it unblocked.
    pub inserted: Vec<NodeKey>,
    /// Parents that must be fetched before the node can be inserted.
    pub fetch: Vec<CertificateRef>,
}

#[derive(Clone, Debug)]
struct OwnProposal {
    proposal: NodeProposal,
    voters: BTreeSet<ReplicaId>,
}

#[derive(Clone, Debug, Default)]
struct OwnRound {
    variants: Vec<OwnProposal>,
    certified: bool,
}

#[derive(Clone, Debug)]
pub struct LocalDag {
    committee: Committee,
    dag_id: DagId,
    owner: ReplicaId,
    verifier: Arc<dyn CertificateVerifier>,
    nodes: BTreeMap<Round, BTreeMap<ReplicaId, DagNode>>,
    /// Sources of certified children linking each node.
    cert_links: BTreeMap<NodeKey, BTreeSet<ReplicaId>>,
    /// Sources of first-received next-round proposals linking each node.
    weak_votes: BTreeMap<NodeKey, BTreeSet<ReplicaId>>,
    seen_proposals: BTreeMap<NodeKey, Digest>,
    buffered: BTreeMap<NodeKey, DagNode>,
    requested: BTreeSet<NodeKey>,
    own: BTreeMap<Round, OwnRound>,
    equivocations: Vec<EquivocationRecord>,
    current_round: Round,
    round_entered_at: SimTime,
    proposed_up_to: Option<Round>,
    proposal_times: BTreeMap<Round, SimTime>,
    gc_floor: Round,
}

impl LocalDag {
    pub fn new(committee: Committee, dag_id: DagId, owner: ReplicaId) -> Self {
        Self::with_verifier(committee, dag_id, owner, Arc::new(StructuralVerifier))
    }

    pub fn with_verifier(
        committee: Committee,
        dag_id: DagId,
        owner: ReplicaId,
        verifier: Arc<dyn CertificateVerifier>,
    ) -> Self {
        Self {
            committee,
            dag_id,
            owner,
            verifier,
            nodes: BTreeMap::new(),
            cert_links: BTreeMap::new(),
            weak_votes: BTreeMap::new(),
            seen_proposals: BTreeMap::new(),
            buffered: BTreeMap::new(),
            requested: BTreeSet::new(),
            own: BTreeMap::new(),
            equivocations: Vec::new(),
            current_round: 0,
            round_entered_at: SimTime::ZERO,
            proposed_up_to: None,
            proposal_times: BTreeMap::new(),
            gc_floor: 0,
        }
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn dag_id(&self) -> DagId {
        self.dag_id
    }

    pub fn owner(&self) -> ReplicaId {
        self.owner
    }

    pub fn current_round(&self) -> Round {
        self.current_round
    }

    pub fn round_entered_at(&self) -> SimTime {
        self.round_entered_at
    }

    /// Marks the start time of round 0 (staggered DAG instances start late).
    pub fn set_start_time(&mut self, at: SimTime) {
        if self.current_round == 0 && self.proposed_up_to.is_none() {
            self.round_entered_at = at;
        }
    }

    pub fn has_proposed_current(&self) -> bool {
        self.proposed_up_to == Some(self.current_round)
    }

    pub fn proposal_time(&self, round: Round) -> Option<SimTime> {
        self.proposal_times.get(&round).copied()
    }

    pub fn gc_floor(&self) -> Round {
        self.gc_floor
    }

    pub fn equivocations(&self) -> &[EquivocationRecord] {
        &self.equivocations
    }

    pub fn node(&self, key: NodeKey) -> Option<&DagNode> {
        self.nodes.get(&key.round)?.get(&key.source)
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.node(key).is_some()
    }

    pub fn round_nodes(&self, round: Round) -> impl Iterator<Item = &DagNode> {
        self.nodes.get(&round).into_iter().flat_map(|m| m.values())
    }

    pub fn round_size(&self, round: Round) -> usize {
        self.nodes.get(&round).map_or(0, BTreeMap::len)
    }

    pub fn highest_round(&self) -> Option<Round> {
        self.nodes.keys().next_back().copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DagNode> {
        self.nodes.values().flat_map(|m| m.values())
    }

    pub fn buffered_len(&self) -> usize {
        self.buffered.len()
    }

    /// Number of certified nodes in `key.round + 1` that list `key` as parent.
    pub fn certified_links(&self, key: NodeKey) -> usize {
        self.cert_links.get(&key).map_or(0, BTreeSet::len)
    }

    pub fn weak_voters(&self, key: NodeKey) -> Option<&BTreeSet<ReplicaId>> {
        self.weak_votes.get(&key)
    }

    /// Distinct proposers whose first-received next-round proposal links `key`.
    pub fn weak_vote_count(&self, key: NodeKey) -> usize {
        self.weak_votes.get(&key).map_or(0, BTreeSet::len)
    }

    pub fn first_seen_digest(&self, key: NodeKey) -> Option<Digest> {
        self.seen_proposals.get(&key).copied()
    }

    /// Builds this replica's proposal for the current round. Parents are every
    /// certificate held for the previous round (at least `n - f`).
    pub fn create_proposal(&mut self, batch: Vec<TxnId>, now: SimTime) -> Result<NodeProposal, DagError> {
        let round = self.current_round;
        if self.proposed_up_to.is_some_and(|r| r >= round) {
            return Err(DagError::AlreadyProposed(round));
        }
        let parents = self.parent_candidates(round)?;
        let proposal = NodeProposal::new(self.dag_id, round, self.owner, batch, parents);
        self.register_own_proposal(proposal.clone());
        self.proposed_up_to = Some(round);
        self.proposal_times.insert(round, now);
        Ok(proposal)
    }

    /// Certificates this replica could reference in a proposal for `round`.
    pub fn parent_candidates(&self, round: Round) -> Result<Vec<CertificateRef>, DagError> {
        if round == 0 {
            return Ok(Vec::new());
        }
        let have = self.round_size(round - 1);
        if have < self.committee.quorum() {
            return Err(DagError::RoundNotReady { round, have, need: self.committee.quorum() });
        }
        Ok(self.round_nodes(round - 1).map(DagNode::reference).collect())
    }

    /// Accepts votes for an additional proposal variant of ours (used by the
    /// simulator's equivocating replicas).
    pub fn register_own_proposal(&mut self, proposal: NodeProposal) {
        debug_assert_eq!(proposal.source, self.owner);
        self.own
            .entry(proposal.round)
            .or_default()
            .variants
            .push(OwnProposal { proposal, voters: BTreeSet::new() });
    }

    pub fn own_proposal(&self, round: Round, digest: Digest) -> Option<&NodeProposal> {
        self.own.get(&round)?.variants.iter().map(|v| &v.proposal).find(|p| p.digest == digest)
    }

    /// Handles a proposal (including our own). Votes for the first proposal
    /// received per `(round, source)` and records its edges as weak votes.
    /// Does not require the proposal's causal history to be local.
    pub fn on_receive_proposal(&mut self, p: &NodeProposal) -> Result<Option<Vote>, DagError> {
        self.check_dag(p.dag_id)?;
        p.validate(&self.committee)?;
        if p.round < self.gc_floor {
            return Ok(None);
        }
        let key = p.key();
        if let Some(&first) = self.seen_proposals.get(&key) {
            if first != p.digest {
                self.equivocations.push(EquivocationRecord { key, first, conflicting: p.digest });
            }
            return Ok(None);
        }
        self.seen_proposals.insert(key, p.digest);
        for parent in &p.parents {
            self.weak_votes.entry(parent.key()).or_default().insert(p.source);
        }
        Ok(Some(Vote {
            dag_id: self.dag_id,
            round: p.round,
            source: p.source,
            digest: p.digest,
            voter: self.owner,
        }))
    }

    /// Collects votes for our own proposals; emits the certificate exactly
    /// once per round when `n - f` distinct voters match one variant.
    pub fn on_receive_vote(&mut self, v: &Vote) -> Option<Certificate> {
        if v.dag_id != self.dag_id || v.source != self.owner || !self.committee.contains(v.voter) {
            return None;
        }
        let quorum = self.committee.quorum();
        let own = self.own.get_mut(&v.round)?;
        if own.certified {
            return None;
        }
        let variant = own.variants.iter_mut().find(|o| o.proposal.digest == v.digest)?;
        variant.voters.insert(v.voter);
        if variant.voters.len() < quorum {
            return None;
        }
        let cert = Certificate {
            dag_id: self.dag_id,
            round: v.round,
            source: self.owner,
            digest: v.digest,
            signers: variant.voters.clone(),
        };
        own.certified = true;
        Some(cert)
    }

    /// The certified node for one of our own proposals.
    pub fn own_certified_node(&self, cert: &Certificate) -> Option<DagNode> {
        let proposal = self.own_proposal(cert.round, cert.digest)?.clone();
        Some(DagNode { certificate: cert.clone(), proposal })
    }

    /// Inserts a certified node, or buffers it until its parents arrive.
    pub fn on_receive_certificate(&mut self, node: DagNode) -> Result<DagDelta, DagError> {
        self.check_dag(node.proposal.dag_id)?;
        self.check_dag(node.certificate.dag_id)?;
        let key = node.key();
        if node.certificate.key() != key || node.certificate.digest != node.proposal.digest {
            return Err(DagError::InvalidCertificate {
                key,
                why: "certificate does not match proposal".into(),
            });
        }
        node.proposal.validate(&self.committee)?;
        self.verifier.verify(&self.committee, &node.certificate)?;

        let mut delta = DagDelta::default();
        if key.round < self.gc_floor {
            return Ok(delta);
        }
        if let Some(existing) = self.node(key).or_else(|| self.buffered.get(&key)) {
            if existing.digest() != node.digest() {
                return Err(DagError::ConflictingCertificate {
                    key,
                    existing: existing.digest(),
                    incoming: node.digest(),
                });
            }
            return Ok(delta);
        }

        let mut missing = Vec::new();
        for parent in node.parents() {
            if parent.round < self.gc_floor {
                continue;
            }
            match self.node(parent.key()) {
                Some(p) if p.digest() == parent.digest => {}
                Some(p) => {
                    return Err(DagError::ConflictingCertificate {
                        key: parent.key(),
                        existing: p.digest(),
                        incoming: parent.digest,
                    })
                }
                None => missing.push(*parent),
            }
        }
        self.requested.remove(&key);
        if !missing.is_empty() {
            for m in missing {
                let k = m.key();
                if !self.buffered.contains_key(&k) && self.requested.insert(k) {
                    delta.fetch.push(m);
                }
            }
            self.buffered.insert(key, node);
            return Ok(delta);
        }
        self.insert(node);
        delta.inserted.push(key);
        self.drain_buffered(&mut delta);
        Ok(delta)
    }

    /// Whether a fetch for `key` is still useful.
    pub fn is_missing(&self, key: NodeKey) -> bool {
        key.round >= self.gc_floor && !self.contains(key) && !self.buffered.contains_key(&key)
    }

    /// Advances to the next round once `n - f` certificates of the current
    /// round are present and either the round timeout (counted from round
    /// entry) expired, all `n` are present, or no timeout is configured.
    pub fn try_advance_round(&mut self, now: SimTime, timeout: SimTime) -> Option<Round> {
        let have = self.round_size(self.current_round);
        if have < self.committee.quorum() {
            return None;
        }
        let ready = timeout == SimTime::ZERO
            || have == self.committee.size()
            || now >= self.round_entered_at + timeout;
        if !ready {
            return None;
        }
        self.current_round += 1;
        self.round_entered_at = now;
        Some(self.current_round)
    }

    /// When the pending round timeout fires, if advancement is waiting on it.
    pub fn timeout_deadline(&self, timeout: SimTime) -> Option<SimTime> {
        let have = self.round_size(self.current_round);
        (timeout > SimTime::ZERO && have >= self.committee.quorum() && have < self.committee.size())
            .then_some(self.round_entered_at + timeout)
    }

    /// All nodes reachable from `key` (inclusive), ordered by round then
    /// source index. Identical at every replica holding the same DAG.
    pub fn causal_history(&self, key: NodeKey) -> Result<Vec<&DagNode>, DagError> {
        self.history_excluding(key, &BTreeSet::new())
    }

    /// Causal history of `key` minus `ordered` and everything below it.
    /// Ordered sets are unions of causal histories, so the walk stops at
    /// ordered nodes.
    pub fn history_excluding(
        &self,
        key: NodeKey,
        ordered: &BTreeSet<NodeKey>,
    ) -> Result<Vec<&DagNode>, DagError> {
        let root = self.node(key).ok_or(DagError::HistoryUnavailable { key, missing: key })?;
        let mut seen = BTreeMap::new();
        let mut queue = VecDeque::from([root]);
        seen.insert(key, root);
        while let Some(n) = queue.pop_front() {
            for p in n.parents() {
                let pk = p.key();
                if pk.round < self.gc_floor || ordered.contains(&pk) || seen.contains_key(&pk) {
                    continue;
                }
                let parent = self.node(pk).ok_or(DagError::HistoryUnavailable { key, missing: pk })?;
                seen.insert(pk, parent);
                queue.push_back(parent);
            }
        }
        if ordered.contains(&key) {
            seen.remove(&key);
        }
        Ok(seen.into_values().collect())
    }

    /// Whether `to` is in the causal history of `from` (both present).
    pub fn reaches(&self, from: NodeKey, to: NodeKey) -> bool {
        if from == to {
            return self.contains(from);
        }
        if from.round <= to.round || !self.contains(to) {
            return false;
        }
        let Some(start) = self.node(from) else { return false };
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for p in n.parents() {
                let pk = p.key();
                if pk == to {
                    return true;
                }
                if pk.round <= to.round || !seen.insert(pk) {
                    continue;
                }
                if let Some(parent) = self.node(pk) {
                    queue.push_back(parent);
                }
            }
        }
        false
    }

    /// Drops every round below `floor`. Nodes below the floor are treated as
    /// already ordered by history walks.
    pub fn compact(&mut self, floor: Round) {
        if floor <= self.gc_floor {
            return;
        }
        self.gc_floor = floor;
        self.nodes = self.nodes.split_off(&floor);
        let keep = |k: &NodeKey| k.round >= floor;
        self.cert_links.retain(|k, _| keep(k));
        self.weak_votes.retain(|k, _| keep(k));
        self.seen_proposals.retain(|k, _| keep(k));
        self.buffered.retain(|k, _| keep(k));
        self.requested.retain(keep);
        self.own = self.own.split_off(&floor);
        self.proposal_times = self.proposal_times.split_off(&floor);
    }

    fn insert(&mut self, node: DagNode) {
        let key = node.key();
        for p in node.parents() {
            self.cert_links.entry(p.key()).or_default().insert(key.source);
        }
        self.nodes.entry(key.round).or_default().insert(key.source, node);
    }

    fn drain_buffered(&mut self, delta: &mut DagDelta) {
        loop {
            let ready: Vec<NodeKey> = self
                .buffered
                .iter()
                .filter(|(_, n)| {
                    n.parents().iter().all(|p| p.round < self.gc_floor || self.contains(p.key()))
                })
                .map(|(k, _)| *k)
                .collect();
            if ready.is_empty() {
                return;
            }
            for k in ready {
                let node = self.buffered.remove(&k).expect("buffered node");
                self.insert(node);
                delta.inserted.push(k);
            }
        }
    }

    fn check_dag(&self, got: DagId) -> Result<(), DagError> {
        if got == self.dag_id {
            Ok(())
        } else {
            Err(DagError::WrongDag { expected: self.dag_id, got })
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Certifies `proposal` with the first `n - f` replicas as signers.
    pub fn certify(committee: &Committee, proposal: NodeProposal) -> DagNode {
        let signers = committee.replicas().take(committee.quorum()).collect();
        DagNode {
            certificate: Certificate {
                dag_id: proposal.dag_id,
                round: proposal.round,
                source: proposal.source,
                digest: proposal.digest,
                signers,
            },
            proposal,
        }
    }

    /// Builds a certified node at `(round, source)` linking the given parents.
    pub fn node(committee: &Committee, round: Round, source: u16, parents: &[&DagNode]) -> DagNode {
        let refs = parents.iter().map(|p| p.reference()).collect();
        let batch = vec![TxnId(round * 100 + source as u64)];
        certify(committee, NodeProposal::new(0, round, ReplicaId(source), batch, refs))
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{certify, node};
    use super::*;

    fn n4() -> Committee {
        Committee::new(4)
    }

    fn genesis(c: &Committee) -> Vec<DagNode> {
        (0..4).map(|s| node(c, 0, s, &[])).collect()
    }

    fn t(md: f64) -> SimTime {
        SimTime::from_md(md)
    }

    #[test]
    fn genesis_proposal_has_no_parents() {
        let mut dag = LocalDag::new(n4(), 0, ReplicaId(0));
        let p = dag.create_proposal(vec![TxnId(1)], SimTime::ZERO).unwrap();
        assert_eq!(p.round, 0);
        assert!(p.parents.is_empty());
        assert_eq!(dag.proposal_time(0), Some(SimTime::ZERO));
        assert_eq!(dag.create_proposal(vec![], SimTime::ZERO), Err(DagError::AlreadyProposed(0)));
    }

    #[test]
    fn proposal_references_available_quorum() {
        let c = n4();
        let g = genesis(&c);
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        dag.create_proposal(vec![], SimTime::ZERO).unwrap();
        for n in &g[..3] {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        assert_eq!(dag.try_advance_round(t(3.0), SimTime::ZERO), Some(1));
        let p = dag.create_proposal(vec![], t(3.0)).unwrap();
        assert_eq!(p.parents.len(), 3);

        // With all four certificates held at advance time every one is referenced.
        let mut dag = LocalDag::new(c, 0, ReplicaId(1));
        dag.create_proposal(vec![], SimTime::ZERO).unwrap();
        for n in &g {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        dag.try_advance_round(t(3.0), t(3.5)).unwrap();
        assert_eq!(dag.create_proposal(vec![], t(3.0)).unwrap().parents.len(), 4);
    }

    #[test]
    fn proposal_before_quorum_is_rejected() {
        let c = n4();
        let g = genesis(&c);
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        dag.create_proposal(vec![], SimTime::ZERO).unwrap();
        dag.on_receive_certificate(g[0].clone()).unwrap();
        assert!(dag.try_advance_round(t(3.0), SimTime::ZERO).is_none());
        assert_eq!(dag.parent_candidates(1), Err(DagError::RoundNotReady { round: 1, have: 1, need: 3 }));
    }

    #[test]
    fn first_proposal_gets_vote_and_weak_votes() {
        let c = n4();
        let g = genesis(&c);
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        let p =
            NodeProposal::new(0, 1, ReplicaId(2), vec![], g[..3].iter().map(DagNode::reference).collect());
        let vote = dag.on_receive_proposal(&p).unwrap().unwrap();
        assert_eq!(
            (vote.round, vote.source, vote.digest, vote.voter),
            (1, ReplicaId(2), p.digest, ReplicaId(0))
        );
        for s in 0..3 {
            assert_eq!(dag.weak_vote_count(NodeKey::new(0, ReplicaId(s))), 1);
        }
        assert_eq!(dag.weak_vote_count(NodeKey::new(0, ReplicaId(3))), 0);

        // Re-delivery: no second vote.
        assert_eq!(dag.on_receive_proposal(&p).unwrap(), None);

        // Equivocation: a different proposal from the same author is ignored.
        let q =
            NodeProposal::new(0, 1, ReplicaId(2), vec![], g[1..].iter().map(DagNode::reference).collect());
        assert_eq!(dag.on_receive_proposal(&q).unwrap(), None);
        assert_eq!(dag.weak_vote_count(NodeKey::new(0, ReplicaId(3))), 0);
        assert_eq!(dag.equivocations().len(), 1);
    }

    #[test]
    fn malformed_proposal_is_rejected() {
        let c = n4();
        let g = genesis(&c);
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        let short =
            NodeProposal::new(0, 1, ReplicaId(2), vec![], g[..2].iter().map(DagNode::reference).collect());
        assert!(matches!(dag.on_receive_proposal(&short), Err(DagError::MalformedProposal { .. })));
        let mut tampered = NodeProposal::new(0, 0, ReplicaId(2), vec![TxnId(1)], vec![]);
        tampered.batch.push(TxnId(2));
        assert!(matches!(dag.on_receive_proposal(&tampered), Err(DagError::MalformedProposal { .. })));
        assert_eq!(dag.weak_vote_count(g[0].key()), 0);
    }

    #[test]
    fn certificate_forms_once_at_quorum() {
        let c = n4();
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        let p = dag.create_proposal(vec![], SimTime::ZERO).unwrap();
        let vote = |voter| Vote {
            dag_id: 0,
            round: 0,
            source: ReplicaId(0),
            digest: p.digest,
            voter: ReplicaId(voter),
        };
        assert!(dag.on_receive_vote(&vote(0)).is_none());
        assert!(dag.on_receive_vote(&vote(1)).is_none());
        assert!(dag.on_receive_vote(&vote(1)).is_none(), "duplicate voter counts once");
        let cert = dag.on_receive_vote(&vote(2)).expect("third distinct vote certifies");
        assert_eq!(cert.signers.len(), 3);
        assert!(dag.on_receive_vote(&vote(3)).is_none());

        let unknown = Vote { digest: Digest([9; 32]), ..vote(3) };
        assert!(dag.on_receive_vote(&unknown).is_none());
    }

    #[test]
    fn certificate_with_missing_parent_is_buffered_then_inserted() {
        let c = n4();
        let g = genesis(&c);
        let child = node(&c, 1, 1, &[&g[0], &g[1], &g[2]]);
        let mut dag = LocalDag::new(c, 0, ReplicaId(3));
        for n in &g[..2] {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        let delta = dag.on_receive_certificate(child.clone()).unwrap();
        assert!(delta.inserted.is_empty());
        assert_eq!(delta.fetch, vec![g[2].reference()]);
        assert!(!dag.contains(child.key()));

        // The fetched parent unblocks the child in the same delta.
        let delta = dag.on_receive_certificate(g[2].clone()).unwrap();
        assert_eq!(delta.inserted, vec![g[2].key(), child.key()]);
        assert_eq!(dag.buffered_len(), 0);
        assert_eq!(dag.certified_links(g[0].key()), 1);
    }

    #[test]
    fn conflicting_certificates_surface_as_fault() {
        let c = n4();
        let a = certify(&c, NodeProposal::new(0, 0, ReplicaId(1), vec![TxnId(1)], vec![]));
        let b = certify(&c, NodeProposal::new(0, 0, ReplicaId(1), vec![TxnId(2)], vec![]));
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        dag.on_receive_certificate(a.clone()).unwrap();
        assert_eq!(dag.on_receive_certificate(a).unwrap(), DagDelta::default());
        assert!(matches!(dag.on_receive_certificate(b), Err(DagError::ConflictingCertificate { .. })));
    }

    #[test]
    fn under_signed_certificate_rejected() {
        let c = n4();
        let mut n = node(&c, 0, 1, &[]);
        n.certificate.signers = [ReplicaId(0), ReplicaId(1)].into();
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        assert!(matches!(dag.on_receive_certificate(n), Err(DagError::InvalidCertificate { .. })));
    }

    #[test]
    fn round_timeout_delays_advance() {
        let c = n4();
        let g = genesis(&c);
        let timeout = t(2.0);

        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        for n in &g[..3] {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        assert_eq!(dag.timeout_deadline(timeout), Some(t(2.0)));
        assert_eq!(dag.try_advance_round(t(1.0), timeout), None);
        assert_eq!(dag.try_advance_round(t(2.0), timeout), Some(1));
        assert_eq!(dag.round_entered_at(), t(2.0));

        // All n present: no reason to wait.
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        for n in &g {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        assert_eq!(dag.try_advance_round(t(1.0), timeout), Some(1));

        // No timeout configured: n - f suffices.
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        for n in &g[..3] {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        assert_eq!(dag.try_advance_round(t(1.0), SimTime::ZERO), Some(1));
    }

    #[test]
    fn causal_history_of_genesis_is_itself() {
        let c = n4();
        let g = genesis(&c);
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        dag.on_receive_certificate(g[2].clone()).unwrap();
        let h: Vec<_> = dag.causal_history(g[2].key()).unwrap().iter().map(|n| n.key()).collect();
        assert_eq!(h, vec![g[2].key()]);
        assert!(matches!(dag.causal_history(g[0].key()), Err(DagError::HistoryUnavailable { .. })));
    }

    #[test]
    fn compaction_drops_old_rounds() {
        let c = n4();
        let g = genesis(&c);
        let r1: Vec<_> = (0..4).map(|s| node(&c, 1, s, &[&g[0], &g[1], &g[2]])).collect();
        let mut dag = LocalDag::new(c, 0, ReplicaId(0));
        for n in g.iter().chain(&r1) {
            dag.on_receive_certificate(n.clone()).unwrap();
        }
        dag.compact(1);
        assert_eq!(dag.round_size(0), 0);
        let h = dag.causal_history(r1[0].key()).unwrap();
        assert_eq!(h.len(), 1, "history stops at the compaction floor");
        // Late genesis certificates are ignored.
        assert_eq!(dag.on_receive_certificate(g[3].clone()).unwrap(), DagDelta::default());
    }
}
