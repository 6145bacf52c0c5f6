// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Commit rules and the per-DAG ordering driver.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dag::{DagError, LocalDag};
use crate::reputation::{ProtocolMode, Reputation, ReputationConfig};
use crate::types::{Committee, DagId, NodeKey, ReplicaId, Round, SimTime, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnchorRef {
    pub dag_id: DagId,
    pub round: Round,
    pub source: ReplicaId,
}

impl AnchorRef {
    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.round, self.source)
    }
}

impl fmt::Display for AnchorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}:{}", self.dag_id, self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Via {
    FastDirect,
    Direct,
    Indirect,
}

impl Via {
    pub fn name(self) -> &'static str {
        match self {
            Via::FastDirect => "fast_direct",
            Via::Direct => "direct",
            Via::Indirect => "indirect",
        }
    }
}

impl fmt::Display for Via {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorResolution {
    /// First anchor ordered by the instance.
    pub committed: AnchorRef,
    pub via: Via,
    /// Instance-schedule anchors before `committed` that can never commit.
    pub skipped: Vec<AnchorRef>,
}

/// Nodes and transactions newly ordered by one resolved anchor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSegment {
    pub dag_id: DagId,
    pub anchor: AnchorRef,
    pub via: Via,
    /// Causal history minus earlier segments, by (round, source).
    pub nodes: Vec<NodeKey>,
    pub txns: Vec<TxnId>,
    pub commit_time: SimTime,
    /// No further candidate of `anchor.round` is pending after this segment.
    pub closes_round: bool,
    pub skipped: Vec<AnchorRef>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitConfig {
    pub mode: ProtocolMode,
    pub reputation: ReputationConfig,
    /// Weak votes needed by the fast rule. `None` means `2f + 1`; anything
    /// else exists for mutation testing.
    pub fast_threshold: Option<usize>,
    /// Ordered rounds retained below the latest committed anchor.
    pub gc_window: u64,
}

impl CommitConfig {
    pub fn new(mode: ProtocolMode) -> Self {
        Self { mode, reputation: ReputationConfig::default(), fast_threshold: None, gc_window: 100 }
    }
}

/// f+1 certified next-round nodes link `a`.
pub fn direct_commit_check(dag: &LocalDag, a: AnchorRef) -> bool {
    dag.certified_links(a.key()) >= dag.committee().validity()
}

/// At least `threshold` distinct first-received next-round proposals link `a`.
pub fn fast_commit_check(dag: &LocalDag, a: AnchorRef, threshold: usize) -> bool {
    dag.weak_vote_count(a.key()) >= threshold
}

/// One-shot Bullshark instance starting at `start`. Its schedule continues
/// with position 0 of every other later round. Returns `None` while
/// undecided.
pub fn run_bullshark(dag: &LocalDag, start: AnchorRef, rep: &Reputation) -> Option<AnchorResolution> {
    if direct_commit_check(dag, start) {
        return Some(AnchorResolution { committed: start, via: Via::Direct, skipped: vec![] });
    }
    let top = dag.highest_round()?;
    let mut schedule = vec![start];
    let mut round = start.round + 2;
    while round < top {
        if let Some(&a) = rep.anchors(start.dag_id, round).first() {
            schedule.push(a);
            if direct_commit_check(dag, a) {
                return Some(walk_back(dag, schedule));
            }
        }
        round += 2;
    }
    None
}

/// `schedule.last()` is directly committed; finds the earliest schedule anchor
/// reachable through a chain of committed anchors.
fn walk_back(dag: &LocalDag, schedule: Vec<AnchorRef>) -> AnchorResolution {
    let last = schedule.len() - 1;
    let mut committed = last;
    for i in (0..last).rev() {
        if dag.reaches(schedule[committed].key(), schedule[i].key()) {
            committed = i;
        }
    }
    AnchorResolution {
        committed: schedule[committed],
        via: if committed == last { Via::Direct } else { Via::Indirect },
        skipped: schedule[..committed].to_vec(),
    }
}

/// Orders `a`'s causal history minus `ordered`.
pub fn order_segment(
    dag: &LocalDag,
    a: AnchorRef,
    ordered: &BTreeSet<NodeKey>,
    via: Via,
    now: SimTime,
) -> Result<LogSegment, DagError> {
    let history = dag.history_excluding(a.key(), ordered)?;
    let mut seen = BTreeSet::new();
    let txns = history
        .iter()
        .flat_map(|n| n.proposal.batch.iter().copied())
        .filter(|t| !t.is_filler() && seen.insert(*t))
        .collect();
    Ok(LogSegment {
        dag_id: a.dag_id,
        anchor: a,
        via,
        nodes: history.iter().map(|n| n.key()).collect(),
        txns,
        commit_time: now,
        closes_round: false,
        skipped: vec![],
    })
}

#[derive(Clone, Debug, Default)]
pub struct CommitState {
    /// Round whose candidates are being scanned; `None` before round 0.
    pub round: Option<Round>,
    /// Remaining candidates of `round`.
    pub anchors: VecDeque<AnchorRef>,
    /// Candidate popped and awaiting a decision.
    pub current: Option<AnchorRef>,
    /// Decision awaiting local causal history.
    pub decided: Option<AnchorResolution>,
    pub last_committed: Option<AnchorRef>,
    pub ordered: BTreeSet<NodeKey>,
}

/// Embedded consensus over one DAG.
#[derive(Clone, Debug)]
pub struct CommitEngine {
    committee: Committee,
    dag_id: DagId,
    config: CommitConfig,
    reputation: Reputation,
    state: CommitState,
}

impl CommitEngine {
    pub fn new(committee: Committee, dag_id: DagId, config: CommitConfig) -> Self {
        Self {
            committee,
            dag_id,
            config,
            reputation: Reputation::new(config.mode, committee, config.reputation),
            state: CommitState::default(),
        }
    }

    pub fn with_reputation(mut self, reputation: Reputation) -> Self {
        self.reputation = reputation;
        self
    }

    pub fn state(&self) -> &CommitState {
        &self.state
    }

    pub fn reputation(&self) -> &Reputation {
        &self.reputation
    }

    pub fn fast_threshold(&self) -> usize {
        self.config.fast_threshold.unwrap_or(self.committee.fast_quorum())
    }

    /// Emits the next segment once decidable with local history, else `None`.
    /// Callers re-poll after every DAG change.
    pub fn next_ordered_nodes(&mut self, dag: &LocalDag, now: SimTime) -> Option<LogSegment> {
        if self.state.decided.is_none() {
            let candidate = self.current_candidate();
            let fast =
                self.config.mode.fast_commit() && fast_commit_check(dag, candidate, self.fast_threshold());
            self.state.decided = if fast {
                Some(AnchorResolution { committed: candidate, via: Via::FastDirect, skipped: vec![] })
            } else {
                run_bullshark(dag, candidate, &self.reputation)
            };
        }
        let decision = self.state.decided.as_ref()?;
        let mut segment =
            order_segment(dag, decision.committed, &self.state.ordered, decision.via, now).ok()?;
        let decision = self.state.decided.take().expect("decision");
        let popped = self.state.current.take().expect("candidate");
        if decision.committed != popped {
            self.skip_to(decision.committed);
        }
        segment.skipped = decision.skipped;
        segment.closes_round = self.state.anchors.is_empty();
        self.state.ordered.extend(segment.nodes.iter().copied());
        self.state.last_committed = Some(decision.committed);
        self.reputation.update(&segment);
        let floor = self.compaction_floor();
        if floor > 0 {
            self.state.ordered = self.state.ordered.split_off(&NodeKey::new(floor, ReplicaId(0)));
        }
        Some(segment)
    }

    /// Jumps the scan to the round of `a`, dropping earlier candidates.
    pub fn skip_to(&mut self, a: AnchorRef) {
        self.state.round = Some(a.round);
        self.state.anchors =
            self.reputation.anchors(self.dag_id, a.round).into_iter().filter(|c| *c != a).collect();
    }

    /// Rounds below this are no longer needed by the engine.
    pub fn compaction_floor(&self) -> Round {
        self.state.last_committed.map_or(0, |a| a.round.saturating_sub(self.config.gc_window))
    }

    fn current_candidate(&mut self) -> AnchorRef {
        if let Some(c) = self.state.current {
            return c;
        }
        while self.state.anchors.is_empty() {
            let next = self.state.round.map_or(0, |r| r + 1);
            self.state.round = Some(next);
            self.state.anchors = self.reputation.anchors(self.dag_id, next).into();
        }
        let c = self.state.anchors.pop_front().expect("non-empty");
        self.state.current = Some(c);
        c
    }
}
