// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Staggered DAG instances merged into one global log.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::commit::LogSegment;
use crate::types::{DagId, Round, SimTime, TxnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaggerConfig {
    pub k: usize,
    /// Delay between consecutive instance starts.
    pub offset: SimTime,
}

impl StaggerConfig {
    pub fn new(k: usize, offset: SimTime) -> Self {
        assert!(k >= 1, "at least one DAG");
        Self { k, offset }
    }

    pub fn start_time(&self, dag: DagId) -> SimTime {
        SimTime(self.offset.0 * dag as u64)
    }
}

impl Default for StaggerConfig {
    fn default() -> Self {
        Self { k: 3, offset: SimTime::from_md(1.0) }
    }
}

/// Unit taken from one DAG per turn of the round robin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interleave {
    /// Turns walk (round, dag) pairs: each takes every segment the DAG
    /// anchored in that round, possibly none.
    #[default]
    PerRound,
    /// A single segment.
    PerSegment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalEntry {
    /// Index of the round-robin turn that appended this entry.
    pub turn: u64,
    pub dag_id: DagId,
    pub segment: LogSegment,
    /// Segment transactions not already present earlier in the log.
    pub txns: Vec<TxnId>,
    pub appended_at: SimTime,
}

#[derive(Clone, Debug)]
pub struct GlobalLog {
    k: usize,
    interleave: Interleave,
    next_dag: DagId,
    turn: u64,
    /// Anchor round of the current turn (round-aligned interleave).
    round: Round,
    entries: Vec<GlobalEntry>,
    seen: BTreeSet<TxnId>,
}

impl GlobalLog {
    pub fn new(k: usize, interleave: Interleave) -> Self {
        Self { k, interleave, next_dag: 0, turn: 0, round: 0, entries: Vec::new(), seen: BTreeSet::new() }
    }

    pub fn entries(&self) -> &[GlobalEntry] {
        &self.entries
    }

    pub fn next_dag(&self) -> DagId {
        self.next_dag
    }

    /// Moves ready segments into the log in round-robin DAG order, stopping
    /// at the first DAG with nothing ready. Returns the new entries.
    pub fn advance_global_log(&mut self, ready: &mut [VecDeque<LogSegment>], now: SimTime) -> &[GlobalEntry] {
        assert_eq!(ready.len(), self.k, "one queue per DAG");
        let before = self.entries.len();
        while let Some(front) = ready[self.next_dag].front() {
            match self.interleave {
                Interleave::PerSegment => {
                    let segment = ready[self.next_dag].pop_front().expect("front");
                    self.append(segment, now);
                    self.end_turn();
                }
                Interleave::PerRound => {
                    // Turn (round, dag): take the DAG's segments anchored in
                    // `round`; a later-round segment proves there are no more.
                    if front.anchor.round > self.round {
                        self.end_turn();
                        continue;
                    }
                    let segment = ready[self.next_dag].pop_front().expect("front");
                    let closes = segment.closes_round;
                    self.append(segment, now);
                    if closes {
                        self.end_turn();
                    }
                }
            }
        }
        &self.entries[before..]
    }

    fn append(&mut self, segment: LogSegment, now: SimTime) {
        let txns = segment.txns.iter().copied().filter(|t| self.seen.insert(*t)).collect();
        self.entries.push(GlobalEntry {
            turn: self.turn,
            dag_id: self.next_dag,
            segment,
            txns,
            appended_at: now,
        });
    }

    fn end_turn(&mut self) {
        self.turn += 1;
        self.next_dag = (self.next_dag + 1) % self.k;
        if self.next_dag == 0 {
            self.round += 1;
        }
    }
}

/// DAG whose next proposal opportunity is soonest; ties go to the lowest id.
/// An opportunity at or before `now` counts as `now`.
pub fn submit_txn(now: SimTime, next_opportunity: &[SimTime]) -> DagId {
    next_opportunity
        .iter()
        .enumerate()
        .min_by_key(|(d, t)| ((**t).max(now), *d))
        .map(|(d, _)| d)
        .expect("at least one DAG")
}
