// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Anchor candidate schedules.
//!
//! Every replica derives `get_anchors(round)` from the same committed
//! history, so the vectors agree wherever the ordered prefixes agree.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::commit::{AnchorRef, LogSegment};
use crate::types::{Committee, DagId, ReplicaId, Round};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    /// Round-robin anchors every other round, f+1 certified links to commit.
    Bullshark,
    /// One reputation-chosen anchor per round, pipelined.
    Shoal,
    /// Multiple anchors per round plus the 2f+1 weak-vote commit rule.
    #[serde(rename = "shoalpp")]
    ShoalPlusPlus,
}

impl ProtocolMode {
    pub const ALL: [ProtocolMode; 3] =
        [ProtocolMode::Bullshark, ProtocolMode::Shoal, ProtocolMode::ShoalPlusPlus];

    pub fn fast_commit(self) -> bool {
        self == ProtocolMode::ShoalPlusPlus
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolMode::Bullshark => "bullshark",
            ProtocolMode::Shoal => "shoal",
            ProtocolMode::ShoalPlusPlus => "shoalpp",
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bullshark" => Ok(ProtocolMode::Bullshark),
            "shoal" => Ok(ProtocolMode::Shoal),
            "shoalpp" | "shoal++" => Ok(ProtocolMode::ShoalPlusPlus),
            other => Err(format!("unknown protocol {other:?} (bullshark, shoal, shoalpp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationConfig {
    /// Committed DAG rounds counted by a score.
    pub window: u64,
    /// Minimum score for anchor eligibility.
    pub threshold: u64,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        Self { window: 10, threshold: 1 }
    }
}

/// Per-replica activity in the most recent committed rounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreBoard {
    scores: Vec<u64>,
    derived_from: Option<AnchorRef>,
    window: u64,
    committed: BTreeMap<Round, BTreeSet<ReplicaId>>,
}

impl ScoreBoard {
    pub fn new(committee: &Committee, window: u64) -> Self {
        Self {
            scores: vec![0; committee.size()],
            derived_from: None,
            window: window.max(1),
            committed: BTreeMap::new(),
        }
    }

    /// A board with fixed scores, as if derived from `anchor`'s history.
    pub fn with_scores(scores: Vec<u64>, derived_from: AnchorRef) -> Self {
        Self { scores, derived_from: Some(derived_from), window: 1, committed: BTreeMap::new() }
    }

    pub fn score(&self, r: ReplicaId) -> u64 {
        self.scores[r.index()]
    }

    pub fn scores(&self) -> &[u64] {
        &self.scores
    }

    pub fn derived_from(&self) -> Option<AnchorRef> {
        self.derived_from
    }

    /// Folds the newest ordered segment into the board: a score is the
    /// number of the replica's nodes in the last `window` committed rounds.
    pub fn update_scores(&mut self, segment: &LogSegment) {
        for key in &segment.nodes {
            self.committed.entry(key.round).or_default().insert(key.source);
        }
        if let Some(&top) = self.committed.keys().next_back() {
            let floor = (top + 1).saturating_sub(self.window);
            self.committed = self.committed.split_off(&floor);
        }
        self.scores.iter_mut().for_each(|s| *s = 0);
        for sources in self.committed.values() {
            for s in sources {
                self.scores[s.index()] += 1;
            }
        }
        self.derived_from = Some(segment.anchor);
    }

    /// Replicas with score at least `threshold`, ordered by score (desc) then
    /// index. Falls back to the top `2f + 1` when too few qualify. Before any
    /// history exists every replica is eligible.
    pub fn eligible(&self, committee: &Committee, threshold: u64) -> Vec<ReplicaId> {
        if self.derived_from.is_none() {
            return committee.replicas().collect();
        }
        let mut ranked: Vec<ReplicaId> = committee.replicas().collect();
        ranked.sort_by_key(|r| (std::cmp::Reverse(self.score(*r)), *r));
        let qualified = ranked.iter().take_while(|r| self.score(**r) >= threshold).count();
        ranked.truncate(qualified.max(committee.fast_quorum()).min(committee.size()));
        ranked
    }
}

/// Ordered anchor candidates for `round`.
pub fn get_anchors(
    round: Round,
    board: &ScoreBoard,
    mode: ProtocolMode,
    committee: &Committee,
    config: &ReputationConfig,
) -> Vec<ReplicaId> {
    let n = committee.size() as u64;
    match mode {
        ProtocolMode::Bullshark => {
            if round % 2 == 1 {
                vec![ReplicaId::from(((round / 2) % n) as usize)]
            } else {
                Vec::new()
            }
        }
        ProtocolMode::Shoal => {
            let mut eligible = board.eligible(committee, config.threshold);
            eligible.sort();
            vec![eligible[(round % eligible.len() as u64) as usize]]
        }
        ProtocolMode::ShoalPlusPlus => board.eligible(committee, config.threshold),
    }
}

/// Anchor schedule of one DAG instance: mode, committee and live scores.
#[derive(Clone, Debug)]
pub struct Reputation {
    mode: ProtocolMode,
    committee: Committee,
    config: ReputationConfig,
    board: ScoreBoard,
}

impl Reputation {
    pub fn new(mode: ProtocolMode, committee: Committee, config: ReputationConfig) -> Self {
        Self { mode, committee, config, board: ScoreBoard::new(&committee, config.window) }
    }

    pub fn with_board(mut self, board: ScoreBoard) -> Self {
        self.board = board;
        self
    }

    pub fn mode(&self) -> ProtocolMode {
        self.mode
    }

    pub fn board(&self) -> &ScoreBoard {
        &self.board
    }

    pub fn anchors(&self, dag_id: DagId, round: Round) -> Vec<AnchorRef> {
        get_anchors(round, &self.board, self.mode, &self.committee, &self.config)
            .into_iter()
            .map(|source| AnchorRef { dag_id, round, source })
            .collect()
    }

    pub fn update(&mut self, segment: &LogSegment) {
        self.board.update_scores(segment);
    }
}
