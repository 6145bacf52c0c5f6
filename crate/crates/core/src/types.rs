// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Identifiers, time and committee arithmetic shared by every module.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// A DAG round. Round 0 is the genesis layer whose proposals carry no parents.
pub type Round = u64;

/// Index of one of the `k` parallel DAG instances.
pub type DagId = usize;

/// Identity of a replica, an index in `[0, n)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u16);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

impl From<usize> for ReplicaId {
    fn from(i: usize) -> Self {
        ReplicaId(i as u16)
    }
}

/// Client transaction identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl TxnId {
    /// Filler ids used by equivocating replicas to make two variants of an
    /// otherwise identical proposal digest-distinct. Never submitted by clients.
    pub fn filler(round: Round, variant: u64) -> Self {
        TxnId((1 << 63) | (round << 8) | variant)
    }

    pub fn is_filler(self) -> bool {
        self.0 >> 63 == 1
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Position of a vertex in one DAG: at most one certified node exists per key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub round: Round,
    pub source: ReplicaId,
}

impl NodeKey {
    pub fn new(round: Round, source: ReplicaId) -> Self {
        Self { round, source }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.source, self.round)
    }
}

/// Simulated time in integer ticks, so stage latencies telescope exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

/// Ticks per message delay.
pub const TICKS_PER_MD: u64 = 1_000_000;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_md(md: f64) -> Self {
        assert!(md >= 0.0 && md.is_finite(), "negative or non-finite time {md}");
        SimTime((md * TICKS_PER_MD as f64).round() as u64)
    }

    pub fn as_md(self) -> f64 {
        self.0 as f64 / TICKS_PER_MD as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}md", self.as_md())
    }
}

/// Committee of `n = 3f + 1` replicas (or any `n > 3f`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    n: usize,
    f: usize,
}

impl Committee {
    /// Committee tolerating the maximal `f = (n - 1) / 3`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "empty committee");
        Self { n, f: (n - 1) / 3 }
    }

    pub fn with_faults(n: usize, f: usize) -> Option<Self> {
        (n >= 1 && n > 3 * f).then_some(Self { n, f })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn faults(&self) -> usize {
        self.f
    }

    /// `n - f`: certificate quorum and parent count.
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    /// `f + 1`: certified links needed by the direct commit rule.
    pub fn validity(&self) -> usize {
        self.f + 1
    }

    /// `2f + 1`: uncertified links needed by the fast direct commit rule.
    pub fn fast_quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn replicas(&self) -> impl Iterator<Item = ReplicaId> + Clone {
        (0..self.n).map(ReplicaId::from)
    }

    pub fn contains(&self, id: ReplicaId) -> bool {
        id.index() < self.n
    }
}
