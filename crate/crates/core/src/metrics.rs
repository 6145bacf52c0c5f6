// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Per-transaction latency stages: queuing, anchoring and anchor commit.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;

use crate::commit::Via;
use crate::sim::RunTrace;
use crate::types::{DagId, NodeKey, ReplicaId, SimTime, TxnId};

/// Stamps of one committed transaction at its submission replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TxnTimeline {
    pub txn: TxnId,
    pub replica: ReplicaId,
    pub dag_id: DagId,
    pub submit_t: SimTime,
    pub proposed_t: SimTime,
    /// Proposal time of the anchor whose segment ordered the transaction.
    pub anchored_t: SimTime,
    /// Time the transaction reached the global log.
    pub committed_t: SimTime,
    pub commit_rule: Via,
    /// Carried by the anchor node itself.
    pub in_anchor: bool,
}

impl TxnTimeline {
    pub fn queuing(&self) -> SimTime {
        self.proposed_t - self.submit_t
    }

    pub fn anchoring(&self) -> SimTime {
        self.anchored_t - self.proposed_t
    }

    pub fn anchor_commit(&self) -> SimTime {
        self.committed_t - self.anchored_t
    }

    pub fn total(&self) -> SimTime {
        self.committed_t - self.submit_t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Decomposition {
    pub timelines: Vec<TxnTimeline>,
    /// Submitted but absent from the submitting replica's global log.
    pub uncommitted: Vec<TxnId>,
}

/// Builds one timeline per committed client transaction.
pub fn decompose(trace: &RunTrace) -> Decomposition {
    let proposal_times = trace.proposal_times();
    let mut out = Decomposition::default();
    for r in &trace.replicas {
        if r.submissions.is_empty() {
            continue;
        }
        let mut carried: BTreeMap<TxnId, (DagId, NodeKey, SimTime)> = BTreeMap::new();
        for p in &r.proposals {
            for t in &p.batch {
                carried.entry(*t).or_insert((p.dag_id, p.key, p.time));
            }
        }
        let mut committed = BTreeMap::new();
        for e in &r.global {
            for t in &e.txns {
                committed.insert(*t, e);
            }
        }
        for s in &r.submissions {
            let (Some(&(dag_id, key, proposed_t)), Some(e)) = (carried.get(&s.txn), committed.get(&s.txn))
            else {
                out.uncommitted.push(s.txn);
                continue;
            };
            let anchor = e.segment.anchor;
            let anchored_t = proposal_times[&(anchor.dag_id, anchor.key())];
            out.timelines.push(TxnTimeline {
                txn: s.txn,
                replica: r.id,
                dag_id,
                submit_t: s.time,
                proposed_t,
                anchored_t,
                committed_t: e.appended_at,
                commit_rule: e.segment.via,
                in_anchor: anchor.dag_id == dag_id && anchor.key() == key,
            });
        }
    }
    out.timelines.sort_by_key(|t| t.txn);
    out.uncommitted.sort();
    out
}

/// Mean and quartiles in md.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Stats { mean: v.iter().sum::<f64>() / v.len() as f64, p25: q(0.25), p50: q(0.5), p75: q(0.75) })
    }
}

/// Fractions of fast-direct, direct and indirect commits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RuleMix {
    pub fast_direct: f64,
    pub direct: f64,
    pub indirect: f64,
}

impl RuleMix {
    pub fn of(rules: impl IntoIterator<Item = Via>) -> RuleMix {
        let mut counts = [0usize; 3];
        for v in rules {
            counts[v as usize] += 1;
        }
        let total = counts.iter().sum::<usize>().max(1) as f64;
        RuleMix {
            fast_direct: counts[0] as f64 / total,
            direct: counts[1] as f64 / total,
            indirect: counts[2] as f64 / total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub queuing: Stats,
    pub anchoring: Stats,
    pub anchor_commit: Stats,
    pub total: Stats,
    /// Anchoring over transactions outside anchor nodes.
    pub anchoring_non_anchor: Option<Stats>,
    /// Per transaction.
    pub rule_mix: RuleMix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Aggregate {
    Empty,
    Summary(Summary),
}

impl Aggregate {
    pub fn summary(&self) -> Option<&Summary> {
        match self {
            Aggregate::Empty => None,
            Aggregate::Summary(s) => Some(s),
        }
    }
}

pub fn aggregate(timelines: &[TxnTimeline]) -> Aggregate {
    let stage = |f: fn(&TxnTimeline) -> SimTime| {
        let v: Vec<f64> = timelines.iter().map(|t| f(t).as_md()).collect();
        Stats::of(&v)
    };
    let Some(total) = stage(TxnTimeline::total) else { return Aggregate::Empty };
    let non_anchor: Vec<f64> =
        timelines.iter().filter(|t| !t.in_anchor).map(|t| t.anchoring().as_md()).collect();
    Aggregate::Summary(Summary {
        count: timelines.len(),
        queuing: stage(TxnTimeline::queuing).expect("non-empty"),
        anchoring: stage(TxnTimeline::anchoring).expect("non-empty"),
        anchor_commit: stage(TxnTimeline::anchor_commit).expect("non-empty"),
        total,
        anchoring_non_anchor: Stats::of(&non_anchor),
        rule_mix: RuleMix::of(timelines.iter().map(|t| t.commit_rule)),
    })
}

/// Commit rules of every anchor resolved at a correct replica.
pub fn anchor_rule_mix(trace: &RunTrace) -> RuleMix {
    RuleMix::of(trace.correct().flat_map(|r| r.segments.iter().map(|s| s.via)))
}

pub const CSV_HEADER: [&str; 14] = [
    "run_id",
    "protocol",
    "seed",
    "txn_id",
    "dag_id",
    "submit_t",
    "proposed_t",
    "anchored_t",
    "committed_t",
    "queuing",
    "anchoring",
    "anchor_commit",
    "total",
    "commit_rule",
];

/// Writes timelines as CSV rows; `header` controls the header line.
pub fn write_csv<W: io::Write>(
    w: &mut csv::Writer<W>,
    run_id: &str,
    protocol: &str,
    seed: u64,
    timelines: &[TxnTimeline],
    header: bool,
) -> csv::Result<()> {
    if header {
        w.write_record(CSV_HEADER)?;
    }
    let md = |t: SimTime| format!("{:.6}", t.as_md());
    for t in timelines {
        w.write_record([
            run_id.to_string(),
            protocol.to_string(),
            seed.to_string(),
            t.txn.0.to_string(),
            t.dag_id.to_string(),
            md(t.submit_t),
            md(t.proposed_t),
            md(t.anchored_t),
            md(t.committed_t),
            md(t.queuing()),
            md(t.anchoring()),
            md(t.anchor_commit()),
            md(t.total()),
            t.commit_rule.name().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
