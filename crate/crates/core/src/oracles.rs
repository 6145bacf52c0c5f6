// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Safety oracles over run traces, and an exhaustive small-case search for
//! fast-commit versus skip contradictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::commit::{AnchorRef, LogSegment, Via};
use crate::sim::{ReplicaTrace, RunTrace};
use crate::types::{DagId, NodeKey, TxnId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    pub name: &'static str,
    pub passed: bool,
    /// First failure found, if any.
    pub witness: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OracleReport {
    pub results: Vec<OracleResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&OracleResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            write!(f, "{:<16} {}", r.name, if r.passed { "pass" } else { "FAIL" })?;
            if let Some(w) = &r.witness {
                write!(f, "  ({w})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub const AGREEMENT: &str = "agreement";
pub const EXACTLY_ONCE: &str = "exactly_once";
pub const FAST_SKIP: &str = "fast_skip";
pub const DETERMINISM: &str = "determinism";
pub const CERTIFIED_UNIQUE: &str = "certified_unique";

/// Evaluates every oracle across `traces`. Determinism compares traces of
/// identical scenarios and passes vacuously when no scenario repeats.
pub fn check_oracles(traces: &[RunTrace]) -> OracleReport {
    let first = |f: fn(&RunTrace) -> Option<String>| traces.iter().find_map(f);
    let result = |name, witness: Option<String>| OracleResult { name, passed: witness.is_none(), witness };
    OracleReport {
        results: vec![
            result(AGREEMENT, first(agreement)),
            result(EXACTLY_ONCE, first(exactly_once)),
            result(FAST_SKIP, first(fast_skip_trace)),
            result(CERTIFIED_UNIQUE, first(certified_unique)),
            result(DETERMINISM, determinism(traces)),
        ],
    }
}

type SegmentView<'a> = (AnchorRef, &'a [NodeKey], &'a [TxnId]);

fn view(s: &LogSegment) -> SegmentView<'_> {
    (s.anchor, &s.nodes, &s.txns)
}

/// Index of the first difference when neither sequence is a prefix of the other.
fn prefix_conflict<T: PartialEq>(a: &[T], b: &[T]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y)
}

fn agreement(t: &RunTrace) -> Option<String> {
    let correct: Vec<&ReplicaTrace> = t.correct().collect();
    let k = t.scenario.k();
    for (i, a) in correct.iter().enumerate() {
        for b in &correct[i + 1..] {
            for d in 0..k {
                let sa: Vec<_> = a.dag_segments(d).map(view).collect();
                let sb: Vec<_> = b.dag_segments(d).map(view).collect();
                if let Some(at) = prefix_conflict(&sa, &sb) {
                    return Some(format!(
                        "seed {}: dag {d} segment {at} differs between {} ({}) and {} ({})",
                        t.scenario.seed, a.id, sa[at].0, b.id, sb[at].0
                    ));
                }
            }
            let ga: Vec<_> = a.global.iter().map(|e| (e.dag_id, e.segment.anchor, &e.txns)).collect();
            let gb: Vec<_> = b.global.iter().map(|e| (e.dag_id, e.segment.anchor, &e.txns)).collect();
            if let Some(at) = prefix_conflict(&ga, &gb) {
                return Some(format!(
                    "seed {}: global log entry {at} differs between {} and {}",
                    t.scenario.seed, a.id, b.id
                ));
            }
        }
    }
    None
}

fn exactly_once(t: &RunTrace) -> Option<String> {
    let seed = t.scenario.seed;
    for r in t.correct() {
        let mut seen: BTreeSet<(DagId, NodeKey)> = BTreeSet::new();
        for s in &r.segments {
            if s.nodes.last() != Some(&s.anchor.key()) {
                return Some(format!(
                    "seed {seed}: {} segment of {} does not end at its anchor",
                    r.id, s.anchor
                ));
            }
            if let Some(k) = s.nodes.iter().find(|k| !seen.insert((s.dag_id, **k))) {
                return Some(format!("seed {seed}: {} ordered d{}:{k} twice", r.id, s.dag_id));
            }
        }
        let mut txns = BTreeSet::new();
        if let Some(tx) = r.global.iter().flat_map(|e| &e.txns).find(|tx| !txns.insert(**tx)) {
            return Some(format!("seed {seed}: {} global log repeats {tx}", r.id));
        }
        // The global log consumes each DAG's stream in order, once.
        for d in 0..t.scenario.k() {
            let stream: Vec<_> = r.dag_segments(d).collect();
            let consumed: Vec<_> = r.global.iter().filter(|e| e.dag_id == d).map(|e| &e.segment).collect();
            if consumed.len() > stream.len() || consumed.iter().zip(&stream).any(|(a, b)| a != b) {
                return Some(format!("seed {seed}: {} global log disagrees with dag {d} stream", r.id));
            }
        }
    }
    // Nodes ordered anywhere are ordered by the same anchor everywhere.
    let mut owner: BTreeMap<(DagId, NodeKey), AnchorRef> = BTreeMap::new();
    for r in t.correct() {
        for s in &r.segments {
            for k in &s.nodes {
                let prev = *owner.entry((s.dag_id, *k)).or_insert(s.anchor);
                if prev != s.anchor {
                    return Some(format!(
                        "seed {seed}: d{}:{k} ordered by {prev} and by {} at {}",
                        s.dag_id, s.anchor, r.id
                    ));
                }
            }
        }
    }
    None
}

fn fast_skip_trace(t: &RunTrace) -> Option<String> {
    let fast: BTreeSet<AnchorRef> = t
        .correct()
        .flat_map(|r| r.segments.iter().filter(|s| s.via == Via::FastDirect).map(|s| s.anchor))
        .collect();
    t.correct().find_map(|r| {
        r.segments
            .iter()
            .flat_map(|s| &s.skipped)
            .find(|a| fast.contains(a))
            .map(|a| format!("seed {}: {a} fast-committed but skipped at {}", t.scenario.seed, r.id))
    })
}

fn certified_unique(t: &RunTrace) -> Option<String> {
    t.correct().find_map(|r| {
        r.faults
            .iter()
            .find(|(_, d)| d.starts_with("protocol violation"))
            .map(|(at, d)| format!("seed {}: {} at {at}: {d}", t.scenario.seed, r.id))
    })
}

fn determinism(traces: &[RunTrace]) -> Option<String> {
    let mut by_scenario: BTreeMap<String, &RunTrace> = BTreeMap::new();
    for t in traces {
        let key = t.scenario.to_toml();
        match by_scenario.get(&key) {
            Some(prev) if prev.fingerprint != t.fingerprint || *prev != t => {
                return Some(format!("seed {}: repeated run produced a different trace", t.scenario.seed));
            }
            Some(_) => {}
            None => {
                by_scenario.insert(key, t);
            }
        }
    }
    None
}

pub mod fast_skip {
    //! Exhaustive search over a bounded n = 4 scenario space: rounds 0..=3,
    //! anchor `a = R0@0`, replica R3 equivocating in round 1. Enumerates
    //! which round-1 proposals link `a`, which variant each correct replica
    //! receives first, which variant (if any) gets certified, the source of
    //! the instance's round-2 anchor `b` and the parents of `b`. Round 3 links
    //! everything so `b` commits directly. A violation is a case where the
    //! fast rule fires at some correct replica while the Bullshark instance
    //! started at `a` skips it.

    use serde::Serialize;

    use crate::commit::{fast_commit_check, run_bullshark, AnchorRef};
    use crate::dag::{Certificate, DagNode, LocalDag, NodeProposal};
    use crate::reputation::{ProtocolMode, Reputation, ReputationConfig, ScoreBoard};
    use crate::types::{Committee, ReplicaId, TxnId};

    const N: usize = 4;
    const EQUIVOCATOR: u16 = 3;

    #[derive(Clone, Debug, PartialEq, Eq, Serialize)]
    pub struct Case {
        /// Whether R0, R1, R2's round-1 proposals link `a`.
        pub correct_links: [bool; 3],
        /// Whether variants A and B of R3's round-1 proposal link `a`.
        pub variant_links: [bool; 2],
        /// Variant (0 = A, 1 = B) first received by R0, R1, R2.
        pub first_received: [u8; 3],
        pub certified_variant: Option<u8>,
        pub b_source: u16,
        /// Round-1 sources `b` links.
        pub b_parents: Vec<u16>,
        /// Correct replicas where the fast rule fired for `a`.
        pub fast_at: Vec<u16>,
    }

    #[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
    pub struct Report {
        pub threshold: usize,
        pub cases: usize,
        pub fast_cases: usize,
        pub skip_cases: usize,
        pub violations: Vec<Case>,
    }

    fn certify(p: NodeProposal, signers: &[u16]) -> DagNode {
        DagNode {
            certificate: Certificate {
                dag_id: 0,
                round: p.round,
                source: p.source,
                digest: p.digest,
                signers: signers.iter().map(|s| ReplicaId(*s)).collect(),
            },
            proposal: p,
        }
    }

    fn proposal(round: u64, source: u16, parents: &[&DagNode], filler: u64) -> NodeProposal {
        let batch = if filler > 0 { vec![TxnId::filler(round, filler)] } else { vec![] };
        NodeProposal::new(0, round, ReplicaId(source), batch, parents.iter().map(|n| n.reference()).collect())
    }

    /// Parent subsets of size at least `min` of `pool`, in a fixed order.
    fn subsets(pool: usize, min: usize) -> Vec<Vec<usize>> {
        (0u32..1 << pool)
            .filter(|m| m.count_ones() as usize >= min)
            .map(|m| (0..pool).filter(|i| m & (1 << i) != 0).collect())
            .collect()
    }

    /// Runs the search with the given fast-rule threshold (`2f + 1` normally).
    pub fn enumerate(threshold: usize) -> Report {
        let c = Committee::new(N);
        let quorum_signers = [0u16, 1, 2];
        let genesis: Vec<DagNode> =
            (0..N as u16).map(|s| certify(proposal(0, s, &[], 0), &quorum_signers)).collect();
        let a = AnchorRef { dag_id: 0, round: 0, source: ReplicaId(0) };
        let with_a: Vec<&DagNode> = genesis.iter().collect();
        let without_a: Vec<&DagNode> = genesis[1..].iter().collect();
        let parents_for = |link: bool| if link { &with_a } else { &without_a };

        let mut report = Report { threshold, ..Default::default() };
        for links_mask in 0..8u8 {
            let correct_links = [0, 1, 2].map(|i| links_mask & (1 << i) != 0);
            let round1: Vec<DagNode> = (0..3)
                .map(|s| certify(proposal(1, s, parents_for(correct_links[s as usize]), 0), &quorum_signers))
                .collect();
            for vmask in 0..4u8 {
                let variant_links = [vmask & 1 != 0, vmask & 2 != 0];
                let variants = [
                    proposal(1, EQUIVOCATOR, parents_for(variant_links[0]), 0),
                    proposal(1, EQUIVOCATOR, parents_for(variant_links[1]), 1),
                ];
                for first_mask in 0..8u8 {
                    let first_received = [0, 1, 2].map(|i| (first_mask >> i) & 1);
                    let voters = |v: u8| {
                        let mut s: Vec<u16> =
                            (0..3u16).filter(|i| first_received[*i as usize] == v).collect();
                        s.push(EQUIVOCATOR);
                        s
                    };
                    let certifiable: Vec<Option<u8>> = std::iter::once(None)
                        .chain((0..2u8).filter(|v| voters(*v).len() >= c.quorum()).map(Some))
                        .collect();
                    for certified_variant in certifiable {
                        let mut r1 = round1.clone();
                        if let Some(v) = certified_variant {
                            r1.push(certify(variants[v as usize].clone(), &voters(v)));
                        }
                        for b_source in 0..N as u16 {
                            for b_subset in subsets(r1.len(), c.quorum()) {
                                report.cases += 1;
                                let (fast_at, skipped) = evaluate(
                                    &c,
                                    a,
                                    &genesis,
                                    &r1,
                                    &variants,
                                    &first_received,
                                    b_source,
                                    &b_subset,
                                    threshold,
                                );
                                if !fast_at.is_empty() {
                                    report.fast_cases += 1;
                                }
                                if skipped {
                                    report.skip_cases += 1;
                                }
                                if !fast_at.is_empty() && skipped {
                                    report.violations.push(Case {
                                        correct_links,
                                        variant_links,
                                        first_received,
                                        certified_variant,
                                        b_source,
                                        b_parents: b_subset.iter().map(|i| r1[*i].source().0).collect(),
                                        fast_at,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        report
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        c: &Committee,
        a: AnchorRef,
        genesis: &[DagNode],
        r1: &[DagNode],
        variants: &[NodeProposal; 2],
        first_received: &[u8; 3],
        b_source: u16,
        b_subset: &[usize],
        threshold: usize,
    ) -> (Vec<u16>, bool) {
        let signers = [0u16, 1, 2];
        let all_r1: Vec<&DagNode> = r1.iter().collect();
        let b_parents: Vec<&DagNode> = b_subset.iter().map(|i| &r1[*i]).collect();
        let r2: Vec<DagNode> = (0..N as u16)
            .map(|s| {
                let ps = if s == b_source { &b_parents } else { &all_r1 };
                certify(proposal(2, s, ps, 0), &signers)
            })
            .collect();
        let all_r2: Vec<&DagNode> = r2.iter().collect();
        let r3: Vec<DagNode> = (0..N as u16).map(|s| certify(proposal(3, s, &all_r2, 0), &signers)).collect();

        // `b` leads round 2 of the instance's schedule.
        let mut scores = vec![1u64; N];
        scores[b_source as usize] = 2;
        let rep = Reputation::new(ProtocolMode::ShoalPlusPlus, *c, ReputationConfig::default())
            .with_board(ScoreBoard::with_scores(scores, a));

        let mut fast_at = Vec::new();
        let mut skipped = false;
        for me in 0..3u16 {
            let mut dag = LocalDag::new(*c, 0, ReplicaId(me));
            for n in genesis.iter().chain(r1).chain(&r2).chain(&r3) {
                dag.on_receive_certificate(n.clone()).expect("consistent fixture");
            }
            for n in &r1[..3] {
                dag.on_receive_proposal(&n.proposal).expect("valid");
            }
            let first = &variants[first_received[me as usize] as usize];
            let second = &variants[1 - first_received[me as usize] as usize];
            dag.on_receive_proposal(first).expect("valid");
            dag.on_receive_proposal(second).expect("valid");
            if fast_commit_check(&dag, a, threshold) {
                fast_at.push(me);
            }
            let res = run_bullshark(&dag, a, &rep).expect("b commits directly");
            skipped |= res.skipped.contains(&a);
        }
        (fast_at, skipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reputation::ProtocolMode;
    use crate::scenario::Scenario;

    #[test]
    fn fault_free_run_passes_all() {
        let s = Scenario { rounds: 10, drain: 20.0, ..Scenario::canonical(ProtocolMode::ShoalPlusPlus) };
        let t = crate::sim::run(&s).unwrap();
        let report = check_oracles(&[t.clone(), t]);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn tampered_trace_fails_agreement() {
        let s = Scenario { rounds: 10, drain: 20.0, ..Scenario::canonical(ProtocolMode::Shoal) };
        let mut t = crate::sim::run(&s).unwrap();
        t.replicas[1].segments[2].nodes.pop();
        let report = check_oracles(&[t]);
        assert!(!report.get(AGREEMENT).unwrap().passed);
        assert!(!report.get(EXACTLY_ONCE).unwrap().passed);
    }

    #[test]
    fn prefix_is_not_a_conflict() {
        assert_eq!(prefix_conflict(&[1, 2], &[1, 2, 3]), None);
        assert_eq!(prefix_conflict(&[1, 4], &[1, 2, 3]), Some(1));
    }

    #[test]
    fn fast_commits_are_never_skipped_and_mutation_breaks_it() {
        let sound = fast_skip::enumerate(3);
        assert!(sound.cases > 1000);
        assert!(sound.fast_cases > 0 && sound.skip_cases > 0);
        assert!(sound.violations.is_empty(), "{:?}", sound.violations.first());
        let mutated = fast_skip::enumerate(2);
        assert_eq!(mutated.cases, sound.cases);
        assert!(!mutated.violations.is_empty());
    }
}
