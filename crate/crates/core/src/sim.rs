// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Seeded discrete-event simulator.
//!
//! All events of one instant are delivered before any replica steps, so a
//! replica sees every simultaneous arrival when it decides to advance. Local
//! computation takes no simulated time.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::commit::LogSegment;
use crate::multi_dag::GlobalEntry;
use crate::replica::{
    Input, Message, Observation, Output, ProposalRecord, Replica, ReplicaConfig, Submission, Timer,
};
use crate::scenario::{ConfigError, DelayModel, Scenario};
use crate::types::{DagId, NodeKey, ReplicaId, SimTime, TxnId};

pub use crate::replica::equivocate;

/// Retransmissions before a message counts as lost for good.
const MAX_ATTEMPTS: u32 = 256;

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub deliver_at: SimTime,
    pub seq: u64,
    pub dst: ReplicaId,
    pub payload: Input,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.deliver_at, self.seq) == (other.deliver_at, other.seq)
    }
}
impl Eq for SimEvent {}
impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.deliver_at, self.seq).cmp(&(other.deliver_at, other.seq))
    }
}

/// Per-replica record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaTrace {
    pub id: ReplicaId,
    pub correct: bool,
    pub crashed_at: Option<SimTime>,
    pub proposals: Vec<ProposalRecord>,
    pub submissions: Vec<Submission>,
    /// Per-DAG segment streams, interleaved in emission order.
    pub segments: Vec<LogSegment>,
    pub global: Vec<GlobalEntry>,
    pub faults: Vec<(SimTime, String)>,
}

impl ReplicaTrace {
    pub fn dag_segments(&self, d: DagId) -> impl Iterator<Item = &LogSegment> {
        self.segments.iter().filter(move |s| s.dag_id == d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub scenario: Scenario,
    pub replicas: Vec<ReplicaTrace>,
    pub events: u64,
    pub sends: u64,
    pub drops: u64,
    pub end_time: SimTime,
    /// Digest of the delivered event sequence and every output stream.
    pub fingerprint: String,
}

impl RunTrace {
    pub fn correct(&self) -> impl Iterator<Item = &ReplicaTrace> {
        self.replicas.iter().filter(|r| r.correct)
    }

    /// Time each node was first proposed, from its author's record.
    pub fn proposal_times(&self) -> BTreeMap<(DagId, NodeKey), SimTime> {
        let mut out = BTreeMap::new();
        for r in &self.replicas {
            for p in &r.proposals {
                out.entry((p.dag_id, p.key)).or_insert(p.time);
            }
        }
        out
    }

    /// Client transactions submitted anywhere.
    pub fn submitted(&self) -> BTreeSet<TxnId> {
        self.replicas.iter().flat_map(|r| r.submissions.iter().map(|s| s.txn)).collect()
    }
}

/// Network adversary: delays, drops and crashes.
#[derive(Clone, Debug)]
pub struct Network {
    delay: DelayModel,
    gst: SimTime,
    pre_gst_cap: SimTime,
    drop_rate: f64,
    drop_from: BTreeSet<ReplicaId>,
    retransmit: SimTime,
    crashes: BTreeMap<ReplicaId, SimTime>,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(s: &Scenario) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(0);
        Self {
            delay: s.delay.clone(),
            gst: SimTime::from_md(s.gst),
            pre_gst_cap: SimTime::from_md(s.pre_gst_cap),
            drop_rate: s.drop_rate,
            drop_from: s.drop_from.iter().map(|r| ReplicaId(*r)).collect(),
            retransmit: SimTime::from_md(s.retransmit),
            crashes: (0..s.n).map(ReplicaId::from).filter_map(|r| s.crash_time(r).map(|t| (r, t))).collect(),
            rng,
        }
    }

    /// Whether `r` has crashed by `t` (and stays silent from then on).
    pub fn crashed(&self, r: ReplicaId, t: SimTime) -> bool {
        self.crashes.get(&r).is_some_and(|c| t >= *c)
    }

    /// Bernoulli drop of one transmission from `from`.
    pub fn drop_filter(&mut self, from: ReplicaId) -> bool {
        if self.drop_rate == 0.0 || (!self.drop_from.is_empty() && !self.drop_from.contains(&from)) {
            return false;
        }
        self.rng.gen_bool(self.drop_rate)
    }

    pub fn delay(&mut self, from: ReplicaId, to: ReplicaId, at: SimTime) -> SimTime {
        let lo = SimTime::from_md(self.delay.min());
        if at < self.gst {
            return SimTime(self.rng.gen_range(lo.0..=self.pre_gst_cap.0.max(lo.0)));
        }
        match &self.delay {
            DelayModel::Fixed { delay } => SimTime::from_md(*delay),
            DelayModel::Uniform { lo, hi } => {
                let (lo, hi) = (SimTime::from_md(*lo), SimTime::from_md(*hi));
                SimTime(self.rng.gen_range(lo.0..=hi.0))
            }
            DelayModel::Matrix { delays } => SimTime::from_md(delays[from.index()][to.index()]),
        }
    }

    /// Delivery time of a message sent at `at`, retransmitting after drops.
    /// `None` when the sender crashes before any copy gets through.
    pub fn transmit(&mut self, from: ReplicaId, to: ReplicaId, at: SimTime) -> (Option<SimTime>, u64) {
        let mut t = at;
        for attempt in 0..MAX_ATTEMPTS {
            if self.crashed(from, t) {
                return (None, attempt as u64);
            }
            if !self.drop_filter(from) {
                return (Some(t + self.delay(from, to, t)), attempt as u64);
            }
            t = t + self.retransmit;
        }
        (None, MAX_ATTEMPTS as u64)
    }
}

struct Simulator {
    scenario: Scenario,
    replicas: Vec<Replica>,
    traces: Vec<ReplicaTrace>,
    net: Network,
    queue: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    events: u64,
    sends: u64,
    drops: u64,
    hasher: Sha256,
}

/// Runs `scenario` to its end time.
pub fn run(scenario: &Scenario) -> Result<RunTrace, ConfigError> {
    scenario.validate()?;
    let committee = scenario.committee();
    let faulty = scenario.faulty();
    let replicas: Vec<Replica> = committee
        .replicas()
        .map(|id| {
            Replica::new(ReplicaConfig {
                id,
                committee,
                commit: scenario.commit_config(),
                stagger: scenario.stagger(),
                round_timeout: SimTime::from_md(scenario.round_timeout()),
                interleave: scenario.interleave,
                fetch_retry: SimTime::from_md(scenario.fetch_retry),
                equivocate: scenario.is_equivocator(id),
            })
        })
        .collect();
    let traces = committee
        .replicas()
        .map(|id| ReplicaTrace {
            id,
            correct: !faulty.contains(&id),
            crashed_at: scenario.crash_time(id),
            ..Default::default()
        })
        .collect();
    let mut sim = Simulator {
        scenario: scenario.clone(),
        replicas,
        traces,
        net: Network::new(scenario),
        queue: BinaryHeap::new(),
        seq: 0,
        events: 0,
        sends: 0,
        drops: 0,
        hasher: Sha256::new(),
    };
    for i in 0..sim.replicas.len() {
        let boot = sim.replicas[i].boot();
        sim.route(ReplicaId::from(i), boot, SimTime::ZERO);
    }
    sim.schedule_load();
    sim.run_loop();
    Ok(sim.finish())
}

impl Simulator {
    fn push(&mut self, deliver_at: SimTime, dst: ReplicaId, payload: Input) {
        self.seq += 1;
        self.queue.push(Reverse(SimEvent { deliver_at, seq: self.seq, dst, payload }));
    }

    fn schedule_load(&mut self) {
        let s = &self.scenario;
        if s.rate == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(1);
        let end = s.load_end();
        let mut arrivals = Vec::new();
        for r in s.correct() {
            let mut t = 0.0f64;
            loop {
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() / s.rate;
                let at = SimTime::from_md(t);
                if at >= end {
                    break;
                }
                arrivals.push((at, r));
            }
        }
        arrivals.sort();
        for (i, (at, r)) in arrivals.into_iter().enumerate() {
            self.push(at, r, Input::Submit(TxnId(i as u64 + 1)));
        }
    }

    fn run_loop(&mut self) {
        let end = self.scenario.end_time();
        while let Some(Reverse(head)) = self.queue.peek() {
            let now = head.deliver_at;
            if now > end {
                break;
            }
            let mut dirty = BTreeSet::new();
            while self.queue.peek().is_some_and(|Reverse(e)| e.deliver_at == now) {
                let Reverse(ev) = self.queue.pop().expect("peeked");
                if self.net.crashed(ev.dst, now) {
                    continue;
                }
                self.events += 1;
                self.hash_event(&ev);
                self.replicas[ev.dst.index()].handle(ev.payload, now);
                dirty.insert(ev.dst);
            }
            for id in dirty {
                let replica = &mut self.replicas[id.index()];
                replica.step(now);
                let outputs = replica.take_outputs();
                let obs = replica.take_observations();
                self.record(id, obs);
                self.route(id, outputs, now);
            }
        }
    }

    fn route(&mut self, from: ReplicaId, outputs: Vec<Output>, now: SimTime) {
        for out in outputs {
            match out {
                Output::Timer { at, timer } => self.push(at.max(now), from, Input::Timer(timer)),
                Output::Send { to, msg } => self.send(from, to, msg, now),
                Output::Broadcast(msg) => {
                    for to in 0..self.replicas.len() {
                        let to = ReplicaId::from(to);
                        if to != from {
                            self.send(from, to, msg.clone(), now);
                        }
                    }
                }
            }
        }
    }

    fn send(&mut self, from: ReplicaId, to: ReplicaId, msg: Message, now: SimTime) {
        self.sends += 1;
        let (at, drops) = self.net.transmit(from, to, now);
        self.drops += drops;
        if let Some(at) = at {
            self.push(at, to, Input::Message { from, msg });
        }
    }

    fn record(&mut self, id: ReplicaId, obs: Vec<Observation>) {
        let t = &mut self.traces[id.index()];
        for o in obs {
            match o {
                Observation::Proposed(p) => t.proposals.push(p),
                Observation::Submitted(s) => t.submissions.push(s),
                Observation::Segment(s) => t.segments.push(s),
                Observation::Appended(e) => t.global.push(e),
                Observation::Fault { time, detail } => t.faults.push((time, detail)),
            }
        }
    }

    fn hash_event(&mut self, ev: &SimEvent) {
        let tag: &str = match &ev.payload {
            Input::Message { msg, .. } => msg.kind(),
            Input::Submit(_) => "submit",
            Input::Timer(Timer::DagStart(_)) => "start",
            Input::Timer(Timer::RoundTimeout(..)) => "timeout",
            Input::Timer(Timer::FetchRetry { .. }) => "fetch_retry",
        };
        self.hasher.update(ev.deliver_at.0.to_le_bytes());
        self.hasher.update(ev.seq.to_le_bytes());
        self.hasher.update(ev.dst.0.to_le_bytes());
        self.hasher.update(tag.as_bytes());
    }

    fn finish(mut self) -> RunTrace {
        for t in &self.traces {
            for s in &t.segments {
                self.hasher.update(format!("{s:?}").as_bytes());
            }
            for e in &t.global {
                self.hasher.update(format!("{}:{}:{:?}", e.turn, e.dag_id, e.txns).as_bytes());
            }
        }
        let fingerprint = hex::encode(self.hasher.finalize());
        RunTrace {
            end_time: self.scenario.end_time(),
            scenario: self.scenario,
            replicas: self.traces,
            events: self.events,
            sends: self.sends,
            drops: self.drops,
            fingerprint,
        }
    }
}
