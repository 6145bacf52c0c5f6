// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Simulation scenarios and their TOML representation.
//!
//! Times are given in message delays (md). Every field is optional in a
//! file; omitted values take the defaults of [`Scenario::default`], and
//! `k`, `offset`, `f` and `round_timeout` derive from the protocol when
//! left unset.
//!
//! ```toml
//! protocol = "shoalpp"
//! n = 4
//! rounds = 60
//! seed = 7
//! delay = { kind = "uniform", lo = 0.5, hi = 2.0 }
//! drop_rate = 0.01
//! drop_from = [2]
//! crashes = [{ replica = 3, at = 0.0 }]
//! ```

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commit::CommitConfig;
use crate::multi_dag::{Interleave, StaggerConfig};
use crate::reputation::{ProtocolMode, ReputationConfig};
use crate::types::{Committee, ReplicaId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayModel {
    Fixed {
        delay: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `delays[from][to]`.
    Matrix {
        delays: Vec<Vec<f64>>,
    },
}

impl DelayModel {
    /// Smallest delay the model can produce.
    pub fn min(&self) -> f64 {
        match self {
            DelayModel::Fixed { delay } => *delay,
            DelayModel::Uniform { lo, .. } => *lo,
            DelayModel::Matrix { delays } => delays
                .iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i))
                .map(|(_, d)| *d)
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            DelayModel::Fixed { delay } => *delay,
            DelayModel::Uniform { hi, .. } => *hi,
            DelayModel::Matrix { delays } => delays.iter().flatten().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub replica: u16,
    pub at: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub protocol: ProtocolMode,
    pub n: usize,
    /// Defaults to the largest `f` with `n > 3f`.
    pub f: Option<usize>,
    /// Parallel DAGs; defaults to 3 for shoalpp and 1 otherwise.
    pub k: Option<usize>,
    /// Instance start spacing; defaults to one nominal round (3 md) over `k`.
    pub offset: Option<f64>,
    pub delay: DelayModel,
    /// Per-message drop probability; each drop is retransmitted.
    pub drop_rate: f64,
    /// Senders whose egress is subject to drops; empty means all.
    pub drop_from: Vec<u16>,
    pub retransmit: f64,
    pub crashes: Vec<CrashSpec>,
    pub equivocators: Vec<u16>,
    /// Before this time delays are drawn uniformly up to `pre_gst_cap`.
    pub gst: f64,
    pub pre_gst_cap: f64,
    /// Wait for all `n` certificates up to this long after entering a round;
    /// defaults to 3.5 md for shoalpp and 0 otherwise.
    pub round_timeout: Option<f64>,
    /// Rounds of client load, at the nominal 3 md per round.
    pub rounds: u64,
    /// Client transactions per md per correct replica.
    pub rate: f64,
    /// Extra time after the load stops.
    pub drain: f64,
    pub seed: u64,
    pub interleave: Interleave,
    pub fast_threshold: Option<usize>,
    pub gc_window: u64,
    pub reputation_window: u64,
    pub fetch_retry: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            protocol: ProtocolMode::ShoalPlusPlus,
            n: 4,
            f: None,
            k: None,
            offset: None,
            delay: DelayModel::Fixed { delay: 1.0 },
            drop_rate: 0.0,
            drop_from: Vec::new(),
            retransmit: 4.0,
            crashes: Vec::new(),
            equivocators: Vec::new(),
            gst: 0.0,
            pre_gst_cap: 10.0,
            round_timeout: None,
            rounds: 60,
            rate: 1.0,
            drain: 40.0,
            seed: 0,
            interleave: Interleave::PerRound,
            fast_threshold: None,
            gc_window: 100,
            reputation_window: ReputationConfig::default().window,
            fetch_retry: 4.0,
        }
    }
}

/// Nominal round length under unit delays: proposal, vote, certificate.
pub const NOMINAL_ROUND_MD: f64 = 3.0;

impl Scenario {
    /// The canonical fault-free configuration of a protocol mode.
    pub fn canonical(protocol: ProtocolMode) -> Self {
        Self { protocol, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn f(&self) -> usize {
        self.f.unwrap_or(self.n.saturating_sub(1) / 3)
    }

    pub fn committee(&self) -> Committee {
        Committee::with_faults(self.n, self.f()).expect("validated committee")
    }

    pub fn k(&self) -> usize {
        self.k.unwrap_or(if self.protocol == ProtocolMode::ShoalPlusPlus { 3 } else { 1 })
    }

    pub fn offset(&self) -> f64 {
        self.offset.unwrap_or(NOMINAL_ROUND_MD / self.k() as f64)
    }

    pub fn round_timeout(&self) -> f64 {
        self.round_timeout.unwrap_or(if self.protocol == ProtocolMode::ShoalPlusPlus { 3.5 } else { 0.0 })
    }

    pub fn stagger(&self) -> StaggerConfig {
        StaggerConfig::new(self.k(), SimTime::from_md(self.offset()))
    }

    pub fn commit_config(&self) -> CommitConfig {
        CommitConfig {
            mode: self.protocol,
            reputation: ReputationConfig { window: self.reputation_window, ..Default::default() },
            fast_threshold: self.fast_threshold,
            gc_window: self.gc_window,
        }
    }

    /// End of client load.
    pub fn load_end(&self) -> SimTime {
        SimTime::from_md(self.rounds as f64 * NOMINAL_ROUND_MD)
    }

    pub fn end_time(&self) -> SimTime {
        self.load_end() + SimTime::from_md(self.drain)
    }

    pub fn crash_time(&self, r: ReplicaId) -> Option<SimTime> {
        self.crashes.iter().filter(|c| c.replica == r.0).map(|c| SimTime::from_md(c.at)).min()
    }

    pub fn is_equivocator(&self, r: ReplicaId) -> bool {
        self.equivocators.contains(&r.0)
    }

    /// Replicas that crash or equivocate at any point.
    pub fn faulty(&self) -> BTreeSet<ReplicaId> {
        self.crashes
            .iter()
            .map(|c| ReplicaId(c.replica))
            .chain(self.equivocators.iter().map(|r| ReplicaId(*r)))
            .collect()
    }

    pub fn correct(&self) -> Vec<ReplicaId> {
        let faulty = self.faulty();
        (0..self.n).map(ReplicaId::from).filter(|r| !faulty.contains(r)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.n < 2 {
            return err(format!("n = {} (need at least 2 replicas)", self.n));
        }
        if self.n <= 3 * self.f() {
            return err(format!("n = {} cannot tolerate f = {} (need n > 3f)", self.n, self.f()));
        }
        let faulty = self.faulty();
        if faulty.len() > self.f() {
            return err(format!(
                "{} faulty replicas (crashed or equivocating) exceed f = {}",
                faulty.len(),
                self.f()
            ));
        }
        if let Some(r) = faulty.iter().find(|r| r.index() >= self.n) {
            return err(format!("faulty replica {r} outside committee of {}", self.n));
        }
        if let Some(r) = self.drop_from.iter().find(|r| **r as usize >= self.n) {
            return err(format!("drop_from names R{r} outside committee of {}", self.n));
        }
        if !(1..=8).contains(&self.k()) {
            return err(format!("k = {} (supported 1..=8)", self.k()));
        }
        let nonneg = [
            ("offset", self.offset()),
            ("gst", self.gst),
            ("round_timeout", self.round_timeout()),
            ("drain", self.drain),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return err(format!("{name} = {v} (must be finite and non-negative)"));
        }
        if let Some(c) = self.crashes.iter().find(|c| !(c.at.is_finite() && c.at >= 0.0)) {
            return err(format!("crash time {} of R{}", c.at, c.replica));
        }
        if let DelayModel::Matrix { delays } = &self.delay {
            if delays.len() != self.n || delays.iter().any(|row| row.len() != self.n) {
                return err(format!("delay matrix must be {0}x{0}", self.n));
            }
        }
        if let DelayModel::Uniform { lo, hi } = self.delay {
            if lo > hi {
                return err(format!("uniform delay lo {lo} > hi {hi}"));
            }
        }
        let lo = self.delay.min();
        if !(lo.is_finite() && lo > 0.0) {
            return err(format!("delays must be positive (min {lo})"));
        }
        if self.gst > 0.0 && self.pre_gst_cap < lo {
            return err(format!("pre_gst_cap {} below the minimum delay {lo}", self.pre_gst_cap));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return err(format!("drop_rate {} outside [0, 1)", self.drop_rate));
        }
        if !(self.retransmit > 0.0 && self.fetch_retry > 0.0) {
            return err("retransmit and fetch_retry must be positive".into());
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return err(format!("rate {} must be non-negative", self.rate));
        }
        if self.reputation_window == 0 {
            return err("reputation_window must be positive".into());
        }
        if self.fast_threshold == Some(0) {
            return err("fast_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Scenario `index` of the randomized safety suite: n of 4 or 7, delays in
/// [0.5, 2] md, up to 5% drops, a random GST, and at most f faulty replicas
/// of which at most one equivocates.
pub fn safety_scenario(index: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe_0000 + index);
    let n = if rng.gen_bool(0.5) { 4 } else { 7 };
    let f = (n - 1) / 3;
    let protocol = ProtocolMode::ALL[rng.gen_range(0..ProtocolMode::ALL.len())];
    let equivocators: Vec<u16> = if rng.gen_bool(0.5) { vec![rng.gen_range(0..n as u16)] } else { vec![] };
    let crash_count = rng.gen_range(0..=f - equivocators.len());
    let mut crashes: Vec<CrashSpec> = Vec::new();
    while crashes.len() < crash_count {
        let replica = rng.gen_range(0..n as u16);
        if !equivocators.contains(&replica) && crashes.iter().all(|c| c.replica != replica) {
            crashes.push(CrashSpec { replica, at: rng.gen_range(0.0..60.0) });
        }
    }
    Scenario {
        protocol,
        n,
        delay: DelayModel::Uniform { lo: 0.5, hi: 2.0 },
        drop_rate: rng.gen_range(0.0..=0.05),
        crashes,
        equivocators,
        gst: rng.gen_range(0.0..40.0),
        rounds: 25,
        seed: rng.gen(),
        ..Scenario::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let s = Scenario::canonical(ProtocolMode::ShoalPlusPlus);
        assert_eq!((s.k(), s.offset(), s.round_timeout()), (3, 1.0, 3.5));
        let b = Scenario::canonical(ProtocolMode::Bullshark);
        assert_eq!((b.k(), b.round_timeout()), (1, 0.0));
        assert_eq!(s.f(), 1);
        s.validate().unwrap();
    }

    #[test]
    fn parses_file_with_overrides() {
        let s = Scenario::from_toml(
            r#"
            protocol = "bullshark"
            n = 7
            seed = 9
            delay = { kind = "uniform", lo = 0.5, hi = 2.0 }
            crashes = [{ replica = 6, at = 10.0 }]
            equivocators = [5]
            "#,
        )
        .unwrap();
        assert_eq!((s.protocol, s.n, s.f(), s.seed), (ProtocolMode::Bullshark, 7, 2, 9));
        assert_eq!(s.crash_time(ReplicaId(6)), Some(SimTime::from_md(10.0)));
        assert_eq!(s.correct().len(), 5);
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn too_many_faults_is_config_error() {
        let s = Scenario {
            crashes: vec![CrashSpec { replica: 0, at: 0.0 }],
            equivocators: vec![1],
            ..Scenario::default()
        };
        assert!(s.validate().unwrap_err().0.contains("exceed f"));
        assert!(Scenario::from_toml("n = 4\nbogus = 1").is_err());
        assert!(Scenario::from_toml("n = 4\nf = 2").is_err());
        assert!(Scenario::from_toml("delay = { kind = \"fixed\", delay = 0.0 }").is_err());
    }

    #[test]
    fn safety_scenarios_are_valid_and_varied() {
        let all: Vec<Scenario> = (0..200).map(safety_scenario).collect();
        assert!(all.iter().all(|s| s.validate().is_ok()));
        assert!(all.iter().any(|s| s.n == 7 && s.faulty().len() == 2));
        assert!(all.iter().any(|s| !s.equivocators.is_empty() && !s.crashes.is_empty()));
        assert_eq!(safety_scenario(5), safety_scenario(5));
    }
}
