// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

//! Certified round-based DAG consensus with Bullshark, Shoal and Shoal++
//! commit rules, staggered multi-DAG ordering and a deterministic
//! discrete-event simulator for latency and safety experiments.

pub mod commit;
pub mod dag;
pub mod metrics;
pub mod multi_dag;
pub mod oracles;
pub mod replica;
pub mod reputation;
pub mod scenario;
pub mod sim;
pub mod types;

pub use commit::{AnchorRef, AnchorResolution, CommitConfig, CommitEngine, LogSegment, Via};
pub use dag::{Certificate, DagError, DagNode, LocalDag, NodeProposal, Vote};
pub use multi_dag::{GlobalEntry, GlobalLog, Interleave, StaggerConfig};
pub use oracles::{check_oracles, OracleReport, OracleResult};
pub use reputation::{ProtocolMode, Reputation, ReputationConfig, ScoreBoard};
pub use scenario::{ConfigError, CrashSpec, DelayModel, Scenario};
pub use sim::{run, RunTrace};
pub use types::{Committee, DagId, NodeKey, ReplicaId, Round, SimTime, TxnId, TICKS_PER_MD};
