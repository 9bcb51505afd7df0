//! Centralized scheduling policies.
//!
//! Every policy here schedules at most one terminal per slot. Index-based
//! policies idle when no terminal holds a packet worth delivering; ties go to
//! the lowest terminal id.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::mdp::ValueTable;
use crate::model::SystemState;
use crate::whittle::WhittleIndex;

/// Terminals attempting transmission in one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    Idle,
    Single(usize),
    /// Two or more simultaneous transmitters; only decentralized access
    /// produces this.
    Multiple(Vec<usize>),
}

impl PolicyDecision {
    pub fn transmitters(&self) -> &[usize] {
        match self {
            PolicyDecision::Idle => &[],
            PolicyDecision::Single(n) => std::slice::from_ref(n),
            PolicyDecision::Multiple(v) => v,
        }
    }

    /// The delivering terminal, if exactly one transmits.
    pub fn unique(&self) -> Option<usize> {
        match self {
            PolicyDecision::Single(n) => Some(*n),
            PolicyDecision::Multiple(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.transmitters().is_empty()
    }
}

/// Packet handling applied by the simulator between slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BufferMode {
    /// Keep the newest packet until it is delivered or replaced.
    OneBuffer,
    /// Drop a packet not delivered in its arrival slot.
    NoBuffer,
}

/// A per-replication scheduling policy.
pub trait Scheduler: Send {
    fn decide(&mut self, state: &SystemState) -> PolicyDecision;

    fn buffer_mode(&self) -> BufferMode {
        BufferMode::OneBuffer
    }

    fn name(&self) -> &str;
}

fn argmax_positive(values: impl Iterator<Item = (usize, f64)>) -> PolicyDecision {
    let mut best: Option<(usize, f64)> = None;
    for (n, v) in values {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((n, v));
        }
    }
    best.map_or(PolicyDecision::Idle, |(n, _)| PolicyDecision::Single(n))
}

/// Schedules the terminal with the largest one-buffer index.
pub fn decide_whittle_one_buffer(state: &SystemState, indices: &[WhittleIndex]) -> PolicyDecision {
    argmax_positive(
        state
            .terminals()
            .iter()
            .zip(indices)
            .enumerate()
            .map(|(n, (s, idx))| (n, idx.of(*s))),
    )
}

/// Which terminals hold a packet that arrived at the end of the last slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoBufferState {
    pub fresh_arrival: Vec<bool>,
}

impl NoBufferState {
    /// Under no-buffer handling a packet is present iff its age is 1.
    pub fn from_system(state: &SystemState) -> Self {
        NoBufferState {
            fresh_arrival: state.terminals().iter().map(|s| s.a() == 1).collect(),
        }
    }
}

/// Among terminals holding a fresh packet, schedules the one whose packet
/// has the largest index at age 1, i.e. `m(1, h - 1)`.
pub fn decide_whittle_no_buffer(nb: &NoBufferState, aoi: &[u64], indices: &[WhittleIndex]) -> PolicyDecision {
    argmax_positive(
        nb.fresh_arrival
            .iter()
            .zip(aoi)
            .zip(indices)
            .enumerate()
            .filter(|(_, ((&fresh, _), _))| fresh)
            .map(|(n, ((_, &h), idx))| (n, idx.value(1.0, h.saturating_sub(1) as f64))),
    )
}

/// Schedules `cursor` and advances it cyclically, whatever the buffers hold.
pub fn decide_rr_one(cursor: &mut usize, n_terminals: usize) -> PolicyDecision {
    let n = *cursor % n_terminals;
    *cursor = (n + 1) % n_terminals;
    PolicyDecision::Single(n)
}

/// Largest AoI among terminals with a useful packet.
pub fn decide_max_age(state: &SystemState) -> PolicyDecision {
    argmax_positive(
        state
            .terminals()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.has_update())
            .map(|(n, s)| (n, s.aoi() as f64)),
    )
}

/// Uniform choice among terminals with a useful packet.
pub fn decide_random<R: Rng + ?Sized>(state: &SystemState, rng: &mut R) -> PolicyDecision {
    let candidates: Vec<usize> = state
        .terminals()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.has_update())
        .map(|(n, _)| n)
        .collect();
    if candidates.is_empty() {
        PolicyDecision::Idle
    } else {
        PolicyDecision::Single(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Joint-MDP table lookup; states beyond the grid are clamped. A scheduled
/// terminal with nothing to deliver is reported as an idle slot.
pub fn decide_mdp(table: &ValueTable, state: &SystemState) -> PolicyDecision {
    let n = table.joint_action(state.terminals());
    if state[n].has_update() {
        PolicyDecision::Single(n)
    } else {
        PolicyDecision::Idle
    }
}

/// Policy names used in configs, presets and CSV output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "whittle-1buf")]
    WhittleOneBuffer,
    #[serde(rename = "whittle-0buf")]
    WhittleNoBuffer,
    #[serde(rename = "rr-one")]
    RrOne,
    #[serde(rename = "max-age")]
    MaxAge,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "mdp")]
    Mdp,
    #[serde(rename = "ipra")]
    Ipra,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::WhittleOneBuffer,
        PolicyKind::WhittleNoBuffer,
        PolicyKind::RrOne,
        PolicyKind::MaxAge,
        PolicyKind::Random,
        PolicyKind::Mdp,
        PolicyKind::Ipra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::WhittleOneBuffer => "whittle-1buf",
            PolicyKind::WhittleNoBuffer => "whittle-0buf",
            PolicyKind::RrOne => "rr-one",
            PolicyKind::MaxAge => "max-age",
            PolicyKind::Random => "random",
            PolicyKind::Mdp => "mdp",
            PolicyKind::Ipra => "ipra",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy '{s}'"))
    }
}

/// The slotted policy zoo.
#[derive(Clone, Debug)]
pub enum Policy {
    WhittleOneBuffer { indices: Vec<WhittleIndex> },
    WhittleNoBuffer { indices: Vec<WhittleIndex> },
    RoundRobin { cursor: usize, n: usize },
    MaxAge,
    Random { rng: ChaCha8Rng },
    Mdp { table: Arc<ValueTable> },
}

impl Policy {
    pub fn whittle_one_buffer(lambdas: &[f64]) -> Result<Self, ParamError> {
        Ok(Policy::WhittleOneBuffer {
            indices: index_functions(lambdas)?,
        })
    }

    pub fn whittle_no_buffer(lambdas: &[f64]) -> Result<Self, ParamError> {
        Ok(Policy::WhittleNoBuffer {
            indices: index_functions(lambdas)?,
        })
    }

    pub fn round_robin(n: usize) -> Self {
        Policy::RoundRobin { cursor: 0, n }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::WhittleOneBuffer { .. } => PolicyKind::WhittleOneBuffer,
            Policy::WhittleNoBuffer { .. } => PolicyKind::WhittleNoBuffer,
            Policy::RoundRobin { .. } => PolicyKind::RrOne,
            Policy::MaxAge => PolicyKind::MaxAge,
            Policy::Random { .. } => PolicyKind::Random,
            Policy::Mdp { .. } => PolicyKind::Mdp,
        }
    }
}

fn index_functions(lambdas: &[f64]) -> Result<Vec<WhittleIndex>, ParamError> {
    lambdas.iter().map(|&l| WhittleIndex::new(l)).collect()
}

impl Scheduler for Policy {
    fn decide(&mut self, state: &SystemState) -> PolicyDecision {
        match self {
            Policy::WhittleOneBuffer { indices } => decide_whittle_one_buffer(state, indices),
            Policy::WhittleNoBuffer { indices } => {
                let nb = NoBufferState::from_system(state);
                let aoi: Vec<u64> = state.terminals().iter().map(|s| s.aoi()).collect();
                decide_whittle_no_buffer(&nb, &aoi, indices)
            }
            Policy::RoundRobin { cursor, n } => decide_rr_one(cursor, *n),
            Policy::MaxAge => decide_max_age(state),
            Policy::Random { rng } => decide_random(state, rng),
            Policy::Mdp { table } => decide_mdp(table, state),
        }
    }

    fn buffer_mode(&self) -> BufferMode {
        match self {
            Policy::WhittleNoBuffer { .. } => BufferMode::NoBuffer,
            _ => BufferMode::OneBuffer,
        }
    }

    fn name(&self) -> &str {
        self.kind().as_str()
    }
}
