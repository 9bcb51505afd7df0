//! Terminal and system state, the per-slot transition kernel and AoI cost.
//!
//! A terminal is described by the pair `(a, d)`: `a` is the age of the
//! packet held in its one-packet buffer and `d` is the gap between the AoI
//! at the destination and that packet age. Delivering the buffered packet
//! therefore reduces the AoI by exactly `d`. A terminal with nothing useful
//! to send is represented by `d = 0` and `a = h`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Per-terminal state `(a, d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TerminalState {
    a: u64,
    d: u64,
}

impl TerminalState {
    /// Fresh packet of age one, AoI one.
    pub const FRESH: TerminalState = TerminalState { a: 1, d: 0 };

    pub fn new(a: u64, d: u64) -> Result<Self, ModelError> {
        if a == 0 {
            return Err(ModelError::ZeroPacketAge);
        }
        Ok(TerminalState { a, d })
    }

    /// State of a terminal whose buffer carries no AoI reduction.
    pub fn empty(aoi: u64) -> Result<Self, ModelError> {
        Self::new(aoi, 0)
    }

    #[inline]
    pub fn a(self) -> u64 {
        self.a
    }

    #[inline]
    pub fn d(self) -> u64 {
        self.d
    }

    #[inline]
    pub fn aoi(self) -> u64 {
        self.a + self.d
    }

    /// True when delivering the buffered packet would lower the AoI.
    #[inline]
    pub fn has_update(self) -> bool {
        self.d > 0
    }

    #[inline]
    pub fn step(self, scheduled: bool, arrival: bool) -> Self {
        step_terminal(self, scheduled, arrival)
    }

    /// Clamp into a truncated `[1, a_max] x [0, d_max]` grid.
    pub fn clamped(self, a_max: u64, d_max: u64) -> Self {
        TerminalState {
            a: self.a.min(a_max),
            d: self.d.min(d_max),
        }
    }
}

impl Default for TerminalState {
    fn default() -> Self {
        Self::FRESH
    }
}

/// One-slot transition of a single terminal.
///
/// `scheduled` means the terminal delivered its buffered packet this slot
/// (a unique transmitter); `arrival` is the Bernoulli arrival at the end of
/// the slot.
#[inline]
pub fn step_terminal(s: TerminalState, scheduled: bool, arrival: bool) -> TerminalState {
    match (scheduled, arrival) {
        (false, false) => TerminalState { a: s.a + 1, d: s.d },
        (false, true) => TerminalState { a: 1, d: s.d + s.a },
        (true, false) => TerminalState { a: s.a + 1, d: 0 },
        (true, true) => TerminalState { a: 1, d: s.a },
    }
}

/// One-slot transition when the terminal keeps no buffer: a packet that is
/// not delivered in its arrival slot is dropped.
#[inline]
pub fn step_terminal_no_buffer(s: TerminalState, scheduled: bool, arrival: bool) -> TerminalState {
    match (scheduled, arrival) {
        (false, false) => TerminalState { a: s.aoi() + 1, d: 0 },
        _ => step_terminal(s, scheduled, arrival),
    }
}

#[inline]
pub fn aoi(s: TerminalState) -> u64 {
    s.aoi()
}

/// AoI charged for the slot, sampled after the delivery and before the
/// arrival.
#[inline]
pub fn slot_cost(s: TerminalState, scheduled: bool) -> u64 {
    if scheduled {
        s.a
    } else {
        s.a + s.d
    }
}

/// Joint state of all terminals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemState {
    terminals: Vec<TerminalState>,
}

impl SystemState {
    /// All terminals start from [`TerminalState::FRESH`].
    pub fn fresh(n: usize) -> Self {
        SystemState {
            terminals: vec![TerminalState::FRESH; n],
        }
    }

    pub fn from_terminals(terminals: Vec<TerminalState>) -> Self {
        SystemState { terminals }
    }

    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    pub fn terminals(&self) -> &[TerminalState] {
        &self.terminals
    }

    pub fn terminals_mut(&mut self) -> &mut [TerminalState] {
        &mut self.terminals
    }

    pub fn get(&self, n: usize) -> TerminalState {
        self.terminals[n]
    }

    pub fn total_aoi(&self) -> u64 {
        self.terminals.iter().map(|s| s.aoi()).sum()
    }
}

impl std::ops::Index<usize> for SystemState {
    type Output = TerminalState;

    fn index(&self, n: usize) -> &TerminalState {
        &self.terminals[n]
    }
}

/// Independent Bernoulli arrivals, one rate per terminal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    rates: Vec<f64>,
}

impl ArrivalProcess {
    pub fn new(rates: Vec<f64>) -> Result<Self, ModelError> {
        for (terminal, &rate) in rates.iter().enumerate() {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ModelError::RateOutOfRange { terminal, rate });
            }
        }
        Ok(ArrivalProcess { rates })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, n: usize) -> f64 {
        self.rates[n]
    }

    /// One arrival draw for terminal `n`, consuming exactly one variate.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> bool {
        bernoulli(self.rates[n], rng)
    }
}

/// Consumes exactly one `f64` variate regardless of `p`, so matched streams
/// stay aligned across policies.
#[inline]
pub(crate) fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < p
}
