//! Age-of-information scheduling over a shared channel.
//!
//! Terminals receive status updates at Bernoulli rates and a single packet per
//! slot can reach the controller. The crate provides the closed-form Whittle
//! index, relative value iteration solvers, centralized policies, the
//! index-prioritized random access protocol and a slotted simulator.

pub mod error;
pub mod harness;
pub mod ipra;
pub mod mdp;
pub mod model;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod whittle;

pub use error::{ConfigError, FieldError, HarnessError, IpraError, MdpError, ModelError, ParamError, SimError};
pub use model::{SystemState, TerminalState};
pub use policy::{Policy, PolicyDecision, PolicyKind, Scheduler};
pub use whittle::{whittle, DecoupledParams, WhittleIndex};
