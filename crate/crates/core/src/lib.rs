//! Simulation of coin tossing over locked EPR pairs: a two-qubit state
//! engine, the session state machine, cheating strategies, Monte Carlo bias
//! estimation, a line-oriented transcript format and a CLI.

pub mod adversary;
pub mod cli;
pub mod io;
pub mod protocol;
pub mod qstate;
pub mod stats;

pub use adversary::{AliceSpec, BobSpec};
pub use protocol::{run_full_session, run_with_specs, Bit, CoinOutcome, SessionConfig, SessionResult};
pub use qstate::{Axis, BellKind, PauliOp, PureTwoQubitState};
