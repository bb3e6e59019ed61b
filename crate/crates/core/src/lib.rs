//! Cycle-level statistics for quantum thermal machines.
//!
//! Machines are GKSL models coupled to a hot and a cold bath. Every
//! jump either injects an excitation into the machine or extracts one, and a
//! cycle is an injection followed by an extraction. The crate computes cycle
//! probabilities, waiting-time distributions and derived diagnostics from the
//! superoperator algebra, and cross-checks them with closed forms for the
//! three-level maser and with a quantum-jump Monte Carlo.

pub mod linalg;
pub mod model;
pub mod structure;
pub mod superop;
pub mod cyclestats;
pub mod maser_ref;
pub mod trajectory;
