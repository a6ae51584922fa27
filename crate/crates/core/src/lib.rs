//! Reliable participant selection for UAV-assisted federated learning.
//!
//! The crate simulates a fleet of UAV clients training a shared classifier
//! through an edge server, with stragglers, dropouts and poisoning attackers,
//! and implements a three-stage participant filter alongside common selection
//! baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod clients;
pub mod data;
pub mod defense;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod seed;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Stable client identifier; ordering by id fixes every reduction order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl std::fmt::Display for ClientId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
