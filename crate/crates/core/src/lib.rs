//! Federated learning protocol core.
//!
//! Contains the pieces of a federated training run that need no I/O: a
//! small dense network trained with SGD ([`nn`]), a non-iid synthetic task
//! generator ([`data`]), pairwise-mask secure aggregation ([`secure`]),
//! honest and poisoning clients ([`actors`]), the server round protocol
//! with loss-weighted selection, checkpoint recovery and reputation
//! ([`server`]), and the message wire format ([`wire`]).
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod actors;
pub mod data;
pub mod error;
pub mod nn;
pub mod secure;
pub mod seed;
pub mod server;
pub mod wire;

pub use error::{Error, Result};
pub use nn::{Architecture, Dataset, ParamVector, TrainConfig};
pub use server::{Checkpoint, RoundReport, ServerState, StrategyConfig};
