//! Deterministic federated learning simulation core.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, the CLI and
//! plotting live in the `fedsim` crate.
//!
//! The pipeline has four stages:
//!
//! * [`data`] generates or undersamples labeled feature vectors and deals
//!   them to clients as pairs of single-class shards.
//! * [`engine`] runs FedAvg and FedAP rounds over a population of clients.
//! * [`cluster`] groups clients by their latest model updates with Ward
//!   linkage and a distance-threshold cut.
//! * [`orchestrator`] chains warm-up, clustering and per-cluster training
//!   into one experiment with step-budget accounting.
//!
//! [`model`] supplies the two small models (multinomial logistic regression
//! and a one-hidden-layer tanh MLP) with exact analytic gradients.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cluster;
pub mod data;
pub mod engine;
mod error;
pub mod model;
pub mod orchestrator;
pub mod rng;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
