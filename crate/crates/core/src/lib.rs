//! Learning from heterogeneous demonstrations.
//!
//! A policy network is conditioned on a per-demonstrator latent embedding
//! that is fitted by backpropagation, both while training and online for a
//! demonstrator never seen before. Around it sit a synthetic jobshop
//! scheduling world with three hidden expert heuristics, a pairwise
//! (counterfactual) variant of the learner, clustering and recurrent
//! baselines, and an experiment harness.

pub mod action_embed;
pub mod bnn;
pub mod cluster;
pub mod counterfactual;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod jobshop;
pub mod lstm;
pub mod mlp;
pub mod numerics;
pub mod serial;

pub use error::{Error, Result};
