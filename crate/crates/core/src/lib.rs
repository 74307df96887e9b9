//! Simulator for blockchain-assisted parked-vehicle edge computing.
//!
//! Parked vehicles (PVs) and roadside units (RSUs) sell computing to
//! requesting vehicles (RVs). The crate covers:
//!
//! - [`scenario`]: configuration, units and the TOML scenario format;
//! - [`channel`]: SNR and rate of a log-distance channel;
//! - [`parking`]: residence-time model and stay probabilities;
//! - [`selection`]: computing-set filter, SNR graph and consensus committee;
//! - [`consensus`]: BFT cost model, PBFT baseline and a discrete-event run;
//! - [`game`]: follower split and leader price equilibrium;
//! - [`offload`]: instance construction and baseline schemes;
//! - [`experiment`]: sweep specs, runner and CSV output.

pub mod channel;
pub mod consensus;
pub mod experiment;
pub mod game;
pub mod offload;
pub mod parking;
pub mod scenario;
pub mod selection;
pub mod special;
