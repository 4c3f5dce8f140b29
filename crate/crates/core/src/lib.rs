//! Core library for driving a pressure-tunable soft fruit twin.
//!
//! The crate is organized around a small set of layers:
//!
//! - [`units`]: validated scalar quantities, indentation curves and samples
//! - [`sim`]: the twin model itself (pressure-stiffness law, chamber
//!   compression coupling, drift, noise)
//! - [`devices`]: hardware port traits, ADC and wire codecs, and the two
//!   backends (in-process simulation, serial rig)
//! - [`calibration`]: pressure-stiffness fitting and inversion
//! - [`analysis`]: stiffness estimation, damage detection, peak finding and
//!   drift metrics
//! - [`protocols`]: the experiment runners that tie ports, model and
//!   analysis together and produce run logs
//!
//! Persistence of run logs, configuration files and reports lives in the
//! `twinctl` binary crate; everything here works on in-memory values.

pub mod analysis;
pub mod calibration;
pub mod devices;
pub mod protocols;
pub mod sim;
pub mod units;
