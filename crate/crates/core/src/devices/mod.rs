//! Rig hardware behind narrow port traits.
//!
//! A rig is five instruments: a syringe pump pressurizing the twin, a
//! pressure sensor on the chamber, a load cell behind the indenter, a
//! vertical stage carrying the tool, and a two-jaw gripper. Protocol runners
//! only ever see the traits, so the same runner drives the in-process
//! simulator, the wire emulator, or a live serial rig.

pub mod adc;
pub mod emu;
pub mod serial;
pub mod sim_rig;
pub mod wire;

use thiserror::Error;

use crate::sim::SimError;
use crate::units::{DisplacementMm, ForceN, PressureKpa, UnitError, VolumeMl};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error(transparent)]
    Adc(#[from] adc::AdcError),
    #[error("pump stroke would hold {requested_ml} mL, syringe takes {capacity_ml} mL")]
    PumpCapacity { requested_ml: f64, capacity_ml: f64 },
    #[error("stage target {target_mm} mm outside travel [0, {travel_mm}] mm")]
    StageTravel { target_mm: f64, travel_mm: f64 },
    #[error("gripper closure {requested_mm} mm exceeds the {stroke_mm} mm stroke")]
    GripperStroke { requested_mm: f64, stroke_mm: f64 },
    #[error("device refused the command: {0}")]
    Fault(wire::WireFault),
    #[error("expected {expected} reply, device sent {got}")]
    UnexpectedReply { expected: &'static str, got: String },
    #[error("no reply within the timeout, including one retry")]
    Timeout,
    #[error("transport failed: {0}")]
    Transport(String),
    #[error("argument {field} is invalid: {value}")]
    InvalidArgument { field: &'static str, value: f64 },
}

/// Syringe pump, signed net volume toward the chamber.
pub trait PumpPort {
    fn move_volume(&mut self, delta: VolumeMl) -> Result<(), DeviceError>;
    /// Net volume pushed since the last [`PumpPort::zero`].
    fn dispensed_ml(&self) -> f64;
    fn zero(&mut self);
}

pub trait PressureSensorPort {
    fn read_pressure(&mut self) -> Result<PressureKpa, DeviceError>;
}

pub trait ForceSensorPort {
    fn read_force(&mut self) -> Result<ForceN, DeviceError>;
}

/// Vertical stage carrying the active tool. Positive Z presses toward the
/// twin; position 0 is the homed park height.
pub trait StagePort {
    fn move_z_relative(&mut self, delta_mm: f64, feed_mm_per_min: f64) -> Result<(), DeviceError>;
    fn home(&mut self) -> Result<(), DeviceError>;
    fn position_mm(&self) -> f64;
}

/// Two-jaw gripper around the equator of the twin.
pub trait GripperPort {
    fn open_full(&mut self) -> Result<(), DeviceError>;
    /// Close both jaws inward by another `delta`.
    fn close_by(&mut self, delta: DisplacementMm) -> Result<(), DeviceError>;
    /// Total closure from the fully open aperture, mm.
    fn closed_mm(&self) -> f64;
    fn stroke_mm(&self) -> f64;
}

/// Hooks for plant behavior that happens between commands.
///
/// The simulator needs explicit pokes for cycle creep, settling and tool
/// changes; a physical plant does all three on its own, so the serial
/// backend wires these to no-ops.
pub trait PlantDynamics {
    /// A loading cycle finished; let cycle-dependent effects advance.
    fn advance_cycle(&mut self);
    /// The chamber was given time to settle at a fresh setpoint.
    fn settle(&mut self);
    /// A different tool face now presses on the twin.
    fn set_contact_area(&mut self, area_mm2: f64) -> Result<(), DeviceError>;
}

/// One assembled rig, everything a protocol runner may touch.
pub struct Rig {
    pub pump: Box<dyn PumpPort>,
    pub pressure: Box<dyn PressureSensorPort>,
    pub force: Box<dyn ForceSensorPort>,
    pub stage: Box<dyn StagePort>,
    pub gripper: Box<dyn GripperPort>,
    pub plant: Box<dyn PlantDynamics>,
}
