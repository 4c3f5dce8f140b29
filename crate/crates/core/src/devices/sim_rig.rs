//! In-process rig: the five ports wired straight into [`TwinSim`].
//!
//! One [`SimPlant`] holds the twin plus actuator geometry. The stage tool
//! touches the twin at `surface_z_mm`, the gripper jaws seat after
//! `jaw_contact_close_mm` of closure; travel beyond those marks compresses
//! the chamber. Port adapters share the plant through `Rc<RefCell<..>>`, so
//! a rig lives on one thread, which is all the runners need.

use std::cell::RefCell;
use std::rc::Rc;

use super::adc::AdcTransfer;
use super::{
    DeviceError, ForceSensorPort, GripperPort, PlantDynamics, PressureSensorPort, PumpPort, Rig,
    StagePort,
};
use crate::sim::{TwinParams, TwinSim};
use crate::units::{DisplacementMm, ForceN, PressureKpa, VolumeMl};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRigConfig {
    /// Baseline pressure change per mL pushed into the chamber.
    pub pump_gain_kpa_per_ml: f64,
    /// Syringe volume; net dispensed volume may not leave +/- this.
    pub pump_capacity_ml: f64,
    /// Motor steps per mL, shared with the wire emulator.
    pub pump_steps_per_ml: f64,
    /// Stage travel from the homed park position, mm.
    pub stage_travel_mm: f64,
    /// Stage height at which the mounted tool touches the twin, mm.
    pub surface_z_mm: f64,
    /// Full gripper stroke, mm of closure.
    pub gripper_stroke_mm: f64,
    /// Closure at which the jaws seat on the twin's equator, mm.
    pub jaw_contact_close_mm: f64,
    /// Sensor quantization; `None` reads the chamber exactly.
    pub adc: Option<AdcTransfer>,
}

impl Default for SimRigConfig {
    fn default() -> Self {
        Self {
            pump_gain_kpa_per_ml: 5.0,
            pump_capacity_ml: 60.0,
            pump_steps_per_ml: 800.0,
            stage_travel_mm: 40.0,
            surface_z_mm: 5.0,
            gripper_stroke_mm: 25.0,
            jaw_contact_close_mm: 4.0,
            adc: None,
        }
    }
}

impl SimRigConfig {
    fn validate(&self) -> Result<(), DeviceError> {
        let positive = [
            ("pump_gain_kpa_per_ml", self.pump_gain_kpa_per_ml),
            ("pump_capacity_ml", self.pump_capacity_ml),
            ("pump_steps_per_ml", self.pump_steps_per_ml),
            ("stage_travel_mm", self.stage_travel_mm),
            ("surface_z_mm", self.surface_z_mm),
            ("gripper_stroke_mm", self.gripper_stroke_mm),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(DeviceError::InvalidArgument { field, value });
            }
        }
        let jaw = self.jaw_contact_close_mm;
        if !jaw.is_finite() || jaw < 0.0 || jaw >= self.gripper_stroke_mm {
            return Err(DeviceError::InvalidArgument {
                field: "jaw_contact_close_mm",
                value: jaw,
            });
        }
        Ok(())
    }
}

/// The twin plus everything the actuators remember.
#[derive(Debug, Clone)]
pub struct SimPlant {
    sim: TwinSim,
    cfg: SimRigConfig,
    dispensed_ml: f64,
    stage_z_mm: f64,
    gripper_closed_mm: f64,
}

impl SimPlant {
    pub fn new(params: TwinParams, seed: u64, cfg: SimRigConfig) -> Result<Self, DeviceError> {
        cfg.validate()?;
        Ok(Self {
            sim: TwinSim::new(params, seed)?,
            cfg,
            dispensed_ml: 0.0,
            stage_z_mm: 0.0,
            gripper_closed_mm: 0.0,
        })
    }

    pub fn config(&self) -> &SimRigConfig {
        &self.cfg
    }

    pub fn twin(&self) -> &TwinSim {
        &self.sim
    }

    pub fn dispensed_ml(&self) -> f64 {
        self.dispensed_ml
    }

    pub fn stage_z_mm(&self) -> f64 {
        self.stage_z_mm
    }

    pub fn gripper_closed_mm(&self) -> f64 {
        self.gripper_closed_mm
    }

    pub fn pump_move_ml(&mut self, delta_ml: f64) -> Result<(), DeviceError> {
        if !delta_ml.is_finite() {
            return Err(DeviceError::InvalidArgument {
                field: "delta_ml",
                value: delta_ml,
            });
        }
        let net = self.dispensed_ml + delta_ml;
        if net.abs() > self.cfg.pump_capacity_ml {
            return Err(DeviceError::PumpCapacity {
                requested_ml: net,
                capacity_ml: self.cfg.pump_capacity_ml,
            });
        }
        self.sim
            .nudge_baseline(delta_ml * self.cfg.pump_gain_kpa_per_ml)?;
        self.dispensed_ml = net;
        Ok(())
    }

    pub fn zero_pump(&mut self) {
        self.dispensed_ml = 0.0;
    }

    pub fn read_pressure(&mut self) -> Result<PressureKpa, DeviceError> {
        let exact = self.sim.read_pressure();
        match &self.cfg.adc {
            None => Ok(exact),
            Some(adc) => {
                // a railed sensor reports its range edge, not an error
                let (lo, hi) = adc.pressure_range();
                let clipped = PressureKpa::new(exact.value().clamp(lo, hi))?;
                Ok(adc.quantize(clipped)?)
            }
        }
    }

    pub fn read_force(&mut self) -> Result<ForceN, DeviceError> {
        Ok(self.sim.read_force())
    }

    pub fn stage_move(&mut self, delta_mm: f64) -> Result<(), DeviceError> {
        if !delta_mm.is_finite() {
            return Err(DeviceError::InvalidArgument {
                field: "delta_mm",
                value: delta_mm,
            });
        }
        let target = self.stage_z_mm + delta_mm;
        if target < 0.0 || target > self.cfg.stage_travel_mm {
            return Err(DeviceError::StageTravel {
                target_mm: target,
                travel_mm: self.cfg.stage_travel_mm,
            });
        }
        self.apply_compression(target, self.gripper_closed_mm)?;
        self.stage_z_mm = target;
        Ok(())
    }

    pub fn stage_home(&mut self) -> Result<(), DeviceError> {
        self.apply_compression(0.0, self.gripper_closed_mm)?;
        self.stage_z_mm = 0.0;
        Ok(())
    }

    pub fn gripper_open(&mut self) -> Result<(), DeviceError> {
        self.apply_compression(self.stage_z_mm, 0.0)?;
        self.gripper_closed_mm = 0.0;
        Ok(())
    }

    pub fn gripper_close_by(&mut self, delta_mm: f64) -> Result<(), DeviceError> {
        if !delta_mm.is_finite() || delta_mm < 0.0 {
            return Err(DeviceError::InvalidArgument {
                field: "delta_mm",
                value: delta_mm,
            });
        }
        let closed = self.gripper_closed_mm + delta_mm;
        if closed > self.cfg.gripper_stroke_mm {
            return Err(DeviceError::GripperStroke {
                requested_mm: closed,
                stroke_mm: self.cfg.gripper_stroke_mm,
            });
        }
        self.apply_compression(self.stage_z_mm, closed)?;
        self.gripper_closed_mm = closed;
        Ok(())
    }

    pub fn advance_cycle(&mut self) {
        self.sim.apply_cycle_drift();
    }

    pub fn settle(&mut self) {
        self.sim.settle();
    }

    pub fn set_contact_area(&mut self, area_mm2: f64) -> Result<(), DeviceError> {
        Ok(self.sim.set_contact_area(area_mm2)?)
    }

    /// Push the combined tool and jaw engagement into the twin. The sim
    /// rejects impossible states before any actuator field is committed.
    fn apply_compression(&mut self, stage_z: f64, closed: f64) -> Result<(), DeviceError> {
        let tool = (stage_z - self.cfg.surface_z_mm).max(0.0);
        let jaws = (closed - self.cfg.jaw_contact_close_mm).max(0.0);
        self.sim.set_compression(DisplacementMm::new(tool + jaws)?)?;
        Ok(())
    }
}

struct SimPump(Rc<RefCell<SimPlant>>);
struct SimPressure(Rc<RefCell<SimPlant>>);
struct SimForce(Rc<RefCell<SimPlant>>);
struct SimStage(Rc<RefCell<SimPlant>>);
struct SimGripper(Rc<RefCell<SimPlant>>);
struct SimDynamics(Rc<RefCell<SimPlant>>);

impl PumpPort for SimPump {
    fn move_volume(&mut self, delta: VolumeMl) -> Result<(), DeviceError> {
        self.0.borrow_mut().pump_move_ml(delta.value())
    }

    fn dispensed_ml(&self) -> f64 {
        self.0.borrow().dispensed_ml()
    }

    fn zero(&mut self) {
        self.0.borrow_mut().zero_pump();
    }
}

impl PressureSensorPort for SimPressure {
    fn read_pressure(&mut self) -> Result<PressureKpa, DeviceError> {
        self.0.borrow_mut().read_pressure()
    }
}

impl ForceSensorPort for SimForce {
    fn read_force(&mut self) -> Result<ForceN, DeviceError> {
        self.0.borrow_mut().read_force()
    }
}

impl StagePort for SimStage {
    fn move_z_relative(&mut self, delta_mm: f64, _feed_mm_per_min: f64) -> Result<(), DeviceError> {
        self.0.borrow_mut().stage_move(delta_mm)
    }

    fn home(&mut self) -> Result<(), DeviceError> {
        self.0.borrow_mut().stage_home()
    }

    fn position_mm(&self) -> f64 {
        self.0.borrow().stage_z_mm()
    }
}

impl GripperPort for SimGripper {
    fn open_full(&mut self) -> Result<(), DeviceError> {
        self.0.borrow_mut().gripper_open()
    }

    fn close_by(&mut self, delta: DisplacementMm) -> Result<(), DeviceError> {
        self.0.borrow_mut().gripper_close_by(delta.value())
    }

    fn closed_mm(&self) -> f64 {
        self.0.borrow().gripper_closed_mm()
    }

    fn stroke_mm(&self) -> f64 {
        self.0.borrow().config().gripper_stroke_mm
    }
}

impl PlantDynamics for SimDynamics {
    fn advance_cycle(&mut self) {
        self.0.borrow_mut().advance_cycle();
    }

    fn settle(&mut self) {
        self.0.borrow_mut().settle();
    }

    fn set_contact_area(&mut self, area_mm2: f64) -> Result<(), DeviceError> {
        self.0.borrow_mut().set_contact_area(area_mm2)
    }
}

/// Assemble a simulated rig and keep a handle on the shared plant, for
/// callers that inspect internal state afterwards.
pub fn sim_rig_shared(
    params: TwinParams,
    seed: u64,
    cfg: SimRigConfig,
) -> Result<(Rig, Rc<RefCell<SimPlant>>), DeviceError> {
    let plant = Rc::new(RefCell::new(SimPlant::new(params, seed, cfg)?));
    let rig = Rig {
        pump: Box::new(SimPump(plant.clone())),
        pressure: Box::new(SimPressure(plant.clone())),
        force: Box::new(SimForce(plant.clone())),
        stage: Box::new(SimStage(plant.clone())),
        gripper: Box::new(SimGripper(plant.clone())),
        plant: Box::new(SimDynamics(plant.clone())),
    };
    Ok((rig, plant))
}

/// Assemble a simulated rig.
pub fn sim_rig(params: TwinParams, seed: u64, cfg: SimRigConfig) -> Result<Rig, DeviceError> {
    sim_rig_shared(params, seed, cfg).map(|(rig, _)| rig)
}
