//! Device-side firmware emulator for the wire protocol.
//!
//! [`WireRigEmu`] is what the rig's microcontroller does: parse a frame,
//! poke the plant, reply. Pairing it with [`LoopbackTransport`] exercises
//! the entire serial stack, framing, parsing, retries and quantization, with
//! no hardware on the bench.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use super::serial::{serial_rig, WireTransport};
use super::sim_rig::{SimPlant, SimRigConfig};
use super::wire::{self, Command, Reply, WireFault};
use super::{DeviceError, Rig};
use crate::sim::{SimError, TwinParams};

pub struct WireRigEmu {
    plant: SimPlant,
}

impl WireRigEmu {
    pub fn new(params: TwinParams, seed: u64, cfg: SimRigConfig) -> Result<Self, DeviceError> {
        Ok(Self {
            plant: SimPlant::new(params, seed, cfg)?,
        })
    }

    pub fn plant(&self) -> &SimPlant {
        &self.plant
    }

    /// Execute one received frame, returning the reply frame.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<u8> {
        let reply = match wire::parse_command(frame) {
            Ok(cmd) => self.execute(cmd),
            Err(_) => Reply::Err(WireFault::BadCmd),
        };
        wire::frame_reply(&reply).expect("emulator replies stay in wire range")
    }

    fn execute(&mut self, cmd: Command) -> Reply {
        match cmd {
            Command::PumpMove { steps } => {
                let delta_ml = steps as f64 / self.plant.config().pump_steps_per_ml;
                ack(self.plant.pump_move_ml(delta_ml))
            }
            Command::ReadPressure => match self.plant.read_pressure() {
                Ok(p) => {
                    let centi = (p.value() * 100.0).round();
                    if centi > 99_999.0 {
                        Reply::Err(WireFault::Range)
                    } else {
                        Reply::Pressure {
                            centi_kpa: centi as u32,
                        }
                    }
                }
                Err(e) => Reply::Err(fault_for(&e)),
            },
            Command::ReadForce => match self.plant.read_force() {
                Ok(f) => {
                    let centi = (f.value() * 100.0).round();
                    if centi > 9_999.0 {
                        Reply::Err(WireFault::Range)
                    } else {
                        Reply::Force {
                            centi_n: centi as u32,
                        }
                    }
                }
                Err(e) => Reply::Err(fault_for(&e)),
            },
            Command::GripperOpen => ack(self.plant.gripper_open()),
            Command::GripperClose { tenths_mm } => {
                ack(self.plant.gripper_close_by(tenths_mm as f64 / 10.0))
            }
            Command::RapidZ { centi_mm } | Command::FeedZ { centi_mm, .. } => {
                // feed shapes timing, not physics; the emulator is quasi-static
                ack(self.plant.stage_move(centi_mm as f64 / 100.0))
            }
            Command::Home => ack(self.plant.stage_home()),
        }
    }
}

fn ack(result: Result<(), DeviceError>) -> Reply {
    match result {
        Ok(()) => Reply::Ok,
        Err(e) => Reply::Err(fault_for(&e)),
    }
}

fn fault_for(err: &DeviceError) -> WireFault {
    match err {
        DeviceError::StageTravel { .. } | DeviceError::GripperStroke { .. } => WireFault::Limit,
        DeviceError::Sim(SimError::ChamberOverrun { .. }) => WireFault::Limit,
        _ => WireFault::Range,
    }
}

/// Transport that hands every sent frame straight to an emulator and queues
/// the reply for the next receive. Never times out.
pub struct LoopbackTransport {
    emu: Rc<RefCell<WireRigEmu>>,
    pending: VecDeque<Vec<u8>>,
}

impl WireTransport for LoopbackTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), DeviceError> {
        let reply = self.emu.borrow_mut().handle_frame(frame);
        self.pending.push_back(reply);
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>, DeviceError> {
        Ok(self.pending.pop_front())
    }
}

/// Emulator plus a transport talking to it; the handle lets tests inspect
/// the device-side plant afterwards.
pub fn loopback_pair(
    params: TwinParams,
    seed: u64,
    cfg: SimRigConfig,
) -> Result<(Box<dyn WireTransport>, Rc<RefCell<WireRigEmu>>), DeviceError> {
    let emu = Rc::new(RefCell::new(WireRigEmu::new(params, seed, cfg)?));
    let transport = LoopbackTransport {
        emu: emu.clone(),
        pending: VecDeque::new(),
    };
    Ok((Box::new(transport), emu))
}

/// A full serial rig running against the emulator in-process.
pub fn emu_rig(params: TwinParams, seed: u64, cfg: SimRigConfig) -> Result<Rig, DeviceError> {
    let steps_per_ml = cfg.pump_steps_per_ml;
    let stroke = cfg.gripper_stroke_mm;
    let (transport, _) = loopback_pair(params, seed, cfg)?;
    serial_rig(transport, steps_per_ml, stroke)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{DisplacementMm, VolumeMl};

    fn emu() -> WireRigEmu {
        WireRigEmu::new(TwinParams::default(), 5, SimRigConfig::default()).unwrap()
    }

    #[test]
    fn junk_frames_earn_badcmd() {
        let mut e = emu();
        assert_eq!(e.handle_frame(b"HELLO\n"), b"ERR BADCMD\n");
        assert_eq!(e.handle_frame(b"PMP 00800\n"), b"ERR BADCMD\n");
        assert_eq!(e.handle_frame(b"PRS?"), b"ERR BADCMD\n");
    }

    #[test]
    fn pump_then_pressure_read_reflects_the_plant() {
        let mut e = emu();
        assert_eq!(e.handle_frame(b"PMP +01600\n"), b"OK\n");
        // 1600 steps / 800 steps-per-mL * 5 kPa/mL on top of 100
        assert_eq!(e.handle_frame(b"PRS?\n"), b"OK P=110.00\n");
        assert_eq!(e.plant().dispensed_ml(), 2.0);
    }

    #[test]
    fn range_and_limit_faults_mirror_plant_rejections() {
        let mut e = emu();
        // +20 mL would push the baseline past its ceiling
        assert_eq!(e.handle_frame(b"PMP +16000\n"), b"ERR RANGE\n");
        // stage travel tops out at 40 mm
        assert_eq!(e.handle_frame(b"G0 Z+45.00\n"), b"ERR LIMIT\n");
        assert_eq!(e.handle_frame(b"G0 Z-01.00\n"), b"ERR LIMIT\n");
        // gripper stroke is 25 mm
        assert_eq!(e.handle_frame(b"GRP C030.0\n"), b"ERR LIMIT\n");
        // nothing above may have moved the plant
        assert_eq!(e.plant().stage_z_mm(), 0.0);
        assert_eq!(e.plant().gripper_closed_mm(), 0.0);
        assert_eq!(e.plant().twin().baseline_kpa(), 100.0);
    }

    #[test]
    fn force_reads_are_wire_quantized() {
        let mut e = emu();
        assert_eq!(e.handle_frame(b"G1 Z+08.00 F060\n"), b"OK\n");
        // compression 3 mm at K = (100 - 11.37)/44.84 gives 5.9297... N
        assert_eq!(e.handle_frame(b"FRC?\n"), b"OK F=05.93\n");
    }

    #[test]
    fn emu_rig_behaves_like_the_direct_rig_within_wire_precision() {
        let params = TwinParams::default();
        let cfg = SimRigConfig::default();
        let mut wire_rig = emu_rig(params, 21, cfg).unwrap();
        let (mut direct_rig, _) = super::super::sim_rig::sim_rig_shared(params, 21, cfg)
            .map(|(r, p)| (r, p))
            .unwrap();

        for rig in [&mut wire_rig, &mut direct_rig] {
            rig.pump.move_volume(VolumeMl::new(4.0).unwrap()).unwrap();
            rig.stage.move_z_relative(7.5, 300.0).unwrap();
        }
        let p_wire = wire_rig.pressure.read_pressure().unwrap().value();
        let p_direct = direct_rig.pressure.read_pressure().unwrap().value();
        assert!((p_wire - p_direct).abs() <= 0.005 + 1e-12);
        let f_wire = wire_rig.force.read_force().unwrap().value();
        let f_direct = direct_rig.force.read_force().unwrap().value();
        assert!((f_wire - f_direct).abs() <= 0.005 + 1e-12);

        wire_rig.stage.home().unwrap();
        let at_rest = wire_rig.pressure.read_pressure().unwrap().value();
        assert!((at_rest - 120.0).abs() <= 0.005 + 1e-12);
        wire_rig
            .gripper
            .close_by(DisplacementMm::new(5.0).unwrap())
            .unwrap();
        let grip_pressure = wire_rig.pressure.read_pressure().unwrap().value();
        assert!(grip_pressure > at_rest);
    }
}
