//! Wire-backed rig: the five ports speaking the line protocol.
//!
//! A [`Link`] owns one transport and performs command-reply exchanges with a
//! single retry after a timed-out reply. Port adapters share the link and
//! keep host-side shadows of pump volume, stage position and gripper
//! closure, quantized exactly as the wire carries them, so the shadow never
//! silently disagrees with what was commanded.

use std::cell::RefCell;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::rc::Rc;

use super::wire::{self, Command, Reply, MAX_FRAME};
use super::{
    DeviceError, ForceSensorPort, GripperPort, PlantDynamics, PressureSensorPort, PumpPort, Rig,
    StagePort,
};
use crate::units::{DisplacementMm, ForceN, PressureKpa, VolumeMl};

/// Byte shuttle under the link. `recv_frame` returns `Ok(None)` when no
/// reply arrived in time; the link turns that into one resend.
pub trait WireTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), DeviceError>;
    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>, DeviceError>;
}

pub struct Link {
    transport: Box<dyn WireTransport>,
}

impl Link {
    pub fn new(transport: Box<dyn WireTransport>) -> Self {
        Self { transport }
    }

    /// Send `cmd` and wait for its reply, resending once after a timeout.
    pub fn exchange(&mut self, cmd: &Command) -> Result<Reply, DeviceError> {
        let frame = wire::frame_command(cmd)?;
        for _attempt in 0..2 {
            self.transport.send_frame(&frame)?;
            if let Some(raw) = self.transport.recv_frame()? {
                return Ok(wire::parse_reply(&raw)?);
            }
        }
        Err(DeviceError::Timeout)
    }
}

fn expect_ok(reply: Reply) -> Result<(), DeviceError> {
    match reply {
        Reply::Ok => Ok(()),
        Reply::Err(fault) => Err(DeviceError::Fault(fault)),
        other => Err(DeviceError::UnexpectedReply {
            expected: "OK",
            got: format!("{other:?}"),
        }),
    }
}

struct SerialPump {
    link: Rc<RefCell<Link>>,
    steps_per_ml: f64,
    net_steps: i64,
}

impl PumpPort for SerialPump {
    fn move_volume(&mut self, delta: VolumeMl) -> Result<(), DeviceError> {
        let raw = delta.value() * self.steps_per_ml;
        let steps = raw.round();
        if !(-99_999.0..=99_999.0).contains(&steps) {
            return Err(DeviceError::InvalidArgument {
                field: "pump steps",
                value: raw,
            });
        }
        let steps = steps as i32;
        let reply = self
            .link
            .borrow_mut()
            .exchange(&Command::PumpMove { steps })?;
        expect_ok(reply)?;
        self.net_steps += steps as i64;
        Ok(())
    }

    fn dispensed_ml(&self) -> f64 {
        self.net_steps as f64 / self.steps_per_ml
    }

    fn zero(&mut self) {
        self.net_steps = 0;
    }
}

struct SerialPressure {
    link: Rc<RefCell<Link>>,
}

impl PressureSensorPort for SerialPressure {
    fn read_pressure(&mut self) -> Result<PressureKpa, DeviceError> {
        match self.link.borrow_mut().exchange(&Command::ReadPressure)? {
            Reply::Pressure { centi_kpa } => Ok(PressureKpa::new(centi_kpa as f64 / 100.0)?),
            Reply::Err(fault) => Err(DeviceError::Fault(fault)),
            other => Err(DeviceError::UnexpectedReply {
                expected: "OK P=",
                got: format!("{other:?}"),
            }),
        }
    }
}

struct SerialForce {
    link: Rc<RefCell<Link>>,
}

impl ForceSensorPort for SerialForce {
    fn read_force(&mut self) -> Result<ForceN, DeviceError> {
        match self.link.borrow_mut().exchange(&Command::ReadForce)? {
            Reply::Force { centi_n } => Ok(ForceN::new(centi_n as f64 / 100.0)?),
            Reply::Err(fault) => Err(DeviceError::Fault(fault)),
            other => Err(DeviceError::UnexpectedReply {
                expected: "OK F=",
                got: format!("{other:?}"),
            }),
        }
    }
}

struct SerialStage {
    link: Rc<RefCell<Link>>,
    position_centi: i64,
}

impl StagePort for SerialStage {
    fn move_z_relative(&mut self, delta_mm: f64, feed_mm_per_min: f64) -> Result<(), DeviceError> {
        let raw = delta_mm * 100.0;
        let centi = raw.round();
        if !(-9_999.0..=9_999.0).contains(&centi) {
            return Err(DeviceError::InvalidArgument {
                field: "stage centi-mm",
                value: raw,
            });
        }
        let feed = feed_mm_per_min.round();
        if !(1.0..=999.0).contains(&feed) {
            return Err(DeviceError::InvalidArgument {
                field: "feed mm/min",
                value: feed_mm_per_min,
            });
        }
        let cmd = Command::FeedZ {
            centi_mm: centi as i32,
            feed_mm_min: feed as u16,
        };
        let reply = self.link.borrow_mut().exchange(&cmd)?;
        expect_ok(reply)?;
        self.position_centi += centi as i64;
        Ok(())
    }

    fn home(&mut self) -> Result<(), DeviceError> {
        let reply = self.link.borrow_mut().exchange(&Command::Home)?;
        expect_ok(reply)?;
        self.position_centi = 0;
        Ok(())
    }

    fn position_mm(&self) -> f64 {
        self.position_centi as f64 / 100.0
    }
}

struct SerialGripper {
    link: Rc<RefCell<Link>>,
    closed_tenths: i64,
    stroke_mm: f64,
}

impl GripperPort for SerialGripper {
    fn open_full(&mut self) -> Result<(), DeviceError> {
        let reply = self.link.borrow_mut().exchange(&Command::GripperOpen)?;
        expect_ok(reply)?;
        self.closed_tenths = 0;
        Ok(())
    }

    fn close_by(&mut self, delta: DisplacementMm) -> Result<(), DeviceError> {
        let raw = delta.value() * 10.0;
        let tenths = raw.round();
        if !(0.0..=9_999.0).contains(&tenths) {
            return Err(DeviceError::InvalidArgument {
                field: "gripper tenths",
                value: raw,
            });
        }
        let cmd = Command::GripperClose {
            tenths_mm: tenths as u16,
        };
        let reply = self.link.borrow_mut().exchange(&cmd)?;
        expect_ok(reply)?;
        self.closed_tenths += tenths as i64;
        Ok(())
    }

    fn closed_mm(&self) -> f64 {
        self.closed_tenths as f64 / 10.0
    }

    fn stroke_mm(&self) -> f64 {
        self.stroke_mm
    }
}

/// A physical plant creeps, settles and changes tools on its own; the rig
/// only needs these hooks when the plant is simulated.
struct SerialDynamics;

impl PlantDynamics for SerialDynamics {
    fn advance_cycle(&mut self) {}

    fn settle(&mut self) {}

    fn set_contact_area(&mut self, _area_mm2: f64) -> Result<(), DeviceError> {
        Ok(())
    }
}

/// Assemble a rig over one wire transport.
pub fn serial_rig(
    transport: Box<dyn WireTransport>,
    steps_per_ml: f64,
    gripper_stroke_mm: f64,
) -> Result<Rig, DeviceError> {
    for (field, value) in [
        ("steps_per_ml", steps_per_ml),
        ("gripper_stroke_mm", gripper_stroke_mm),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(DeviceError::InvalidArgument { field, value });
        }
    }
    let link = Rc::new(RefCell::new(Link::new(transport)));
    Ok(Rig {
        pump: Box::new(SerialPump {
            link: link.clone(),
            steps_per_ml,
            net_steps: 0,
        }),
        pressure: Box::new(SerialPressure { link: link.clone() }),
        force: Box::new(SerialForce { link: link.clone() }),
        stage: Box::new(SerialStage {
            link: link.clone(),
            position_centi: 0,
        }),
        gripper: Box::new(SerialGripper {
            link,
            closed_tenths: 0,
            stroke_mm: gripper_stroke_mm,
        }),
        plant: Box::new(SerialDynamics),
    })
}

/// Transport over a character device such as `/dev/ttyUSB0`, configured
/// out-of-band to 115200 8N1. Reads block until the device answers, so a
/// dead device stalls the process instead of timing out; the retry path is
/// exercised through test transports.
pub struct PortTransport {
    reader: BufReader<File>,
    writer: File,
}

impl PortTransport {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let writer = OpenOptions::new().read(true).write(true).open(path)?;
        let reader = BufReader::new(writer.try_clone()?);
        Ok(Self { reader, writer })
    }
}

impl WireTransport for PortTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), DeviceError> {
        self.writer
            .write_all(frame)
            .and_then(|_| self.writer.flush())
            .map_err(|e| DeviceError::Transport(e.to_string()))
    }

    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>, DeviceError> {
        let mut buf = Vec::with_capacity(MAX_FRAME);
        let mut limited = (&mut self.reader).take(MAX_FRAME as u64);
        match limited.read_until(b'\n', &mut buf) {
            Ok(0) => Ok(None),
            Ok(_) => Ok(Some(buf)),
            Err(e) => Err(DeviceError::Transport(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Canned transport: records sends, serves a scripted reply (or a
    /// timeout) per receive.
    struct ScriptTransport {
        sent: Rc<RefCell<Vec<Vec<u8>>>>,
        replies: VecDeque<Option<Vec<u8>>>,
    }

    fn scripted(
        replies: Vec<Option<&[u8]>>,
    ) -> (Box<dyn WireTransport>, Rc<RefCell<Vec<Vec<u8>>>>) {
        let sent = Rc::new(RefCell::new(Vec::new()));
        let transport = ScriptTransport {
            sent: sent.clone(),
            replies: replies
                .into_iter()
                .map(|r| r.map(|b| b.to_vec()))
                .collect(),
        };
        (Box::new(transport), sent)
    }

    impl WireTransport for ScriptTransport {
        fn send_frame(&mut self, frame: &[u8]) -> Result<(), DeviceError> {
            self.sent.borrow_mut().push(frame.to_vec());
            Ok(())
        }

        fn recv_frame(&mut self) -> Result<Option<Vec<u8>>, DeviceError> {
            Ok(self.replies.pop_front().flatten())
        }
    }

    #[test]
    fn exchange_retries_once_after_a_timeout() {
        let (transport, sent) = scripted(vec![None, Some(b"OK\n")]);
        let mut link = Link::new(transport);
        let reply = link.exchange(&Command::Home).unwrap();
        assert_eq!(reply, Reply::Ok);
        let sent = sent.borrow();
        assert_eq!(sent.len(), 2);
        assert_eq!(sent[0], b"G28\n");
        assert_eq!(sent[1], b"G28\n");
    }

    #[test]
    fn second_timeout_is_fatal() {
        let (transport, sent) = scripted(vec![None, None]);
        let mut link = Link::new(transport);
        let err = link.exchange(&Command::ReadPressure).unwrap_err();
        assert!(matches!(err, DeviceError::Timeout));
        assert_eq!(sent.borrow().len(), 2);
    }

    #[test]
    fn pump_volume_is_quantized_to_motor_steps() {
        let (transport, sent) = scripted(vec![Some(b"OK\n"), Some(b"OK\n")]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        rig.pump.move_volume(VolumeMl::new(2.0).unwrap()).unwrap();
        assert_eq!(sent.borrow()[0], b"PMP +01600\n");
        assert_eq!(rig.pump.dispensed_ml(), 2.0);
        rig.pump
            .move_volume(VolumeMl::new(-0.50062).unwrap())
            .unwrap();
        // -400.496 steps rounds to -400, and the shadow keeps the quantized value
        assert_eq!(sent.borrow()[1], b"PMP -00400\n");
        assert_eq!(rig.pump.dispensed_ml(), 1.5);
        rig.pump.zero();
        assert_eq!(rig.pump.dispensed_ml(), 0.0);
    }

    #[test]
    fn faults_do_not_move_the_host_shadow() {
        let (transport, _) = scripted(vec![Some(b"ERR RANGE\n")]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        let err = rig
            .pump
            .move_volume(VolumeMl::new(50.0).unwrap())
            .unwrap_err();
        assert!(matches!(err, DeviceError::Fault(wire::WireFault::Range)));
        assert_eq!(rig.pump.dispensed_ml(), 0.0);
    }

    #[test]
    fn sensor_replies_decode_to_quantities() {
        let (transport, sent) = scripted(vec![Some(b"OK P=101.05\n"), Some(b"OK F=15.00\n")]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        assert_eq!(rig.pressure.read_pressure().unwrap().value(), 101.05);
        assert_eq!(rig.force.read_force().unwrap().value(), 15.0);
        let sent = sent.borrow();
        assert_eq!(sent[0], b"PRS?\n");
        assert_eq!(sent[1], b"FRC?\n");
    }

    #[test]
    fn wrong_reply_kind_is_an_error() {
        let (transport, _) = scripted(vec![Some(b"OK\n")]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        let err = rig.pressure.read_pressure().unwrap_err();
        assert!(matches!(err, DeviceError::UnexpectedReply { .. }));
    }

    #[test]
    fn stage_and_gripper_track_commanded_motion() {
        let (transport, sent) = scripted(vec![
            Some(b"OK\n"),
            Some(b"OK\n"),
            Some(b"OK\n"),
            Some(b"OK\n"),
            Some(b"OK\n"),
        ]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        rig.stage.move_z_relative(5.0, 300.0).unwrap();
        rig.stage.move_z_relative(-1.25, 60.0).unwrap();
        assert_eq!(rig.stage.position_mm(), 3.75);
        rig.stage.home().unwrap();
        assert_eq!(rig.stage.position_mm(), 0.0);
        rig.gripper
            .close_by(DisplacementMm::new(1.5).unwrap())
            .unwrap();
        assert_eq!(rig.gripper.closed_mm(), 1.5);
        rig.gripper.open_full().unwrap();
        assert_eq!(rig.gripper.closed_mm(), 0.0);
        assert_eq!(rig.gripper.stroke_mm(), 25.0);
        let sent = sent.borrow();
        assert_eq!(sent[0], b"G1 Z+05.00 F300\n");
        assert_eq!(sent[1], b"G1 Z-01.25 F060\n");
        assert_eq!(sent[2], b"G28\n");
        assert_eq!(sent[3], b"GRP C001.5\n");
        assert_eq!(sent[4], b"GRP O\n");
    }

    #[test]
    fn oversized_motions_fail_before_the_wire() {
        let (transport, sent) = scripted(vec![]);
        let mut rig = serial_rig(transport, 800.0, 25.0).unwrap();
        assert!(rig
            .pump
            .move_volume(VolumeMl::new(1000.0).unwrap())
            .is_err());
        assert!(rig.stage.move_z_relative(120.0, 300.0).is_err());
        assert!(rig.stage.move_z_relative(1.0, 0.0).is_err());
        assert!(rig
            .gripper
            .close_by(DisplacementMm::new(1e4).unwrap())
            .is_err());
        assert!(sent.borrow().is_empty());
    }
}
