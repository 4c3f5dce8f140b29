//! Line protocol spoken over the rig's serial port (115200 8N1).
//!
//! Frames are printable ASCII terminated by a single LF, at most
//! [`MAX_FRAME`] bytes including the terminator. Numeric fields have fixed
//! widths, so every value has exactly one canonical frame and framing
//! followed by parsing is the identity.
//!
//! Host to device:
//!
//! ```text
//! PMP +00800        pump by signed motor steps
//! PRS?              read chamber pressure
//! FRC?              read load cell force
//! GRP O             open the gripper fully
//! GRP C012.5        close the gripper inward by mm (one decimal)
//! G0 Z+10.00        rapid relative stage move, mm (two decimals)
//! G1 Z-05.00 F060   feed-limited relative stage move, feed in mm/min
//! G28               home the stage
//! ```
//!
//! Device to host: `OK`, `OK P=101.05` (kPa), `OK F=15.00` (N), or
//! `ERR BADCMD|RANGE|LIMIT|BUSY`. Values travel as fixed-point decimals and
//! are stored here as the underlying integers, so a frame round-trips
//! without float drift.

use std::fmt;

use thiserror::Error;

/// Longest legal frame, terminator included.
pub const MAX_FRAME: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("frame is {len} bytes, limit is {MAX_FRAME}")]
    FrameTooLong { len: usize },
    #[error("frame is not LF-terminated")]
    Unterminated,
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: &'static str },
    #[error("{field} {value} does not fit the wire format")]
    ValueRange { field: &'static str, value: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Signed pump motor steps, at most 5 digits.
    PumpMove { steps: i32 },
    ReadPressure,
    ReadForce,
    GripperOpen,
    /// Close inward by `tenths_mm / 10` millimetres.
    GripperClose { tenths_mm: u16 },
    /// Relative rapid stage move of `centi_mm / 100` millimetres.
    RapidZ { centi_mm: i32 },
    /// Relative feed-limited stage move, feed in whole mm/min.
    FeedZ { centi_mm: i32, feed_mm_min: u16 },
    Home,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reply {
    Ok,
    /// Chamber pressure, `centi_kpa / 100` kPa.
    Pressure { centi_kpa: u32 },
    /// Load cell force, `centi_n / 100` N.
    Force { centi_n: u32 },
    Err(WireFault),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireFault {
    /// The frame did not parse as any command.
    BadCmd,
    /// A value was syntactically fine but physically out of range.
    Range,
    /// The motion would leave the actuator's travel.
    Limit,
    /// The device is still executing a previous command.
    Busy,
}

impl fmt::Display for WireFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WireFault::BadCmd => "BADCMD",
            WireFault::Range => "RANGE",
            WireFault::Limit => "LIMIT",
            WireFault::Busy => "BUSY",
        })
    }
}

pub fn frame_command(cmd: &Command) -> Result<Vec<u8>, WireError> {
    let body = match *cmd {
        Command::PumpMove { steps } => {
            check_range("pump steps", steps as i64, 99_999)?;
            format!("PMP {steps:+06}")
        }
        Command::ReadPressure => "PRS?".to_string(),
        Command::ReadForce => "FRC?".to_string(),
        Command::GripperOpen => "GRP O".to_string(),
        Command::GripperClose { tenths_mm } => {
            check_range("gripper tenths", tenths_mm as i64, 9_999)?;
            format!("GRP C{:03}.{}", tenths_mm / 10, tenths_mm % 10)
        }
        Command::RapidZ { centi_mm } => {
            check_range("stage centi-mm", centi_mm as i64, 9_999)?;
            format!("G0 Z{}", signed_centi(centi_mm))
        }
        Command::FeedZ { centi_mm, feed_mm_min } => {
            check_range("stage centi-mm", centi_mm as i64, 9_999)?;
            if !(1..=999).contains(&feed_mm_min) {
                return Err(WireError::ValueRange {
                    field: "feed mm/min",
                    value: feed_mm_min as i64,
                });
            }
            format!("G1 Z{} F{feed_mm_min:03}", signed_centi(centi_mm))
        }
        Command::Home => "G28".to_string(),
    };
    terminate(body)
}

pub fn frame_reply(reply: &Reply) -> Result<Vec<u8>, WireError> {
    let body = match *reply {
        Reply::Ok => "OK".to_string(),
        Reply::Pressure { centi_kpa } => {
            check_range("pressure centi-kPa", centi_kpa as i64, 99_999)?;
            format!("OK P={:03}.{:02}", centi_kpa / 100, centi_kpa % 100)
        }
        Reply::Force { centi_n } => {
            check_range("force centi-N", centi_n as i64, 9_999)?;
            format!("OK F={:02}.{:02}", centi_n / 100, centi_n % 100)
        }
        Reply::Err(fault) => format!("ERR {fault}"),
    };
    terminate(body)
}

pub fn parse_command(frame: &[u8]) -> Result<Command, WireError> {
    let mut c = Cursor::new(frame)?;
    let cmd = if c.peek_is(b"PMP ") {
        c.literal(b"PMP ", "expected PMP")?;
        let sign = c.sign()?;
        let digits = c.digits(5)? as i64;
        Command::PumpMove {
            steps: (sign * digits) as i32,
        }
    } else if c.peek_is(b"PRS?") {
        c.literal(b"PRS?", "expected PRS?")?;
        Command::ReadPressure
    } else if c.peek_is(b"FRC?") {
        c.literal(b"FRC?", "expected FRC?")?;
        Command::ReadForce
    } else if c.peek_is(b"GRP O") {
        c.literal(b"GRP O", "expected GRP O")?;
        Command::GripperOpen
    } else if c.peek_is(b"GRP C") {
        c.literal(b"GRP C", "expected GRP C")?;
        let whole = c.digits(3)?;
        c.literal(b".", "expected decimal point")?;
        let tenth = c.digits(1)?;
        Command::GripperClose {
            tenths_mm: (whole * 10 + tenth) as u16,
        }
    } else if c.peek_is(b"G28") {
        c.literal(b"G28", "expected G28")?;
        Command::Home
    } else if c.peek_is(b"G0 Z") {
        c.literal(b"G0 Z", "expected G0 Z")?;
        Command::RapidZ {
            centi_mm: c.signed_centi()?,
        }
    } else if c.peek_is(b"G1 Z") {
        c.literal(b"G1 Z", "expected G1 Z")?;
        let centi_mm = c.signed_centi()?;
        c.literal(b" F", "expected feed field")?;
        let feed = c.digits(3)? as u16;
        if feed == 0 {
            return Err(WireError::Parse {
                offset: c.pos - 3,
                reason: "feed must be at least 1 mm/min",
            });
        }
        Command::FeedZ {
            centi_mm,
            feed_mm_min: feed,
        }
    } else {
        return Err(WireError::Parse {
            offset: 0,
            reason: "unknown command",
        });
    };
    c.end()?;
    Ok(cmd)
}

pub fn parse_reply(frame: &[u8]) -> Result<Reply, WireError> {
    let mut c = Cursor::new(frame)?;
    let reply = if c.peek_is(b"OK P=") {
        c.literal(b"OK P=", "expected OK P=")?;
        let whole = c.digits(3)?;
        c.literal(b".", "expected decimal point")?;
        let frac = c.digits(2)?;
        Reply::Pressure {
            centi_kpa: whole * 100 + frac,
        }
    } else if c.peek_is(b"OK F=") {
        c.literal(b"OK F=", "expected OK F=")?;
        let whole = c.digits(2)?;
        c.literal(b".", "expected decimal point")?;
        let frac = c.digits(2)?;
        Reply::Force {
            centi_n: whole * 100 + frac,
        }
    } else if c.peek_is(b"OK") {
        c.literal(b"OK", "expected OK")?;
        Reply::Ok
    } else if c.peek_is(b"ERR ") {
        c.literal(b"ERR ", "expected ERR")?;
        let fault = if c.peek_is(b"BADCMD") {
            c.literal(b"BADCMD", "expected fault name")?;
            WireFault::BadCmd
        } else if c.peek_is(b"RANGE") {
            c.literal(b"RANGE", "expected fault name")?;
            WireFault::Range
        } else if c.peek_is(b"LIMIT") {
            c.literal(b"LIMIT", "expected fault name")?;
            WireFault::Limit
        } else if c.peek_is(b"BUSY") {
            c.literal(b"BUSY", "expected fault name")?;
            WireFault::Busy
        } else {
            return Err(WireError::Parse {
                offset: c.pos,
                reason: "unknown fault name",
            });
        };
        Reply::Err(fault)
    } else {
        return Err(WireError::Parse {
            offset: 0,
            reason: "unknown reply",
        });
    };
    c.end()?;
    Ok(reply)
}

fn check_range(field: &'static str, value: i64, limit: i64) -> Result<(), WireError> {
    if value.abs() > limit {
        return Err(WireError::ValueRange { field, value });
    }
    Ok(())
}

fn signed_centi(centi: i32) -> String {
    let sign = if centi < 0 { '-' } else { '+' };
    let a = centi.unsigned_abs();
    format!("{sign}{:02}.{:02}", a / 100, a % 100)
}

fn terminate(mut body: String) -> Result<Vec<u8>, WireError> {
    body.push('\n');
    let bytes = body.into_bytes();
    if bytes.len() > MAX_FRAME {
        return Err(WireError::FrameTooLong { len: bytes.len() });
    }
    Ok(bytes)
}

/// Strict left-to-right scanner over one frame's body.
struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(frame: &'a [u8]) -> Result<Self, WireError> {
        if frame.len() > MAX_FRAME {
            return Err(WireError::FrameTooLong { len: frame.len() });
        }
        match frame.last() {
            Some(b'\n') => {}
            _ => return Err(WireError::Unterminated),
        }
        let body = &frame[..frame.len() - 1];
        if let Some(offset) = body.iter().position(|&b| !(0x20..=0x7e).contains(&b)) {
            return Err(WireError::Parse {
                offset,
                reason: "byte is not printable ASCII",
            });
        }
        Ok(Self { body, pos: 0 })
    }

    fn peek_is(&self, lit: &[u8]) -> bool {
        self.body[self.pos..].starts_with(lit)
    }

    fn literal(&mut self, lit: &[u8], reason: &'static str) -> Result<(), WireError> {
        if !self.peek_is(lit) {
            return Err(WireError::Parse {
                offset: self.pos,
                reason,
            });
        }
        self.pos += lit.len();
        Ok(())
    }

    fn digits(&mut self, n: usize) -> Result<u32, WireError> {
        let mut value = 0u32;
        for _ in 0..n {
            match self.body.get(self.pos) {
                Some(b) if b.is_ascii_digit() => {
                    value = value * 10 + (b - b'0') as u32;
                    self.pos += 1;
                }
                _ => {
                    return Err(WireError::Parse {
                        offset: self.pos,
                        reason: "expected a digit",
                    })
                }
            }
        }
        Ok(value)
    }

    fn sign(&mut self) -> Result<i64, WireError> {
        match self.body.get(self.pos) {
            Some(b'+') => {
                self.pos += 1;
                Ok(1)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(-1)
            }
            _ => Err(WireError::Parse {
                offset: self.pos,
                reason: "expected a sign",
            }),
        }
    }

    fn signed_centi(&mut self) -> Result<i32, WireError> {
        let sign = self.sign()?;
        let whole = self.digits(2)?;
        self.literal(b".", "expected decimal point")?;
        let frac = self.digits(2)?;
        Ok((sign * (whole * 100 + frac) as i64) as i32)
    }

    fn end(&mut self) -> Result<(), WireError> {
        if self.pos != self.body.len() {
            return Err(WireError::Parse {
                offset: self.pos,
                reason: "trailing bytes after command",
            });
        }
        Ok(())
    }
}
