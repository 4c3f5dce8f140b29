//! Pressure sensor transfer: kPa to ADC counts and back.
//!
//! The sensor is linear, `volts = gain * pressure + offset`, sampled by an
//! ADC that maps `[0, v_ref]` onto `0..=2^bits - 1`. Encoding rounds to the
//! nearest count, so a decode of an encode lands within half an LSB of the
//! original pressure as long as the transfer maps the pressure range inside
//! the ADC window; the constructor enforces exactly that.

use thiserror::Error;

use crate::units::PressureKpa;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdcError {
    #[error("unsupported ADC width {0} bits, expected 12, 16 or 24")]
    UnsupportedBits(u8),
    #[error("transfer field {field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("pressure range [{lo}, {hi}] kPa is not ordered or not non-negative")]
    BadPressureRange { lo: f64, hi: f64 },
    #[error("transfer maps [{lo}, {hi}] kPa to [{v_lo}, {v_hi}] V, outside the 0..={v_ref} V window")]
    RangeOutsideWindow {
        lo: f64,
        hi: f64,
        v_lo: f64,
        v_hi: f64,
        v_ref: f64,
    },
    #[error("counts {counts} exceed the {max} count full scale")]
    CountsOutOfRange { counts: u32, max: u32 },
    #[error("pressure {value} kPa outside the encodable [{lo}, {hi}] kPa")]
    PressureOutOfRange { value: f64, lo: f64, hi: f64 },
}

/// A decoded sample; `saturated` marks values clipped to the pressure range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub pressure: PressureKpa,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcTransfer {
    bits: u8,
    v_ref: f64,
    gain_v_per_kpa: f64,
    offset_v: f64,
    p_range: (f64, f64),
}

impl AdcTransfer {
    pub fn new(
        bits: u8,
        v_ref: f64,
        gain_v_per_kpa: f64,
        offset_v: f64,
        p_range: (f64, f64),
    ) -> Result<Self, AdcError> {
        if !matches!(bits, 12 | 16 | 24) {
            return Err(AdcError::UnsupportedBits(bits));
        }
        for (field, value) in [("v_ref", v_ref), ("gain_v_per_kpa", gain_v_per_kpa)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(AdcError::NonPositive { field, value });
            }
        }
        if !offset_v.is_finite() || offset_v < 0.0 {
            return Err(AdcError::NonPositive {
                field: "offset_v",
                value: offset_v,
            });
        }
        let (lo, hi) = p_range;
        if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || hi <= lo {
            return Err(AdcError::BadPressureRange { lo, hi });
        }
        let v_lo = gain_v_per_kpa * lo + offset_v;
        let v_hi = gain_v_per_kpa * hi + offset_v;
        if v_lo < 0.0 || v_hi > v_ref {
            return Err(AdcError::RangeOutsideWindow {
                lo,
                hi,
                v_lo,
                v_hi,
                v_ref,
            });
        }
        Ok(Self {
            bits,
            v_ref,
            gain_v_per_kpa,
            offset_v,
            p_range,
        })
    }

    /// The transfer shipped on the reference rig: 16 bit, 5 V window,
    /// 0.2 V zero offset, 0 to 200 kPa.
    pub fn rig_default() -> Self {
        Self::new(16, 5.0, 0.024, 0.2, (0.0, 200.0)).expect("constants verified by tests")
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn max_count(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Pressure quantum of one ADC count, kPa.
    pub fn lsb_kpa(&self) -> f64 {
        self.v_ref / (self.max_count() as f64 * self.gain_v_per_kpa)
    }

    pub fn pressure_range(&self) -> (f64, f64) {
        self.p_range
    }

    /// Counts for a pressure, rounding to the nearest code.
    pub fn encode(&self, pressure: PressureKpa) -> Result<u32, AdcError> {
        let p = pressure.value();
        let (lo, hi) = self.p_range;
        if p < lo || p > hi {
            return Err(AdcError::PressureOutOfRange { value: p, lo, hi });
        }
        let volts = self.gain_v_per_kpa * p + self.offset_v;
        let code = (volts / self.v_ref * self.max_count() as f64).round();
        // the window check in the constructor keeps this in range; clamp
        // anyway so rounding at the very edge cannot escape full scale
        Ok(code.clamp(0.0, self.max_count() as f64) as u32)
    }

    /// Pressure for a raw sample, clipped to the sensor range.
    pub fn decode(&self, counts: u32) -> Result<Decoded, AdcError> {
        let max = self.max_count();
        if counts > max {
            return Err(AdcError::CountsOutOfRange { counts, max });
        }
        let volts = counts as f64 / max as f64 * self.v_ref;
        let p = (volts - self.offset_v) / self.gain_v_per_kpa;
        let (lo, hi) = self.p_range;
        let clipped = p.clamp(lo, hi);
        Ok(Decoded {
            pressure: PressureKpa::new(clipped).expect("clamped into a validated range"),
            saturated: p < lo || p > hi,
        })
    }

    /// One encode-decode pass, what a sensor read through this ADC returns.
    pub fn quantize(&self, pressure: PressureKpa) -> Result<PressureKpa, AdcError> {
        Ok(self.decode(self.encode(pressure)?)?.pressure)
    }
}
