//! Experiment runners.
//!
//! Each protocol drives a [`Rig`](crate::devices::Rig) through a scripted
//! sequence (pressure sweep, stiffness tuning, cyclic stress, grasp,
//! batch characterization) and records what happened in a [`RunLog`].
//! Runners never talk to the twin model directly; everything goes through
//! the port traits, so the same code runs against the in-process
//! simulation and the serial backend.
//!
//! Time inside a run is modeled, not measured: a [`ModelClock`] advances
//! by computed motion and dwell durations. Two runs with the same spec,
//! rig configuration and seed therefore produce identical logs.

mod runner;

pub use runner::{
    run_characterize, run_grasp, run_stress, run_sweep, run_tuning, CharacterizeOutcome,
    GraspOutcome, GraspTargetResult, StressOutcome, SweepOutcome, TuningOutcome, TuningResult,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::calibration::CalibrationError;
use crate::devices::DeviceError;
use crate::units::{Sample, UnitError};

/// Version tag written into every run log.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error("invalid protocol spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("pressure setpoint {target_kpa:.2} kPa not reached within {timeout_s:.1} s (last read {last_kpa:.3} kPa)")]
    SetpointTimeout {
        target_kpa: f64,
        timeout_s: f64,
        last_kpa: f64,
    },
    #[error("no contact found within {searched_mm:.2} mm of stage travel")]
    ContactNotFound { searched_mm: f64 },
    #[error("log rejected out-of-order {stream}: {at:.6} s after {last:.6} s")]
    OutOfOrder {
        stream: &'static str,
        at: f64,
        last: f64,
    },
    #[error("log rejected step index {index} after {last}")]
    StepIndexRegressed { index: u32, last: u32 },
    #[error("derived value {key:?} already recorded")]
    DuplicateDerivedKey { key: String },
}

/// Which experiment to run, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KindSpec {
    Sweep(SweepParams),
    Tuning(TuningParams),
    Grasp(GraspParams),
    Stress(StressParams),
    Characterize(CharacterizeParams),
}

impl KindSpec {
    /// Stable lowercase name, used in log headers and file names.
    pub fn name(&self) -> &'static str {
        match self {
            KindSpec::Sweep(_) => "sweep",
            KindSpec::Tuning(_) => "tuning",
            KindSpec::Grasp(_) => "grasp",
            KindSpec::Stress(_) => "stress",
            KindSpec::Characterize(_) => "characterize",
        }
    }
}

/// A complete, reproducible description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub kind: KindSpec,
    /// Number of repetitions of the protocol body. Stress requires 1.
    pub trials: u32,
    /// Seed for the backing twin; recorded so a run can be replayed.
    pub seed: u64,
}

/// Pressure sweep: hold a ladder of baseline pressures, measure stiffness
/// at each, fit the pressure-stiffness line.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub p_start_kpa: f64,
    pub p_end_kpa: f64,
    pub levels: u32,
    /// Depth of the stiffness-measuring indent below the contact datum.
    pub indent_mm: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            p_start_kpa: 100.0,
            p_end_kpa: 145.0,
            levels: 10,
            indent_mm: 1.0,
        }
    }
}

/// Stiffness tuning: invert a calibration for each target, drive the
/// pressure there, verify by indentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningParams {
    pub targets_n_per_mm: Vec<f64>,
    /// Fractional domain margin tolerated before inversion refuses.
    pub margin_frac: f64,
    pub indent_mm: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        Self {
            targets_n_per_mm: vec![2.0, 2.5, 3.0],
            margin_frac: 0.02,
            indent_mm: 1.0,
        }
    }
}

/// Grasp: tune to each target, then close the jaws in steps and watch
/// force and pressure respond.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspParams {
    pub targets_n_per_mm: Vec<f64>,
    pub margin_frac: f64,
    pub close_steps: u32,
    pub step_mm: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            targets_n_per_mm: vec![2.0, 2.5, 3.0],
            margin_frac: 0.02,
            close_steps: 5,
            step_mm: 1.0,
        }
    }
}

/// Cyclic stress: tune to the stiffest target, then compress repeatedly
/// with a platen and track peak and boundary drift.
#[derive(Debug, Clone, PartialEq)]
pub struct StressParams {
    pub target_n_per_mm: f64,
    pub margin_frac: f64,
    pub cycles: u32,
    pub depth_mm: f64,
    pub sample_step_mm: f64,
    /// Cycle window width for the first/last drift comparison.
    pub window_cycles: u32,
}

impl Default for StressParams {
    fn default() -> Self {
        Self {
            target_n_per_mm: 3.0,
            margin_frac: 0.02,
            cycles: 50,
            depth_mm: 5.0,
            sample_step_mm: 0.5,
            window_cycles: 5,
        }
    }
}

/// Batch characterization of recorded indentation curves; no rig involved.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizeParams {
    pub eval_depth_mm: f64,
    pub drop_fraction: f64,
}

impl Default for CharacterizeParams {
    fn default() -> Self {
        Self {
            eval_depth_mm: 3.0,
            drop_fraction: crate::analysis::DEFAULT_DROP_FRACTION,
        }
    }
}

/// Contact areas of the interchangeable tools, in mm^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolAreas {
    pub indenter_mm2: f64,
    pub platen_mm2: f64,
    pub jaws_mm2: f64,
}

impl Default for ToolAreas {
    fn default() -> Self {
        Self {
            indenter_mm2: 78.5,
            platen_mm2: 2000.0,
            jaws_mm2: 600.0,
        }
    }
}

/// Motion rates, dwells and controller settings shared by the runners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timings {
    /// Step size of the contact search.
    pub approach_step_mm: f64,
    pub approach_feed_mm_min: f64,
    /// Feed used for measuring indents and stress cycling.
    pub indent_feed_mm_min: f64,
    /// Feed for uncontacted repositioning moves.
    pub travel_feed_mm_min: f64,
    /// Pause after each contact-search step before reading force.
    pub step_dwell_s: f64,
    /// Pause before any logged sample.
    pub sample_dwell_s: f64,
    /// Pause after asking the plant to settle.
    pub settle_dwell_s: f64,
    /// Force reading that counts as touching the surface.
    pub contact_threshold_n: f64,
    pub setpoint_tol_kpa: f64,
    pub setpoint_timeout_s: f64,
    /// Modeled duration of one pump correction.
    pub pump_iter_dwell_s: f64,
    /// Controller's assumed pump authority; only convergence speed
    /// depends on it being right.
    pub pump_gain_est_kpa_per_ml: f64,
}

impl Default for Timings {
    fn default() -> Self {
        Self {
            approach_step_mm: 0.05,
            approach_feed_mm_min: 60.0,
            indent_feed_mm_min: 5.0,
            travel_feed_mm_min: 300.0,
            step_dwell_s: 0.2,
            sample_dwell_s: 0.05,
            settle_dwell_s: 5.0,
            contact_threshold_n: 0.04,
            setpoint_tol_kpa: 0.2,
            setpoint_timeout_s: 10.0,
            pump_iter_dwell_s: 0.1,
            pump_gain_est_kpa_per_ml: 5.0,
        }
    }
}

impl Timings {
    pub(crate) fn validate(&self) -> Result<(), ProtocolError> {
        // sample_dwell keeps consecutive sample timestamps distinct and
        // pump_iter_dwell is what walks the clock toward the setpoint
        // deadline, so both must be strictly positive
        let positives = [
            ("approach_step_mm", self.approach_step_mm),
            ("approach_feed_mm_min", self.approach_feed_mm_min),
            ("indent_feed_mm_min", self.indent_feed_mm_min),
            ("travel_feed_mm_min", self.travel_feed_mm_min),
            ("sample_dwell_s", self.sample_dwell_s),
            ("contact_threshold_n", self.contact_threshold_n),
            ("setpoint_tol_kpa", self.setpoint_tol_kpa),
            ("setpoint_timeout_s", self.setpoint_timeout_s),
            ("pump_iter_dwell_s", self.pump_iter_dwell_s),
            ("pump_gain_est_kpa_per_ml", self.pump_gain_est_kpa_per_ml),
        ];
        for (field, value) in positives {
            if !(value.is_finite() && value > 0.0) {
                return Err(ProtocolError::InvalidSpec {
                    reason: format!("{field} must be positive, got {value}"),
                });
            }
        }
        let dwells = [
            ("step_dwell_s", self.step_dwell_s),
            ("settle_dwell_s", self.settle_dwell_s),
        ];
        for (field, value) in dwells {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ProtocolError::InvalidSpec {
                    reason: format!("{field} must be non-negative, got {value}"),
                });
            }
        }
        Ok(())
    }
}

/// Deterministic run-local time source.
///
/// Starts at zero, only moves forward. Durations come from commanded
/// feeds and dwells, so a replayed run gets the same timestamps.
#[derive(Debug, Clone)]
pub struct ModelClock {
    now_s: f64,
}

impl ModelClock {
    pub fn new() -> Self {
        Self { now_s: 0.0 }
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    pub fn advance(&mut self, dt_s: f64) {
        debug_assert!(dt_s.is_finite() && dt_s >= 0.0);
        self.now_s += dt_s.max(0.0);
    }

    /// Duration of a move of `distance_mm` at `feed_mm_min`.
    pub fn motion_s(distance_mm: f64, feed_mm_min: f64) -> f64 {
        debug_assert!(feed_mm_min > 0.0);
        distance_mm.abs() / (feed_mm_min / 60.0)
    }
}

impl Default for ModelClock {
    fn default() -> Self {
        Self::new()
    }
}

/// Timestamped free-text marker in a run log.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub timestamp_s: f64,
    pub label: String,
}

/// Everything a run produced: the spec it ran under, a config digest for
/// provenance, ordered events and samples, and named derived scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub schema_version: u32,
    pub spec: ProtocolSpec,
    pub config_digest: String,
    events: Vec<Event>,
    samples: Vec<Sample>,
    derived: BTreeMap<String, f64>,
}

impl RunLog {
    pub fn new(spec: ProtocolSpec, config_digest: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            spec,
            config_digest: config_digest.into(),
            events: Vec::new(),
            samples: Vec::new(),
            derived: BTreeMap::new(),
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn derived(&self) -> &BTreeMap<String, f64> {
        &self.derived
    }

    /// Event timestamps may repeat but never go backwards.
    pub fn push_event(
        &mut self,
        timestamp_s: f64,
        label: impl Into<String>,
    ) -> Result<(), ProtocolError> {
        if let Some(last) = self.events.last() {
            if timestamp_s < last.timestamp_s {
                return Err(ProtocolError::OutOfOrder {
                    stream: "event",
                    at: timestamp_s,
                    last: last.timestamp_s,
                });
            }
        }
        self.events.push(Event {
            timestamp_s,
            label: label.into(),
        });
        Ok(())
    }

    /// Sample timestamps are strictly increasing; step indices never regress.
    pub fn push_sample(&mut self, sample: Sample) -> Result<(), ProtocolError> {
        if let Some(last) = self.samples.last() {
            if sample.timestamp_s <= last.timestamp_s {
                return Err(ProtocolError::OutOfOrder {
                    stream: "sample",
                    at: sample.timestamp_s,
                    last: last.timestamp_s,
                });
            }
            if sample.step_index < last.step_index {
                return Err(ProtocolError::StepIndexRegressed {
                    index: sample.step_index,
                    last: last.step_index,
                });
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Record a named scalar result. Keys are single-assignment.
    pub fn insert_derived(
        &mut self,
        key: impl Into<String>,
        value: f64,
    ) -> Result<(), ProtocolError> {
        let key = key.into();
        if self.derived.contains_key(&key) {
            return Err(ProtocolError::DuplicateDerivedKey { key });
        }
        self.derived.insert(key, value);
        Ok(())
    }

    /// Reconstruct a log from its parts, re-running the ordering checks.
    /// Used when reading a log back from disk.
    pub fn from_parts(
        schema_version: u32,
        spec: ProtocolSpec,
        config_digest: impl Into<String>,
        events: Vec<Event>,
        samples: Vec<Sample>,
        derived: BTreeMap<String, f64>,
    ) -> Result<Self, ProtocolError> {
        if schema_version != SCHEMA_VERSION {
            return Err(ProtocolError::InvalidSpec {
                reason: format!(
                    "unsupported log schema version {schema_version} (expected {SCHEMA_VERSION})"
                ),
            });
        }
        let mut log = Self::new(spec, config_digest);
        for event in events {
            log.push_event(event.timestamp_s, event.label)?;
        }
        for sample in samples {
            log.push_sample(sample)?;
        }
        log.derived = derived;
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{DisplacementMm, ForceN, PressureKpa};

    fn spec() -> ProtocolSpec {
        ProtocolSpec {
            kind: KindSpec::Sweep(SweepParams::default()),
            trials: 1,
            seed: 7,
        }
    }

    fn sample(t: f64, step: u32) -> Sample {
        Sample {
            timestamp_s: t,
            step_index: step,
            displacement: DisplacementMm::new(0.0).unwrap(),
            force: ForceN::new(0.0).unwrap(),
            pressure: PressureKpa::new(100.0).unwrap(),
        }
    }

    #[test]
    fn log_accepts_ordered_streams() {
        let mut log = RunLog::new(spec(), "digest");
        log.push_event(0.0, "start").unwrap();
        log.push_event(0.0, "same instant is fine").unwrap();
        log.push_sample(sample(1.0, 0)).unwrap();
        log.push_sample(sample(1.5, 0)).unwrap();
        log.push_sample(sample(2.0, 1)).unwrap();
        assert_eq!(log.events().len(), 2);
        assert_eq!(log.samples().len(), 3);
    }

    #[test]
    fn log_rejects_backwards_time_and_step() {
        let mut log = RunLog::new(spec(), "digest");
        log.push_event(1.0, "a").unwrap();
        assert!(matches!(
            log.push_event(0.5, "b"),
            Err(ProtocolError::OutOfOrder { stream: "event", .. })
        ));

        log.push_sample(sample(1.0, 3)).unwrap();
        assert!(matches!(
            log.push_sample(sample(1.0, 3)),
            Err(ProtocolError::OutOfOrder { stream: "sample", .. })
        ));
        assert!(matches!(
            log.push_sample(sample(2.0, 2)),
            Err(ProtocolError::StepIndexRegressed { index: 2, last: 3 })
        ));
    }

    #[test]
    fn derived_keys_are_single_assignment() {
        let mut log = RunLog::new(spec(), "digest");
        log.insert_derived("slope_kpa", 44.84).unwrap();
        assert!(matches!(
            log.insert_derived("slope_kpa", 1.0),
            Err(ProtocolError::DuplicateDerivedKey { .. })
        ));
        assert_eq!(log.derived()["slope_kpa"], 44.84);
    }

    #[test]
    fn from_parts_replays_validation() {
        let events = vec![Event {
            timestamp_s: 0.0,
            label: "start".into(),
        }];
        let samples = vec![sample(1.0, 0), sample(0.5, 1)];
        let err = RunLog::from_parts(
            SCHEMA_VERSION,
            spec(),
            "digest",
            events,
            samples,
            BTreeMap::new(),
        );
        assert!(matches!(err, Err(ProtocolError::OutOfOrder { .. })));

        let err = RunLog::from_parts(99, spec(), "digest", vec![], vec![], BTreeMap::new());
        assert!(matches!(err, Err(ProtocolError::InvalidSpec { .. })));
    }

    #[test]
    fn clock_computes_feed_durations() {
        let mut clock = ModelClock::new();
        assert_eq!(clock.now_s(), 0.0);
        clock.advance(ModelClock::motion_s(1.0, 5.0));
        assert!((clock.now_s() - 12.0).abs() < 1e-12);
        clock.advance(ModelClock::motion_s(-3.0, 60.0));
        assert!((clock.now_s() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn timings_validation_catches_nonsense() {
        let mut t = Timings::default();
        t.approach_step_mm = 0.0;
        assert!(t.validate().is_err());

        let mut t = Timings::default();
        t.sample_dwell_s = -1.0;
        assert!(t.validate().is_err());

        assert!(Timings::default().validate().is_ok());
    }
}
