//! The five protocol bodies and the motion/setpoint helpers they share.

use std::collections::BTreeSet;

use crate::analysis::{batch_stats, drift_report, BatchOutcome, DriftReport};
use crate::calibration::{tuning_accuracy_pct, CalibrationModel, CalibrationPoint};
use crate::devices::wire::WireFault;
use crate::devices::{DeviceError, Rig};
use crate::units::{DisplacementMm, FruitSample, PressureKpa, Sample, StiffnessNPerMm, VolumeMl};

use super::{
    KindSpec, ModelClock, ProtocolError, ProtocolSpec, RunLog, Timings, ToolAreas,
};

/// Rig plus clock plus log: the state every protocol threads through.
struct Driver<'a> {
    rig: &'a mut Rig,
    timings: Timings,
    clock: ModelClock,
    log: RunLog,
}


impl<'a> Driver<'a> {
    fn new(rig: &'a mut Rig, timings: &Timings, log: RunLog) -> Self {
        Self {
            rig,
            timings: *timings,
            clock: ModelClock::new(),
            log,
        }
    }

    fn event(&mut self, label: impl Into<String>) -> Result<(), ProtocolError> {
        self.log.push_event(self.clock.now_s(), label)
    }

    /// Dwell, read force and pressure, append the sample. Returns the raw
    /// readings for immediate use.
    fn observe(&mut self, step_index: u32, displacement_mm: f64) -> Result<(f64, f64), ProtocolError> {
        self.clock.advance(self.timings.sample_dwell_s);
        let force = self.rig.force.read_force()?;
        let pressure = self.rig.pressure.read_pressure()?;
        self.log.push_sample(Sample {
            timestamp_s: self.clock.now_s(),
            step_index,
            displacement: DisplacementMm::new(displacement_mm)?,
            force,
            pressure,
        })?;
        Ok((force.value(), pressure.value()))
    }

    fn move_stage(&mut self, delta_mm: f64, feed_mm_min: f64) -> Result<(), ProtocolError> {
        self.rig.stage.move_z_relative(delta_mm, feed_mm_min)?;
        self.clock.advance(ModelClock::motion_s(delta_mm, feed_mm_min));
        Ok(())
    }

    fn goto_z(&mut self, target_z_mm: f64, feed_mm_min: f64) -> Result<(), ProtocolError> {
        let delta = target_z_mm - self.rig.stage.position_mm();
        self.move_stage(delta, feed_mm_min)
    }

    fn home_stage(&mut self) -> Result<(), ProtocolError> {
        let z = self.rig.stage.position_mm();
        self.rig.stage.home()?;
        self.clock
            .advance(ModelClock::motion_s(z, self.timings.travel_feed_mm_min));
        Ok(())
    }

    /// Closed-loop pressure control: read, correct through the pump,
    /// repeat until the reading sits inside the tolerance band. Returns the
    /// held pressure. Modeled time bounds the number of corrections.
    fn reach_setpoint(&mut self, target_kpa: f64) -> Result<f64, ProtocolError> {
        let t = self.timings;
        let deadline = self.clock.now_s() + t.setpoint_timeout_s;
        loop {
            let p = self.rig.pressure.read_pressure()?.value();
            let err = target_kpa - p;
            if err.abs() <= t.setpoint_tol_kpa {
                self.event(format!("holding {p:.3} kPa for setpoint {target_kpa:.2} kPa"))?;
                return Ok(p);
            }
            if self.clock.now_s() >= deadline {
                return Err(ProtocolError::SetpointTimeout {
                    target_kpa,
                    timeout_s: t.setpoint_timeout_s,
                    last_kpa: p,
                });
            }
            self.rig
                .pump
                .move_volume(VolumeMl::new(err / t.pump_gain_est_kpa_per_ml)?)?;
            self.clock.advance(t.pump_iter_dwell_s);
        }
    }

    /// Step the tool downward until the load cell sees the surface, then
    /// back-project the contact height through the last two readings.
    /// Leaves the stage parked just past the surface.
    fn find_contact(&mut self) -> Result<f64, ProtocolError> {
        let t = self.timings;
        let start_z = self.rig.stage.position_mm();
        let mut prev_z = start_z;
        let mut prev_f = self.rig.force.read_force()?.value();
        if prev_f >= t.contact_threshold_n {
            return Err(ProtocolError::InvalidSpec {
                reason: "contact search started while already touching".into(),
            });
        }
        loop {
            match self
                .rig
                .stage
                .move_z_relative(t.approach_step_mm, t.approach_feed_mm_min)
            {
                Ok(()) => {}
                Err(DeviceError::StageTravel { .. }) | Err(DeviceError::Fault(WireFault::Limit)) => {
                    return Err(ProtocolError::ContactNotFound {
                        searched_mm: self.rig.stage.position_mm() - start_z,
                    });
                }
                Err(other) => return Err(other.into()),
            }
            self.clock.advance(
                ModelClock::motion_s(t.approach_step_mm, t.approach_feed_mm_min) + t.step_dwell_s,
            );
            let z = self.rig.stage.position_mm();
            let f = self.rig.force.read_force()?.value();
            if f >= t.contact_threshold_n {
                let df = f - prev_f;
                let dz = z - prev_z;
                // with a linear contact the projection pins the surface far
                // below the search step resolution
                let surface = if df > 0.0 { z - f * dz / df } else { z };
                self.event(format!(
                    "contact at z = {z:.3} mm, surface projected to {surface:.4} mm"
                ))?;
                return Ok(surface);
            }
            prev_z = z;
            prev_f = f;
        }
    }

    /// One stiffness measurement: seat on the surface, take a datum
    /// sample, indent by `indent_mm`, sample again, retract to park.
    /// Differencing against the datum cancels the unknown seating depth.
    /// Returns the stiffness in N/mm.
    fn measure_indent(&mut self, step_index: u32, indent_mm: f64) -> Result<f64, ProtocolError> {
        self.find_contact()?;
        let (f_datum, _) = self.observe(step_index, 0.0)?;
        self.move_stage(indent_mm, self.timings.indent_feed_mm_min)?;
        let (f_indent, _) = self.observe(step_index, indent_mm)?;
        self.home_stage()?;
        Ok(((f_indent - f_datum) / indent_mm).max(0.0))
    }

    fn close_gripper_by(&mut self, delta_mm: f64) -> Result<(), ProtocolError> {
        self.rig.gripper.close_by(DisplacementMm::new(delta_mm)?)?;
        self.clock
            .advance(ModelClock::motion_s(delta_mm, self.timings.indent_feed_mm_min));
        Ok(())
    }

    fn open_gripper(&mut self) -> Result<(), ProtocolError> {
        let closed = self.rig.gripper.closed_mm();
        self.rig.gripper.open_full()?;
        self.clock
            .advance(ModelClock::motion_s(closed, self.timings.travel_feed_mm_min));
        Ok(())
    }

    fn finish(self) -> RunLog {
        self.log
    }
}

fn check_trials(spec: &ProtocolSpec, max: Option<u32>) -> Result<(), ProtocolError> {
    if spec.trials == 0 {
        return Err(ProtocolError::InvalidSpec {
            reason: "trials must be at least 1".into(),
        });
    }
    if let Some(max) = max {
        if spec.trials > max {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("this protocol supports at most {max} trial(s), got {}", spec.trials),
            });
        }
    }
    Ok(())
}

fn check_positive(field: &str, value: f64) -> Result<(), ProtocolError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ProtocolError::InvalidSpec {
            reason: format!("{field} must be positive, got {value}"),
        });
    }
    Ok(())
}

fn check_margin(value: f64) -> Result<(), ProtocolError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(ProtocolError::InvalidSpec {
            reason: format!("margin_frac must be non-negative, got {value}"),
        });
    }
    Ok(())
}

/// Targets become derived-key prefixes at two decimals, so they must stay
/// distinct at that resolution.
fn check_targets(targets: &[f64]) -> Result<(), ProtocolError> {
    if targets.is_empty() {
        return Err(ProtocolError::InvalidSpec {
            reason: "at least one stiffness target is required".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for &t in targets {
        check_positive("stiffness target", t)?;
        if !seen.insert(format!("{t:.2}")) {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("duplicate stiffness target {t:.2}"),
            });
        }
    }
    Ok(())
}

/// Derived-key prefix for one repetition; the trial number appears only
/// when there is more than one.
fn scope(trials: u32, trial: u32, base: String) -> String {
    if trials == 1 {
        base
    } else {
        format!("trial_{trial}.{base}")
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub log: RunLog,
    pub points: Vec<CalibrationPoint>,
    pub model: CalibrationModel,
}

/// Hold a ladder of baseline pressures, measure stiffness at each rung,
/// fit the pressure-stiffness line. Calibration points pair the measured
/// stiffness with the pressure held before the tool touched, so the
/// load-induced chamber rise stays out of the fit.
pub fn run_sweep(
    rig: &mut Rig,
    spec: &ProtocolSpec,
    tools: &ToolAreas,
    timings: &Timings,
    config_digest: &str,
) -> Result<SweepOutcome, ProtocolError> {
    let params = match &spec.kind {
        KindSpec::Sweep(p) => p.clone(),
        other => {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("expected a sweep spec, got {}", other.name()),
            })
        }
    };
    timings.validate()?;
    check_trials(spec, None)?;
    if params.levels < 2 {
        return Err(ProtocolError::InvalidSpec {
            reason: format!("a sweep needs at least 2 pressure levels, got {}", params.levels),
        });
    }
    check_positive("p_start_kpa", params.p_start_kpa)?;
    check_positive("p_end_kpa", params.p_end_kpa)?;
    if params.p_end_kpa <= params.p_start_kpa {
        return Err(ProtocolError::InvalidSpec {
            reason: "sweep pressures must increase from start to end".into(),
        });
    }
    check_positive("indent_mm", params.indent_mm)?;

    let mut drv = Driver::new(rig, timings, RunLog::new(spec.clone(), config_digest));
    drv.event(format!(
        "sweep: {} levels {:.2}..{:.2} kPa, {} trial(s)",
        params.levels, params.p_start_kpa, params.p_end_kpa, spec.trials
    ))?;
    drv.rig.plant.set_contact_area(tools.indenter_mm2)?;
    drv.event(format!("indenter fitted, {:.1} mm^2", tools.indenter_mm2))?;
    drv.home_stage()?;

    let mut points = Vec::new();
    let mut step = 0u32;
    for _trial in 0..spec.trials {
        for level in 0..params.levels {
            let frac = f64::from(level) / f64::from(params.levels - 1);
            let p_level = params.p_start_kpa + (params.p_end_kpa - params.p_start_kpa) * frac;
            let held = drv.reach_setpoint(p_level)?;
            let k = drv.measure_indent(step, params.indent_mm)?;
            drv.event(format!("level {level}: {k:.4} N/mm at {held:.3} kPa"))?;
            points.push(CalibrationPoint {
                stiffness: StiffnessNPerMm::new(k)?,
                pressure: PressureKpa::new(held)?,
            });
            step += 1;
        }
    }

    let model = CalibrationModel::fit(&points)?;
    let (k_lo, k_hi) = model.stiffness_domain();
    let (p_lo, p_hi) = model.pressure_domain();
    for (key, value) in [
        ("fit.slope_kpa_per_n_mm", model.slope_kpa_per_stiffness()),
        ("fit.intercept_kpa", model.intercept_kpa()),
        ("fit.r_squared", model.r_squared()),
        ("fit.mse_kpa2", model.mean_squared_error(&points)),
        ("fit.stiffness_lo_n_mm", k_lo),
        ("fit.stiffness_hi_n_mm", k_hi),
        ("fit.pressure_lo_kpa", p_lo),
        ("fit.pressure_hi_kpa", p_hi),
        ("fit.n_points", points.len() as f64),
    ] {
        drv.log.insert_derived(key, value)?;
    }
    drv.event(format!(
        "fit: P = {:.4} K + {:.4}, r^2 = {:.6}",
        model.slope_kpa_per_stiffness(),
        model.intercept_kpa(),
        model.r_squared()
    ))?;
    Ok(SweepOutcome {
        log: drv.finish(),
        points,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub trial: u32,
    pub target_n_per_mm: f64,
    pub required_kpa: f64,
    pub extrapolated: bool,
    pub held_kpa: f64,
    pub measured_n_per_mm: f64,
    pub accuracy_pct: f64,
}

#[derive(Debug)]
pub struct TuningOutcome {
    pub log: RunLog,
    pub results: Vec<TuningResult>,
}

/// Invert the calibration for each stiffness target, drive the chamber
/// there, verify by a datum-referenced indent.
pub fn run_tuning(
    rig: &mut Rig,
    spec: &ProtocolSpec,
    model: &CalibrationModel,
    tools: &ToolAreas,
    timings: &Timings,
    config_digest: &str,
) -> Result<TuningOutcome, ProtocolError> {
    let params = match &spec.kind {
        KindSpec::Tuning(p) => p.clone(),
        other => {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("expected a tuning spec, got {}", other.name()),
            })
        }
    };
    timings.validate()?;
    check_trials(spec, None)?;
    check_targets(&params.targets_n_per_mm)?;
    check_margin(params.margin_frac)?;
    check_positive("indent_mm", params.indent_mm)?;

    let mut drv = Driver::new(rig, timings, RunLog::new(spec.clone(), config_digest));
    drv.event(format!(
        "tuning: {} target(s), domain margin {:.3}",
        params.targets_n_per_mm.len(),
        params.margin_frac
    ))?;
    drv.rig.plant.set_contact_area(tools.indenter_mm2)?;
    drv.event(format!("indenter fitted, {:.1} mm^2", tools.indenter_mm2))?;
    drv.home_stage()?;

    let mut results = Vec::new();
    let mut step = 0u32;
    for trial in 0..spec.trials {
        for &target in &params.targets_n_per_mm {
            let req = model.required_pressure(StiffnessNPerMm::new(target)?, params.margin_frac)?;
            let required_kpa = req.value.value();
            if req.extrapolated {
                drv.event(format!(
                    "warning: target {target:.2} N/mm needs {required_kpa:.2} kPa beyond the calibrated range"
                ))?;
            }
            let held = drv.reach_setpoint(required_kpa)?;
            let measured = drv.measure_indent(step, params.indent_mm)?;
            let accuracy = tuning_accuracy_pct(
                StiffnessNPerMm::new(target)?,
                StiffnessNPerMm::new(measured)?,
            )?;
            drv.event(format!(
                "target {target:.2} N/mm: measured {measured:.4} N/mm, accuracy {accuracy:.2} %"
            ))?;
            let prefix = scope(spec.trials, trial, format!("target_{target:.2}"));
            drv.log
                .insert_derived(format!("{prefix}.required_kpa"), required_kpa)?;
            drv.log.insert_derived(format!("{prefix}.held_kpa"), held)?;
            drv.log
                .insert_derived(format!("{prefix}.measured_n_per_mm"), measured)?;
            drv.log
                .insert_derived(format!("{prefix}.accuracy_pct"), accuracy)?;
            drv.log.insert_derived(
                format!("{prefix}.extrapolated"),
                f64::from(u8::from(req.extrapolated)),
            )?;
            results.push(TuningResult {
                trial,
                target_n_per_mm: target,
                required_kpa,
                extrapolated: req.extrapolated,
                held_kpa: held,
                measured_n_per_mm: measured,
                accuracy_pct: accuracy,
            });
            step += 1;
        }
    }
    Ok(TuningOutcome {
        log: drv.finish(),
        results,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspTargetResult {
    pub trial: u32,
    pub target_n_per_mm: f64,
    pub required_kpa: f64,
    pub baseline_kpa: f64,
    pub peak_kpa: f64,
    pub peak_force_n: f64,
}

#[derive(Debug)]
pub struct GraspOutcome {
    pub log: RunLog,
    pub results: Vec<GraspTargetResult>,
}

/// Tune to each target, then close the jaws step by step around the twin
/// and record how pressure and reaction force respond.
pub fn run_grasp(
    rig: &mut Rig,
    spec: &ProtocolSpec,
    model: &CalibrationModel,
    tools: &ToolAreas,
    timings: &Timings,
    config_digest: &str,
) -> Result<GraspOutcome, ProtocolError> {
    let params = match &spec.kind {
        KindSpec::Grasp(p) => p.clone(),
        other => {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("expected a grasp spec, got {}", other.name()),
            })
        }
    };
    timings.validate()?;
    check_trials(spec, None)?;
    check_targets(&params.targets_n_per_mm)?;
    check_margin(params.margin_frac)?;
    if params.close_steps == 0 {
        return Err(ProtocolError::InvalidSpec {
            reason: "grasp needs at least one closing step".into(),
        });
    }
    check_positive("step_mm", params.step_mm)?;

    let mut drv = Driver::new(rig, timings, RunLog::new(spec.clone(), config_digest));
    drv.event(format!(
        "grasp: {} target(s), {} x {:.2} mm closure",
        params.targets_n_per_mm.len(),
        params.close_steps,
        params.step_mm
    ))?;
    drv.rig.plant.set_contact_area(tools.jaws_mm2)?;
    drv.event(format!("jaws fitted, {:.1} mm^2", tools.jaws_mm2))?;
    drv.home_stage()?;
    drv.open_gripper()?;

    let mut results = Vec::new();
    let mut step = 0u32;
    for trial in 0..spec.trials {
        for &target in &params.targets_n_per_mm {
            let req = model.required_pressure(StiffnessNPerMm::new(target)?, params.margin_frac)?;
            let required_kpa = req.value.value();
            if req.extrapolated {
                drv.event(format!(
                    "warning: target {target:.2} N/mm needs {required_kpa:.2} kPa beyond the calibrated range"
                ))?;
            }
            let held = drv.reach_setpoint(required_kpa)?;
            let (f, baseline_kpa) = drv.observe(step, 0.0)?;
            let mut peak_kpa = baseline_kpa;
            let mut peak_force_n = f;
            for _ in 0..params.close_steps {
                drv.close_gripper_by(params.step_mm)?;
                let closed = drv.rig.gripper.closed_mm();
                let (f, p) = drv.observe(step, closed)?;
                peak_kpa = peak_kpa.max(p);
                peak_force_n = peak_force_n.max(f);
            }
            drv.open_gripper()?;
            drv.event(format!(
                "target {target:.2} N/mm: baseline {baseline_kpa:.3} kPa, grasp peak {peak_kpa:.3} kPa"
            ))?;
            let prefix = scope(spec.trials, trial, format!("target_{target:.2}"));
            drv.log
                .insert_derived(format!("{prefix}.required_kpa"), required_kpa)?;
            drv.log.insert_derived(format!("{prefix}.held_kpa"), held)?;
            drv.log
                .insert_derived(format!("{prefix}.baseline_kpa"), baseline_kpa)?;
            drv.log.insert_derived(format!("{prefix}.peak_kpa"), peak_kpa)?;
            drv.log
                .insert_derived(format!("{prefix}.peak_force_n"), peak_force_n)?;
            results.push(GraspTargetResult {
                trial,
                target_n_per_mm: target,
                required_kpa,
                baseline_kpa,
                peak_kpa,
                peak_force_n,
            });
            step += 1;
        }
    }
    Ok(GraspOutcome {
        log: drv.finish(),
        results,
    })
}

#[derive(Debug)]
pub struct StressOutcome {
    pub log: RunLog,
    pub report: DriftReport,
    pub surface_mm: f64,
}

/// Tune to the stress target, settle, then compress with the platen for
/// the configured number of cycles and summarize peak and boundary drift.
///
/// Cycle-dependent creep is advanced through the plant hook after each
/// cycle's trailing boundary sample, so that sample still reflects the
/// cycles completed before it. Backends whose plant creeps on its own
/// (real hardware) ignore the hook.
pub fn run_stress(
    rig: &mut Rig,
    spec: &ProtocolSpec,
    model: &CalibrationModel,
    tools: &ToolAreas,
    timings: &Timings,
    config_digest: &str,
) -> Result<StressOutcome, ProtocolError> {
    let params = match &spec.kind {
        KindSpec::Stress(p) => p.clone(),
        other => {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("expected a stress spec, got {}", other.name()),
            })
        }
    };
    timings.validate()?;
    // repeated stress is one long run, not independent repetitions
    check_trials(spec, Some(1))?;
    check_positive("target_n_per_mm", params.target_n_per_mm)?;
    check_margin(params.margin_frac)?;
    check_positive("depth_mm", params.depth_mm)?;
    check_positive("sample_step_mm", params.sample_step_mm)?;
    if params.cycles == 0 {
        return Err(ProtocolError::InvalidSpec {
            reason: "stress needs at least one cycle".into(),
        });
    }
    if params.window_cycles == 0 || params.window_cycles > params.cycles {
        return Err(ProtocolError::InvalidSpec {
            reason: format!(
                "window of {} cycles does not fit into {} cycles",
                params.window_cycles, params.cycles
            ),
        });
    }
    let steps_f = params.depth_mm / params.sample_step_mm;
    if (steps_f - steps_f.round()).abs() > 1e-9 || steps_f.round() < 1.0 {
        return Err(ProtocolError::InvalidSpec {
            reason: format!(
                "depth {:.3} mm is not a whole number of {:.3} mm sample steps",
                params.depth_mm, params.sample_step_mm
            ),
        });
    }
    let n_down = steps_f.round() as u32;

    let mut drv = Driver::new(rig, timings, RunLog::new(spec.clone(), config_digest));
    drv.event(format!(
        "stress: {} cycles to {:.2} mm at {:.2} N/mm",
        params.cycles, params.depth_mm, params.target_n_per_mm
    ))?;
    drv.rig.plant.set_contact_area(tools.platen_mm2)?;
    drv.event(format!("platen fitted, {:.1} mm^2", tools.platen_mm2))?;
    drv.home_stage()?;

    let req = model.required_pressure(
        StiffnessNPerMm::new(params.target_n_per_mm)?,
        params.margin_frac,
    )?;
    let required_kpa = req.value.value();
    if req.extrapolated {
        drv.event(format!(
            "warning: target {:.2} N/mm needs {required_kpa:.2} kPa beyond the calibrated range",
            params.target_n_per_mm
        ))?;
    }
    let held = drv.reach_setpoint(required_kpa)?;
    drv.rig.plant.settle();
    drv.clock.advance(drv.timings.settle_dwell_s);
    drv.event("chamber settled at the stress setpoint")?;

    let surface = drv.find_contact()?;
    drv.goto_z(surface, drv.timings.approach_feed_mm_min)?;
    drv.event(format!("platen parked on the surface at z = {surface:.4} mm"))?;

    for cycle in 1..=params.cycles {
        for i in 1..=n_down {
            let pos = f64::from(i) * params.sample_step_mm;
            drv.goto_z(surface + pos, drv.timings.indent_feed_mm_min)?;
            drv.observe(cycle, pos)?;
        }
        for i in (0..n_down).rev() {
            let pos = f64::from(i) * params.sample_step_mm;
            drv.goto_z(surface + pos, drv.timings.indent_feed_mm_min)?;
            drv.observe(cycle, pos)?;
        }
        drv.rig.plant.advance_cycle();
    }
    drv.event("cycling complete")?;
    drv.home_stage()?;

    let force_trace: Vec<(u32, f64)> = drv
        .log
        .samples()
        .iter()
        .map(|s| (s.step_index, s.force.value()))
        .collect();
    let pressure_trace: Vec<(u32, f64)> = drv
        .log
        .samples()
        .iter()
        .map(|s| (s.step_index, s.pressure.value()))
        .collect();
    let report = drift_report(
        &force_trace,
        &pressure_trace,
        PressureKpa::new(required_kpa)?,
        params.window_cycles,
    )?;

    for (key, value) in [
        ("stress.target_kpa", required_kpa),
        ("stress.held_kpa", held),
        ("stress.surface_mm", surface),
        ("drift.n_cycles", f64::from(report.n_cycles)),
        ("drift.window_cycles", f64::from(report.window_cycles)),
        ("drift.force_peak_first_n", report.force_peak_first_n),
        ("drift.force_peak_last_n", report.force_peak_last_n),
        ("drift.force_peak_drift_n", report.force_peak_drift_n),
        ("drift.pressure_peak_first_kpa", report.pressure_peak_first_kpa),
        ("drift.pressure_peak_last_kpa", report.pressure_peak_last_kpa),
        ("drift.pressure_peak_drift_kpa", report.pressure_peak_drift_kpa),
        ("drift.residual_pct_first", report.residual_pct_first),
        ("drift.residual_pct_last", report.residual_pct_last),
        ("drift.n_pressure_minima", report.n_pressure_minima as f64),
    ] {
        drv.log.insert_derived(key, value)?;
    }
    drv.event(format!(
        "peak pressure drift {:.4} kPa; boundary residual {:.4} % -> {:.4} %",
        report.pressure_peak_drift_kpa, report.residual_pct_first, report.residual_pct_last
    ))?;
    Ok(StressOutcome {
        log: drv.finish(),
        report,
        surface_mm: surface,
    })
}

#[derive(Debug)]
pub struct CharacterizeOutcome {
    pub log: RunLog,
    pub batch: BatchOutcome,
}

/// Summarize a batch of recorded indentation curves per measurement day.
/// Pure data reduction; no rig is involved, so event timestamps stay at
/// zero.
pub fn run_characterize(
    fruits: &[FruitSample],
    spec: &ProtocolSpec,
    config_digest: &str,
) -> Result<CharacterizeOutcome, ProtocolError> {
    let params = match &spec.kind {
        KindSpec::Characterize(p) => p.clone(),
        other => {
            return Err(ProtocolError::InvalidSpec {
                reason: format!("expected a characterize spec, got {}", other.name()),
            })
        }
    };
    check_trials(spec, Some(1))?;
    check_positive("eval_depth_mm", params.eval_depth_mm)?;
    let eval = DisplacementMm::new(params.eval_depth_mm)?;

    let mut log = RunLog::new(spec.clone(), config_digest);
    log.push_event(
        0.0,
        format!(
            "characterizing {} fruit(s) at {:.2} mm depth",
            fruits.len(),
            params.eval_depth_mm
        ),
    )?;
    let batch = batch_stats(fruits, eval, params.drop_fraction)?;
    for skip in &batch.skipped {
        log.push_event(
            0.0,
            format!(
                "skipped {} (day {}): damage at {:.2} mm is shallower than the evaluation depth",
                skip.id, skip.day, skip.damage_depth_mm
            ),
        )?;
    }
    for (day, stats) in &batch.per_day {
        let sd_text = match stats.sd_stiffness {
            Some(sd) => format!("{sd:.4}"),
            None => "n/a".into(),
        };
        log.push_event(
            0.0,
            format!(
                "day {day}: n = {}, mean {:.4} N/mm, sd {sd_text} N/mm",
                stats.n, stats.mean_stiffness
            ),
        )?;
        log.insert_derived(format!("day_{day}.n"), stats.n as f64)?;
        log.insert_derived(format!("day_{day}.mean_n_per_mm"), stats.mean_stiffness)?;
        if let Some(sd) = stats.sd_stiffness {
            log.insert_derived(format!("day_{day}.sd_n_per_mm"), sd)?;
        }
    }
    log.insert_derived("skipped_count", batch.skipped.len() as f64)?;
    Ok(CharacterizeOutcome { log, batch })
}
