//! Post-processing of indentation curves and cyclic-loading traces.
//!
//! Everything here is pure: functions take measured data and return derived
//! numbers, so they apply equally to simulated runs, hardware runs and
//! ingested spreadsheets.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::units::{DisplacementMm, FruitSample, IndentationCurve, PressureKpa, StiffnessNPerMm, UnitError};

/// Relative force drop after a local peak that counts as shell damage.
pub const DEFAULT_DROP_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error("extrema need at least 3 samples, got {len}")]
    SignalTooShort { len: usize },
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("stiffness at zero depth is undefined")]
    ZeroEvalDepth,
    #[error("drop fraction {value} must lie in (0, 1)")]
    InvalidFraction { value: f64 },
    #[error("curve shows damage at {damage_depth_mm} mm, before the {eval_depth_mm} mm evaluation depth")]
    DamagedBeforeEval {
        damage_depth_mm: f64,
        eval_depth_mm: f64,
    },
    #[error("no fruit samples to summarize")]
    EmptyBatch,
    #[error("cycle window must cover at least 1 cycle")]
    ZeroWindow,
    #[error("trace holds no {kind}")]
    NoExtrema { kind: &'static str },
    #[error("drift residuals need a positive target pressure")]
    ZeroTargetPressure,
    #[error("force and pressure traces differ in length: {force} vs {pressure}")]
    TraceLengthMismatch { force: usize, pressure: usize },
}

/// Interior local maxima of `values`.
///
/// Index `i` is a peak when `values[i-1] < values[i]` and
/// `values[i] >= values[i+1]`, so the left edge of a plateau wins and the
/// first and last samples never qualify.
pub fn find_peaks(values: &[f64]) -> Result<Vec<usize>, AnalysisError> {
    extrema(values, |prev, here, next| prev < here && here >= next)
}

/// Interior local minima of `values`, mirror of [`find_peaks`].
pub fn find_minima(values: &[f64]) -> Result<Vec<usize>, AnalysisError> {
    extrema(values, |prev, here, next| prev > here && here <= next)
}

fn extrema(
    values: &[f64],
    keep: impl Fn(f64, f64, f64) -> bool,
) -> Result<Vec<usize>, AnalysisError> {
    if values.len() < 3 {
        return Err(AnalysisError::SignalTooShort { len: values.len() });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFiniteSample { index });
    }
    Ok((1..values.len() - 1)
        .filter(|&i| keep(values[i - 1], values[i], values[i + 1]))
        .collect())
}

/// Where an indentation curve first shows shell damage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamagePoint {
    pub index: usize,
    pub depth_mm: f64,
    pub force_n: f64,
}

/// Scan a curve for the first force peak that collapses.
///
/// A local force maximum counts as damage when the force later falls to
/// `(1 - drop_fraction)` of the peak or lower without first recovering above
/// the peak. Returns the earliest such peak; `None` for monotone curves.
pub fn detect_damage_point(
    curve: &IndentationCurve,
    drop_fraction: f64,
) -> Result<Option<DamagePoint>, AnalysisError> {
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(AnalysisError::InvalidFraction {
            value: drop_fraction,
        });
    }
    let forces: Vec<f64> = curve.points().iter().map(|(_, f)| f.value()).collect();
    if forces.len() < 3 {
        return Ok(None);
    }
    let peaks = find_peaks(&forces)?;
    for i in peaks {
        let peak = forces[i];
        let floor = peak * (1.0 - drop_fraction);
        for &later in &forces[i + 1..] {
            if later > peak {
                break; // recovered, an elastic wiggle rather than damage
            }
            if later <= floor {
                let (depth, force) = curve.points()[i];
                return Ok(Some(DamagePoint {
                    index: i,
                    depth_mm: depth.value(),
                    force_n: force.value(),
                }));
            }
        }
    }
    Ok(None)
}

/// Secant stiffness `F(d) / d` at `eval_depth`.
///
/// Refuses curves that show damage shallower than the evaluation depth: past
/// the collapse the secant no longer measures the intact shell.
pub fn estimate_stiffness(
    curve: &IndentationCurve,
    eval_depth: DisplacementMm,
    drop_fraction: f64,
) -> Result<StiffnessNPerMm, AnalysisError> {
    let d = eval_depth.value();
    if d == 0.0 {
        return Err(AnalysisError::ZeroEvalDepth);
    }
    if let Some(damage) = detect_damage_point(curve, drop_fraction)? {
        if damage.depth_mm < d {
            return Err(AnalysisError::DamagedBeforeEval {
                damage_depth_mm: damage.depth_mm,
                eval_depth_mm: d,
            });
        }
    }
    let force = curve.interpolate_force(eval_depth)?;
    Ok(StiffnessNPerMm::new(force.value() / d)?)
}

/// Per-day stiffness summary of a harvest batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DayStats {
    pub day: u32,
    pub n: usize,
    pub mean_stiffness: f64,
    /// Sample standard deviation (n-1); `None` for a single fruit.
    pub sd_stiffness: Option<f64>,
}

/// One fruit excluded from the batch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFruit {
    pub id: String,
    pub day: u32,
    pub damage_depth_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub per_day: BTreeMap<u32, DayStats>,
    pub skipped: Vec<SkippedFruit>,
}

/// Group a harvest by measurement day and summarize stiffness at
/// `eval_depth`. Fruits damaged shallower than the evaluation depth are
/// reported in `skipped` instead of biasing the statistics; any other
/// per-fruit failure aborts the batch.
pub fn batch_stats(
    samples: &[FruitSample],
    eval_depth: DisplacementMm,
    drop_fraction: f64,
) -> Result<BatchOutcome, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptyBatch);
    }
    let mut per_day: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for fruit in samples {
        match estimate_stiffness(&fruit.curve, eval_depth, drop_fraction) {
            Ok(k) => per_day.entry(fruit.day).or_default().push(k.value()),
            Err(AnalysisError::DamagedBeforeEval {
                damage_depth_mm, ..
            }) => skipped.push(SkippedFruit {
                id: fruit.id.clone(),
                day: fruit.day,
                damage_depth_mm,
            }),
            Err(other) => return Err(other),
        }
    }
    let per_day = per_day
        .into_iter()
        .map(|(day, ks)| {
            let n = ks.len();
            let mean = ks.iter().sum::<f64>() / n as f64;
            let sd = (n > 1).then(|| {
                let ss: f64 = ks.iter().map(|k| (k - mean) * (k - mean)).sum();
                (ss / (n - 1) as f64).sqrt()
            });
            (
                day,
                DayStats {
                    day,
                    n,
                    mean_stiffness: mean,
                    sd_stiffness: sd,
                },
            )
        })
        .collect();
    Ok(BatchOutcome { per_day, skipped })
}

/// Windowed drift summary of a cyclic-loading run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftReport {
    pub n_cycles: u32,
    pub window_cycles: u32,
    pub force_peak_first_n: f64,
    pub force_peak_last_n: f64,
    /// Mean force peak of the last window minus the first window, N.
    pub force_peak_drift_n: f64,
    pub pressure_peak_first_kpa: f64,
    pub pressure_peak_last_kpa: f64,
    /// Mean pressure peak of the last window minus the first window, kPa.
    pub pressure_peak_drift_kpa: f64,
    /// Mean boundary-pressure excess over the setpoint in the first window,
    /// percent of the setpoint.
    pub residual_pct_first: f64,
    /// Same for the last window.
    pub residual_pct_last: f64,
    pub n_pressure_minima: usize,
}

/// Summarize peak drift and boundary residuals over a cyclic run.
///
/// Both traces are `(cycle, value)` pairs in sample order. Peaks and minima
/// are located on the value sequences, then averaged over the first and last
/// `window_cycles` cycles. Boundary residuals compare pressure minima, the
/// between-cycle returns to the commanded setpoint, against `target`.
pub fn drift_report(
    force_trace: &[(u32, f64)],
    pressure_trace: &[(u32, f64)],
    target: PressureKpa,
    window_cycles: u32,
) -> Result<DriftReport, AnalysisError> {
    if window_cycles == 0 {
        return Err(AnalysisError::ZeroWindow);
    }
    if target.value() == 0.0 {
        return Err(AnalysisError::ZeroTargetPressure);
    }
    if force_trace.len() != pressure_trace.len() {
        return Err(AnalysisError::TraceLengthMismatch {
            force: force_trace.len(),
            pressure: pressure_trace.len(),
        });
    }
    let forces: Vec<f64> = force_trace.iter().map(|&(_, v)| v).collect();
    let pressures: Vec<f64> = pressure_trace.iter().map(|&(_, v)| v).collect();

    let cycle_lo = pressure_trace.iter().map(|&(c, _)| c).min().unwrap_or(0);
    let cycle_hi = pressure_trace.iter().map(|&(c, _)| c).max().unwrap_or(0);
    let first_window = (cycle_lo, cycle_lo.saturating_add(window_cycles - 1));
    let last_window = (
        cycle_hi.saturating_sub(window_cycles - 1).max(cycle_lo),
        cycle_hi,
    );

    let force_peaks = find_peaks(&forces)?;
    if force_peaks.is_empty() {
        return Err(AnalysisError::NoExtrema {
            kind: "force peaks",
        });
    }
    let pressure_peaks = find_peaks(&pressures)?;
    if pressure_peaks.is_empty() {
        return Err(AnalysisError::NoExtrema {
            kind: "pressure peaks",
        });
    }
    let pressure_minima = find_minima(&pressures)?;
    if pressure_minima.is_empty() {
        return Err(AnalysisError::NoExtrema {
            kind: "pressure minima",
        });
    }

    let force_first = window_mean(&force_peaks, force_trace, first_window)
        .ok_or(AnalysisError::NoExtrema { kind: "force peaks" })?;
    let force_last = window_mean(&force_peaks, force_trace, last_window)
        .ok_or(AnalysisError::NoExtrema { kind: "force peaks" })?;
    let pressure_first = window_mean(&pressure_peaks, pressure_trace, first_window)
        .ok_or(AnalysisError::NoExtrema { kind: "pressure peaks" })?;
    let pressure_last = window_mean(&pressure_peaks, pressure_trace, last_window)
        .ok_or(AnalysisError::NoExtrema { kind: "pressure peaks" })?;
    let minima_first = window_mean(&pressure_minima, pressure_trace, first_window)
        .ok_or(AnalysisError::NoExtrema { kind: "pressure minima" })?;
    let minima_last = window_mean(&pressure_minima, pressure_trace, last_window)
        .ok_or(AnalysisError::NoExtrema { kind: "pressure minima" })?;

    let t = target.value();
    Ok(DriftReport {
        n_cycles: cycle_hi - cycle_lo + 1,
        window_cycles,
        force_peak_first_n: force_first,
        force_peak_last_n: force_last,
        force_peak_drift_n: force_last - force_first,
        pressure_peak_first_kpa: pressure_first,
        pressure_peak_last_kpa: pressure_last,
        pressure_peak_drift_kpa: pressure_last - pressure_first,
        residual_pct_first: (minima_first - t) / t * 100.0,
        residual_pct_last: (minima_last - t) / t * 100.0,
        n_pressure_minima: pressure_minima.len(),
    })
}

fn window_mean(indices: &[usize], trace: &[(u32, f64)], (lo, hi): (u32, u32)) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for &i in indices {
        let (cycle, value) = trace[i];
        if cycle >= lo && cycle <= hi {
            sum += value;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

pub mod synthetic {
    //! Deterministic stand-in data with pinned statistics.
    //!
    //! Used by the characterization workflow and by tests that need a batch
    //! whose per-day mean and standard deviation are known in advance.

    use crate::units::{DisplacementMm, ForceN, FruitSample, IndentationCurve};

    /// `n` stiffness values whose sample mean and sample standard deviation
    /// (n-1 form) equal `mean` and `sd` up to rounding.
    ///
    /// Values are an affine image of an equally spaced grid: the grid is
    /// centered and scaled to unit sample deviation, then mapped through
    /// `mean + sd * z`. No randomness is involved.
    pub fn stiffness_values(mean: f64, sd: f64, n: usize) -> Vec<f64> {
        assert!(n >= 2, "need at least two values to carry a deviation");
        assert!(sd >= 0.0 && sd.is_finite() && mean.is_finite());
        let center = (n - 1) as f64 / 2.0;
        let raw_ss: f64 = (0..n).map(|i| (i as f64 - center).powi(2)).sum();
        let scale = (raw_ss / (n - 1) as f64).sqrt();
        (0..n)
            .map(|i| mean + sd * (i as f64 - center) / scale)
            .collect()
    }

    fn curve_for(k: f64, damage_depth: Option<f64>) -> IndentationCurve {
        let mut points = Vec::new();
        let mut d = 0.0;
        while d <= 5.0 + 1e-9 {
            let force = match damage_depth {
                Some(dd) if d > dd + 1e-9 => {
                    // collapsed shell: well under the 15% damage threshold
                    k * dd * 0.55
                }
                _ => k * d,
            };
            points.push((
                DisplacementMm::new(d).unwrap(),
                ForceN::new(force).unwrap(),
            ));
            d += 0.5;
        }
        IndentationCurve::new(points).unwrap()
    }

    /// A pinned three-day harvest of ten fruits per day.
    ///
    /// Day 1 stiffness runs 5.41 +/- 1.36 N/mm, day 5 runs 3.94 +/- 1.32,
    /// day 9 runs 3.89 +/- 1.07 (sample statistics at a 3 mm evaluation
    /// depth). One fruit on days 1 and 5 and four fruits on day 9 carry a
    /// shell collapse at 4 mm, deeper than the evaluation depth, so none are
    /// excluded from the summary.
    pub fn reference_harvest() -> Vec<FruitSample> {
        let plan: [(u32, f64, f64, usize); 3] = [
            (1, 5.41, 1.36, 1),
            (5, 3.94, 1.32, 1),
            (9, 3.89, 1.07, 4),
        ];
        let mut fruits = Vec::new();
        for (day, mean, sd, damaged) in plan {
            let ks = stiffness_values(mean, sd, 10);
            for (i, k) in ks.iter().enumerate() {
                // damage the softest fruits of the day, collapse at 4 mm
                let damage = (i < damaged).then_some(4.0);
                let curve = curve_for(*k, damage);
                let fruit = FruitSample::new(
                    format!("d{day}-{i:02}"),
                    day,
                    60.0 + day as f64 * 0.5 + i as f64 * 0.4,
                    48.0 + day as f64 * 0.3 + i as f64 * 0.3,
                    88.0 + day as f64 * 0.8 + i as f64 * 1.1,
                    curve,
                )
                .unwrap();
                fruits.push(fruit);
            }
        }
        fruits
    }
}
