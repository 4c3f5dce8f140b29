//! Physics cell for the pressure-tunable twin.
//!
//! The model is deliberately small. Baseline chamber pressure sets contact
//! stiffness through the linear law `P = a*K + b`, so `K = (P - b) / a`.
//! Compressing the twin with a tool of area `A` sweeps chamber volume and
//! raises the instantaneous pressure isothermally:
//!
//! `P_inst = P_base * (V0 / (V0 - A*d))^n`
//!
//! Reaction force uses the baseline stiffness only, `F = K * d`, capped at
//! the damage depth where the shell buckles and the force plateaus. Optional
//! per-cycle drift and a one-shot settling offset model slow inflation creep;
//! optional Gaussian read noise models the pressure sensor. All randomness
//! comes from a seeded ChaCha8 stream so runs replay bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::units::{DisplacementMm, ForceN, PressureKpa, StiffnessNPerMm};

/// mm^3 per mL.
const MM3_PER_ML: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("parameter {field} is invalid: {value}")]
    InvalidParams { field: &'static str, value: f64 },
    #[error("baseline pressure {requested} kPa outside [{min}, {max}] kPa")]
    PressureOutOfRange { requested: f64, min: f64, max: f64 },
    #[error("compression sweeps {swept_ml} mL of a {volume_ml} mL chamber")]
    ChamberOverrun { swept_ml: f64, volume_ml: f64 },
}

/// Physical constants of one twin build plus its disturbance settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinParams {
    /// Pressure-stiffness slope `a`, kPa per (N/mm).
    pub slope_kpa: f64,
    /// Pressure-stiffness intercept `b`, kPa.
    pub intercept_kpa: f64,
    /// Lowest baseline pressure the chamber holds, kPa.
    pub p_min_kpa: f64,
    /// Highest baseline pressure the chamber holds, kPa.
    pub p_max_kpa: f64,
    /// Baseline pressure right after build, kPa.
    pub initial_pressure_kpa: f64,
    /// Unloaded chamber volume, mL.
    pub chamber_volume_ml: f64,
    /// Tool face area pressing on the twin, mm^2.
    pub contact_area_mm2: f64,
    /// Compression exponent `n`; 1 is isothermal ideal gas.
    pub chamber_exponent: f64,
    /// Depth at which the shell buckles and force plateaus, mm.
    pub damage_depth_mm: f64,
    /// Gaussian noise on pressure reads, kPa (0 disables).
    pub noise_sd_kpa: f64,
    /// Baseline creep added by each loading cycle, kPa.
    pub drift_kpa_per_cycle: f64,
    /// One-shot baseline shift applied when the chamber settles, kPa.
    pub settle_offset_kpa: f64,
}

impl Default for TwinParams {
    fn default() -> Self {
        Self {
            slope_kpa: 44.84,
            intercept_kpa: 11.37,
            p_min_kpa: 0.0,
            p_max_kpa: 145.89,
            initial_pressure_kpa: 100.0,
            chamber_volume_ml: 100.0,
            contact_area_mm2: 2000.0,
            chamber_exponent: 1.0,
            damage_depth_mm: 6.0,
            noise_sd_kpa: 0.0,
            drift_kpa_per_cycle: 0.0,
            settle_offset_kpa: 0.0,
        }
    }
}

impl TwinParams {
    fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("slope_kpa", self.slope_kpa),
            ("chamber_volume_ml", self.chamber_volume_ml),
            ("contact_area_mm2", self.contact_area_mm2),
            ("damage_depth_mm", self.damage_depth_mm),
        ];
        for (field, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(SimError::InvalidParams { field, value });
            }
        }
        let non_negative = [
            ("intercept_kpa", self.intercept_kpa),
            ("p_min_kpa", self.p_min_kpa),
            ("chamber_exponent", self.chamber_exponent),
            ("noise_sd_kpa", self.noise_sd_kpa),
        ];
        for (field, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(SimError::InvalidParams { field, value });
            }
        }
        for (field, value) in [
            ("drift_kpa_per_cycle", self.drift_kpa_per_cycle),
            ("settle_offset_kpa", self.settle_offset_kpa),
        ] {
            if !value.is_finite() {
                return Err(SimError::InvalidParams { field, value });
            }
        }
        if !self.p_max_kpa.is_finite() || self.p_max_kpa <= self.p_min_kpa {
            return Err(SimError::InvalidParams {
                field: "p_max_kpa",
                value: self.p_max_kpa,
            });
        }
        if !self.initial_pressure_kpa.is_finite()
            || self.initial_pressure_kpa < self.p_min_kpa
            || self.initial_pressure_kpa > self.p_max_kpa
        {
            return Err(SimError::InvalidParams {
                field: "initial_pressure_kpa",
                value: self.initial_pressure_kpa,
            });
        }
        Ok(())
    }
}

/// One simulated twin with its full mutable state.
#[derive(Debug, Clone)]
pub struct TwinSim {
    params: TwinParams,
    baseline_kpa: f64,
    compression_mm: f64,
    contact_area_mm2: f64,
    cycle_count: u32,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl TwinSim {
    pub fn new(params: TwinParams, seed: u64) -> Result<Self, SimError> {
        params.validate()?;
        let noise = if params.noise_sd_kpa > 0.0 {
            // sd checked finite and positive above
            Some(Normal::new(0.0, params.noise_sd_kpa).expect("validated sd"))
        } else {
            None
        };
        Ok(Self {
            baseline_kpa: params.initial_pressure_kpa,
            compression_mm: 0.0,
            contact_area_mm2: params.contact_area_mm2,
            cycle_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            params,
        })
    }

    pub fn params(&self) -> &TwinParams {
        &self.params
    }

    pub fn baseline_kpa(&self) -> f64 {
        self.baseline_kpa
    }

    pub fn compression_mm(&self) -> f64 {
        self.compression_mm
    }

    pub fn cycle_count(&self) -> u32 {
        self.cycle_count
    }

    pub fn contact_area_mm2(&self) -> f64 {
        self.contact_area_mm2
    }

    /// Stiffness the current baseline pressure produces, clamped at zero
    /// below the law's intercept (a slack membrane pushes back with nothing).
    pub fn stiffness(&self) -> StiffnessNPerMm {
        let k = ((self.baseline_kpa - self.params.intercept_kpa) / self.params.slope_kpa).max(0.0);
        StiffnessNPerMm::new(k).expect("clamped non-negative finite")
    }

    /// Instantaneous chamber pressure at the current compression, no noise.
    pub fn chamber_pressure_kpa(&self) -> f64 {
        let swept_ml = self.contact_area_mm2 * self.compression_mm / MM3_PER_ML;
        let ratio = self.params.chamber_volume_ml / (self.params.chamber_volume_ml - swept_ml);
        self.baseline_kpa * ratio.powf(self.params.chamber_exponent)
    }

    /// Sensor read of the chamber pressure: instantaneous value plus noise,
    /// clamped at zero (a gauge sensor cannot report below ambient).
    pub fn read_pressure(&mut self) -> PressureKpa {
        let p = self.chamber_pressure_kpa() + self.draw_noise();
        PressureKpa::new(p.max(0.0)).expect("clamped non-negative finite")
    }

    /// Sensor read of the axial reaction force at the current compression.
    pub fn read_force(&mut self) -> ForceN {
        let loaded = self.compression_mm.min(self.params.damage_depth_mm);
        let f = self.stiffness().value() * loaded;
        ForceN::new(f).expect("product of non-negative finite terms")
    }

    fn draw_noise(&mut self) -> f64 {
        match self.noise {
            Some(dist) => dist.sample(&mut self.rng),
            None => 0.0,
        }
    }

    /// Press the tool to `depth`. Fails if the sweep would exceed the chamber.
    pub fn set_compression(&mut self, depth: DisplacementMm) -> Result<(), SimError> {
        let swept_ml = self.contact_area_mm2 * depth.value() / MM3_PER_ML;
        if swept_ml >= self.params.chamber_volume_ml {
            return Err(SimError::ChamberOverrun {
                swept_ml,
                volume_ml: self.params.chamber_volume_ml,
            });
        }
        self.compression_mm = depth.value();
        Ok(())
    }

    /// Swap the tool face pressing on the twin.
    pub fn set_contact_area(&mut self, area_mm2: f64) -> Result<(), SimError> {
        if !area_mm2.is_finite() || area_mm2 <= 0.0 {
            return Err(SimError::InvalidParams {
                field: "contact_area_mm2",
                value: area_mm2,
            });
        }
        // the new face must still clear the chamber at the current depth
        let swept_ml = area_mm2 * self.compression_mm / MM3_PER_ML;
        if swept_ml >= self.params.chamber_volume_ml {
            return Err(SimError::ChamberOverrun {
                swept_ml,
                volume_ml: self.params.chamber_volume_ml,
            });
        }
        self.contact_area_mm2 = area_mm2;
        Ok(())
    }

    /// Jump the baseline to an absolute pressure inside the holding range.
    pub fn set_baseline_pressure(&mut self, pressure: PressureKpa) -> Result<(), SimError> {
        self.baseline_kpa = self.bounded(pressure.value())?;
        Ok(())
    }

    /// Shift the baseline by `delta_kpa`, as a pump stroke would.
    pub fn nudge_baseline(&mut self, delta_kpa: f64) -> Result<(), SimError> {
        if !delta_kpa.is_finite() {
            return Err(SimError::InvalidParams {
                field: "delta_kpa",
                value: delta_kpa,
            });
        }
        self.baseline_kpa = self.bounded(self.baseline_kpa + delta_kpa)?;
        Ok(())
    }

    /// Range check with a hair of slack, so a setpoint sitting exactly on a
    /// bound survives the float round trip through the pump arithmetic.
    fn bounded(&self, p: f64) -> Result<f64, SimError> {
        const SLACK_KPA: f64 = 1e-9;
        let (min, max) = (self.params.p_min_kpa, self.params.p_max_kpa);
        if p < min - SLACK_KPA || p > max + SLACK_KPA {
            return Err(SimError::PressureOutOfRange {
                requested: p,
                min,
                max,
            });
        }
        Ok(p.clamp(min, max))
    }

    /// Book a completed loading cycle: cycle creep moves the baseline.
    ///
    /// Creep is a material effect, not a commanded pressure, so it is allowed
    /// to push the baseline past the commanded holding range.
    pub fn apply_cycle_drift(&mut self) {
        self.baseline_kpa += self.params.drift_kpa_per_cycle;
        self.cycle_count += 1;
    }

    /// Apply the one-shot settling shift. Callers invoke this once after the
    /// chamber reaches its setpoint and before cyclic loading starts.
    pub fn settle(&mut self) {
        self.baseline_kpa += self.params.settle_offset_kpa;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sim() -> TwinSim {
        TwinSim::new(TwinParams::default(), 7).unwrap()
    }

    fn mm(v: f64) -> DisplacementMm {
        DisplacementMm::new(v).unwrap()
    }

    #[test]
    fn stiffness_follows_linear_law() {
        let mut s = sim();
        s.set_baseline_pressure(PressureKpa::new(101.05).unwrap()).unwrap();
        assert!((s.stiffness().value() - 2.0).abs() < 1e-12);
        s.set_baseline_pressure(PressureKpa::new(145.89).unwrap()).unwrap();
        assert!((s.stiffness().value() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_clamps_below_intercept() {
        let mut s = sim();
        s.set_baseline_pressure(PressureKpa::new(5.0).unwrap()).unwrap();
        assert_eq!(s.stiffness().value(), 0.0);
        s.set_compression(mm(2.0)).unwrap();
        assert_eq!(s.read_force().value(), 0.0);
    }

    #[test]
    fn force_is_linear_then_plateaus_at_damage_depth() {
        let mut s = sim();
        s.set_baseline_pressure(PressureKpa::new(101.05).unwrap()).unwrap();
        s.set_compression(mm(3.0)).unwrap();
        assert!((s.read_force().value() - 6.0).abs() < 1e-9);
        s.set_compression(mm(6.0)).unwrap();
        let at_damage = s.read_force().value();
        assert!((at_damage - 12.0).abs() < 1e-9);
        s.set_compression(mm(9.0)).unwrap();
        assert!((s.read_force().value() - at_damage).abs() < 1e-12);
    }

    #[test]
    fn compression_amplifies_chamber_pressure() {
        let mut s = sim();
        s.set_compression(mm(5.0)).unwrap();
        // 2000 mm^2 * 5 mm sweeps 10 of 100 mL: x100/90
        let expected = 100.0 * (100.0 / 90.0);
        assert!((s.chamber_pressure_kpa() - expected).abs() < 1e-9);
        assert!((s.read_pressure().value() - expected).abs() < 1e-9);
    }

    #[test]
    fn exponent_shapes_amplification() {
        let params = TwinParams {
            chamber_exponent: 1.4,
            ..TwinParams::default()
        };
        let mut s = TwinSim::new(params, 0).unwrap();
        s.set_compression(mm(5.0)).unwrap();
        let expected = 100.0 * (100.0f64 / 90.0).powf(1.4);
        assert!((s.chamber_pressure_kpa() - expected).abs() < 1e-9);
    }

    #[test]
    fn overrun_compression_is_rejected() {
        let mut s = sim();
        let err = s.set_compression(mm(50.0)).unwrap_err();
        assert!(matches!(err, SimError::ChamberOverrun { .. }));
        // state must be untouched after the rejection
        assert_eq!(s.compression_mm(), 0.0);
        s.set_compression(mm(49.0)).unwrap();
        assert!(s.set_contact_area(2100.0).is_err());
    }

    #[test]
    fn baseline_bounds_are_inclusive() {
        let mut s = sim();
        assert!(s.set_baseline_pressure(PressureKpa::new(145.89).unwrap()).is_ok());
        assert!(s.set_baseline_pressure(PressureKpa::new(145.9).unwrap()).is_err());
        assert!(s.nudge_baseline(-145.89).is_ok());
        assert_eq!(s.baseline_kpa(), 0.0);
        assert!(s.nudge_baseline(-0.01).is_err());
    }

    #[test]
    fn drift_accumulates_per_cycle_and_may_pass_p_max() {
        let params = TwinParams {
            drift_kpa_per_cycle: 0.0172,
            initial_pressure_kpa: 145.89,
            ..TwinParams::default()
        };
        let mut s = TwinSim::new(params, 0).unwrap();
        for _ in 0..50 {
            s.apply_cycle_drift();
        }
        assert_eq!(s.cycle_count(), 50);
        assert!((s.baseline_kpa() - 146.75).abs() < 1e-9);
    }

    #[test]
    fn settle_shifts_baseline_once_per_call() {
        let params = TwinParams {
            settle_offset_kpa: 0.79,
            ..TwinParams::default()
        };
        let mut s = TwinSim::new(params, 0).unwrap();
        s.settle();
        assert!((s.baseline_kpa() - 100.79).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let params = TwinParams {
            noise_sd_kpa: 0.1,
            ..TwinParams::default()
        };
        let mut a = TwinSim::new(params, 42).unwrap();
        let mut b = TwinSim::new(params, 42).unwrap();
        let mut c = TwinSim::new(params, 43).unwrap();
        let seq_a: Vec<f64> = (0..32).map(|_| a.read_pressure().value()).collect();
        let seq_b: Vec<f64> = (0..32).map(|_| b.read_pressure().value()).collect();
        let seq_c: Vec<f64> = (0..32).map(|_| c.read_pressure().value()).collect();
        assert_eq!(seq_a, seq_b);
        assert_ne!(seq_a, seq_c);
        assert!(seq_a.iter().any(|p| (p - 100.0).abs() > 1e-6));
    }

    #[test]
    fn zero_noise_reads_are_exact() {
        let mut s = sim();
        for _ in 0..10 {
            assert_eq!(s.read_pressure().value(), 100.0);
        }
    }

    #[test]
    fn noisy_reads_never_go_negative() {
        let params = TwinParams {
            initial_pressure_kpa: 0.5,
            noise_sd_kpa: 5.0,
            ..TwinParams::default()
        };
        let mut s = TwinSim::new(params, 9).unwrap();
        for _ in 0..2000 {
            assert!(s.read_pressure().value() >= 0.0);
        }
    }

    #[test]
    fn invalid_params_are_rejected() {
        let bad_slope = TwinParams {
            slope_kpa: 0.0,
            ..TwinParams::default()
        };
        assert!(matches!(
            TwinSim::new(bad_slope, 0),
            Err(SimError::InvalidParams { field: "slope_kpa", .. })
        ));
        let bad_range = TwinParams {
            p_max_kpa: -1.0,
            ..TwinParams::default()
        };
        assert!(TwinSim::new(bad_range, 0).is_err());
        let bad_initial = TwinParams {
            initial_pressure_kpa: 200.0,
            ..TwinParams::default()
        };
        assert!(TwinSim::new(bad_initial, 0).is_err());
    }

    proptest! {
        #[test]
        fn compression_never_lowers_pressure(depth in 0.0f64..40.0) {
            let mut s = sim();
            s.set_compression(mm(depth)).unwrap();
            prop_assert!(s.chamber_pressure_kpa() >= s.baseline_kpa() - 1e-12);
        }

        #[test]
        fn force_is_monotone_in_depth(d1 in 0.0f64..12.0, d2 in 0.0f64..12.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let mut s = sim();
            s.set_baseline_pressure(PressureKpa::new(123.47).unwrap()).unwrap();
            s.set_compression(mm(lo)).unwrap();
            let f_lo = s.read_force().value();
            s.set_compression(mm(hi)).unwrap();
            let f_hi = s.read_force().value();
            prop_assert!(f_hi >= f_lo - 1e-12);
        }

        #[test]
        fn pressure_round_trip_through_stiffness(p in 11.37f64..145.89) {
            let mut s = sim();
            s.set_baseline_pressure(PressureKpa::new(p).unwrap()).unwrap();
            let k = s.stiffness().value();
            let back = 44.84 * k + 11.37;
            prop_assert!((back - p).abs() < 1e-9);
        }
    }
}
