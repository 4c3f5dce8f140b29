//! Fitting and inverting the pressure-stiffness law.
//!
//! A pressure sweep produces `(stiffness, pressure)` pairs. Ordinary least
//! squares on those pairs yields the forward law `P = a*K + b`; tuning runs
//! invert it to find the pressure that realizes a stiffness target. Both
//! directions carry the fitted domain along, so predictions flag when they
//! leave the region the sweep actually covered.

use thiserror::Error;

use crate::units::{PressureKpa, StiffnessNPerMm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least 2 sweep points to fit, got {0}")]
    TooFewPoints(usize),
    #[error("sweep points share one stiffness value, the law is unidentifiable")]
    DegenerateInputs,
    #[error("fitted slope {slope} kPa/(N/mm) is not positive, pressurizing must stiffen")]
    SlopeNotPositive { slope: f64 },
    #[error("query {value} lies outside the calibrated range [{lo}, {hi}] plus margin")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },
    #[error("prediction {value} is not a physical quantity")]
    NonPhysical { value: f64 },
    #[error("accuracy is undefined for a zero stiffness target")]
    ZeroTarget,
    #[error("model field {field} is invalid: {value}")]
    InvalidModel { field: &'static str, value: f64 },
}

/// One sweep observation: measured stiffness at a held baseline pressure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub stiffness: StiffnessNPerMm,
    pub pressure: PressureKpa,
}

/// A prediction plus whether it sits outside the fitted range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub value: T,
    /// True when the query was beyond the sweep range but inside the
    /// tolerated margin; callers surface this as a warning.
    pub extrapolated: bool,
}

/// Fitted linear law `P = slope * K + intercept` with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    k_domain: (f64, f64),
    p_domain: (f64, f64),
    n_points: usize,
}

impl CalibrationModel {
    /// Least-squares fit of pressure on stiffness.
    pub fn fit(points: &[CalibrationPoint]) -> Result<Self, CalibrationError> {
        if points.len() < 2 {
            return Err(CalibrationError::TooFewPoints(points.len()));
        }
        let n = points.len() as f64;
        let mean_k = points.iter().map(|p| p.stiffness.value()).sum::<f64>() / n;
        let mean_p = points.iter().map(|p| p.pressure.value()).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for point in points {
            let dk = point.stiffness.value() - mean_k;
            let dp = point.pressure.value() - mean_p;
            sxx += dk * dk;
            sxy += dk * dp;
        }
        if sxx == 0.0 {
            return Err(CalibrationError::DegenerateInputs);
        }
        let slope = sxy / sxx;
        if slope <= 0.0 {
            return Err(CalibrationError::SlopeNotPositive { slope });
        }
        let intercept = mean_p - slope * mean_k;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for point in points {
            let fitted = slope * point.stiffness.value() + intercept;
            let res = point.pressure.value() - fitted;
            let dev = point.pressure.value() - mean_p;
            ss_res += res * res;
            ss_tot += dev * dev;
        }
        let r_squared = if ss_tot > 0.0 {
            (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let k_domain = domain(points.iter().map(|p| p.stiffness.value()));
        let p_domain = domain(points.iter().map(|p| p.pressure.value()));
        Ok(Self {
            slope,
            intercept,
            r_squared,
            k_domain,
            p_domain,
            n_points: points.len(),
        })
    }

    /// Rebuild a model from stored fields, e.g. a calibration file.
    pub fn from_parts(
        slope: f64,
        intercept: f64,
        r_squared: f64,
        k_domain: (f64, f64),
        p_domain: (f64, f64),
        n_points: usize,
    ) -> Result<Self, CalibrationError> {
        if !slope.is_finite() || slope <= 0.0 {
            return Err(CalibrationError::SlopeNotPositive { slope });
        }
        if !intercept.is_finite() {
            return Err(CalibrationError::InvalidModel {
                field: "intercept",
                value: intercept,
            });
        }
        if !r_squared.is_finite() || !(0.0..=1.0).contains(&r_squared) {
            return Err(CalibrationError::InvalidModel {
                field: "r_squared",
                value: r_squared,
            });
        }
        for (field, (lo, hi)) in [("k_domain", k_domain), ("p_domain", p_domain)] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(CalibrationError::InvalidModel { field, value: lo });
            }
        }
        Ok(Self {
            slope,
            intercept,
            r_squared,
            k_domain,
            p_domain,
            n_points,
        })
    }

    pub fn slope_kpa_per_stiffness(&self) -> f64 {
        self.slope
    }

    pub fn intercept_kpa(&self) -> f64 {
        self.intercept
    }

    pub fn r_squared(&self) -> f64 {
        self.r_squared
    }

    /// Stiffness range the sweep covered, `(min, max)` in N/mm.
    pub fn stiffness_domain(&self) -> (f64, f64) {
        self.k_domain
    }

    /// Pressure range the sweep covered, `(min, max)` in kPa.
    pub fn pressure_domain(&self) -> (f64, f64) {
        self.p_domain
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Baseline pressure that realizes `target` under the fitted law.
    ///
    /// Targets inside the sweep range pass cleanly; targets within
    /// `margin_frac` of the range (as a fraction of its width) pass with the
    /// extrapolation flag set; anything further out is refused.
    pub fn required_pressure(
        &self,
        target: StiffnessNPerMm,
        margin_frac: f64,
    ) -> Result<Prediction<PressureKpa>, CalibrationError> {
        let k = target.value();
        let extrapolated = self.check_domain(k, self.k_domain, margin_frac)?;
        let p = self.slope * k + self.intercept;
        let value = PressureKpa::new(p)
            .map_err(|_| CalibrationError::NonPhysical { value: p })?;
        Ok(Prediction { value, extrapolated })
    }

    /// Stiffness the fitted law assigns to a held baseline pressure.
    pub fn predicted_stiffness(
        &self,
        pressure: PressureKpa,
        margin_frac: f64,
    ) -> Result<Prediction<StiffnessNPerMm>, CalibrationError> {
        let p = pressure.value();
        let extrapolated = self.check_domain(p, self.p_domain, margin_frac)?;
        let k = (p - self.intercept) / self.slope;
        let value = StiffnessNPerMm::new(k)
            .map_err(|_| CalibrationError::NonPhysical { value: k })?;
        Ok(Prediction { value, extrapolated })
    }

    /// Mean squared residual of the fitted law over `points`, kPa^2.
    pub fn mean_squared_error(&self, points: &[CalibrationPoint]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let sum: f64 = points
            .iter()
            .map(|p| {
                let res = p.pressure.value() - (self.slope * p.stiffness.value() + self.intercept);
                res * res
            })
            .sum();
        sum / points.len() as f64
    }

    fn check_domain(
        &self,
        value: f64,
        (lo, hi): (f64, f64),
        margin_frac: f64,
    ) -> Result<bool, CalibrationError> {
        let margin = margin_frac.max(0.0) * (hi - lo);
        if value < lo - margin || value > hi + margin {
            return Err(CalibrationError::OutsideDomain { value, lo, hi });
        }
        Ok(value < lo || value > hi)
    }
}

/// Percent agreement between a stiffness target and what the twin realized,
/// `100 * (1 - |achieved - target| / target)`.
pub fn tuning_accuracy_pct(
    target: StiffnessNPerMm,
    achieved: StiffnessNPerMm,
) -> Result<f64, CalibrationError> {
    if target.value() == 0.0 {
        return Err(CalibrationError::ZeroTarget);
    }
    Ok(100.0 * (1.0 - (achieved.value() - target.value()).abs() / target.value()))
}

fn domain(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(k: f64, p: f64) -> CalibrationPoint {
        CalibrationPoint {
            stiffness: StiffnessNPerMm::new(k).unwrap(),
            pressure: PressureKpa::new(p).unwrap(),
        }
    }

    fn law_points() -> Vec<CalibrationPoint> {
        // ten levels of the reference law, no noise
        (0..10)
            .map(|i| {
                let p = 100.0 + 5.0 * i as f64;
                point((p - 11.37) / 44.84, p)
            })
            .collect()
    }

    #[test]
    fn exact_law_is_recovered_exactly() {
        let model = CalibrationModel::fit(&law_points()).unwrap();
        assert!((model.slope_kpa_per_stiffness() - 44.84).abs() < 1e-9);
        assert!((model.intercept_kpa() - 11.37).abs() < 1e-9);
        assert!((model.r_squared() - 1.0).abs() < 1e-12);
        assert_eq!(model.n_points(), 10);
        assert!(model.mean_squared_error(&law_points()) < 1e-18);
    }

    #[test]
    fn inversion_hits_reference_setpoints() {
        let model = CalibrationModel::fit(&law_points()).unwrap();
        for (k, expected) in [(2.0, 101.05), (2.5, 123.47), (3.0, 145.89)] {
            let pred = model
                .required_pressure(StiffnessNPerMm::new(k).unwrap(), 0.02)
                .unwrap();
            assert!(
                (pred.value.value() - expected).abs() < 1e-9,
                "target {k}: got {}",
                pred.value
            );
        }
    }

    #[test]
    fn extrapolation_is_flagged_inside_margin_and_refused_beyond() {
        let model = CalibrationModel::fit(&law_points()).unwrap();
        let (k_lo, k_hi) = model.stiffness_domain();
        assert!((k_lo - (100.0 - 11.37) / 44.84).abs() < 1e-12);
        assert!((k_hi - (145.0 - 11.37) / 44.84).abs() < 1e-12);

        let inside = model
            .required_pressure(StiffnessNPerMm::new(2.5).unwrap(), 0.02)
            .unwrap();
        assert!(!inside.extrapolated);

        // 3.0 clears the top of the sweep but stays inside the 2% margin
        let fringe = model
            .required_pressure(StiffnessNPerMm::new(3.0).unwrap(), 0.02)
            .unwrap();
        assert!(fringe.extrapolated);

        let err = model
            .required_pressure(StiffnessNPerMm::new(3.1).unwrap(), 0.02)
            .unwrap_err();
        assert!(matches!(err, CalibrationError::OutsideDomain { .. }));

        // zero margin refuses 3.0 outright
        assert!(model
            .required_pressure(StiffnessNPerMm::new(3.0).unwrap(), 0.0)
            .is_err());
    }

    #[test]
    fn forward_prediction_inverts_the_law() {
        let model = CalibrationModel::fit(&law_points()).unwrap();
        let pred = model
            .predicted_stiffness(PressureKpa::new(123.47).unwrap(), 0.02)
            .unwrap();
        assert!((pred.value.value() - 2.5).abs() < 1e-9);
        assert!(model
            .predicted_stiffness(PressureKpa::new(50.0).unwrap(), 0.02)
            .is_err());
    }

    #[test]
    fn degenerate_and_short_inputs_are_refused() {
        assert!(matches!(
            CalibrationModel::fit(&[point(2.0, 101.0)]),
            Err(CalibrationError::TooFewPoints(1))
        ));
        assert!(matches!(
            CalibrationModel::fit(&[point(2.0, 101.0), point(2.0, 105.0)]),
            Err(CalibrationError::DegenerateInputs)
        ));
        // softening with pressure contradicts the law
        assert!(matches!(
            CalibrationModel::fit(&[point(2.0, 120.0), point(3.0, 100.0)]),
            Err(CalibrationError::SlopeNotPositive { .. })
        ));
    }

    #[test]
    fn accuracy_formula_matches_hand_values() {
        let t = StiffnessNPerMm::new(2.5).unwrap();
        let same = tuning_accuracy_pct(t, t).unwrap();
        assert!((same - 100.0).abs() < 1e-12);
        let off = tuning_accuracy_pct(t, StiffnessNPerMm::new(2.565).unwrap()).unwrap();
        assert!((off - 97.4).abs() < 1e-9);
        assert!(matches!(
            tuning_accuracy_pct(StiffnessNPerMm::new(0.0).unwrap(), t),
            Err(CalibrationError::ZeroTarget)
        ));
    }

    #[test]
    fn from_parts_validates_fields() {
        assert!(CalibrationModel::from_parts(
            44.84,
            11.37,
            0.9916,
            (1.98, 2.98),
            (100.0, 145.0),
            10
        )
        .is_ok());
        assert!(CalibrationModel::from_parts(-1.0, 11.37, 0.99, (1.0, 2.0), (1.0, 2.0), 5).is_err());
        assert!(CalibrationModel::from_parts(44.84, 11.37, 1.5, (1.0, 2.0), (1.0, 2.0), 5).is_err());
        assert!(CalibrationModel::from_parts(44.84, 11.37, 0.99, (2.0, 1.0), (1.0, 2.0), 5).is_err());
    }

    proptest! {
        #[test]
        fn affine_data_is_recovered(
            slope in 1.0f64..200.0,
            intercept in 0.0f64..50.0,
            ks in proptest::collection::btree_set(1u32..1000, 2..20),
        ) {
            let points: Vec<CalibrationPoint> = ks
                .iter()
                .map(|&k| {
                    let k = k as f64 / 100.0;
                    point(k, slope * k + intercept)
                })
                .collect();
            let model = CalibrationModel::fit(&points).unwrap();
            prop_assert!((model.slope_kpa_per_stiffness() - slope).abs() / slope < 1e-9);
            prop_assert!((model.intercept_kpa() - intercept).abs() < 1e-6);
            prop_assert!(model.r_squared() > 1.0 - 1e-9);
        }

        #[test]
        fn round_trip_target_to_pressure_and_back(target in 2.0f64..2.98) {
            let model = CalibrationModel::fit(&law_points()).unwrap();
            let t = StiffnessNPerMm::new(target).unwrap();
            let p = model.required_pressure(t, 0.0).unwrap().value;
            let back = model.predicted_stiffness(p, 0.02).unwrap().value;
            prop_assert!((back.value() - target).abs() < 1e-9);
        }
    }
}
