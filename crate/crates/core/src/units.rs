//! Scalar quantities and measurement records shared across the workspace.
//!
//! Every physical scalar is a validated newtype over `f64`. Constructors
//! reject non-finite input, and quantities that are physically signless
//! (pressure, force magnitude, displacement, stiffness) additionally reject
//! negative values. Pumped volume is signed: positive dispenses into the
//! chamber, negative withdraws.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("{quantity} must be finite, got {value}")]
    NotFinite { quantity: &'static str, value: f64 },
    #[error("{quantity} must be non-negative, got {value}")]
    Negative { quantity: &'static str, value: f64 },
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("indentation curve needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("indentation curve displacements must be strictly increasing at point {index}")]
    NonIncreasingDisplacement { index: usize },
    #[error("depth {depth} mm is outside the curve domain [{min} mm, {max} mm]")]
    OutsideCurveDomain { depth: f64, min: f64, max: f64 },
}

fn checked(quantity: &'static str, value: f64, signed: bool) -> Result<f64, UnitError> {
    if !value.is_finite() {
        return Err(UnitError::NotFinite { quantity, value });
    }
    if !signed && value < 0.0 {
        return Err(UnitError::Negative { quantity, value });
    }
    Ok(value)
}

macro_rules! quantity {
    ($(#[$doc:meta])* $name:ident, $label:literal, $unit:literal, signed: $signed:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
        pub struct $name(f64);

        impl $name {
            pub fn new(value: f64) -> Result<Self, UnitError> {
                checked($label, value, $signed).map(Self)
            }

            pub fn value(self) -> f64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $unit)
            }
        }
    };
}

quantity!(
    /// Gauge pressure in kilopascals.
    PressureKpa, "pressure", "kPa", signed: false
);
quantity!(
    /// Reaction force magnitude along the indentation axis, in newtons.
    ForceN, "force", "N", signed: false
);
quantity!(
    /// Displacement (indentation depth or travel) in millimetres.
    DisplacementMm, "displacement", "mm", signed: false
);
quantity!(
    /// Contact stiffness in newtons per millimetre.
    StiffnessNPerMm, "stiffness", "N/mm", signed: false
);
quantity!(
    /// Pumped air volume in millilitres. Positive dispenses, negative withdraws.
    VolumeMl, "volume", "mL", signed: true
);

/// One timestamped sensor record inside a protocol run.
///
/// Timestamps come from the run-local modeled clock, not wall time, so a
/// repeated run produces identical samples. Ordering (strictly increasing
/// timestamps, non-decreasing step indices) is enforced where samples are
/// collected, in `protocols::RunLog`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub timestamp_s: f64,
    pub step_index: u32,
    pub displacement: DisplacementMm,
    pub force: ForceN,
    pub pressure: PressureKpa,
}

/// Force-displacement curve from one indentation run.
///
/// Displacements are strictly increasing and start at or above zero; at
/// least two points are required so every query falls on a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct IndentationCurve {
    points: Vec<(DisplacementMm, ForceN)>,
}

impl IndentationCurve {
    pub fn new(points: Vec<(DisplacementMm, ForceN)>) -> Result<Self, UnitError> {
        if points.len() < 2 {
            return Err(UnitError::TooFewPoints(points.len()));
        }
        for (index, pair) in points.windows(2).enumerate() {
            if pair[1].0.value() <= pair[0].0.value() {
                return Err(UnitError::NonIncreasingDisplacement { index: index + 1 });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(DisplacementMm, ForceN)] {
        &self.points
    }

    /// Displacement domain covered by the curve, `(min, max)` in mm.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.points.first().unwrap().0.value(),
            self.points.last().unwrap().0.value(),
        )
    }

    /// Piecewise-linear force at `depth`.
    ///
    /// Exact at sample points (the stored value is returned, no arithmetic);
    /// queries outside the domain are an error rather than an extrapolation.
    pub fn interpolate_force(&self, depth: DisplacementMm) -> Result<ForceN, UnitError> {
        let d = depth.value();
        let (min, max) = self.domain();
        if d < min || d > max {
            return Err(UnitError::OutsideCurveDomain { depth: d, min, max });
        }
        let upper = self.points.partition_point(|(x, _)| x.value() < d);
        if upper < self.points.len() && self.points[upper].0.value() == d {
            return Ok(self.points[upper].1);
        }
        let (d0, f0) = self.points[upper - 1];
        let (d1, f1) = self.points[upper];
        let t = (d - d0.value()) / (d1.value() - d0.value());
        let f = f0.value() + t * (f1.value() - f0.value());
        ForceN::new(f)
    }
}

/// One fruit (or twin stand-in) with its indentation curve and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FruitSample {
    pub id: String,
    pub day: u32,
    pub axial_length_mm: f64,
    pub radial_length_mm: f64,
    pub mass_g: f64,
    pub curve: IndentationCurve,
}

impl FruitSample {
    pub fn new(
        id: impl Into<String>,
        day: u32,
        axial_length_mm: f64,
        radial_length_mm: f64,
        mass_g: f64,
        curve: IndentationCurve,
    ) -> Result<Self, UnitError> {
        for (field, value) in [
            ("axial_length_mm", axial_length_mm),
            ("radial_length_mm", radial_length_mm),
            ("mass_g", mass_g),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(UnitError::NonPositive { field, value });
            }
        }
        Ok(Self {
            id: id.into(),
            day,
            axial_length_mm,
            radial_length_mm,
            mass_g,
            curve,
        })
    }
}

/// Convenience constructor for curves in plain `(mm, N)` pairs.
pub fn curve_from_pairs(pairs: &[(f64, f64)]) -> Result<IndentationCurve, UnitError> {
    let mut points = Vec::with_capacity(pairs.len());
    for &(d, f) in pairs {
        points.push((DisplacementMm::new(d)?, ForceN::new(f)?));
    }
    IndentationCurve::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite_and_negative_quantities() {
        assert!(PressureKpa::new(f64::NAN).is_err());
        assert!(PressureKpa::new(f64::INFINITY).is_err());
        assert!(PressureKpa::new(-1.0).is_err());
        assert!(ForceN::new(-0.001).is_err());
        assert!(DisplacementMm::new(f64::NEG_INFINITY).is_err());
        assert!(StiffnessNPerMm::new(-2.0).is_err());
        assert!(VolumeMl::new(f64::NAN).is_err());
        // signed quantity admits negatives
        assert_eq!(VolumeMl::new(-0.5).unwrap().value(), -0.5);
        assert_eq!(PressureKpa::new(0.0).unwrap().value(), 0.0);
    }

    #[test]
    fn interpolates_two_point_curve() {
        let curve = curve_from_pairs(&[(0.0, 0.0), (3.0, 6.0)]).unwrap();
        let at_end = curve
            .interpolate_force(DisplacementMm::new(3.0).unwrap())
            .unwrap();
        assert_eq!(at_end.value(), 6.0);
        let mid = curve
            .interpolate_force(DisplacementMm::new(1.5).unwrap())
            .unwrap();
        assert!((mid.value() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interpolates_interior_segment() {
        // hand-computed: between (2,4) and (4,12) at d=3 -> 4 + 8*(1/2) = 8
        let curve = curve_from_pairs(&[(0.0, 0.0), (2.0, 4.0), (4.0, 12.0)]).unwrap();
        let f = curve
            .interpolate_force(DisplacementMm::new(3.0).unwrap())
            .unwrap();
        assert!((f.value() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_out_of_range_names_domain() {
        let curve = curve_from_pairs(&[(0.5, 1.0), (3.0, 6.0)]).unwrap();
        let err = curve
            .interpolate_force(DisplacementMm::new(3.5).unwrap())
            .unwrap_err();
        match err {
            UnitError::OutsideCurveDomain { depth, min, max } => {
                assert_eq!(depth, 3.5);
                assert_eq!(min, 0.5);
                assert_eq!(max, 3.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(curve
            .interpolate_force(DisplacementMm::new(0.25).unwrap())
            .is_err());
    }

    #[test]
    fn curve_construction_validates_shape() {
        assert!(matches!(
            curve_from_pairs(&[(0.0, 0.0)]),
            Err(UnitError::TooFewPoints(1))
        ));
        assert!(matches!(
            curve_from_pairs(&[(0.0, 0.0), (1.0, 2.0), (1.0, 3.0)]),
            Err(UnitError::NonIncreasingDisplacement { index: 2 })
        ));
        assert!(matches!(
            curve_from_pairs(&[(2.0, 0.0), (1.0, 2.0)]),
            Err(UnitError::NonIncreasingDisplacement { index: 1 })
        ));
    }

    #[test]
    fn fruit_sample_requires_positive_metadata() {
        let curve = curve_from_pairs(&[(0.0, 0.0), (3.0, 6.0)]).unwrap();
        assert!(FruitSample::new("k1", 1, 64.0, 52.0, 92.0, curve.clone()).is_ok());
        assert!(FruitSample::new("k1", 1, 0.0, 52.0, 92.0, curve.clone()).is_err());
        assert!(FruitSample::new("k1", 1, 64.0, -1.0, 92.0, curve.clone()).is_err());
        assert!(FruitSample::new("k1", 1, 64.0, 52.0, f64::NAN, curve).is_err());
    }

    fn arb_curve() -> impl Strategy<Value = IndentationCurve> {
        (2usize..12)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.01f64..2.0, n),
                    proptest::collection::vec(0.0f64..30.0, n),
                )
            })
            .prop_map(|(steps, forces)| {
                let mut d = 0.0;
                let mut points = Vec::new();
                for (dd, f) in steps.into_iter().zip(forces) {
                    d += dd;
                    points.push((
                        DisplacementMm::new(d).unwrap(),
                        ForceN::new(f).unwrap(),
                    ));
                }
                IndentationCurve::new(points).unwrap()
            })
    }

    proptest! {
        #[test]
        fn interpolation_is_exact_at_samples(curve in arb_curve()) {
            for (d, f) in curve.points() {
                let got = curve.interpolate_force(*d).unwrap();
                prop_assert_eq!(got.value(), f.value());
            }
        }

        #[test]
        fn interpolation_stays_between_segment_endpoints(
            curve in arb_curve(),
            t in 0.0f64..1.0,
        ) {
            let points = curve.points();
            for pair in points.windows(2) {
                let (d0, f0) = pair[0];
                let (d1, f1) = pair[1];
                let d = d0.value() + t * (d1.value() - d0.value());
                let f = curve
                    .interpolate_force(DisplacementMm::new(d).unwrap())
                    .unwrap()
                    .value();
                let (lo, hi) = if f0.value() <= f1.value() {
                    (f0.value(), f1.value())
                } else {
                    (f1.value(), f0.value())
                };
                prop_assert!(f >= lo - 1e-9 && f <= hi + 1e-9);
            }
        }

        #[test]
        fn in_domain_queries_always_succeed(curve in arb_curve(), t in 0.0f64..=1.0) {
            let (min, max) = curve.domain();
            let d = min + t * (max - min);
            prop_assert!(curve.interpolate_force(DisplacementMm::new(d).unwrap()).is_ok());
        }
    }
}
