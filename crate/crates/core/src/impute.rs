//! Null-imputed potential-outcome schedules.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EffectSpec, Schedule};
use crate::error::Result;

/// How the unobserved side of the schedule is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputationVariant {
    /// Fill the missing potential outcome of every unit from the hypothesized effect.
    #[default]
    BothSides,
    /// Adjust outcomes to the control scale, `y - w·τ`, and treat them as effect-free.
    ControlBaseline,
    /// Adjust outcomes to the treated scale, `y + (1 - w)·τ`, and treat them as effect-free.
    TreatedBaseline,
}

/// Impute the full schedule implied by the sharp null `e`.
///
/// Treated units keep `y1 = y` and get `y0 = y - τ`; control units keep
/// `y0 = y` and get `y1 = y + τ`.
pub fn impute_schedule(d: &Dataset, e: &EffectSpec) -> Result<Schedule> {
    e.validate(d.n())?;
    let (mut y0, mut y1) = (Vec::with_capacity(d.n()), Vec::with_capacity(d.n()));
    for (i, u) in d.units().iter().enumerate() {
        let tau = e.get(i);
        if u.treated {
            y0.push(u.y - tau);
            y1.push(u.y);
        } else {
            y0.push(u.y);
            y1.push(u.y + tau);
        }
    }
    Schedule::new(y0, y1)
}

pub fn impute_variant(d: &Dataset, e: &EffectSpec, v: ImputationVariant) -> Result<Schedule> {
    match v {
        ImputationVariant::BothSides => impute_schedule(d, e),
        ImputationVariant::ControlBaseline | ImputationVariant::TreatedBaseline => {
            e.validate(d.n())?;
            let adjusted: Vec<f64> = d
                .units()
                .iter()
                .enumerate()
                .map(|(i, u)| match (v, u.treated) {
                    (ImputationVariant::ControlBaseline, true) => u.y - e.get(i),
                    (ImputationVariant::TreatedBaseline, false) => u.y + e.get(i),
                    _ => u.y,
                })
                .collect();
            Schedule::new(adjusted.clone(), adjusted)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compare_schedules, ScheduleOrdering};
    use crate::error::Error;
    use crate::testdata::table1;
    use proptest::prelude::*;

    fn per_unit_null() -> EffectSpec {
        let mut tau = vec![0.0; 16];
        tau[1] = -2.0;
        tau[11] = -1.0;
        EffectSpec::PerUnit(tau)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn no_effect_null_copies_outcomes() {
        let d = table1();
        let s = impute_schedule(&d, &EffectSpec::zero()).unwrap();
        assert_eq!(s.y0(), d.outcomes().as_slice());
        assert_eq!(s.y1(), d.outcomes().as_slice());
        assert!(s.is_effect_free());
    }

    #[test]
    fn constant_minus_one() {
        let d = table1();
        let s = impute_schedule(&d, &EffectSpec::Constant(-1.0)).unwrap();
        // unit 9 (treated, 2.98): imputed control outcome 3.98
        assert!(close(s.y0()[8], 3.98));
        assert_eq!(s.y1()[8], 2.98);
        // unit 1 (control, -0.90): imputed treated outcome -1.90
        assert!(close(s.y1()[0], -1.90));
        assert!(close(s.y1()[6], -0.29));
    }

    #[test]
    fn imputes_per_unit_nonsuperiority() {
        let d = table1();
        let s = impute_schedule(&d, &per_unit_null()).unwrap();
        assert!(close(s.y1()[1], -1.82));
        assert!(close(s.y0()[11], 2.98));
        assert_eq!(s.y1()[2], 1.59);
    }

    #[test]
    fn length_mismatch() {
        let d = table1();
        assert!(matches!(
            impute_schedule(&d, &EffectSpec::PerUnit(vec![0.0; 3])),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            impute_variant(&d, &EffectSpec::PerUnit(vec![0.0; 3]), ImputationVariant::ControlBaseline),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn variants_collapse_at_zero() {
        let d = table1();
        let base = impute_schedule(&d, &EffectSpec::zero()).unwrap();
        for v in [ImputationVariant::ControlBaseline, ImputationVariant::TreatedBaseline] {
            assert_eq!(impute_variant(&d, &EffectSpec::zero(), v).unwrap(), base);
        }
    }

    #[test]
    fn variant_columns() {
        let d = table1();
        let e = per_unit_null();
        let c = impute_variant(&d, &e, ImputationVariant::ControlBaseline).unwrap();
        assert!(close(c.y0()[11], 2.98));
        assert_eq!(c.y0()[1], 0.18);
        assert_eq!(c.y0(), c.y1());
        let t = impute_variant(&d, &e, ImputationVariant::TreatedBaseline).unwrap();
        assert!(close(t.y1()[1], -1.82));
        assert_eq!(t.y1()[11], 1.98);
    }

    fn dataset_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (3usize..14).prop_flat_map(|n| {
            (
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(0.0f64..3.0, n),
            )
                .prop_filter("both arms", |(w, ..)| w.iter().any(|&t| t) && w.iter().any(|&t| !t))
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_effects((w, y, tau, bump) in dataset_strategy()) {
            let d = Dataset::from_arrays(&w, &y).unwrap();
            let e = EffectSpec::PerUnit(tau.clone());
            let s = impute_schedule(&d, &e).unwrap();
            let realized = s.realized(&w);
            for i in 0..y.len() {
                prop_assert_eq!(realized[i].to_bits(), y[i].to_bits());
                let t = s.tau()[i];
                prop_assert!((t - tau[i]).abs() <= 1e-12 * (1.0 + y[i].abs()));
            }

            let larger: Vec<f64> = tau.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let s2 = impute_schedule(&d, &EffectSpec::PerUnit(larger)).unwrap();
            let ord = compare_schedules(&s, &s2).unwrap();
            prop_assert!(matches!(ord, ScheduleOrdering::LessOrEqual | ScheduleOrdering::Equal));
            for (a, b) in s.tau().iter().zip(s2.tau()) {
                prop_assert!(*a <= b);
            }
        }
    }
}
