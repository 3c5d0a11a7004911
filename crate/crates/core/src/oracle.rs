//! Brute-force reference implementations used to cross-check the optimized
//! statistics and reference distributions. Everything here is written
//! independently of `stats` and `refdist` and is only practical for small `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Design, EffectSpec, Schedule};
use crate::error::{Error, Result};
use crate::refdist::{PValue, Tail};
use crate::stats::{evaluate, Scaling, StatValue, StatisticSpec};

/// Largest `n` accepted by [`stephenson_subset_count`].
pub const MAX_SUBSET_N: usize = 20;
/// Largest assignment space accepted by [`exhaustive_p`].
pub const MAX_ASSIGNMENTS: u64 = 1_000_000;
/// Budget on statistic evaluations times per-evaluation subset count.
const MAX_WORK: u64 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub case: String,
    pub optimized: f64,
    pub oracle: f64,
    pub agree: bool,
    pub discrepancy: f64,
    /// First ordering violation found by [`ei_property_check`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<EiWitness>,
}

/// Two schedules with `a ⪯ b` and an assignment on which the statistic decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiWitness {
    pub statistic: String,
    pub w: Vec<bool>,
    pub a_y0: Vec<f64>,
    pub a_y1: Vec<f64>,
    pub b_y0: Vec<f64>,
    pub b_y1: Vec<f64>,
    pub t_a: f64,
    pub t_b: f64,
}

fn realized(w: &[bool], s: &Schedule) -> Vec<f64> {
    (0..w.len()).map(|i| if w[i] { s.y1()[i] } else { s.y0()[i] }).collect()
}

fn count_choose(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let mut r: u64 = 1;
    for i in 0..k.min(n - k) {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Number of size-`subset` index sets whose largest realized outcome (ties
/// included) belongs to a treated unit, by listing every subset.
pub fn stephenson_subset_count(w: &[bool], s: &Schedule, subset: usize) -> Result<StatValue> {
    let n = w.len();
    if n > MAX_SUBSET_N {
        return Err(Error::TooLargeForOracle(format!("{n} units exceed the subset oracle limit of {MAX_SUBSET_N}")));
    }
    if subset < 2 || subset > n {
        return Err(Error::SubsetSizeOutOfRange { size: subset, n });
    }
    Ok(subset_count(&realized(w, s), w, subset))
}

fn subset_count(y: &[f64], w: &[bool], subset: usize) -> StatValue {
    let n = y.len();
    let mut count: i128 = 0;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != subset {
            continue;
        }
        let mut top = f64::NEG_INFINITY;
        for i in 0..n {
            if mask >> i & 1 == 1 && y[i] > top {
                top = y[i];
            }
        }
        let hit = (0..n).any(|i| mask >> i & 1 == 1 && w[i] && y[i] == top);
        count += hit as i128;
    }
    StatValue {
        value: count as f64,
        exact: Some(count),
    }
}

/// Naive statistic evaluation from realized outcomes.
fn naive_stat(stat: &StatisticSpec, w: &[bool], y: &[f64]) -> Result<StatValue> {
    let n = y.len();
    let treated: Vec<f64> = (0..n).filter(|&i| w[i]).map(|i| y[i]).collect();
    let control: Vec<f64> = (0..n).filter(|&i| !w[i]).map(|i| y[i]).collect();
    let mean = |v: &[f64]| -> Result<f64> {
        if v.is_empty() {
            return Err(Error::EmptyArm);
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    };
    match stat {
        StatisticSpec::DiffMeans => Ok(StatValue {
            value: mean(&treated)? - mean(&control)?,
            exact: None,
        }),
        StatisticSpec::ThresholdProportion { cutoff } => {
            let above = |v: &[f64]| -> Result<f64> {
                let flags: Vec<f64> = v.iter().map(|&x| if x > *cutoff { 1.0 } else { 0.0 }).collect();
                mean(&flags)
            };
            Ok(StatValue {
                value: above(&treated)? - above(&control)?,
                exact: None,
            })
        }
        StatisticSpec::ScoredSum { score, a, b } => {
            let scale = |v: &[f64], sc: &Scaling| -> Result<f64> {
                let scored: Vec<f64> = v.iter().map(|&x| score.apply(x)).collect();
                match sc {
                    Scaling::ArmMean => mean(&scored),
                    Scaling::Fixed(c) => Ok(c * scored.iter().sum::<f64>()),
                }
            };
            Ok(StatValue {
                value: scale(&treated, a)? - scale(&control, b)?,
                exact: None,
            })
        }
        StatisticSpec::RankSum => {
            // doubled mid-rank of unit i: 2·#{y_j < y_i} + #{y_j = y_i} + 1
            let mut doubled: i128 = 0;
            for i in (0..n).filter(|&i| w[i]) {
                let less = y.iter().filter(|&&v| v < y[i]).count() as i128;
                let equal = y.iter().filter(|&&v| v == y[i]).count() as i128;
                doubled += 2 * less + equal + 1;
            }
            Ok(StatValue {
                value: doubled as f64 / 2.0,
                exact: Some(doubled),
            })
        }
        StatisticSpec::Stephenson { subset } => {
            if *subset < 2 || *subset > n {
                return Err(Error::SubsetSizeOutOfRange { size: *subset, n });
            }
            if n > MAX_SUBSET_N {
                return Err(Error::TooLargeForOracle(format!("{n} units")));
            }
            Ok(subset_count(y, w, *subset))
        }
        StatisticSpec::WelchT => {
            if treated.len() < 2 || control.len() < 2 {
                return Err(Error::ArmTooSmall);
            }
            let var = |v: &[f64]| -> Result<f64> {
                let m = mean(v)?;
                Ok(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
            };
            let se2 = var(&treated)? / treated.len() as f64 + var(&control)? / control.len() as f64;
            if se2 <= 0.0 {
                return Err(Error::ZeroVariance);
            }
            Ok(StatValue {
                value: (mean(&treated)? - mean(&control)?) / se2.sqrt(),
                exact: None,
            })
        }
    }
}

/// Every admissible assignment, generated by scanning bitmasks.
fn naive_assignments(design: &Design) -> Result<Vec<Vec<bool>>> {
    match design {
        Design::Complete { n, n_treated } => {
            if *n > 20 {
                return Err(Error::TooLargeForOracle(format!("{n} units")));
            }
            Ok((0u32..(1u32 << n))
                .filter(|m| m.count_ones() as usize == *n_treated)
                .map(|m| (0..*n).map(|i| m >> i & 1 == 1).collect())
                .collect())
        }
        Design::Paired { n, pairs } => {
            if pairs.len() > 20 {
                return Err(Error::TooLargeForOracle(format!("{} pairs", pairs.len())));
            }
            let mut out = Vec::with_capacity(1 << pairs.len());
            for m in 0u32..(1u32 << pairs.len()) {
                let mut w = vec![false; *n];
                for (b, p) in pairs.iter().enumerate() {
                    w[p[(m >> b & 1) as usize]] = true;
                }
                out.push(w);
            }
            Ok(out)
        }
    }
}

/// Exact p-value by imputing the schedule, listing every assignment and
/// recomputing the statistic from scratch for each one.
pub fn exhaustive_p(d: &Dataset, e: &EffectSpec, stat: &StatisticSpec, design: &Design, tail: Tail) -> Result<PValue> {
    let n = d.n();
    if design.n() != n {
        return Err(Error::LengthMismatch {
            expected: design.n(),
            found: n,
        });
    }
    let size = design.size();
    if size > MAX_ASSIGNMENTS as u128 {
        return Err(Error::TooLargeForOracle(format!("{size} assignments")));
    }
    if let StatisticSpec::Stephenson { subset } = stat {
        let work = size as u64 * count_choose(n as u64, *subset as u64);
        if work > MAX_WORK {
            return Err(Error::TooLargeForOracle(format!("{work} subset visits")));
        }
    }
    e.validate(n)?;
    let w_obs = d.treatment();
    let y = d.outcomes();
    let mut y0 = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    for i in 0..n {
        let tau = match e {
            EffectSpec::Constant(t) => *t,
            EffectSpec::PerUnit(v) => v[i],
        };
        if w_obs[i] {
            y1[i] = y[i];
            y0[i] = y[i] - tau;
        } else {
            y0[i] = y[i];
            y1[i] = y[i] + tau;
        }
    }
    let pick = |w: &[bool]| -> Vec<f64> { (0..n).map(|i| if w[i] { y1[i] } else { y0[i] }).collect() };
    let obs = naive_stat(stat, &w_obs, &pick(&w_obs))?;
    let all = naive_assignments(design)?;
    let mut count: u128 = 0;
    for w in &all {
        let t = naive_stat(stat, w, &pick(w))?;
        let hit = match (t.exact, obs.exact, tail) {
            (Some(a), Some(b), Tail::Upper) => a >= b,
            (Some(a), Some(b), Tail::Lower) => a <= b,
            (_, _, Tail::Upper) => t.value >= obs.value - 1e-12 * obs.value.abs().max(1.0),
            (_, _, Tail::Lower) => t.value <= obs.value + 1e-12 * obs.value.abs().max(1.0),
        };
        count += hit as u128;
    }
    let total = all.len() as u128;
    Ok(PValue {
        p: count as f64 / total as f64,
        numerator: count,
        denominator: total,
        tail,
    })
}

/// Agreement rule for reports: exact for integer-valued statistics, otherwise
/// within `1e-10` relative.
pub fn compare(case: impl Into<String>, optimized: f64, oracle: f64, integer: bool) -> OracleReport {
    let discrepancy = (optimized - oracle).abs();
    let agree = if integer {
        optimized == oracle
    } else {
        discrepancy <= 1e-10 * oracle.abs().max(1.0)
    };
    OracleReport {
        case: case.into(),
        optimized,
        oracle,
        agree,
        discrepancy,
        witness: None,
    }
}

/// Draw a pair of schedules `a ⪯ b`: outcomes on a coarse grid so ties are
/// common, then `y1` moved up and `y0` moved down on a random subset of units
/// (possibly by zero, possibly onto existing values).
fn ordered_pair(rng: &mut ChaCha8Rng, n: usize) -> (Schedule, Schedule) {
    let grid = |rng: &mut ChaCha8Rng| rng.random_range(-6i32..=6) as f64 / 2.0;
    let a_y0: Vec<f64> = (0..n).map(|_| grid(rng)).collect();
    let a_y1: Vec<f64> = (0..n).map(|_| grid(rng)).collect();
    let mut b_y0 = a_y0.clone();
    let mut b_y1 = a_y1.clone();
    for i in 0..n {
        if rng.random_bool(0.5) {
            b_y1[i] += rng.random_range(0i32..=4) as f64 / 2.0;
        }
        if rng.random_bool(0.5) {
            b_y0[i] -= rng.random_range(0i32..=4) as f64 / 2.0;
        }
    }
    (
        Schedule::new(a_y0, a_y1).expect("finite"),
        Schedule::new(b_y0, b_y1).expect("finite"),
    )
}

/// Search for violations of the effect-increasing property: over `trials`
/// random ordered pairs `a ⪯ b` and every admissible assignment, check
/// `T(w, a) ≤ T(w, b)`. Assignments on which the statistic is undefined (for
/// instance a zero-variance arm) are skipped.
pub fn ei_property_check(stat: &StatisticSpec, trials: usize, design: &Design, seed: u64) -> Result<OracleReport> {
    let n = design.n();
    let all = naive_assignments(design)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0u64;
    let mut worst = 0.0f64;
    let mut witness = None;
    for _ in 0..trials {
        let (a, b) = ordered_pair(&mut rng, n);
        for w in &all {
            let (Ok(ta), Ok(tb)) = (evaluate(stat, w, &a), evaluate(stat, w, &b)) else {
                continue;
            };
            let drop = match (ta.exact, tb.exact) {
                (Some(x), Some(y)) => (x > y).then(|| ta.value - tb.value),
                _ => (tb.value < ta.value - 1e-12 * ta.value.abs().max(1.0)).then(|| ta.value - tb.value),
            };
            if let Some(delta) = drop {
                violations += 1;
                worst = worst.max(delta);
                if witness.is_none() {
                    witness = Some(EiWitness {
                        statistic: stat.to_string(),
                        w: w.clone(),
                        a_y0: a.y0().to_vec(),
                        a_y1: a.y1().to_vec(),
                        b_y0: b.y0().to_vec(),
                        b_y1: b.y1().to_vec(),
                        t_a: ta.value,
                        t_b: tb.value,
                    });
                }
            }
        }
    }
    Ok(OracleReport {
        case: format!("{stat}: {trials} ordered pairs x {} assignments, n = {n}", all.len()),
        optimized: violations as f64,
        oracle: 0.0,
        agree: violations == 0,
        discrepancy: worst,
        witness,
    })
}
