//! Test statistics `T(w, S)` evaluated on an assignment and a potential-outcome schedule.
//!
//! Under assignment `w` unit `i` contributes `y1[i]` when treated and `y0[i]`
//! otherwise. Every statistic here except [`StatisticSpec::WelchT`] is
//! effect-increasing: weakly increasing in treated potential outcomes and
//! weakly decreasing in control potential outcomes.
//!
//! Rank statistics use mid-ranks, and ties are decided by exact equality of
//! the realized outcomes. Stephenson statistics count the size-`s` subsets
//! whose (possibly tied) largest realized outcome belongs to a treated unit;
//! without ties this equals `Σ_treated C(R_i - 1, s - 1)`.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::combin::{binomial, binomial_big};
use crate::data::Schedule;
use crate::error::{Error, Result};

/// Score transform applied to realized outcomes by [`StatisticSpec::ScoredSum`].
/// Must be non-decreasing for the statistic to be effect-increasing.
#[derive(Clone)]
pub enum ScoreFn {
    Identity,
    /// `1{y > cutoff}`.
    Exceeds(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl ScoreFn {
    pub fn apply(&self, y: f64) -> f64 {
        match self {
            ScoreFn::Identity => y,
            ScoreFn::Exceeds(c) => (y > *c) as u8 as f64,
            ScoreFn::Custom(f) => f(y),
        }
    }
}

impl fmt::Debug for ScoreFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreFn::Identity => write!(f, "Identity"),
            ScoreFn::Exceeds(c) => write!(f, "Exceeds({c})"),
            ScoreFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Arm scaling `a(W)` / `b(W)` of a scored sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    /// Divide the arm's score sum by the arm size.
    ArmMean,
    /// Multiply the arm's score sum by a non-negative constant.
    Fixed(f64),
}

impl Scaling {
    fn apply(self, sum: f64, count: usize) -> Result<f64> {
        match self {
            Scaling::ArmMean if count == 0 => Err(Error::EmptyArm),
            Scaling::ArmMean => Ok(sum / count as f64),
            Scaling::Fixed(c) => Ok(c * sum),
        }
    }
}

#[derive(Debug, Clone)]
pub enum StatisticSpec {
    DiffMeans,
    ScoredSum {
        score: ScoreFn,
        a: Scaling,
        b: Scaling,
    },
    RankSum,
    Stephenson {
        subset: usize,
    },
    /// Difference in the proportion of realized outcomes strictly above `cutoff`.
    ThresholdProportion {
        cutoff: f64,
    },
    WelchT,
}

impl StatisticSpec {
    pub fn is_effect_increasing(&self) -> bool {
        !matches!(self, StatisticSpec::WelchT)
    }

    /// Whether values are integers (or half-integers) compared exactly.
    pub fn is_integer_valued(&self) -> bool {
        matches!(
            self,
            StatisticSpec::RankSum | StatisticSpec::Stephenson { .. }
        )
    }

    /// The statistic to apply to negated outcomes when a lower bound on effects
    /// is tested through sign reversal. Only the threshold cutoff moves, so that
    /// it keeps referring to the original outcome scale.
    pub fn mirrored(&self) -> StatisticSpec {
        match self {
            StatisticSpec::ThresholdProportion { cutoff } => {
                StatisticSpec::ThresholdProportion { cutoff: -cutoff }
            }
            StatisticSpec::ScoredSum {
                score: ScoreFn::Exceeds(c),
                a,
                b,
            } => StatisticSpec::ScoredSum {
                score: ScoreFn::Exceeds(-c),
                a: *a,
                b: *b,
            },
            other => other.clone(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            StatisticSpec::Stephenson { subset } if *subset < 2 || *subset > n => {
                Err(Error::SubsetSizeOutOfRange { size: *subset, n })
            }
            StatisticSpec::ScoredSum { a, b, .. } => {
                for s in [a, b] {
                    if let Scaling::Fixed(c) = s {
                        if !(c.is_finite() && *c >= 0.0) {
                            return Err(Error::InvalidParameter(
                                "scalings must be finite and non-negative".into(),
                            ));
                        }
                    }
                }
                Ok(())
            }
            StatisticSpec::ThresholdProportion { cutoff } if !cutoff.is_finite() => {
                Err(Error::InvalidParameter("cutoff must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticSpec::DiffMeans => write!(f, "diff-means"),
            StatisticSpec::ScoredSum { score, a, b } => {
                write!(f, "scored-sum({score:?}, a={a:?}, b={b:?})")
            }
            StatisticSpec::RankSum => write!(f, "rank-sum"),
            StatisticSpec::Stephenson { subset } => write!(f, "stephenson:{subset}"),
            StatisticSpec::ThresholdProportion { cutoff } => write!(f, "threshold:{cutoff}"),
            StatisticSpec::WelchT => write!(f, "welch-t"),
        }
    }
}

impl FromStr for StatisticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("unknown statistic `{s}`"));
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("diff-means", None) => Ok(StatisticSpec::DiffMeans),
            ("rank-sum", None) => Ok(StatisticSpec::RankSum),
            ("welch-t", None) => Ok(StatisticSpec::WelchT),
            ("stephenson", Some(a)) => Ok(StatisticSpec::Stephenson {
                subset: a.parse().map_err(|_| bad())?,
            }),
            ("threshold", Some(a)) => {
                let cutoff: f64 = a.parse().map_err(|_| bad())?;
                if !cutoff.is_finite() {
                    return Err(bad());
                }
                Ok(StatisticSpec::ThresholdProportion { cutoff })
            }
            _ => Err(bad()),
        }
    }
}

/// A statistic value. `exact` carries an integer image of the value (the
/// doubled mid-rank sum, or the Stephenson subset count) when one exists, so
/// that rank statistics can be compared without rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatValue {
    pub value: f64,
    pub exact: Option<i128>,
}

impl StatValue {
    pub fn real(value: f64) -> Self {
        StatValue { value, exact: None }
    }
}

enum Prepared {
    /// `a · Σ_treated q1 − b · Σ_control q0`
    Linear {
        q1: Vec<f64>,
        q0: Vec<f64>,
        a: Scaling,
        b: Scaling,
    },
    Ranked {
        order1: Vec<usize>,
        order0: Vec<usize>,
        kind: RankKind,
    },
    Welch,
}

enum RankKind {
    Sum,
    Stephenson(SubsetTable),
}

/// `C(k, s)` for `k = 0..=n`.
enum SubsetTable {
    Small(Vec<u128>),
    Big(Vec<BigUint>),
}

impl SubsetTable {
    fn new(n: usize, s: usize) -> Self {
        let fits = binomial(n as u64, s as u64).is_some_and(|v| v <= i128::MAX as u128);
        if fits {
            SubsetTable::Small(
                (0..=n)
                    .map(|k| binomial(k as u64, s as u64).expect("bounded by C(n, s)"))
                    .collect(),
            )
        } else {
            SubsetTable::Big((0..=n).map(|k| binomial_big(k as u64, s as u64)).collect())
        }
    }
}

/// Reusable evaluator of one statistic on one schedule across many assignments.
pub struct Evaluator<'a> {
    schedule: &'a Schedule,
    prepared: Prepared,
    merged: Vec<(f64, bool)>,
}

fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &StatisticSpec, schedule: &'a Schedule) -> Result<Self> {
        let n = schedule.len();
        spec.validate(n)?;
        let linear = |score: &ScoreFn, a: Scaling, b: Scaling| Prepared::Linear {
            q1: schedule.y1().iter().map(|&y| score.apply(y)).collect(),
            q0: schedule.y0().iter().map(|&y| score.apply(y)).collect(),
            a,
            b,
        };
        let ranked = |kind| Prepared::Ranked {
            order1: sorted_order(schedule.y1()),
            order0: sorted_order(schedule.y0()),
            kind,
        };
        let prepared = match spec {
            StatisticSpec::DiffMeans => linear(&ScoreFn::Identity, Scaling::ArmMean, Scaling::ArmMean),
            StatisticSpec::ThresholdProportion { cutoff } => {
                linear(&ScoreFn::Exceeds(*cutoff), Scaling::ArmMean, Scaling::ArmMean)
            }
            StatisticSpec::ScoredSum { score, a, b } => linear(score, *a, *b),
            StatisticSpec::RankSum => ranked(RankKind::Sum),
            StatisticSpec::Stephenson { subset } => {
                ranked(RankKind::Stephenson(SubsetTable::new(n, *subset)))
            }
            StatisticSpec::WelchT => Prepared::Welch,
        };
        Ok(Evaluator {
            schedule,
            prepared,
            merged: Vec::with_capacity(n),
        })
    }

    pub fn eval(&mut self, w: &[bool]) -> Result<StatValue> {
        if w.len() != self.schedule.len() {
            return Err(Error::LengthMismatch {
                expected: self.schedule.len(),
                found: w.len(),
            });
        }
        match &self.prepared {
            Prepared::Linear { q1, q0, a, b } => {
                let (mut st, mut sc, mut nt) = (0.0, 0.0, 0usize);
                for i in 0..w.len() {
                    if w[i] {
                        st += q1[i];
                        nt += 1;
                    } else {
                        sc += q0[i];
                    }
                }
                let v = a.apply(st, nt)? - b.apply(sc, w.len() - nt)?;
                Ok(StatValue::real(v))
            }
            Prepared::Welch => welch(w, self.schedule),
            Prepared::Ranked {
                order1,
                order0,
                kind,
            } => {
                let (y1, y0) = (self.schedule.y1(), self.schedule.y0());
                self.merged.clear();
                let mut t = order1.iter().filter(|&&i| w[i]).map(|&i| y1[i]).peekable();
                let mut c = order0.iter().filter(|&&i| !w[i]).map(|&i| y0[i]).peekable();
                loop {
                    match (t.peek(), c.peek()) {
                        (Some(&a), Some(&b)) => {
                            if a <= b {
                                self.merged.push((a, true));
                                t.next();
                            } else {
                                self.merged.push((b, false));
                                c.next();
                            }
                        }
                        (Some(&a), None) => {
                            self.merged.push((a, true));
                            t.next();
                        }
                        (None, Some(&b)) => {
                            self.merged.push((b, false));
                            c.next();
                        }
                        (None, None) => break,
                    }
                }
                Ok(match kind {
                    RankKind::Sum => rank_sum_sorted(&self.merged),
                    RankKind::Stephenson(table) => stephenson_sorted(&self.merged, table),
                })
            }
        }
    }
}

/// Tie groups of an ascending sequence: `(units below, group size, treated in group)`.
fn tie_groups(sorted: &[(f64, bool)]) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= sorted.len() {
            return None;
        }
        let v = sorted[start].0;
        let mut end = start;
        let mut treated = 0;
        while end < sorted.len() && sorted[end].0 == v {
            treated += sorted[end].1 as usize;
            end += 1;
        }
        let g = (start, end - start, treated);
        start = end;
        Some(g)
    })
}

fn rank_sum_sorted(sorted: &[(f64, bool)]) -> StatValue {
    // doubled mid-rank of a group occupying positions below+1 ..= below+m
    let twice: i128 = tie_groups(sorted)
        .map(|(below, m, t)| (t * (2 * below + m + 1)) as i128)
        .sum();
    StatValue {
        value: twice as f64 / 2.0,
        exact: Some(twice),
    }
}

fn stephenson_sorted(sorted: &[(f64, bool)], table: &SubsetTable) -> StatValue {
    // subsets whose maximum value is this group's and that contain a treated unit at it
    match table {
        SubsetTable::Small(c) => {
            let count: u128 = tie_groups(sorted)
                .filter(|g| g.2 > 0)
                .map(|(below, m, t)| c[below + m] - c[below + m - t])
                .sum();
            StatValue {
                value: count as f64,
                exact: Some(count as i128),
            }
        }
        SubsetTable::Big(c) => {
            let count: BigUint = tie_groups(sorted)
                .filter(|g| g.2 > 0)
                .map(|(below, m, t)| &c[below + m] - &c[below + m - t])
                .sum();
            StatValue::real(count.to_f64().unwrap_or(f64::INFINITY))
        }
    }
}

fn welch(w: &[bool], s: &Schedule) -> Result<StatValue> {
    let realized = s.realized(w);
    let arm = |treated: bool| -> Vec<f64> {
        realized
            .iter()
            .zip(w)
            .filter(|(_, &t)| t == treated)
            .map(|(&y, _)| y)
            .collect()
    };
    let (t, c) = (arm(true), arm(false));
    if t.is_empty() || c.is_empty() {
        return Err(Error::EmptyArm);
    }
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::ArmTooSmall);
    }
    let (mt, vt) = mean_var(&t);
    let (mc, vc) = mean_var(&c);
    let se2 = vt / t.len() as f64 + vc / c.len() as f64;
    if se2 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(StatValue::real((mt - mc) / se2.sqrt()))
}

/// Mean and unbiased sample variance.
pub(crate) fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Evaluate any statistic once.
pub fn evaluate(spec: &StatisticSpec, w: &[bool], s: &Schedule) -> Result<StatValue> {
    Evaluator::new(spec, s)?.eval(w)
}

pub fn diff_means(w: &[bool], s: &Schedule) -> Result<StatValue> {
    evaluate(&StatisticSpec::DiffMeans, w, s)
}

pub fn scored_sum(w: &[bool], s: &Schedule, score: ScoreFn, a: Scaling, b: Scaling) -> Result<StatValue> {
    evaluate(&StatisticSpec::ScoredSum { score, a, b }, w, s)
}

pub fn threshold_proportion(w: &[bool], s: &Schedule, cutoff: f64) -> Result<StatValue> {
    evaluate(&StatisticSpec::ThresholdProportion { cutoff }, w, s)
}

/// Sum of treated mid-ranks.
pub fn rank_sum(w: &[bool], s: &Schedule) -> Result<StatValue> {
    evaluate(&StatisticSpec::RankSum, w, s)
}

pub fn stephenson(w: &[bool], s: &Schedule, subset: usize) -> Result<StatValue> {
    evaluate(&StatisticSpec::Stephenson { subset }, w, s)
}

pub fn welch_t(w: &[bool], s: &Schedule) -> Result<StatValue> {
    evaluate(&StatisticSpec::WelchT, w, s)
}
