//! Bounded-null tests and the confidence bounds obtained by inverting them.
//!
//! With an effect-increasing statistic, the upper-tail test of the sharp null
//! `τ = τ⁰` is a valid (possibly conservative) test of the non-superiority null
//! `τ_i ≤ τ⁰_i for all i`. Non-inferiority (`τ_i ≥ τ⁰_i`) is tested by reversing
//! signs: outcomes and `τ⁰` are negated and the non-superiority machinery runs on
//! the mirrored statistic. For the difference in means, rank sum and scored sums
//! this is exactly the lower-tail test on the original scale; for Stephenson
//! statistics it makes the test sensitive to the smallest outcomes.
//!
//! A test rejects when `p ≤ α`; a shift belongs to a confidence set when `p > α`.

use serde::ser::SerializeTuple;
use serde::{Serialize, Serializer};

use crate::data::{Dataset, Design, EffectSpec};
use crate::error::{Error, Result};
use crate::refdist::{p_value, Mode, PValue, RefConfig, Tail};
use crate::stats::StatisticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `τ_i ≤ τ⁰_i` for every unit.
    NonSuperiority,
    /// `τ_i ≥ τ⁰_i` for every unit.
    NonInferiority,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundedTestResult {
    pub direction: Direction,
    pub tau0: EffectSpec,
    pub statistic: String,
    /// Observed statistic in the tested orientation (negated outcomes for non-inferiority).
    pub t_obs: f64,
    pub p: PValue,
    pub alpha: f64,
    pub reject: bool,
    /// `p == α` exactly.
    pub at_boundary: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn require_ei(stat: &StatisticSpec) -> Result<()> {
    if stat.is_effect_increasing() {
        Ok(())
    } else {
        Err(Error::NonEIStatistic(stat.to_string()))
    }
}

/// p-value of the bounded null in `direction` without the decision layer.
fn bounded_p(
    d: &Dataset,
    e: &EffectSpec,
    stat: &StatisticSpec,
    design: &Design,
    direction: Direction,
    mode: &Mode,
    cfg: &RefConfig,
) -> Result<(f64, PValue)> {
    match direction {
        Direction::NonSuperiority => {
            let out = p_value(d, e, stat, design, mode, Tail::Upper, cfg)?;
            Ok((out.t_obs, out.p))
        }
        Direction::NonInferiority => {
            let out = p_value(
                &d.negated(),
                &e.negated(),
                &stat.mirrored(),
                design,
                mode,
                Tail::Upper,
                cfg,
            )?;
            Ok((
                out.t_obs,
                PValue {
                    tail: Tail::Lower,
                    ..out.p
                },
            ))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn test_bounded(
    d: &Dataset,
    e: &EffectSpec,
    stat: &StatisticSpec,
    design: &Design,
    direction: Direction,
    alpha: f64,
    mode: &Mode,
    cfg: &RefConfig,
) -> Result<BoundedTestResult> {
    require_ei(stat)?;
    check_alpha(alpha)?;
    let (t_obs, p) = bounded_p(d, e, stat, design, direction, mode, cfg)?;
    Ok(BoundedTestResult {
        direction,
        tau0: e.clone(),
        statistic: stat.to_string(),
        t_obs,
        p,
        alpha,
        reject: p.p <= alpha,
        at_boundary: p.p == alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    MaxEffect,
    MinEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    /// Points in the coarse grid over `[-2R, 2R]`, `R` the observed outcome range.
    pub points: usize,
    /// Bisection stops once the bracket is narrower than `rel_tolerance · R`.
    pub rel_tolerance: f64,
    /// Declared `(min, max)` of the outcome scale, used for the outer limit.
    pub outcome_range: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points: 101,
            rel_tolerance: 1e-4,
            outcome_range: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub tau: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiResult {
    pub target: Target,
    pub statistic: String,
    pub alpha: f64,
    /// `L` for the maximum effect, `U` for the minimum effect. Infinite when no
    /// shift in the search range is rejected.
    #[serde(serialize_with = "extended_f64")]
    pub bound: f64,
    /// Limit on the other side: `+∞`/`-∞`, or deduced from the declared outcome range.
    #[serde(serialize_with = "extended_f64")]
    pub outer: f64,
    /// Closest rejected shift and closest non-rejected shift around the bound.
    #[serde(serialize_with = "extended_pair")]
    pub bracket: (f64, f64),
    pub trace: Vec<TracePoint>,
}

/// Infinite values are written as the strings `"inf"` and `"-inf"`.
fn extended_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct Extended(f64);

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        extended_f64(&self.0, s)
    }
}

fn extended_pair<S: Serializer>(v: &(f64, f64), s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&Extended(v.0))?;
    t.serialize_element(&Extended(v.1))?;
    t.end()
}

impl CiResult {
    /// The interval as `(lower, upper)`.
    pub fn interval(&self) -> (f64, f64) {
        match self.target {
            Target::MaxEffect => (self.bound, self.outer),
            Target::MinEffect => (self.outer, self.bound),
        }
    }
}

/// Largest possible effect (for the maximum) given a declared outcome scale.
fn outer_limit(d: &Dataset, range: Option<(f64, f64)>) -> Result<f64> {
    let Some((lo, hi)) = range else {
        return Ok(f64::INFINITY);
    };
    if !(lo < hi) {
        return Err(Error::InvalidParameter("outcome range must satisfy min < max".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for u in d.units() {
        if u.y < lo || u.y > hi {
            return Err(Error::InvalidParameter(format!(
                "outcome {} of unit `{}` lies outside the declared range",
                u.y, u.id
            )));
        }
        // treated: y - Y(0) with Y(0) >= lo; control: Y(1) - y with Y(1) <= hi
        let m = if u.treated { u.y - lo } else { hi - u.y };
        best = best.max(m);
    }
    Ok(best)
}

/// Invert constant-shift tests into a one-sided confidence interval for the
/// largest (or smallest) unit-level effect.
#[allow(clippy::too_many_arguments)]
pub fn invert_ci(
    d: &Dataset,
    stat: &StatisticSpec,
    design: &Design,
    target: Target,
    alpha: f64,
    mode: &Mode,
    grid: &GridConfig,
    cfg: &RefConfig,
) -> Result<CiResult> {
    require_ei(stat)?;
    check_alpha(alpha)?;
    match target {
        Target::MaxEffect => max_effect(d, stat, design, alpha, mode, grid, cfg),
        Target::MinEffect => {
            let mirrored_grid = GridConfig {
                outcome_range: grid.outcome_range.map(|(lo, hi)| (-hi, -lo)),
                ..grid.clone()
            };
            let r = max_effect(&d.negated(), &stat.mirrored(), design, alpha, mode, &mirrored_grid, cfg)?;
            Ok(CiResult {
                target: Target::MinEffect,
                statistic: stat.to_string(),
                alpha,
                bound: -r.bound,
                outer: -r.outer,
                bracket: (-r.bracket.0, -r.bracket.1),
                trace: r.trace.into_iter().map(|t| TracePoint { tau: -t.tau, p: t.p }).collect(),
            })
        }
    }
}

const MAX_EXPANSIONS: u32 = 12;

fn max_effect(
    d: &Dataset,
    stat: &StatisticSpec,
    design: &Design,
    alpha: f64,
    mode: &Mode,
    grid: &GridConfig,
    cfg: &RefConfig,
) -> Result<CiResult> {
    if grid.points < 2 || !(grid.rel_tolerance > 0.0) {
        return Err(Error::InvalidParameter("grid needs ≥ 2 points and a positive tolerance".into()));
    }
    let outer = outer_limit(d, grid.outcome_range)?;
    let y = d.outcomes();
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if ymax > ymin { ymax - ymin } else { 1.0 };

    let mut trace = Vec::new();
    let p_at = |tau: f64, trace: &mut Vec<TracePoint>| -> Result<f64> {
        let (_, p) = bounded_p(d, &EffectSpec::Constant(tau), stat, design, Direction::NonSuperiority, mode, cfg)?;
        trace.push(TracePoint { tau, p: p.p });
        Ok(p.p)
    };

    let (lo, hi) = (-2.0 * range, 2.0 * range);
    let step = (hi - lo) / (grid.points - 1) as f64;
    let mut coarse = Vec::with_capacity(grid.points);
    for k in 0..grid.points {
        let tau = if k + 1 == grid.points { hi } else { lo + step * k as f64 };
        coarse.push((tau, p_at(tau, &mut trace)?));
    }
    for w in coarse.windows(2) {
        if w[1].1 < w[0].1 {
            return Err(Error::NonMonotonePValue {
                tau_lo: w[0].0,
                p_lo: w[0].1,
                tau_hi: w[1].0,
                p_hi: w[1].1,
            });
        }
    }

    let (mut rejected, mut accepted) = match coarse.iter().position(|&(_, p)| p > alpha) {
        Some(0) => {
            // nothing rejected yet: walk further down
            let mut last_ok = lo;
            let mut found = None;
            for j in 0..MAX_EXPANSIONS {
                let tau = lo - range * 2f64.powi(j as i32 + 1);
                if p_at(tau, &mut trace)? <= alpha {
                    found = Some(tau);
                    break;
                }
                last_ok = tau;
            }
            match found {
                Some(tau) => (tau, last_ok),
                None => {
                    return Ok(CiResult {
                        target: Target::MaxEffect,
                        statistic: stat.to_string(),
                        alpha,
                        bound: f64::NEG_INFINITY,
                        outer,
                        bracket: (f64::NEG_INFINITY, last_ok),
                        trace,
                    })
                }
            }
        }
        Some(k) => (coarse[k - 1].0, coarse[k].0),
        None => {
            let mut last_rejected = hi;
            let mut found = None;
            for j in 0..MAX_EXPANSIONS {
                let tau = hi + range * 2f64.powi(j as i32 + 1);
                if p_at(tau, &mut trace)? > alpha {
                    found = Some(tau);
                    break;
                }
                last_rejected = tau;
            }
            match found {
                Some(tau) => (last_rejected, tau),
                None => return Err(Error::EmptyConfidenceSet),
            }
        }
    };

    let tol = grid.rel_tolerance * range;
    while accepted - rejected > tol {
        let mid = 0.5 * (rejected + accepted);
        if mid <= rejected || mid >= accepted {
            break;
        }
        if p_at(mid, &mut trace)? > alpha {
            accepted = mid;
        } else {
            rejected = mid;
        }
    }

    Ok(CiResult {
        target: Target::MaxEffect,
        statistic: stat.to_string(),
        alpha,
        bound: accepted,
        outer,
        bracket: (rejected, accepted),
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimultaneousResult {
    pub statistic: String,
    /// Non-superiority p-value at zero (evidence of some positive effect).
    pub p_up: PValue,
    /// Non-inferiority p-value at zero (evidence of some negative effect).
    pub p_down: PValue,
    pub p_iu: f64,
}

/// Intersection-union test that some effects are positive and some negative.
pub fn test_simultaneous(
    d: &Dataset,
    stat: &StatisticSpec,
    design: &Design,
    mode: &Mode,
    cfg: &RefConfig,
) -> Result<SimultaneousResult> {
    require_ei(stat)?;
    let zero = EffectSpec::zero();
    let (_, p_up) = bounded_p(d, &zero, stat, design, Direction::NonSuperiority, mode, cfg)?;
    let (_, p_down) = bounded_p(d, &zero, stat, design, Direction::NonInferiority, mode, cfg)?;
    Ok(SimultaneousResult {
        statistic: stat.to_string(),
        p_up,
        p_down,
        p_iu: p_up.p.max(p_down.p),
    })
}

/// Sign the instrument is assumed to have on uptake for every unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrumentDirection {
    Increases,
    Decreases,
}

/// Test the monotonicity assumption of an instrument: `w` is the instrument and
/// `y` the uptake. Rejection means some unit responds against the assumed sign.
#[allow(clippy::too_many_arguments)]
pub fn test_monotonicity(
    d: &Dataset,
    stat: &StatisticSpec,
    design: &Design,
    expected: InstrumentDirection,
    alpha: f64,
    mode: &Mode,
    cfg: &RefConfig,
) -> Result<BoundedTestResult> {
    let direction = match expected {
        InstrumentDirection::Increases => Direction::NonInferiority,
        InstrumentDirection::Decreases => Direction::NonSuperiority,
    };
    test_bounded(d, &EffectSpec::zero(), stat, design, direction, alpha, mode, cfg)
}
