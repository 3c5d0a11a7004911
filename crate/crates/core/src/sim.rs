//! Monte Carlo studies of test size and confidence-bound coverage under
//! simulated experiments.
//!
//! Replication `r` draws all of its randomness from a ChaCha8 stream seeded
//! with the scenario seed and positioned on stream `r`, so reports are
//! reproducible bit for bit regardless of scheduling.
//!
//! Scenarios are TOML documents:
//!
//! ```toml
//! name = "welch-size"
//! kind = "ttest-failure"        # or "conservativeness", "ci-coverage"
//! replications = 10000
//! seed = 7
//! alpha = [0.05, 0.01]
//! n_treated = 30
//! n_control = 1000
//! statistics = ["diff-means"]   # tested statistics (ignored by ttest-failure)
//! design = "complete"           # or "paired": units (2k, 2k+1) form pair k
//! tau0 = 0.0                    # bounded-null bound
//! permutation_draws = 200       # Monte Carlo draws for permutation tests
//! exact = true                  # exact enumeration where the study allows it
//!
//! [outcome]                     # control potential outcomes
//! family = "beta"               # "normal" {mean, sd}, "uniform" {lo, hi}
//! a = 0.1
//! b = 5.0
//!
//! [effect]                      # unit effects tau_i
//! kind = "constant"             # {tau}; "uniform" {lo, hi}; "pocket" {base, pocket, share}
//! tau = 0.0
//! ```

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{validate_dataset, Dataset, Design, EffectSpec, RawRow, Schedule};
use crate::error::{Error, Result};
use crate::infer::{invert_ci, test_bounded, Direction, GridConfig, Target};
use crate::refdist::{two_tails_for_schedule, Mode, RefConfig, Tail};
use crate::stats::{welch_t, StatisticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    TtestFailure,
    Conservativeness,
    CiCoverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum OutcomeDist {
    Normal { mean: f64, sd: f64 },
    Beta { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl OutcomeDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            OutcomeDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            OutcomeDist::Beta { a, b } => a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0,
            OutcomeDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateScenario(format!("outcome parameters out of range: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            OutcomeDist::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            OutcomeDist::Uniform { lo, hi } => rng.random_range(lo..hi),
            OutcomeDist::Beta { a, b } => {
                let ga = Gamma::new(a, 1.0).expect("validated");
                let gb = Gamma::new(b, 1.0).expect("validated");
                loop {
                    let x = ga.sample(rng);
                    let y = gb.sample(rng);
                    if x + y > 0.0 {
                        return x / (x + y);
                    }
                }
            }
        }
    }

    /// Mean and variance of the distribution.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            OutcomeDist::Normal { mean, sd } => (mean, sd * sd),
            OutcomeDist::Uniform { lo, hi } => (0.5 * (lo + hi), (hi - lo).powi(2) / 12.0),
            OutcomeDist::Beta { a, b } => (a / (a + b), a * b / ((a + b).powi(2) * (a + b + 1.0))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectGenerator {
    Constant { tau: f64 },
    /// Independent `Uniform(lo, hi)` effects.
    Uniform { lo: f64, hi: f64 },
    /// `round(share·n)` randomly chosen units get `pocket`, the rest `base`.
    Pocket { base: f64, pocket: f64, share: f64 },
}

impl EffectGenerator {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            EffectGenerator::Constant { tau } => tau.is_finite(),
            EffectGenerator::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            EffectGenerator::Pocket { base, pocket, share } => {
                base.is_finite() && pocket.is_finite() && (0.0..=1.0).contains(&share)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateScenario(format!("effect parameters out of range: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match *self {
            EffectGenerator::Constant { tau } => vec![tau; n],
            EffectGenerator::Uniform { lo, hi } => {
                (0..n).map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo }).collect()
            }
            EffectGenerator::Pocket { base, pocket, share } => {
                let k = (share * n as f64).round() as usize;
                let mut tau = vec![base; n];
                for i in index::sample(rng, n, k.min(n)) {
                    tau[i] = pocket;
                }
                tau
            }
        }
    }

    /// Largest effect the generator can produce.
    pub fn sup(&self) -> f64 {
        match *self {
            EffectGenerator::Constant { tau } => tau,
            EffectGenerator::Uniform { hi, .. } => hi,
            EffectGenerator::Pocket { base, pocket, share } => {
                if share > 0.0 {
                    base.max(pocket)
                } else {
                    base
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    #[default]
    Complete,
    Paired,
}

fn default_draws() -> u64 {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationScenario {
    #[serde(default)]
    pub name: String,
    pub kind: StudyKind,
    pub replications: u64,
    pub seed: u64,
    pub alpha: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    #[serde(default)]
    pub statistics: Vec<String>,
    #[serde(default)]
    pub design: DesignKind,
    #[serde(default)]
    pub tau0: f64,
    #[serde(default = "default_draws")]
    pub permutation_draws: u64,
    #[serde(default = "default_true")]
    pub exact: bool,
    pub outcome: OutcomeDist,
    pub effect: EffectGenerator,
}

impl SimulationScenario {
    pub fn from_toml(text: &str) -> Result<SimulationScenario> {
        let s: SimulationScenario =
            toml::from_str(text).map_err(|e| Error::DegenerateScenario(format!("scenario file: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateScenario(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("every alpha must lie in (0, 1)");
        }
        if self.n_treated == 0 || self.n_control == 0 {
            return bad("both arms need at least one unit");
        }
        if self.design == DesignKind::Paired && self.n_treated != self.n_control {
            return bad("paired designs need equal arm sizes");
        }
        if self.permutation_draws == 0 {
            return bad("permutation_draws must be positive");
        }
        if !self.tau0.is_finite() {
            return bad("tau0 must be finite");
        }
        self.outcome.validate()?;
        self.effect.validate()?;
        match self.kind {
            StudyKind::TtestFailure => {
                if self.n_treated < 2 || self.n_control < 2 {
                    return bad("the t-test needs two units per arm");
                }
            }
            StudyKind::Conservativeness | StudyKind::CiCoverage => {
                if self.statistics.is_empty() {
                    return bad("no statistics listed");
                }
                for s in self.parsed_statistics()? {
                    if !s.is_effect_increasing() {
                        return Err(Error::NonEIStatistic(s.to_string()));
                    }
                }
            }
        }
        Ok(())
    }

    fn parsed_statistics(&self) -> Result<Vec<StatisticSpec>> {
        self.statistics
            .iter()
            .map(|s| s.parse().map_err(|_| Error::DegenerateScenario(format!("unknown statistic `{s}`"))))
            .collect()
    }

    fn n(&self) -> usize {
        self.n_treated + self.n_control
    }

    fn design(&self) -> Result<Design> {
        match self.design {
            DesignKind::Complete => Design::complete(self.n(), self.n_treated),
            DesignKind::Paired => Design::paired(self.n(), (0..self.n_treated).map(|k| [2 * k, 2 * k + 1]).collect()),
        }
    }

    fn mode(&self, rng: &mut ChaCha8Rng) -> Mode {
        if self.exact {
            Mode::Exact
        } else {
            Mode::MonteCarlo {
                draws: self.permutation_draws,
                seed: rng.random(),
                add_one: true,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub label: String,
    pub alpha: f64,
    pub count: u64,
    pub rate: f64,
    pub se: f64,
    /// Median confidence bound across replications (coverage studies).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_bound: Option<f64>,
}

impl RateEstimate {
    fn new(label: impl Into<String>, alpha: f64, count: u64, reps: u64) -> Self {
        let rate = count as f64 / reps as f64;
        RateEstimate {
            label: label.into(),
            alpha,
            count,
            rate,
            se: (rate * (1.0 - rate) / reps as f64).sqrt(),
            median_bound: None,
        }
    }

    /// Monte Carlo standard error of a rate equal to `alpha`.
    pub fn nominal_se(&self, reps: u64) -> f64 {
        (self.alpha * (1.0 - self.alpha) / reps as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub scenario: SimulationScenario,
    pub replications: u64,
    /// Whether every generated schedule satisfies `tau_i <= tau0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_holds: Option<bool>,
    pub rates: Vec<RateEstimate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SimulationReport {
    pub fn rate(&self, label: &str, alpha: f64) -> Option<&RateEstimate> {
        self.rates.iter().find(|r| r.label == label && r.alpha == alpha)
    }
}

fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Two-sided Welch test p-value with Welch–Satterthwaite degrees of freedom.
pub fn welch_two_sided_p(treated: &[f64], control: &[f64]) -> Result<f64> {
    let w: Vec<bool> = treated.iter().map(|_| true).chain(control.iter().map(|_| false)).collect();
    let y: Vec<f64> = treated.iter().chain(control).copied().collect();
    let t = welch_t(&w, &Schedule::new(y.clone(), y)?)?.value;
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (a, b) = (var(treated) / treated.len() as f64, var(control) / control.len() as f64);
    let df = (a + b).powi(2) / (a * a / (treated.len() - 1) as f64 + b * b / (control.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Random assignment from the scenario design.
fn draw_assignment(rng: &mut ChaCha8Rng, s: &SimulationScenario) -> Vec<bool> {
    let mut w = vec![false; s.n()];
    match s.design {
        DesignKind::Complete => {
            for i in index::sample(rng, s.n(), s.n_treated) {
                w[i] = true;
            }
        }
        DesignKind::Paired => {
            for k in 0..s.n_treated {
                w[2 * k + rng.random_range(0..2usize)] = true;
            }
        }
    }
    w
}

/// Size of the two-sided Welch t-test when both groups share the outcome
/// distribution (effects are ignored), alongside a Monte Carlo permutation
/// test of the difference in means on the same draws.
pub fn run_ttest_failure(s: &SimulationScenario) -> Result<SimulationReport> {
    if s.kind != StudyKind::TtestFailure {
        return Err(Error::DegenerateScenario("scenario kind is not ttest-failure".into()));
    }
    s.validate()?;
    let design = Design::complete(s.n(), s.n_treated)?;
    let cfg = RefConfig::default();
    let per_rep: Vec<(f64, f64)> = (0..s.replications)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let mut rng = rep_rng(s.seed, r);
            let treated: Vec<f64> = (0..s.n_treated).map(|_| s.outcome.sample(&mut rng)).collect();
            let control: Vec<f64> = (0..s.n_control).map(|_| s.outcome.sample(&mut rng)).collect();
            let p_welch = welch_two_sided_p(&treated, &control)?;
            let w: Vec<bool> = (0..s.n()).map(|i| i < s.n_treated).collect();
            let y: Vec<f64> = treated.iter().chain(&control).copied().collect();
            let d = Dataset::from_arrays(&w, &y)?;
            let mode = Mode::MonteCarlo {
                draws: s.permutation_draws,
                seed: rng.random(),
                add_one: true,
            };
            let sched = Schedule::new(y.clone(), y)?;
            let (up, lo) = two_tails_for_schedule(&sched, &d.treatment(), &StatisticSpec::DiffMeans, &design, &mode, &cfg)?;
            Ok((p_welch, (2.0 * up.p.min(lo.p)).min(1.0)))
        })
        .collect::<Result<_>>()?;
    let mut rates = Vec::new();
    for &a in &s.alpha {
        let welch = per_rep.iter().filter(|(p, _)| *p <= a).count() as u64;
        let perm = per_rep.iter().filter(|(_, p)| *p <= a).count() as u64;
        rates.push(RateEstimate::new("welch-t", a, welch, s.replications));
        rates.push(RateEstimate::new("permutation-diff-means", a, perm, s.replications));
    }
    let mut notes = vec![format!(
        "permutation companion: two-sided Monte Carlo p = 2 min(upper, lower) with {} draws and add-one",
        s.permutation_draws
    )];
    if let OutcomeDist::Beta { a, b } = s.outcome {
        if a == 0.1 && b == 5.0 {
            notes.push(
                "the reference script's preamble sets shapes (0.2, 20) but its simulation body draws Beta(0.1, 5); \
                 this scenario follows the body"
                    .into(),
            );
        }
    }
    Ok(SimulationReport {
        scenario: s.clone(),
        replications: s.replications,
        null_holds: None,
        rates,
        notes,
    })
}

/// Draws one replication's observed data along with the true unit effects.
fn draw_experiment(rng: &mut ChaCha8Rng, s: &SimulationScenario) -> Result<(Dataset, Vec<f64>)> {
    let n = s.n();
    let y0: Vec<f64> = (0..n).map(|_| s.outcome.sample(rng)).collect();
    let tau = s.effect.sample(rng, n);
    let w = draw_assignment(rng, s);
    let y: Vec<f64> = (0..n).map(|i| if w[i] { y0[i] + tau[i] } else { y0[i] }).collect();
    let rows: Vec<RawRow> = (0..n)
        .map(|i| {
            let row = RawRow::new((i + 1).to_string(), w[i] as i64, y[i]);
            match s.design {
                DesignKind::Complete => row,
                DesignKind::Paired => row.with_block(format!("p{}", i / 2)),
            }
        })
        .collect();
    Ok((validate_dataset(rows)?, tau))
}

/// Rejection rate of the non-superiority test of `tau_i <= tau0` for each
/// listed statistic at each alpha.
pub fn run_conservativeness(s: &SimulationScenario) -> Result<SimulationReport> {
    if s.kind != StudyKind::Conservativeness {
        return Err(Error::DegenerateScenario("scenario kind is not conservativeness".into()));
    }
    s.validate()?;
    let stats = s.parsed_statistics()?;
    let design = s.design()?;
    let cfg = RefConfig::default();
    let e = EffectSpec::Constant(s.tau0);
    let per_rep: Vec<Vec<f64>> = (0..s.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = rep_rng(s.seed, r);
            let (d, _) = draw_experiment(&mut rng, s)?;
            let mode = s.mode(&mut rng);
            stats
                .iter()
                .map(|stat| {
                    // alpha only affects the decision flag; p is what is kept
                    Ok(test_bounded(&d, &e, stat, &design, Direction::NonSuperiority, 0.5, &mode, &cfg)?.p.p)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rates = Vec::new();
    for (k, stat) in stats.iter().enumerate() {
        for &a in &s.alpha {
            let count = per_rep.iter().filter(|ps| ps[k] <= a).count() as u64;
            rates.push(RateEstimate::new(stat.to_string(), a, count, s.replications));
        }
    }
    Ok(SimulationReport {
        scenario: s.clone(),
        replications: s.replications,
        null_holds: Some(s.effect.sup() <= s.tau0),
        rates,
        notes: Vec::new(),
    })
}

/// Fraction of replications whose lower confidence bound for the largest
/// effect does not exceed the realized largest effect.
pub fn run_ci_coverage(s: &SimulationScenario) -> Result<SimulationReport> {
    if s.kind != StudyKind::CiCoverage {
        return Err(Error::DegenerateScenario("scenario kind is not ci-coverage".into()));
    }
    s.validate()?;
    let stats = s.parsed_statistics()?;
    let design = s.design()?;
    let cfg = RefConfig::default();
    let grid = GridConfig::default();
    let mut rates = Vec::new();
    for &a in &s.alpha {
        let per_rep: Vec<Vec<(bool, f64)>> = (0..s.replications)
            .into_par_iter()
            .map(|r| -> Result<Vec<(bool, f64)>> {
                let mut rng = rep_rng(s.seed, r);
                let (d, tau) = draw_experiment(&mut rng, s)?;
                let tau_star = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mode = s.mode(&mut rng);
                stats
                    .iter()
                    .map(|stat| {
                        let ci = invert_ci(&d, stat, &design, Target::MaxEffect, a, &mode, &grid, &cfg)?;
                        Ok((ci.bound <= tau_star, ci.bound))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (k, stat) in stats.iter().enumerate() {
            let count = per_rep.iter().filter(|v| v[k].0).count() as u64;
            let mut est = RateEstimate::new(stat.to_string(), a, count, s.replications);
            est.median_bound = Some(median(per_rep.iter().map(|v| v[k].1).collect()));
            rates.push(est);
        }
    }
    Ok(SimulationReport {
        scenario: s.clone(),
        replications: s.replications,
        null_holds: None,
        rates,
        notes: vec!["coverage counts replications with L <= max_i tau_i".into()],
    })
}

pub fn run(s: &SimulationScenario) -> Result<SimulationReport> {
    match s.kind {
        StudyKind::TtestFailure => run_ttest_failure(s),
        StudyKind::Conservativeness => run_conservativeness(s),
        StudyKind::CiCoverage => run_ci_coverage(s),
    }
}

/// Synthetic instrument data with a pocket of defiers. `w = 1` is the
/// instrument; the outcome is the uptake measure (an entry age). Compliers
/// enter 0.7 older when instrumented (6.0 to 6.9 overall); a `defier_share` of
/// units enter late (7.1 to 7.2) without the instrument and earlier (6.8 to
/// 6.9) with it.
/// Returns the observed dataset and the true schedule.
pub fn defier_pocket(n: usize, defier_share: f64, seed: u64) -> Result<(Dataset, Schedule)> {
    if n < 4 || !(0.0..=1.0).contains(&defier_share) {
        return Err(Error::DegenerateScenario("need n >= 4 and a share in [0, 1]".into()));
    }
    let mut rng = rep_rng(seed, 0);
    let defiers: Vec<usize> = index::sample(&mut rng, n, (defier_share * n as f64).round() as usize).into_vec();
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for i in 0..n {
        let jitter = rng.random_range(0.0..0.1);
        if defiers.contains(&i) {
            y0.push(7.1 + jitter);
            y1.push(6.8 + jitter);
        } else {
            let base = 6.0 + 2.0 * jitter;
            y0.push(base);
            y1.push(base + 0.7);
        }
    }
    let schedule = Schedule::new(y0, y1)?;
    let mut w = vec![false; n];
    for i in index::sample(&mut rng, n, n / 2) {
        w[i] = true;
    }
    let d = Dataset::from_arrays(&w, &schedule.realized(&w))?;
    Ok((d, schedule))
}

/// p-values of the monotonicity (non-inferiority at zero) test on a defier
/// pocket dataset with the given statistic, by Monte Carlo.
pub fn defier_pocket_p(d: &Dataset, stat: &StatisticSpec, draws: u64, seed: u64) -> Result<f64> {
    let design = Design::for_dataset(d)?;
    let mode = Mode::MonteCarlo {
        draws,
        seed,
        add_one: true,
    };
    let r = test_bounded(d, &EffectSpec::zero(), stat, &design, Direction::NonInferiority, 0.05, &mode, &RefConfig::default())?;
    debug_assert_eq!(r.p.tail, Tail::Lower);
    Ok(r.p.p)
}
