//! Reference distributions over a design's assignment space and the p-values
//! read off them.
//!
//! Exact enumeration order is fixed:
//! * complete randomization visits treated-index sets in lexicographic order;
//! * paired designs count `k = 0..2^K`, where bit `b` of `k` (least significant
//!   first) selects the second-listed unit of pair `b` for treatment, and a
//!   clear bit selects the first-listed unit.
//!
//! Monte Carlo draw `j` is a pure function of `(seed, j)`: it is generated from
//! a ChaCha8 stream seeded with `seed` and positioned on stream `j`, so results
//! do not depend on how draws are partitioned across workers.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combin::{next_combination, unrank_combination};
use crate::data::{Dataset, Design, EffectSpec, Schedule};
use crate::error::{Error, Result};
use crate::impute::impute_schedule;
use crate::stats::{Evaluator, StatValue, StatisticSpec};

/// Relative tolerance applied when comparing real-valued statistics with the observed value.
pub const REL_TOLERANCE: f64 = 1e-12;

/// Default limit on the number of assignments enumerated exactly.
pub const DEFAULT_ENUMERATION_CAP: u128 = 100_000_000;

const CHUNK: u128 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Count reference values at least as large as the observed statistic.
    Upper,
    /// Count reference values at most as large as the observed statistic.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Exact,
    MonteCarlo {
        draws: u64,
        seed: u64,
        /// Report `(1 + count) / (1 + draws)` instead of `count / draws`.
        add_one: bool,
    },
}

impl Mode {
    pub fn monte_carlo(draws: u64, seed: u64) -> Mode {
        Mode::MonteCarlo {
            draws,
            seed,
            add_one: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefConfig {
    pub enumeration_cap: u128,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Keep every reference value (in enumeration or draw order).
    pub keep_distribution: bool,
}

impl Default for RefConfig {
    fn default() -> Self {
        RefConfig {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            threads: None,
            keep_distribution: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PValue {
    pub p: f64,
    pub numerator: u128,
    pub denominator: u128,
    pub tail: Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceDistribution {
    pub mode: Mode,
    pub design: Design,
    pub values: Vec<f64>,
}

impl ReferenceDistribution {
    /// Distinct values in ascending order with their multiplicities.
    pub fn histogram(&self) -> Vec<(f64, u64)> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, u64)> = Vec::new();
        for x in v {
            match out.last_mut() {
                Some((last, c)) if last.to_bits() == x.to_bits() => *c += 1,
                _ => out.push((x, 1)),
            }
        }
        out
    }

    /// Two-column `value,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,count\n");
        for (v, c) in self.histogram() {
            s.push_str(&format!("{v},{c}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub t_obs: f64,
    pub p: PValue,
    #[serde(skip)]
    pub distribution: Option<ReferenceDistribution>,
}

/// Whether reference value `t` counts towards the tail beyond `obs`.
pub fn in_tail(t: &StatValue, obs: &StatValue, tail: Tail) -> bool {
    if let (Some(a), Some(b)) = (t.exact, obs.exact) {
        return match tail {
            Tail::Upper => a >= b,
            Tail::Lower => a <= b,
        };
    }
    let eps = REL_TOLERANCE * obs.value.abs().max(1.0);
    match tail {
        Tail::Upper => t.value >= obs.value - eps,
        Tail::Lower => t.value <= obs.value + eps,
    }
}

fn check_cap(design: &Design, cap: u128) -> Result<u128> {
    let size = design.size();
    if size > cap {
        return Err(Error::EnumerationTooLarge { size, cap });
    }
    Ok(size)
}

/// Walks assignments `start..end` of the exact enumeration, reusing one mask.
struct Cursor<'d> {
    design: &'d Design,
    pos: u128,
    end: u128,
    combo: Vec<usize>,
    mask: Vec<bool>,
}

impl<'d> Cursor<'d> {
    fn new(design: &'d Design, start: u128, end: u128) -> Self {
        let n = design.n();
        let mut c = Cursor {
            design,
            pos: start,
            end,
            combo: Vec::new(),
            mask: vec![false; n],
        };
        if start < end {
            match design {
                Design::Complete { n, n_treated } => {
                    c.combo = unrank_combination(*n, *n_treated, start);
                    for &i in &c.combo {
                        c.mask[i] = true;
                    }
                }
                Design::Paired { .. } => c.set_pairs(start),
            }
        }
        c
    }

    fn set_pairs(&mut self, k: u128) {
        if let Design::Paired { pairs, .. } = self.design {
            for (b, [first, second]) in pairs.iter().enumerate() {
                let bit = (k >> b) & 1 == 1;
                self.mask[*first] = !bit;
                self.mask[*second] = bit;
            }
        }
    }

    /// Current assignment, or `None` once the range is exhausted.
    fn current(&self) -> Option<&[bool]> {
        (self.pos < self.end).then_some(self.mask.as_slice())
    }

    fn advance(&mut self) {
        self.pos += 1;
        if self.pos >= self.end {
            return;
        }
        match self.design {
            Design::Complete { n, .. } => {
                for &i in &self.combo {
                    self.mask[i] = false;
                }
                next_combination(&mut self.combo, *n);
                for &i in &self.combo {
                    self.mask[i] = true;
                }
            }
            Design::Paired { .. } => self.set_pairs(self.pos),
        }
    }
}

/// Every admissible assignment exactly once, in the documented order.
pub struct Assignments<'d> {
    cursor: Cursor<'d>,
}

impl Iterator for Assignments<'_> {
    type Item = Vec<bool>;

    fn next(&mut self) -> Option<Vec<bool>> {
        let out = self.cursor.current()?.to_vec();
        self.cursor.advance();
        Some(out)
    }
}

pub fn enumerate_assignments(design: &Design, cap: u128) -> Result<Assignments<'_>> {
    let size = check_cap(design, cap)?;
    Ok(Assignments {
        cursor: Cursor::new(design, 0, size),
    })
}

/// Draw `k` of the Monte Carlo stream for `seed`.
pub fn sample_assignment(design: &Design, seed: u64, k: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let mut mask = vec![false; design.n()];
    match design {
        Design::Complete { n, n_treated } => {
            for i in index::sample(&mut rng, *n, *n_treated) {
                mask[i] = true;
            }
        }
        Design::Paired { pairs, .. } => {
            for [first, second] in pairs {
                let bit: bool = rng.random();
                mask[*first] = !bit;
                mask[*second] = bit;
            }
        }
    }
    mask
}

pub fn sample_assignments(design: &Design, seed: u64, draws: u64) -> impl Iterator<Item = Vec<bool>> + '_ {
    (0..draws).map(move |k| sample_assignment(design, seed, k))
}

#[derive(Default)]
struct Tally {
    upper: u128,
    lower: u128,
    values: Vec<f64>,
}

fn split(total: u128) -> Vec<(u128, u128)> {
    let mut out = Vec::new();
    let mut s = 0;
    while s < total {
        let e = (s + CHUNK).min(total);
        out.push((s, e));
        s = e;
    }
    out
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Count both tails of the reference distribution of `stat` on `schedule`.
fn tally(
    schedule: &Schedule,
    stat: &StatisticSpec,
    design: &Design,
    mode: &Mode,
    obs: &StatValue,
    cfg: &RefConfig,
) -> Result<(Tally, u128)> {
    let visit = |t: &mut Tally, v: StatValue| {
        t.upper += in_tail(&v, obs, Tail::Upper) as u128;
        t.lower += in_tail(&v, obs, Tail::Lower) as u128;
        if cfg.keep_distribution {
            t.values.push(v.value);
        }
    };
    let (ranges, total) = match mode {
        Mode::Exact => {
            let total = check_cap(design, cfg.enumeration_cap)?;
            (split(total), total)
        }
        Mode::MonteCarlo { draws, .. } => {
            if *draws == 0 {
                return Err(Error::InvalidParameter("Monte Carlo needs at least one draw".into()));
            }
            (split(*draws as u128), *draws as u128)
        }
    };
    let parts: Vec<Tally> = with_threads(cfg.threads, || {
        ranges
            .par_iter()
            .map(|&(start, end)| -> Result<Tally> {
                let mut ev = Evaluator::new(stat, schedule)?;
                let mut t = Tally::default();
                match mode {
                    Mode::Exact => {
                        let mut cur = Cursor::new(design, start, end);
                        while let Some(w) = cur.current() {
                            visit(&mut t, ev.eval(w)?);
                            cur.advance();
                        }
                    }
                    Mode::MonteCarlo { seed, .. } => {
                        for k in start..end {
                            let w = sample_assignment(design, *seed, k as u64);
                            visit(&mut t, ev.eval(&w)?);
                        }
                    }
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut acc = Tally::default();
    for p in parts {
        acc.upper += p.upper;
        acc.lower += p.lower;
        acc.values.extend(p.values);
    }
    Ok((acc, total))
}

/// p-value of the observed assignment `w_obs` against the reference
/// distribution of `stat` on an explicit schedule.
pub fn p_value_for_schedule(
    schedule: &Schedule,
    w_obs: &[bool],
    stat: &StatisticSpec,
    design: &Design,
    mode: &Mode,
    tail: Tail,
    cfg: &RefConfig,
) -> Result<TestOutcome> {
    if schedule.len() != design.n() {
        return Err(Error::LengthMismatch {
            expected: design.n(),
            found: schedule.len(),
        });
    }
    let obs = Evaluator::new(stat, schedule)?.eval(w_obs)?;
    let (t, total) = tally(schedule, stat, design, mode, &obs, cfg)?;
    let count = match tail {
        Tail::Upper => t.upper,
        Tail::Lower => t.lower,
    };
    let (numerator, denominator) = match mode {
        Mode::MonteCarlo { add_one: true, .. } => (count + 1, total + 1),
        _ => (count, total),
    };
    let distribution = cfg.keep_distribution.then(|| ReferenceDistribution {
        mode: *mode,
        design: design.clone(),
        values: t.values,
    });
    Ok(TestOutcome {
        t_obs: obs.value,
        p: PValue {
            p: numerator as f64 / denominator as f64,
            numerator,
            denominator,
            tail,
        },
        distribution,
    })
}

/// Both one-sided p-values from a single pass (upper, lower).
pub fn two_tails_for_schedule(
    schedule: &Schedule,
    w_obs: &[bool],
    stat: &StatisticSpec,
    design: &Design,
    mode: &Mode,
    cfg: &RefConfig,
) -> Result<(PValue, PValue)> {
    let obs = Evaluator::new(stat, schedule)?.eval(w_obs)?;
    let (t, total) = tally(schedule, stat, design, mode, &obs, cfg)?;
    let add = matches!(mode, Mode::MonteCarlo { add_one: true, .. }) as u128;
    let mk = |count: u128, tail| PValue {
        p: (count + add) as f64 / (total + add) as f64,
        numerator: count + add,
        denominator: total + add,
        tail,
    };
    Ok((mk(t.upper, Tail::Upper), mk(t.lower, Tail::Lower)))
}

/// p-value of the sharp null `e` on dataset `d`.
pub fn p_value(
    d: &Dataset,
    e: &EffectSpec,
    stat: &StatisticSpec,
    design: &Design,
    mode: &Mode,
    tail: Tail,
    cfg: &RefConfig,
) -> Result<TestOutcome> {
    design.check_dataset(d)?;
    let schedule = impute_schedule(d, e)?;
    p_value_for_schedule(&schedule, &d.treatment(), stat, design, mode, tail, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::table1;

    fn exact(d: &Dataset, e: EffectSpec) -> PValue {
        let design = Design::for_dataset(d).unwrap();
        p_value(d, &e, &StatisticSpec::DiffMeans, &design, &Mode::Exact, Tail::Upper, &RefConfig::default())
            .unwrap()
            .p
    }

    #[test]
    fn enumeration_sizes_and_order() {
        let design = Design::complete(16, 8).unwrap();
        assert_eq!(enumerate_assignments(&design, DEFAULT_ENUMERATION_CAP).unwrap().count(), 12870);

        let design = Design::complete(4, 2).unwrap();
        let all: Vec<Vec<bool>> = enumerate_assignments(&design, 100).unwrap().collect();
        let t = true;
        let f = false;
        assert_eq!(
            all,
            vec![
                vec![t, t, f, f],
                vec![t, f, t, f],
                vec![t, f, f, t],
                vec![f, t, t, f],
                vec![f, t, f, t],
                vec![f, f, t, t],
            ]
        );

        let pairs: Vec<[usize; 2]> = (0..8).map(|b| [2 * b, 2 * b + 1]).collect();
        let design = Design::paired(16, pairs).unwrap();
        let all: Vec<Vec<bool>> = enumerate_assignments(&design, 1000).unwrap().collect();
        assert_eq!(all.len(), 256);
        assert!(all.iter().all(|w| design.is_admissible(w)));
        let mut uniq = all.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 256);
        assert!(all[0].iter().step_by(2).all(|&t| t));
        assert!(all[1][1] && !all[1][0]);
    }

    #[test]
    fn enumeration_cap() {
        let design = Design::complete(40, 20).unwrap();
        assert!(matches!(
            enumerate_assignments(&design, DEFAULT_ENUMERATION_CAP),
            Err(Error::EnumerationTooLarge { .. })
        ));
        let d = Dataset::from_arrays(
            &(0..40).map(|i| i < 20).collect::<Vec<_>>(),
            &(0..40).map(|i| i as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        let r = p_value(&d, &EffectSpec::zero(), &StatisticSpec::DiffMeans, &design, &Mode::Exact, Tail::Upper, &RefConfig::default());
        assert!(matches!(r, Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn sampling_is_admissible_and_deterministic() {
        let design = Design::complete(10, 3).unwrap();
        let a: Vec<_> = sample_assignments(&design, 7, 50).collect();
        let b: Vec<_> = sample_assignments(&design, 7, 50).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| design.is_admissible(w)));
        assert_eq!(sample_assignments(&design, 7, 1).count(), 1);
        assert_eq!(a[17], sample_assignment(&design, 7, 17));
        let c: Vec<_> = sample_assignments(&design, 8, 50).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_is_uniform() {
        // chi-square style: each of the 6 assignments within 4 standard errors of 1/6
        let design = Design::complete(4, 2).unwrap();
        let all: Vec<Vec<bool>> = enumerate_assignments(&design, 100).unwrap().collect();
        let draws = 60_000u64;
        let mut counts = [0u64; 6];
        for w in sample_assignments(&design, 2024, draws) {
            counts[all.iter().position(|a| *a == w).unwrap()] += 1;
        }
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            assert!((c as f64 / draws as f64 - p).abs() < 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn example_goldens() {
        let d = table1();
        let p0 = exact(&d, EffectSpec::zero());
        assert_eq!((p0.numerator, p0.denominator), (522, 12870));
        assert_eq!(format!("{:.3}", p0.p), "0.041");
        let p1 = exact(&d, EffectSpec::Constant(-1.0));
        assert_eq!(p1.numerator, 27);
        let mut tau = vec![0.0; 16];
        tau[1] = -2.0;
        tau[11] = -1.0;
        let p2 = exact(&d, EffectSpec::PerUnit(tau));
        assert_eq!(p2.numerator, 349);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let d = table1();
        let design = Design::for_dataset(&d).unwrap();
        for stat in [StatisticSpec::DiffMeans, StatisticSpec::Stephenson { subset: 4 }] {
            let mut results = Vec::new();
            for threads in [1, 3] {
                let cfg = RefConfig {
                    threads: Some(threads),
                    keep_distribution: true,
                    ..RefConfig::default()
                };
                let r = p_value(&d, &EffectSpec::Constant(-0.5), &stat, &design, &Mode::Exact, Tail::Upper, &cfg).unwrap();
                results.push((r.p, r.distribution.unwrap().values));
            }
            assert_eq!(results[0], results[1]);
        }
    }

    #[test]
    fn monte_carlo_estimates_and_add_one() {
        let d = table1();
        let design = Design::for_dataset(&d).unwrap();
        let cfg = RefConfig::default();
        let mc = |add_one| {
            p_value(
                &d,
                &EffectSpec::zero(),
                &StatisticSpec::DiffMeans,
                &design,
                &Mode::MonteCarlo { draws: 20_000, seed: 11, add_one },
                Tail::Upper,
                &cfg,
            )
            .unwrap()
            .p
        };
        let plain = mc(false);
        let shifted = mc(true);
        assert_eq!(plain.denominator, 20_000);
        assert_eq!(shifted.numerator, plain.numerator + 1);
        assert_eq!(shifted.denominator, 20_001);
        let exact_p: f64 = 522.0 / 12870.0;
        let se = (exact_p * (1.0 - exact_p) / 20_000.0).sqrt();
        assert!((plain.p - exact_p).abs() < 4.0 * se);
    }

    #[test]
    fn lower_tail_and_histogram() {
        let d = table1();
        let design = Design::for_dataset(&d).unwrap();
        let cfg = RefConfig {
            keep_distribution: true,
            ..RefConfig::default()
        };
        let up = p_value(&d, &EffectSpec::zero(), &StatisticSpec::RankSum, &design, &Mode::Exact, Tail::Upper, &cfg).unwrap();
        let lo = p_value(&d, &EffectSpec::zero(), &StatisticSpec::RankSum, &design, &Mode::Exact, Tail::Lower, &cfg).unwrap();
        let dist = up.distribution.unwrap();
        let ties = dist.values.iter().filter(|&&v| v == up.t_obs).count() as u128;
        assert_eq!(up.p.numerator + lo.p.numerator, 12870 + ties);
        let hist = dist.histogram();
        assert_eq!(hist.iter().map(|h| h.1).sum::<u64>(), 12870);
        assert!(hist.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(dist.to_csv().starts_with("value,count\n36,1\n"));
    }

    #[test]
    fn observed_assignment_counted_once() {
        // n=4, n_T=2: treated {3,4} vs control {1,2}; only the observed split reaches 2
        let d = Dataset::from_arrays(&[false, false, true, true], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = exact(&d, EffectSpec::zero());
        assert_eq!((p.numerator, p.denominator), (1, 6));
    }
}
