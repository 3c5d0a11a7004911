//! Datasets, designs, potential-outcome schedules and effect specifications.
//!
//! Unit order is the order in which rows were supplied and is used as the
//! canonical index everywhere else in the crate. Blocks are ordered by the
//! first appearance of their label.

use serde::Serialize;
use std::collections::{HashMap, HashSet};

use crate::combin::binomial;
use crate::error::{Error, Result};

/// One row as delivered by an ingestion layer, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub id: String,
    pub w: i64,
    pub y: f64,
    pub block: Option<String>,
}

impl RawRow {
    pub fn new(id: impl Into<String>, w: i64, y: f64) -> Self {
        RawRow {
            id: id.into(),
            w,
            y,
            block: None,
        }
    }

    pub fn with_block(mut self, block: impl Into<String>) -> Self {
        self.block = Some(block.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Unit {
    pub id: String,
    pub treated: bool,
    pub y: f64,
    pub block: Option<String>,
}

/// Observed units of an experiment. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    units: Vec<Unit>,
}

/// Validate raw rows into a [`Dataset`].
pub fn validate_dataset(rows: Vec<RawRow>) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::DegenerateDesign("no units".into()));
    }
    let mut seen = HashSet::with_capacity(rows.len());
    let mut units = Vec::with_capacity(rows.len());
    for row in rows {
        let treated = match row.w {
            0 => false,
            1 => true,
            other => {
                return Err(Error::NonBinaryTreatment {
                    id: row.id,
                    value: other,
                })
            }
        };
        if !row.y.is_finite() {
            return Err(Error::NonFiniteOutcome(row.id));
        }
        if !seen.insert(row.id.clone()) {
            return Err(Error::DuplicateId(row.id));
        }
        let block = row.block.filter(|b| !b.trim().is_empty());
        units.push(Unit {
            id: row.id,
            treated,
            y: row.y,
            block,
        });
    }

    let labelled = units.iter().filter(|u| u.block.is_some()).count();
    if labelled > 0 {
        if let Some(u) = units.iter().find(|u| u.block.is_none()) {
            return Err(Error::MissingBlock(u.id.clone()));
        }
        let dataset = Dataset { units };
        for (label, members) in dataset.blocks() {
            let treated = members.iter().filter(|&&i| dataset.units[i].treated).count();
            if members.len() < 2 || treated == 0 || treated == members.len() {
                return Err(Error::DegenerateBlock(label));
            }
        }
        Ok(dataset)
    } else {
        let treated = units.iter().filter(|u| u.treated).count();
        if treated == 0 || treated == units.len() {
            return Err(Error::DegenerateDesign(
                "need at least one treated and one control unit".into(),
            ));
        }
        Ok(Dataset { units })
    }
}

impl Dataset {
    /// Unblocked dataset from parallel treatment/outcome slices; ids are `1..=n`.
    pub fn from_arrays(w: &[bool], y: &[f64]) -> Result<Dataset> {
        if w.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: w.len(),
                found: y.len(),
            });
        }
        let rows = w
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&t, &v))| RawRow::new((i + 1).to_string(), t as i64, v))
            .collect();
        validate_dataset(rows)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.treated).count()
    }

    pub fn treatment(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.treated).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y).collect()
    }

    pub fn is_blocked(&self) -> bool {
        self.units.first().is_some_and(|u| u.block.is_some())
    }

    /// Blocks in order of first appearance, each with its member indices.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>)> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            if let Some(b) = &u.block {
                match index.get(b.as_str()) {
                    Some(&k) => out[k].1.push(i),
                    None => {
                        index.insert(b, out.len());
                        out.push((b.clone(), vec![i]));
                    }
                }
            }
        }
        out
    }

    /// Same units with every outcome negated.
    pub fn negated(&self) -> Dataset {
        Dataset {
            units: self
                .units
                .iter()
                .map(|u| Unit {
                    y: -u.y,
                    ..u.clone()
                })
                .collect(),
        }
    }

    /// Same units with outcomes replaced (used by simulations that re-randomize).
    pub fn with_observations(&self, w: &[bool], y: &[f64]) -> Result<Dataset> {
        if w.len() != self.n() || y.len() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                found: w.len().min(y.len()),
            });
        }
        let rows = self
            .units
            .iter()
            .zip(w.iter().zip(y))
            .map(|(u, (&t, &v))| RawRow {
                id: u.id.clone(),
                w: t as i64,
                y: v,
                block: u.block.clone(),
            })
            .collect();
        validate_dataset(rows)
    }
}

/// The assignment mechanism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// `n_treated` of `n` units treated, all subsets equally likely.
    Complete { n: usize, n_treated: usize },
    /// One treated and one control unit per pair, coin flip within each pair.
    Paired { n: usize, pairs: Vec<[usize; 2]> },
}

impl Design {
    pub fn complete(n: usize, n_treated: usize) -> Result<Design> {
        if n_treated == 0 || n_treated >= n {
            return Err(Error::DegenerateDesign(format!(
                "complete randomization needs 0 < n_treated < n (got {n_treated} of {n})"
            )));
        }
        Ok(Design::Complete { n, n_treated })
    }

    pub fn paired(n: usize, pairs: Vec<[usize; 2]>) -> Result<Design> {
        if pairs.is_empty() {
            return Err(Error::DegenerateDesign("no pairs".into()));
        }
        let mut seen = vec![false; n];
        for p in &pairs {
            for &i in p {
                if i >= n || seen[i] {
                    return Err(Error::DegenerateDesign(format!(
                        "unit index {i} out of range or used twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DegenerateDesign(
                "every unit must belong to exactly one pair".into(),
            ));
        }
        Ok(Design::Paired { n, pairs })
    }

    /// The design implied by a dataset: pairs when blocked, complete randomization otherwise.
    pub fn for_dataset(d: &Dataset) -> Result<Design> {
        if d.is_blocked() {
            let mut pairs = Vec::new();
            for (label, members) in d.blocks() {
                if members.len() != 2 {
                    return Err(Error::DegenerateDesign(format!(
                        "block `{label}` has {} units; only paired blocks are supported",
                        members.len()
                    )));
                }
                pairs.push([members[0], members[1]]);
            }
            Design::paired(d.n(), pairs)
        } else {
            Design::complete(d.n(), d.n_treated())
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Design::Complete { n, .. } | Design::Paired { n, .. } => *n,
        }
    }

    pub fn n_treated(&self) -> usize {
        match self {
            Design::Complete { n_treated, .. } => *n_treated,
            Design::Paired { pairs, .. } => pairs.len(),
        }
    }

    /// Number of admissible assignments, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        match self {
            Design::Complete { n, n_treated } => {
                binomial(*n as u64, *n_treated as u64).unwrap_or(u128::MAX)
            }
            Design::Paired { pairs, .. } => {
                if pairs.len() >= 128 {
                    u128::MAX
                } else {
                    1u128 << pairs.len()
                }
            }
        }
    }

    pub fn is_admissible(&self, w: &[bool]) -> bool {
        if w.len() != self.n() {
            return false;
        }
        match self {
            Design::Complete { n_treated, .. } => w.iter().filter(|&&t| t).count() == *n_treated,
            Design::Paired { pairs, .. } => pairs.iter().all(|[a, b]| w[*a] != w[*b]),
        }
    }

    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if d.n() != self.n() {
            return Err(Error::LengthMismatch {
                expected: self.n(),
                found: d.n(),
            });
        }
        if !self.is_admissible(&d.treatment()) {
            return Err(Error::DegenerateDesign(
                "observed assignment is not admissible under the design".into(),
            ));
        }
        Ok(())
    }
}

/// A full potential-outcome table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    y0: Vec<f64>,
    y1: Vec<f64>,
}

impl Schedule {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>) -> Result<Schedule> {
        if y0.len() != y1.len() {
            return Err(Error::LengthMismatch {
                expected: y0.len(),
                found: y1.len(),
            });
        }
        if let Some(i) = y0.iter().chain(&y1).position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutcome(format!("{}", i % y0.len().max(1) + 1)));
        }
        Ok(Schedule { y0, y1 })
    }

    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn tau(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// Outcomes that would be observed under assignment `w`.
    pub fn realized(&self, w: &[bool]) -> Vec<f64> {
        w.iter()
            .enumerate()
            .map(|(i, &t)| if t { self.y1[i] } else { self.y0[i] })
            .collect()
    }

    /// True when every unit has bit-identical potential outcomes.
    pub fn is_effect_free(&self) -> bool {
        self.y0
            .iter()
            .zip(&self.y1)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn negated(&self) -> Schedule {
        Schedule {
            y0: self.y0.iter().map(|v| -v).collect(),
            y1: self.y1.iter().map(|v| -v).collect(),
        }
    }
}

/// A hypothesized vector of unit-level effects.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSpec {
    Constant(f64),
    PerUnit(Vec<f64>),
}

impl EffectSpec {
    pub fn zero() -> EffectSpec {
        EffectSpec::Constant(0.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            EffectSpec::Constant(t) if !t.is_finite() => {
                Err(Error::InvalidParameter("effect must be finite".into()))
            }
            EffectSpec::Constant(_) => Ok(()),
            EffectSpec::PerUnit(v) => {
                if v.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        found: v.len(),
                    });
                }
                if v.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidParameter("effects must be finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            EffectSpec::Constant(t) => *t,
            EffectSpec::PerUnit(v) => v[i],
        }
    }

    pub fn negated(&self) -> EffectSpec {
        match self {
            EffectSpec::Constant(t) => EffectSpec::Constant(-t),
            EffectSpec::PerUnit(v) => EffectSpec::PerUnit(v.iter().map(|t| -t).collect()),
        }
    }
}

/// Outcome of comparing two schedules under the effect ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScheduleOrdering {
    Equal,
    LessOrEqual,
    GreaterOrEqual,
    Incomparable,
}

/// `a ⪯ b` when every treated outcome of `a` is no larger than in `b` and every
/// control outcome of `a` is no smaller than in `b`.
pub fn compare_schedules(a: &Schedule, b: &Schedule) -> Result<ScheduleOrdering> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let a_le_b = (0..a.len()).all(|i| a.y1[i] <= b.y1[i] && a.y0[i] >= b.y0[i]);
    let b_le_a = (0..a.len()).all(|i| b.y1[i] <= a.y1[i] && b.y0[i] >= a.y0[i]);
    Ok(match (a_le_b, b_le_a) {
        (true, true) => ScheduleOrdering::Equal,
        (true, false) => ScheduleOrdering::LessOrEqual,
        (false, true) => ScheduleOrdering::GreaterOrEqual,
        (false, false) => ScheduleOrdering::Incomparable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_validates() {
        let d = validate_dataset(crate::testdata::table1_rows()).unwrap();
        assert_eq!(d.n(), 16);
        assert_eq!(d.n_treated(), 8);
        assert!(!d.is_blocked());
        assert_eq!(Design::for_dataset(&d).unwrap().size(), 12870);
    }

    #[test]
    fn empty_rows_are_degenerate() {
        assert!(matches!(
            validate_dataset(vec![]),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn non_binary_treatment_rejected() {
        let rows = vec![
            RawRow::new("a", 0, 1.0),
            RawRow::new("b", 1, 2.0),
            RawRow::new("c", 2, 3.0),
        ];
        assert_eq!(
            validate_dataset(rows),
            Err(Error::NonBinaryTreatment {
                id: "c".into(),
                value: 2
            })
        );
    }

    #[test]
    fn duplicate_and_nonfinite() {
        let rows = vec![RawRow::new("a", 0, 1.0), RawRow::new("a", 1, 2.0)];
        assert_eq!(validate_dataset(rows), Err(Error::DuplicateId("a".into())));
        let rows = vec![RawRow::new("a", 0, 1.0), RawRow::new("b", 1, f64::NAN)];
        assert_eq!(
            validate_dataset(rows),
            Err(Error::NonFiniteOutcome("b".into()))
        );
    }

    #[test]
    fn block_rules() {
        let rows = vec![
            RawRow::new("a", 0, 1.0).with_block("x"),
            RawRow::new("b", 1, 2.0),
        ];
        assert_eq!(validate_dataset(rows), Err(Error::MissingBlock("b".into())));

        let rows = vec![
            RawRow::new("a", 1, 1.0).with_block("x"),
            RawRow::new("b", 1, 2.0).with_block("x"),
            RawRow::new("c", 0, 2.0).with_block("y"),
            RawRow::new("d", 1, 2.0).with_block("y"),
        ];
        assert_eq!(
            validate_dataset(rows),
            Err(Error::DegenerateBlock("x".into()))
        );

        let rows = vec![
            RawRow::new("a", 1, 1.0).with_block("x"),
            RawRow::new("c", 0, 2.0).with_block("y"),
            RawRow::new("b", 0, 2.0).with_block("x"),
            RawRow::new("d", 1, 2.0).with_block("y"),
        ];
        let d = validate_dataset(rows).unwrap();
        let design = Design::for_dataset(&d).unwrap();
        assert_eq!(
            design,
            Design::Paired {
                n: 4,
                pairs: vec![[0, 2], [1, 3]]
            }
        );
        assert_eq!(design.size(), 4);
    }

    #[test]
    fn all_treated_is_degenerate() {
        let rows = vec![RawRow::new("a", 1, 1.0), RawRow::new("b", 1, 2.0)];
        assert!(matches!(
            validate_dataset(rows),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn ordering_examples() {
        let a = Schedule::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 3.0]).unwrap();
        assert_eq!(compare_schedules(&a, &a).unwrap(), ScheduleOrdering::Equal);

        let mut y1 = a.y1().to_vec();
        y1[1] += 1.0;
        let b = Schedule::new(a.y0().to_vec(), y1.clone()).unwrap();
        assert_eq!(
            compare_schedules(&a, &b).unwrap(),
            ScheduleOrdering::LessOrEqual
        );
        assert_eq!(
            compare_schedules(&b, &a).unwrap(),
            ScheduleOrdering::GreaterOrEqual
        );

        let mut y0 = a.y0().to_vec();
        y0[2] += 1.0;
        let c = Schedule::new(y0, y1).unwrap();
        assert_eq!(
            compare_schedules(&a, &c).unwrap(),
            ScheduleOrdering::Incomparable
        );

        let short = Schedule::new(vec![0.0], vec![0.0]).unwrap();
        assert!(matches!(
            compare_schedules(&a, &short),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn design_validation() {
        assert!(Design::complete(4, 0).is_err());
        assert!(Design::complete(4, 4).is_err());
        assert!(Design::paired(4, vec![[0, 1], [1, 2]]).is_err());
        assert!(Design::paired(4, vec![[0, 1]]).is_err());
        let d = Design::complete(4, 2).unwrap();
        assert!(d.is_admissible(&[true, false, true, false]));
        assert!(!d.is_admissible(&[true, true, true, false]));
    }
}
