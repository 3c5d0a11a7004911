//! Library side of the `boundnull` command: CSV ingestion, run configuration,
//! dispatch to the inference routines and the JSON result envelope.

use std::path::{Path, PathBuf};
use std::time::Instant;

use boundnull_core::data::{validate_dataset, Dataset, Design, EffectSpec, RawRow};
use boundnull_core::impute::{impute_variant, ImputationVariant};
use boundnull_core::infer::{
    invert_ci, test_bounded, test_monotonicity, test_simultaneous, Direction, GridConfig, InstrumentDirection, Target,
};
use boundnull_core::oracle::{compare, ei_property_check, exhaustive_p, OracleReport};
use boundnull_core::refdist::{p_value_for_schedule, Mode, RefConfig, Tail, TestOutcome};
use boundnull_core::sim::{self, SimulationScenario};
use boundnull_core::stats::StatisticSpec;
use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] boundnull_core::Error),
}

impl CliError {
    /// 2 usage, 3 data, 4 computation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::FileNotFound(_) | CliError::Parse { .. } => 3,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Io(_) | CliError::Core(_) => 4,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::FileNotFound(_) => "FileNotFound",
            CliError::Parse { .. } => "ParseError",
            CliError::Io(_) => "Io",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": { "code": self.code(), "message": self.to_string() } })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnMapping {
    pub id: String,
    pub w: String,
    pub y: String,
    pub block: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: "id".into(),
            w: "w".into(),
            y: "y".into(),
            block: None,
        }
    }
}

/// Read a dataset from a headed CSV file. Rows are numbered from 1 for the
/// first line after the header. The id column is optional; when absent, ids
/// are row numbers. `extra` names an additional numeric column to return.
pub fn ingest_csv_with(path: &Path, mapping: &ColumnMapping, extra: Option<&str>) -> CliResult<(Dataset, Option<Vec<f64>>)> {
    if !path.is_file() {
        return Err(CliError::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let find = |name: &str| -> CliResult<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Parse {
            row: 0,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
    };
    let id_col = headers.iter().position(|h| h == mapping.id);
    let w_col = find(&mapping.w)?;
    let y_col = find(&mapping.y)?;
    let block_col = mapping.block.as_deref().map(find).transpose()?;
    let extra_col = extra.map(find).transpose()?;

    let mut rows = Vec::new();
    let mut extras = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| CliError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let w: i64 = field(w_col).parse().map_err(|_| CliError::Parse {
            row,
            column: mapping.w.clone(),
            message: format!("expected 0 or 1, found `{}`", field(w_col)),
        })?;
        let number = |c: usize, name: &str| -> CliResult<f64> {
            field(c).parse().map_err(|_| CliError::Parse {
                row,
                column: name.to_string(),
                message: format!("expected a number, found `{}`", field(c)),
            })
        };
        let y = number(y_col, &mapping.y)?;
        let id = id_col.map(|c| field(c).to_string()).unwrap_or_else(|| row.to_string());
        let mut raw = RawRow::new(id, w, y);
        if let Some(c) = block_col {
            raw = raw.with_block(field(c));
        }
        rows.push(raw);
        if let (Some(c), Some(name)) = (extra_col, extra) {
            extras.push(number(c, name)?);
        }
    }
    let d = validate_dataset(rows)?;
    Ok((d, extra_col.map(|_| extras)))
}

pub fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> CliResult<Dataset> {
    Ok(ingest_csv_with(path, mapping, None)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestDirection {
    Sharp,
    NonSuperiority,
    NonInferiority,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Test {
        direction: TestDirection,
        tail: Tail,
        null: NullSpec,
        impute: ImputationVariant,
        alpha: f64,
        export_dist: Option<PathBuf>,
    },
    Ci {
        target: Target,
        alpha: f64,
        outcome_range: Option<(f64, f64)>,
    },
    Simultaneous,
    Monotonicity {
        instrument: InstrumentDirection,
        alpha: f64,
    },
    /// Compare the optimized p-value with the brute-force one on the input.
    OracleP { null: NullSpec, tail: Tail },
    /// Search for effect-increasing violations of the statistic on random schedules.
    OracleEi { trials: usize, n: usize, n_treated: usize, seed: u64 },
    Sim { scenario: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullSpec {
    Constant(f64),
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    pub input: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub statistic: String,
    pub mode: Mode,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let alpha = match &self.command {
            Command::Test { alpha, .. } | Command::Ci { alpha, .. } | Command::Monotonicity { alpha, .. } => Some(*alpha),
            _ => None,
        };
        if let Some(a) = alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {a}")));
            }
        }
        if let Command::Test { direction, impute, .. } = &self.command {
            if *direction != TestDirection::Sharp && *impute != ImputationVariant::BothSides {
                return Err(CliError::Usage("--impute applies to --direction sharp only".into()));
            }
        }
        if let Mode::MonteCarlo { draws: 0, .. } = self.mode {
            return Err(CliError::Usage("--draws must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        let needs_input = !matches!(self.command, Command::Sim { .. } | Command::OracleEi { .. });
        if needs_input && self.input.is_none() {
            return Err(CliError::Usage("--input is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

/// Output document. `timing` is serialized last so that runs can be compared
/// byte for byte after dropping it.
#[derive(Debug, Clone, Serialize)]
pub struct ResultEnvelope {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub result: Value,
    pub timing: Timing,
}

impl ResultEnvelope {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn resolve_null(null: &NullSpec, extra: Option<Vec<f64>>) -> EffectSpec {
    match (null, extra) {
        (NullSpec::Column(_), Some(v)) => EffectSpec::PerUnit(v),
        (NullSpec::Constant(t), _) => EffectSpec::Constant(*t),
        (NullSpec::Column(_), None) => EffectSpec::zero(),
    }
}

fn load(cfg: &RunConfig, null: Option<&NullSpec>) -> CliResult<(Dataset, EffectSpec)> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let extra = match null {
        Some(NullSpec::Column(c)) => Some(c.as_str()),
        _ => None,
    };
    let (d, col) = ingest_csv_with(path, &cfg.columns, extra)?;
    Ok((d, null.map(|n| resolve_null(n, col)).unwrap_or_else(EffectSpec::zero)))
}

fn write_distribution(path: &Path, outcome: &TestOutcome) -> CliResult<()> {
    let dist = outcome.distribution.as_ref().expect("distribution requested");
    std::fs::write(path, dist.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run_test(
    cfg: &RunConfig,
    stat: &StatisticSpec,
    rc: &RefConfig,
    direction: TestDirection,
    tail: Tail,
    null: &NullSpec,
    impute: ImputationVariant,
    alpha: f64,
    export: Option<&Path>,
) -> CliResult<Value> {
    let (d, e) = load(cfg, Some(null))?;
    let design = Design::for_dataset(&d)?;
    let rc = RefConfig {
        keep_distribution: export.is_some(),
        ..rc.clone()
    };
    // reference distribution in the orientation the test is carried out in
    let (data, effect, statistic, used_tail) = match direction {
        TestDirection::Sharp => (d.clone(), e.clone(), stat.clone(), tail),
        TestDirection::NonSuperiority => (d.clone(), e.clone(), stat.clone(), Tail::Upper),
        TestDirection::NonInferiority => (d.negated(), e.negated(), stat.mirrored(), Tail::Upper),
    };
    if direction != TestDirection::Sharp {
        let dir = match direction {
            TestDirection::NonSuperiority => Direction::NonSuperiority,
            _ => Direction::NonInferiority,
        };
        let r = test_bounded(&d, &e, stat, &design, dir, alpha, &cfg.mode, &rc)?;
        if let Some(path) = export {
            design.check_dataset(&data)?;
            let schedule = impute_variant(&data, &effect, ImputationVariant::BothSides)?;
            let out = p_value_for_schedule(&schedule, &data.treatment(), &statistic, &design, &cfg.mode, used_tail, &rc)?;
            write_distribution(path, &out)?;
        }
        let mut v = to_value(&r);
        v["kind"] = json!("bounded-test");
        return Ok(v);
    }
    design.check_dataset(&d)?;
    let schedule = impute_variant(&d, &e, impute)?;
    let out = p_value_for_schedule(&schedule, &d.treatment(), stat, &design, &cfg.mode, tail, &rc)?;
    if let Some(path) = export {
        write_distribution(path, &out)?;
    }
    Ok(json!({
        "kind": "sharp-test",
        "statistic": stat.to_string(),
        "tau0": e,
        "imputation": impute,
        "t_obs": out.t_obs,
        "p": out.p,
        "alpha": alpha,
        "reject": out.p.p <= alpha,
        "at_boundary": out.p.p == alpha,
    }))
}

fn dispatch(cfg: &RunConfig) -> CliResult<Value> {
    let stat: StatisticSpec = cfg
        .statistic
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown statistic `{}`", cfg.statistic)))?;
    let rc = RefConfig {
        threads: cfg.threads,
        ..RefConfig::default()
    };
    match &cfg.command {
        Command::Test {
            direction,
            tail,
            null,
            impute,
            alpha,
            export_dist,
        } => run_test(cfg, &stat, &rc, *direction, *tail, null, *impute, *alpha, export_dist.as_deref()),
        Command::Ci {
            target,
            alpha,
            outcome_range,
        } => {
            let (d, _) = load(cfg, None)?;
            let design = Design::for_dataset(&d)?;
            let grid = GridConfig {
                outcome_range: *outcome_range,
                ..GridConfig::default()
            };
            let r = invert_ci(&d, &stat, &design, *target, *alpha, &cfg.mode, &grid, &rc)?;
            let (lo, hi) = r.interval();
            let mut v = to_value(&r);
            v["interval"] = json!([extended(lo), extended(hi)]);
            Ok(v)
        }
        Command::Simultaneous => {
            let (d, _) = load(cfg, None)?;
            let design = Design::for_dataset(&d)?;
            Ok(to_value(&test_simultaneous(&d, &stat, &design, &cfg.mode, &rc)?))
        }
        Command::Monotonicity { instrument, alpha } => {
            let (d, _) = load(cfg, None)?;
            let design = Design::for_dataset(&d)?;
            let r = test_monotonicity(&d, &stat, &design, *instrument, *alpha, &cfg.mode, &rc)?;
            let mut v = to_value(&r);
            v["monotonicity_violated"] = json!(r.reject);
            Ok(v)
        }
        Command::OracleP { null, tail } => {
            let (d, e) = load(cfg, Some(null))?;
            let design = Design::for_dataset(&d)?;
            design.check_dataset(&d)?;
            let schedule = impute_variant(&d, &e, ImputationVariant::BothSides)?;
            let fast = p_value_for_schedule(&schedule, &d.treatment(), &stat, &design, &Mode::Exact, *tail, &rc)?;
            let slow = exhaustive_p(&d, &e, &stat, &design, *tail)?;
            let mut report: OracleReport = compare(
                format!("{stat} p-value numerator over {} assignments", slow.denominator),
                fast.p.numerator as f64,
                slow.numerator as f64,
                true,
            );
            report.agree &= fast.p.denominator == slow.denominator;
            Ok(to_value(&report))
        }
        Command::OracleEi {
            trials,
            n,
            n_treated,
            seed,
        } => {
            let design = Design::complete(*n, *n_treated)?;
            Ok(to_value(&ei_property_check(&stat, *trials, &design, *seed)?))
        }
        Command::Sim { scenario } => {
            let text = std::fs::read_to_string(scenario).map_err(|_| CliError::FileNotFound(scenario.display().to_string()))?;
            let s = SimulationScenario::from_toml(&text)?;
            let r = match cfg.threads {
                Some(k) => rayon_pool(k)?.install(|| sim::run(&s)),
                None => sim::run(&s),
            }?;
            Ok(to_value(&r))
        }
    }
}

fn rayon_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))
}

fn extended(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn run(cfg: RunConfig) -> CliResult<ResultEnvelope> {
    cfg.validate()?;
    let start = Instant::now();
    let result = dispatch(&cfg)?;
    Ok(ResultEnvelope {
        schema_version: SCHEMA_VERSION,
        tool: "boundnull",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        result,
        timing: Timing {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn header_only_is_degenerate() {
        let f = temp_csv("id,w,y\n");
        let e = ingest_csv(f.path(), &ColumnMapping::default()).unwrap_err();
        assert_eq!(e.code(), "DegenerateDesign");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn words_in_treatment_column() {
        let f = temp_csv("id,w,y\na,yes,1.0\nb,no,2.0\n");
        match ingest_csv(f.path(), &ColumnMapping::default()).unwrap_err() {
            CliError::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "w");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_outcome_reports_row_and_column() {
        let f = temp_csv("id,w,y\na,1,1.0\nb,0,x\n");
        let e = ingest_csv(f.path(), &ColumnMapping::default()).unwrap_err();
        assert!(matches!(e, CliError::Parse { row: 2, ref column, .. } if column == "y"));
    }

    #[test]
    fn missing_file_and_columns() {
        let e = ingest_csv(Path::new("/nonexistent/x.csv"), &ColumnMapping::default()).unwrap_err();
        assert_eq!(e.code(), "FileNotFound");
        let f = temp_csv("a,b\n1,2\n");
        assert!(matches!(ingest_csv(f.path(), &ColumnMapping::default()), Err(CliError::Parse { row: 0, .. })));
    }

    #[test]
    fn custom_columns_blank_blocks_and_extra() {
        let f = temp_csv("unit,z,out,grp,bound\nu1,1,2.5,,0.5\nu2,0,1.0,,0.25\n");
        let mapping = ColumnMapping {
            id: "unit".into(),
            w: "z".into(),
            y: "out".into(),
            block: Some("grp".into()),
        };
        let (d, extra) = ingest_csv_with(f.path(), &mapping, Some("bound")).unwrap();
        assert_eq!(d.n(), 2);
        assert!(!d.is_blocked());
        assert_eq!(d.units()[0].id, "u1");
        assert_eq!(extra, Some(vec![0.5, 0.25]));
    }

    #[test]
    fn config_validation() {
        let cfg = RunConfig {
            command: Command::Ci {
                target: Target::MaxEffect,
                alpha: 1.5,
                outcome_range: None,
            },
            input: Some("x.csv".into()),
            columns: ColumnMapping::default(),
            statistic: "diff-means".into(),
            mode: Mode::Exact,
            threads: None,
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let cfg = RunConfig {
            command: Command::Simultaneous,
            input: None,
            ..cfg
        };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }
}
