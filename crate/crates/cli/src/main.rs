use std::path::PathBuf;
use std::process::ExitCode;

use boundnull::{run, CliError, ColumnMapping, Command, NullSpec, RunConfig, TestDirection};
use boundnull_core::impute::ImputationVariant;
use boundnull_core::infer::{InstrumentDirection, Target};
use boundnull_core::refdist::{Mode, Tail};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "boundnull",
    version,
    about = "Randomization tests of bounded nulls on individual treatment effects",
    after_help = "Examples (run from the repository root):\n  \
        boundnull test --input fixtures/table1.csv --stat diff-means --null 0 --direction non-superiority --mode exact\n  \
        boundnull ci --input fixtures/paired8.csv --block-col block --target max --alpha 0.10 --stat stephenson:6"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sharp-null or bounded-null randomization test.
    #[command(after_help = "Examples:\n  \
        boundnull test --input fixtures/table1.csv --stat diff-means --null 0 --direction non-superiority --mode exact\n  \
        boundnull test --input fixtures/table1.csv --null-column tau0 --direction sharp --impute control-baseline\n  \
        boundnull test --input fixtures/table1.csv --stat rank-sum --mode mc --draws 5000 --seed 7 --export-dist dist.csv")]
    Test(TestArgs),
    /// Confidence bound for the largest or smallest unit-level effect.
    #[command(after_help = "Examples:\n  \
        boundnull ci --input fixtures/paired8.csv --block-col block --target max --alpha 0.10 --stat stephenson:6\n  \
        boundnull ci --input fixtures/paired8.csv --block-col block --target min --alpha 0.20 --outcome-range 0,100")]
    Ci(CiArgs),
    /// Test that some effects are positive and some negative (intersection-union).
    #[command(after_help = "Example:\n  \
        boundnull simultaneous --input fixtures/paired8.csv --block-col block --stat stephenson:6")]
    Simultaneous(Common),
    /// Test the monotonicity assumption of an instrument (w) on uptake (y).
    #[command(after_help = "Example:\n  \
        boundnull monotonicity --input fixtures/table1.csv --instrument increases --stat threshold:1.0")]
    Monotonicity(MonoArgs),
    /// Cross-check optimized computations against brute-force oracles.
    #[command(after_help = "Examples:\n  \
        boundnull oracle --input fixtures/table1.csv --stat stephenson:4 --null -0.5\n  \
        boundnull oracle --ei-check --stat welch-t --trials 200 --n 8")]
    Oracle(OracleArgs),
    /// Run a Monte Carlo study described by a TOML scenario file.
    #[command(after_help = "Example:\n  \
        boundnull sim --scenario fixtures/scenarios/smoke.toml")]
    Sim(SimArgs),
}

#[derive(Args)]
struct Common {
    /// CSV file with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Unit id column (row numbers are used when absent from the file).
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Treatment column, values 0 or 1.
    #[arg(long, default_value = "w")]
    w_col: String,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Block column; blocks of two units form a paired design.
    #[arg(long)]
    block_col: Option<String>,
    /// diff-means, rank-sum, stephenson:<s>, threshold:<cutoff> or welch-t.
    #[arg(long, default_value = "diff-means")]
    stat: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    /// Monte Carlo draws (mc mode only).
    #[arg(long)]
    draws: Option<u64>,
    /// Monte Carlo seed (mc mode only).
    #[arg(long)]
    seed: Option<u64>,
    /// Report (1 + count) / (1 + draws) in mc mode.
    #[arg(long)]
    mc_add_one: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the JSON result here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Sharp,
    NonSuperiority,
    NonInferiority,
}

#[derive(Clone, Copy, ValueEnum)]
enum TailArg {
    Upper,
    Lower,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImputeArg {
    BothSides,
    ControlBaseline,
    TreatedBaseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum InstrumentArg {
    Increases,
    Decreases,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    /// Constant hypothesized effect.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "null_column")]
    null: Option<f64>,
    /// Column holding a per-unit hypothesized effect.
    #[arg(long)]
    null_column: Option<String>,
    #[arg(long, value_enum, default_value_t = DirectionArg::NonSuperiority)]
    direction: DirectionArg,
    /// Tail of a sharp test.
    #[arg(long, value_enum)]
    tail: Option<TailArg>,
    /// Imputation of the unobserved potential outcomes (sharp tests).
    #[arg(long, value_enum, default_value_t = ImputeArg::BothSides)]
    impute: ImputeArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write the reference distribution as value,count CSV.
    #[arg(long)]
    export_dist: Option<PathBuf>,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = TargetArg::Max)]
    target: TargetArg,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Declared outcome scale as min,max; bounds the other end of the interval.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    outcome_range: Option<(f64, f64)>,
}

#[derive(Args)]
struct MonoArgs {
    #[command(flatten)]
    common: Common,
    /// Assumed sign of the instrument's effect on uptake for every unit.
    #[arg(long, value_enum, default_value_t = InstrumentArg::Increases)]
    instrument: InstrumentArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Run the effect-increasing property search instead of a p-value comparison.
    #[arg(long)]
    ei_check: bool,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "null_column")]
    null: Option<f64>,
    #[arg(long)]
    null_column: Option<String>,
    #[arg(long, value_enum, default_value_t = TailArg::Upper)]
    tail: TailArg,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Treated units in the property search (default n / 2).
    #[arg(long)]
    n_treated: Option<usize>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected min,max")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok((lo, hi))
}

fn mode(c: &Common) -> Result<Mode, CliError> {
    match c.mode {
        ModeArg::Exact => {
            if c.draws.is_some() || c.seed.is_some() || c.mc_add_one {
                return Err(CliError::Usage("--draws, --seed and --mc-add-one need --mode mc".into()));
            }
            Ok(Mode::Exact)
        }
        ModeArg::Mc => Ok(Mode::MonteCarlo {
            draws: c.draws.unwrap_or(10_000),
            seed: c.seed.unwrap_or(0),
            add_one: c.mc_add_one,
        }),
    }
}

fn null_spec(null: Option<f64>, column: Option<String>) -> NullSpec {
    match column {
        Some(c) => NullSpec::Column(c),
        None => NullSpec::Constant(null.unwrap_or(0.0)),
    }
}

fn config(c: &Common, command: Command) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        command,
        input: c.input.clone(),
        columns: ColumnMapping {
            id: c.id_col.clone(),
            w: c.w_col.clone(),
            y: c.y_col.clone(),
            block: c.block_col.clone(),
        },
        statistic: c.stat.clone(),
        mode: mode(c)?,
        threads: c.threads,
    })
}

fn build(cli: Cli) -> Result<(RunConfig, Option<PathBuf>), CliError> {
    Ok(match cli.command {
        Sub::Test(a) => {
            let direction = match a.direction {
                DirectionArg::Sharp => TestDirection::Sharp,
                DirectionArg::NonSuperiority => TestDirection::NonSuperiority,
                DirectionArg::NonInferiority => TestDirection::NonInferiority,
            };
            let tail = match (a.tail, a.direction) {
                (Some(_), DirectionArg::NonSuperiority | DirectionArg::NonInferiority) => {
                    return Err(CliError::Usage("--tail applies to --direction sharp; bounded tests fix the tail".into()))
                }
                (Some(TailArg::Lower), _) => Tail::Lower,
                (_, DirectionArg::NonInferiority) => Tail::Lower,
                _ => Tail::Upper,
            };
            let impute = match a.impute {
                ImputeArg::BothSides => ImputationVariant::BothSides,
                ImputeArg::ControlBaseline => ImputationVariant::ControlBaseline,
                ImputeArg::TreatedBaseline => ImputationVariant::TreatedBaseline,
            };
            let cmd = Command::Test {
                direction,
                tail,
                null: null_spec(a.null, a.null_column),
                impute,
                alpha: a.alpha,
                export_dist: a.export_dist,
            };
            (config(&a.common, cmd)?, a.common.output)
        }
        Sub::Ci(a) => {
            let target = match a.target {
                TargetArg::Max => Target::MaxEffect,
                TargetArg::Min => Target::MinEffect,
            };
            let cmd = Command::Ci {
                target,
                alpha: a.alpha,
                outcome_range: a.outcome_range,
            };
            (config(&a.common, cmd)?, a.common.output)
        }
        Sub::Simultaneous(c) => (config(&c, Command::Simultaneous)?, c.output),
        Sub::Monotonicity(a) => {
            let instrument = match a.instrument {
                InstrumentArg::Increases => InstrumentDirection::Increases,
                InstrumentArg::Decreases => InstrumentDirection::Decreases,
            };
            let cmd = Command::Monotonicity {
                instrument,
                alpha: a.alpha,
            };
            (config(&a.common, cmd)?, a.common.output)
        }
        Sub::Oracle(a) => {
            let tail = match a.tail {
                TailArg::Upper => Tail::Upper,
                TailArg::Lower => Tail::Lower,
            };
            let cmd = if a.ei_check {
                Command::OracleEi {
                    trials: a.trials,
                    n: a.n,
                    n_treated: a.n_treated.unwrap_or(a.n / 2),
                    seed: a.common.seed.unwrap_or(0),
                }
            } else {
                Command::OracleP {
                    null: null_spec(a.null, a.null_column),
                    tail,
                }
            };
            let mut common = a.common;
            if a.ei_check {
                // the seed drives the schedule search, not a Monte Carlo mode
                common.seed = None;
            }
            (config(&common, cmd)?, common.output)
        }
        Sub::Sim(a) => (
            RunConfig {
                command: Command::Sim { scenario: a.scenario },
                input: None,
                columns: ColumnMapping::default(),
                statistic: "diff-means".into(),
                mode: Mode::Exact,
                threads: a.threads,
            },
            a.output,
        ),
    })
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let (cfg, output) = match build(cli) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    match run(cfg) {
        Ok(envelope) => {
            let text = envelope.to_json_string();
            match output {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, text) {
                        return fail(&CliError::Io(format!("{}: {e}", path.display())));
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
