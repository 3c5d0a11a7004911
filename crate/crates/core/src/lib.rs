//! Randomization tests of bounded nulls on individual treatment effects.

pub mod combin;
pub mod data;
pub mod error;
pub mod impute;
pub mod infer;
pub mod oracle;
pub mod refdist;
pub mod sim;
pub mod stats;

#[cfg(test)]
mod testdata;

pub use data::{validate_dataset, Dataset, Design, EffectSpec, RawRow, Schedule};
pub use error::{Error, Result};
pub use impute::{impute_schedule, impute_variant, ImputationVariant};
pub use infer::{
    invert_ci, test_bounded, test_monotonicity, test_simultaneous, BoundedTestResult, CiResult, Direction,
    GridConfig, InstrumentDirection, SimultaneousResult, Target,
};
pub use refdist::{p_value, Mode, PValue, RefConfig, Tail};
pub use stats::{StatValue, StatisticSpec};
pub use sim::{SimulationReport, SimulationScenario};
