//! Experiment drivers behind the command-line tool. Each command returns a
//! report whose checks decide the exit status, and writes its CSV output
//! under the experiment's output directory.

mod commands;
mod config;
mod scaling;

use std::fmt;

pub use commands::{
    cmd_compare_oracle, cmd_distributed, cmd_scaling, cmd_verify_theorems, compare_with_monolithic, expected_sampling_tv,
    proposal_multiset_diff, simulate, DistributedReport, DistributedRun, OracleReport, OracleRow, ScalingOutcome,
    SimulationReport, StepRow, SummaryComparison, TheoremReport, TABLE_1,
};
pub use config::{load_population_file, ExperimentSpec, PopulationSource, Settings, DEFAULT_OUT_DIR, KNOWN_KEYS, OUT_DIR_ENV};
pub use scaling::{linear_fit, measure, LinearFit, ScalingReport, ScalingRow, ThetaFit};

/// One asserted invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn write_checks(f: &mut fmt::Formatter<'_>, checks: &[Check]) -> fmt::Result {
    for c in checks {
        writeln!(f, "{c}")?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(f, "{} checks, {failed} failed", checks.len())
}
