//! Experiment driver: configuration, check suites, the first-law and
//! convergence experiments, and their CSV and SVG outputs.

mod config;
mod experiments;
mod plot;

use std::fmt;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::error::{FieldError, FluxError, GeodesicError, MatterError, SpacetimeError, TrautmanError};

pub use config::{
    BodySpec, CheckSpec, ClipSpec, ExperimentConfig, RegionSpec, RunSpec, SlicePlan, SpacetimeSpec, Tolerances,
};
pub use experiments::{
    check_spacetime, equivalence_trials, fit_line, geometrize_report, recover_report, run_first_law,
    run_proposition_suite, run_theorem_w_sweep, ConvergenceRecord, FirstLawReport, FirstLawRun, LineFit,
    PropositionReport, SweepReport,
};
pub use plot::{loglog_svg, track_svg, Series};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Spacetime(#[from] SpacetimeError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Trautman(#[from] TrautmanError),
    #[error(transparent)]
    Matter(#[from] MatterError),
    #[error(transparent)]
    Flux(#[from] FluxError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Check does not apply to this configuration.
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

/// One line of a summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub quantity: String,
    pub residual: f64,
    pub threshold: f64,
    pub status: Status,
}

impl CheckRow {
    /// Passes iff `residual < threshold`; NaN fails.
    pub fn new(check: &str, quantity: &str, residual: f64, threshold: f64) -> Self {
        let status = if residual < threshold { Status::Pass } else { Status::Fail };
        CheckRow {
            check: check.into(),
            quantity: quantity.into(),
            residual,
            threshold,
            status,
        }
    }

    pub fn skipped(check: &str, quantity: &str) -> Self {
        CheckRow {
            check: check.into(),
            quantity: quantity.into(),
            residual: f64::NAN,
            threshold: f64::NAN,
            status: Status::Skip,
        }
    }

    /// A check that could not be evaluated at all.
    pub fn failed(check: &str, quantity: &str, threshold: f64) -> Self {
        CheckRow {
            status: Status::Fail,
            ..CheckRow::new(check, quantity, f64::INFINITY, threshold)
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

pub const SUMMARY_CSV_HEADER: &str = "check,quantity,residual,threshold,status";

pub fn write_summary_csv<W: Write>(rows: &[CheckRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{}",
            r.check, r.quantity, r.residual, r.threshold, r.status
        )?;
    }
    Ok(())
}

pub fn all_passed(rows: &[CheckRow]) -> bool {
    rows.iter().all(CheckRow::passed)
}

pub(crate) fn create_file(dir: &Path, name: &str) -> std::io::Result<std::io::BufWriter<std::fs::File>> {
    std::fs::create_dir_all(dir)?;
    Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

/// Summary rows written to `dir/summary.csv`.
pub fn write_summary(dir: &Path, rows: &[CheckRow]) -> std::io::Result<()> {
    let mut f = create_file(dir, "summary.csv")?;
    write_summary_csv(rows, &mut f)?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholding() {
        assert_eq!(CheckRow::new("a", "b", 1e-7, 1e-6).status, Status::Pass);
        assert_eq!(CheckRow::new("a", "b", 0.0, 0.0).status, Status::Fail);
        assert_eq!(CheckRow::new("a", "b", f64::NAN, 1.0).status, Status::Fail);
        assert!(CheckRow::skipped("a", "b").passed());
    }

    #[test]
    fn summary_format() {
        let mut buf = Vec::new();
        write_summary_csv(&[CheckRow::new("Prop1", "momentum_spread", 2.5e-9, 1e-4)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{SUMMARY_CSV_HEADER}\nProp1,momentum_spread,2.5e-9,1e-4,PASS\n"));
    }
}
