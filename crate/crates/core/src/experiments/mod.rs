//! Experiment suites behind the CLI subcommands and the acceptance run.

mod config;
mod geometry;
mod regularity;
mod suites;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

pub use config::{
    ExperimentConfig, MeshSection, ModelSection, ParamsSection, RunSection, ScalesSection, ToleranceSection,
};
pub use geometry::geometry_selftest;
pub use regularity::{barrier_calibrate, harnack_sweep, hoelder, infconv_demo, level_decay_suite};
pub use suites::{abp_sharp, abp_suite, abp_verify, contact_suite, measure_estimate, SharpCase};

use crate::error::{Error, Result};
use crate::report::{write_rows, CheckRow, Summary};

/// Plot-ready numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidInput(e.to_string());
        out.write_record(&self.columns).map_err(err)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| format!("{v:.12e}"))).map_err(err)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

/// Check rows of one subcommand plus its plot tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutput {
    pub name: String,
    pub rows: Vec<CheckRow>,
    pub tables: Vec<Table>,
}

impl SuiteOutput {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), rows: Vec::new(), tables: Vec::new() }
    }

    pub fn extend(&mut self, other: SuiteOutput) {
        self.rows.extend(other.rows);
        self.tables.extend(other.tables);
    }

    pub fn summary(&self) -> Summary {
        Summary::of(&self.name, &self.rows)
    }

    /// Keep rows whose anchor or parameters contain `tag`.
    pub fn filtered(mut self, tag: &str) -> Self {
        self.rows.retain(|r| r.anchor.contains(tag) || r.params.contains(tag));
        self
    }

    /// `<name>.csv` with the check rows and `<name>_<table>.csv` per table.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidInput(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let f = File::create(dir.join(format!("{}.csv", self.name))).map_err(io)?;
        write_rows(&self.rows, BufWriter::new(f))?;
        for t in &self.tables {
            let f = File::create(dir.join(format!("{}_{}.csv", self.name, t.name))).map_err(io)?;
            t.write_csv(BufWriter::new(f))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subcommand {
    GeometrySelftest,
    AbpVerify,
    MeasureEstimate,
    InfconvDemo,
    BarrierCalibrate,
    LevelDecay,
    HarnackSweep,
    Hoelder,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Self::GeometrySelftest,
        Self::AbpVerify,
        Self::MeasureEstimate,
        Self::InfconvDemo,
        Self::BarrierCalibrate,
        Self::LevelDecay,
        Self::HarnackSweep,
        Self::Hoelder,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::GeometrySelftest => "geometry-selftest",
            Self::AbpVerify => "abp-verify",
            Self::MeasureEstimate => "measure-estimate",
            Self::InfconvDemo => "infconv-demo",
            Self::BarrierCalibrate => "barrier-calibrate",
            Self::LevelDecay => "level-decay",
            Self::HarnackSweep => "harnack-sweep",
            Self::Hoelder => "hoelder",
        }
    }

    pub fn run(&self, cfg: &ExperimentConfig) -> Result<SuiteOutput> {
        match self {
            Self::GeometrySelftest => geometry_selftest(cfg),
            Self::AbpVerify => abp_verify(cfg),
            Self::MeasureEstimate => measure_estimate(cfg),
            Self::InfconvDemo => infconv_demo(cfg),
            Self::BarrierCalibrate => barrier_calibrate(cfg),
            Self::LevelDecay => level_decay_suite(cfg),
            Self::HarnackSweep => harnack_sweep(cfg),
            Self::Hoelder => hoelder(cfg),
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subcommand {s:?}")))
    }
}

/// Derived seed for stream `stream`; equals `stream` when `base` is 0.
pub(crate) fn sub_seed(base: u64, stream: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream
}

/// `key=value` list for row parameters.
pub(crate) fn kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcommand_names_round_trip() {
        for c in Subcommand::ALL {
            assert_eq!(c.name().parse::<Subcommand>().unwrap(), c);
        }
        assert!("run".parse::<Subcommand>().is_err());
    }

    #[test]
    fn table_csv_has_header() {
        let mut t = Table::new("levels", &["t", "measure"]);
        t.push(vec![1.0, 0.5]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,measure\n1.000000000000e0,5.000000000000e-1\n"), "{s}");
    }

    #[test]
    fn seeds_are_identity_at_zero() {
        assert_eq!(sub_seed(0, 17), 17);
        assert_ne!(sub_seed(1, 17), 17);
    }
}
