//! Check rows shared by every experiment: one row per verified statement.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    /// A hypothesis audit failed, so the statement does not apply.
    Skip,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Skip => "SKIP",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    /// Tag of the statement being checked, e.g. `thm-abp`.
    pub anchor: String,
    /// `key=value` pairs separated by `;`.
    pub params: String,
    pub value: f64,
    pub tolerance: f64,
    /// Signed slack; negative when the check fails.
    pub margin: f64,
    pub status: Status,
}

impl CheckRow {
    pub fn new(anchor: &str, params: String, value: f64, tolerance: f64, margin: f64, status: Status) -> Self {
        Self { anchor: anchor.to_string(), params, value, tolerance, margin, status }
    }

    /// PASS iff `value <= bound`.
    pub fn upper(anchor: &str, params: String, value: f64, bound: f64) -> Self {
        let margin = bound - value;
        Self::new(anchor, params, value, bound, margin, Status::from_pass(margin >= 0.0))
    }

    /// PASS iff `value >= bound`.
    pub fn lower(anchor: &str, params: String, value: f64, bound: f64) -> Self {
        let margin = value - bound;
        Self::new(anchor, params, value, bound, margin, Status::from_pass(margin >= 0.0))
    }
}

/// RFC-4180 CSV with a header row.
pub fn write_rows<W: Write>(rows: &[CheckRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    out.write_record(["anchor", "params", "value", "tolerance", "margin", "status"]).map_err(err)?;
    for r in rows {
        out.write_record([
            r.anchor.clone(),
            r.params.clone(),
            format!("{:.12e}", r.value),
            format!("{:.12e}", r.tolerance),
            format!("{:.12e}", r.margin),
            r.status.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
    pub skip: usize,
    /// Smallest margin among PASS and FAIL rows.
    pub worst_margin: Option<f64>,
    pub worst_anchor: Option<String>,
}

impl Summary {
    pub fn of(name: &str, rows: &[CheckRow]) -> Self {
        let count = |s: Status| rows.iter().filter(|r| r.status == s).count();
        let worst = rows
            .iter()
            .filter(|r| matches!(r.status, Status::Pass | Status::Fail))
            .min_by(|a, b| a.margin.total_cmp(&b.margin));
        Self {
            name: name.to_string(),
            pass: count(Status::Pass),
            fail: count(Status::Fail),
            inconclusive: count(Status::Inconclusive),
            skip: count(Status::Skip),
            worst_margin: worst.map(|r| r.margin),
            worst_anchor: worst.map(|r| r.anchor.clone()),
        }
    }

    /// FAIL dominates, then INCONCLUSIVE; SKIP rows are neutral.
    pub fn status(&self) -> Status {
        if self.fail > 0 {
            Status::Fail
        } else if self.inconclusive > 0 {
            Status::Inconclusive
        } else {
            Status::Pass
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_set_status_and_margin() {
        let a = CheckRow::upper("x", String::new(), 1.0, 2.0);
        assert_eq!((a.status, a.margin), (Status::Pass, 1.0));
        let b = CheckRow::lower("x", String::new(), 1.0, 2.0);
        assert_eq!((b.status, b.margin), (Status::Fail, -1.0));
    }

    #[test]
    fn summary_precedence() {
        let mut rows = vec![CheckRow::upper("a", String::new(), 0.0, 1.0)];
        rows.push(CheckRow::new("b", String::new(), 0.0, 0.0, 0.0, Status::Skip));
        assert_eq!(Summary::of("s", &rows).status(), Status::Pass);
        rows.push(CheckRow::new("c", String::new(), 0.0, 0.0, 0.0, Status::Inconclusive));
        assert_eq!(Summary::of("s", &rows).status(), Status::Inconclusive);
        rows.push(CheckRow::upper("d", String::new(), 2.0, 1.0));
        let s = Summary::of("s", &rows);
        assert_eq!(s.status(), Status::Fail);
        assert_eq!(s.worst_anchor.as_deref(), Some("d"));
    }

    #[test]
    fn csv_round_trip_header() {
        let mut buf = Vec::new();
        write_rows(&[CheckRow::upper("thm", "p=2;k=0".into(), 0.5, 1.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("anchor,params,value,tolerance,margin,status\n"));
        assert!(text.contains("PASS"));
    }
}
