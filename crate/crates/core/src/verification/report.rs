use std::fmt;
use std::io::Write;
use std::time::Duration;

use crate::error::Result;
use crate::market::csv_err;
use crate::stats::Estimate;

/// Pass rule of one report row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// `|estimate - target| <= k se` (plus `1e-12 |target|` for exact estimates).
    StdErrs(f64),
    /// `target - estimate > k se`.
    BelowBy(f64),
    /// `estimate <= target + k se`.
    AtMost(f64),
    /// `|estimate - target| <= r |target|`.
    Relative(f64),
    /// `estimate < bound` (errors and other nonnegative diagnostics).
    LessThan(f64),
    /// `estimate >= target` (fractions).
    AtLeast,
    /// Reported, never fails.
    Info,
}

impl Tolerance {
    pub fn passes(&self, estimate: f64, stderr: f64, target: f64) -> bool {
        match *self {
            Self::StdErrs(k) => (estimate - target).abs() <= k * stderr + 1e-12 * target.abs(),
            Self::BelowBy(k) => target - estimate > k * stderr,
            Self::AtMost(k) => estimate <= target + k * stderr,
            Self::Relative(r) => (estimate - target).abs() <= r * target.abs(),
            Self::LessThan(bound) => estimate < bound,
            Self::AtLeast => estimate >= target,
            Self::Info => true,
        }
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StdErrs(k) => write!(f, "{k}se"),
            Self::BelowBy(k) => write!(f, "below:{k}se"),
            Self::AtMost(k) => write!(f, "atmost:{k}se"),
            Self::Relative(r) => write!(f, "rel:{r:e}"),
            Self::LessThan(b) => write!(f, "lt:{b:e}"),
            Self::AtLeast => f.write_str("atleast"),
            Self::Info => f.write_str("info"),
        }
    }
}

/// One tested arm of a verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arm: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub tol: Tolerance,
    pub pass: bool,
}

impl ReportRow {
    pub fn new(arm: impl Into<String>, estimate: f64, stderr: f64, target: f64, tol: Tolerance) -> Self {
        let pass = tol.passes(estimate, stderr, target);
        Self {
            arm: arm.into(),
            estimate,
            stderr,
            target,
            tol,
            pass,
        }
    }

    pub fn from_estimate(arm: impl Into<String>, e: &Estimate, target: f64, tol: Tolerance) -> Self {
        Self::new(arm, e.mean, e.stderr, target, tol)
    }

    /// Row whose outcome is decided elsewhere.
    pub fn with_outcome(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

/// Outcome of one verification: rows plus the run's settings.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub test: String,
    pub rows: Vec<ReportRow>,
    pub ensemble_size: usize,
    pub seed: u64,
    pub floored_fraction: f64,
    /// `false` when the run itself is unusable (e.g. too many floored paths).
    pub valid: bool,
    pub notes: Vec<String>,
    pub runtime: Duration,
}

/// Fraction of floored paths above which a report is invalid.
pub const MAX_FLOORED_FRACTION: f64 = 0.01;

impl VerificationReport {
    pub fn new(test: impl Into<String>, ensemble_size: usize, seed: u64) -> Self {
        Self {
            test: test.into(),
            rows: Vec::new(),
            ensemble_size,
            seed,
            floored_fraction: 0.0,
            valid: true,
            notes: Vec::new(),
            runtime: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.valid && !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, arm: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn failing_arms(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| !r.pass).map(|r| r.arm.as_str()).collect()
    }

    pub(crate) fn set_floored(&mut self, floored: usize, total: usize) {
        self.floored_fraction = if total > 0 { floored as f64 / total as f64 } else { 0.0 };
        if self.floored_fraction > MAX_FLOORED_FRACTION {
            self.valid = false;
            self.notes.push(format!(
                "invalid: {:.2}% of paths hit the positivity floor (limit {}%)",
                100.0 * self.floored_fraction,
                100.0 * MAX_FLOORED_FRACTION
            ));
        }
    }

    /// One-line summary: `test: arm=estimate±se, ..., pass|FAIL`.
    pub fn summary_line(&self) -> String {
        let shown: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{}={:.3}±{:.3}", r.arm, r.estimate, r.stderr))
            .collect();
        let verdict = if self.passed() { "pass" } else { "FAIL" };
        format!("{}: {}, {verdict}", self.test, shown.join(", "))
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.10e}")
    }
}

/// Header of the report CSV.
pub const REPORT_COLUMNS: [&str; 7] = ["test", "arm", "estimate", "stderr", "target", "tol", "pass"];

/// One row per arm with columns `test,arm,estimate,stderr,target,tol,pass`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[VerificationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for rep in reports {
        for r in &rep.rows {
            w.write_record([
                rep.test.clone(),
                r.arm.clone(),
                fmt_num(r.estimate),
                fmt_num(r.stderr),
                fmt_num(r.target),
                r.tol.to_string(),
                (r.pass && rep.valid).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary: preamble, one line per report with its settings
/// and notes. Runtimes are left out so that reruns are byte-identical.
pub fn write_summary<W: Write>(mut out: W, reports: &[VerificationReport]) -> Result<()> {
    writeln!(
        out,
        "Monte-Carlo verification of sufficient optimality conditions; dominance is checked against a finite deviation family only."
    )?;
    for rep in reports {
        writeln!(out, "{}", rep.summary_line())?;
        writeln!(
            out,
            "  paths={} seed={} floored={:.4}",
            rep.ensemble_size, rep.seed, rep.floored_fraction
        )?;
        for r in &rep.rows {
            writeln!(
                out,
                "  {}: estimate={} se={} target={} tol={} {}",
                r.arm,
                fmt_num(r.estimate),
                fmt_num(r.stderr),
                fmt_num(r.target),
                r.tol,
                if r.pass { "pass" } else { "FAIL" }
            )?;
        }
        for n in &rep.notes {
            writeln!(out, "  note: {n}")?;
        }
    }
    let overall = reports.iter().all(|r| r.passed());
    writeln!(out, "overall: {}", if overall { "pass" } else { "FAIL" })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_rules() {
        assert!(Tolerance::StdErrs(3.0).passes(1.02, 0.01, 1.0));
        assert!(!Tolerance::StdErrs(3.0).passes(1.04, 0.01, 1.0));
        assert!(Tolerance::StdErrs(3.0).passes(2.0, 0.0, 2.0));
        assert!(Tolerance::BelowBy(2.0).passes(0.9, 0.01, 1.0));
        assert!(!Tolerance::BelowBy(2.0).passes(0.99, 0.01, 1.0));
        assert!(Tolerance::Relative(1e-3).passes(1.0005, 0.0, 1.0));
        assert!(Tolerance::LessThan(1e-3).passes(5e-4, 0.0, f64::NAN));
        assert_eq!(Tolerance::StdErrs(3.0).to_string(), "3se");
        assert_eq!(Tolerance::Relative(1e-3).to_string(), "rel:1e-3");
    }

    #[test]
    fn empty_report_list_gives_header_only() {
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "test,arm,estimate,stderr,target,tol,pass\n");
    }

    #[test]
    fn summary_line_format() {
        let mut r = VerificationReport::new("deviation_test", 10, 1);
        r.rows.push(ReportRow::new("control", 1.0004, 0.0021, 1.0, Tolerance::StdErrs(3.0)));
        assert_eq!(r.summary_line(), "deviation_test: control=1.000±0.002, pass");
        r.set_floored(2, 10);
        assert!(!r.passed());
    }
}
