use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{summarize, ConfusionSummary, TrialRecord};
use super::{HarnessError, MethodKind};
use crate::monitor::{Decision, FailureReason};

/// One line of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub trial_id: usize,
    pub true_error: f64,
    pub method: String,
    pub confidence: f64,
    pub decision: String,
    pub failure_reason: String,
    pub ms: f64,
}

impl CsvRow {
    pub fn method_kind(&self) -> Result<MethodKind, HarnessError> {
        MethodKind::parse(&self.method).ok_or_else(|| HarnessError::Io(format!("unknown method {:?}", self.method)))
    }

    pub fn decision_value(&self) -> Result<Decision, HarnessError> {
        match self.decision.as_str() {
            "correct" => Ok(Decision::Correct),
            "incorrect" => Ok(Decision::Incorrect),
            other => Err(HarnessError::Io(format!("unknown decision {other:?}"))),
        }
    }

    pub fn failure(&self) -> Result<Option<FailureReason>, HarnessError> {
        if self.failure_reason.is_empty() {
            return Ok(None);
        }
        FailureReason::parse(&self.failure_reason).map(Some).ok_or_else(|| HarnessError::Io(format!("unknown failure {:?}", self.failure_reason)))
    }
}

pub(crate) fn rows(records: &[TrialRecord]) -> impl Iterator<Item = CsvRow> + '_ {
    records.iter().flat_map(|r| {
        r.outcomes.iter().map(move |o| CsvRow {
            trial_id: r.trial_id,
            true_error: r.true_error,
            method: o.method.as_str().into(),
            confidence: o.confidence,
            decision: o.decision.as_str().into(),
            failure_reason: o.failure_reason.map(|f| f.as_str().to_string()).unwrap_or_default(),
            ms: o.ms,
        })
    })
}

fn write_rows(rows: impl IntoIterator<Item = CsvRow>) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn trials_csv(records: &[TrialRecord]) -> Result<String, HarnessError> {
    if records.is_empty() {
        // header only
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial_id", "true_error", "method", "confidence", "decision", "failure_reason", "ms"])?;
        return Ok(String::from_utf8(w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?).expect("utf-8"));
    }
    write_rows(rows(records))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    subset: &'a str,
    epsilon: f64,
    band_lo: f64,
    band_hi: f64,
    n: usize,
    tp: usize,
    tn: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    failed: usize,
    total_correct_pct: f64,
}

pub fn summary_csv(summary: &ConfusionSummary) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &summary.methods {
        for (subset, c) in [("all", &m.all), ("band_excluded", &m.band_excluded)] {
            w.serialize(SummaryRow {
                method: m.method.as_str(),
                subset,
                epsilon: summary.epsilon,
                band_lo: summary.exclusion_band[0],
                band_hi: summary.exclusion_band[1],
                n: c.total(),
                tp: c.tp,
                tn: c.tn,
                fp: c.fp,
                fn_: c.fn_,
                failed: c.failed,
                total_correct_pct: c.total_correct_pct(),
            })?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?).expect("utf-8"))
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<CsvRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    for row in &rows {
        row.method_kind()?;
        row.decision_value()?;
        row.failure()?;
    }
    Ok(rows)
}

/// Confusion summary recomputed from `trials.csv` rows.
pub(crate) fn summary_from_rows(rows: &[CsvRow], epsilon: f64, band: [f64; 2]) -> Result<ConfusionSummary, HarnessError> {
    let tuples = rows
        .iter()
        .map(|r| Ok((r.true_error, r.method_kind()?, r.decision_value()?, r.failure()?.is_some())))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(summarize(tuples, epsilon, band))
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Confidence against true error per method, with markers at `ε` and the cutoff.
pub fn render_scatter_svg(rows: &[CsvRow], epsilon: f64, cutoff: f64) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (60.0, 160.0, 20.0, 50.0);
    let max_err = rows.iter().map(|r| r.true_error).fold(epsilon * 1.5, f64::max) * 1.05;
    let x = |e: f64| left + (w - left - right) * e / max_err;
    let y = |q: f64| top + (h - top - bottom) * (1.0 - q);
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (x(0.0), x(max_err), y(0.0), y(1.0));
    let _ = writeln!(s, r#"<g id="axes" stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#);
    for i in 0..=5 {
        let e = max_err * i as f64 / 5.0;
        let q = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{:.3}</text>"#, x(e), y0 + 16.0, e);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{q:.1}</text>"#, x0 - 6.0, y(q) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">true position error</text>"#, (x0 + x1) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">confidence</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    let _ = writeln!(
        s,
        r#"<line id="epsilon-marker" x1="{:.4}" y1="{y1}" x2="{:.4}" y2="{y0}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x(epsilon),
        x(epsilon)
    );
    let _ = writeln!(s, r#"<line id="cutoff-marker" x1="{x0}" y1="{:.4}" x2="{x1}" y2="{:.4}" stroke="gray" stroke-dasharray="2 2"/>"#, y(cutoff), y(cutoff));
    for (i, m) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="method" data-method="{m}" fill="{color}" fill-opacity="0.6">"#);
        for r in rows.iter().filter(|r| r.method == *m) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, x(r.true_error), y(r.confidence));
        }
        let _ = writeln!(s, "</g>");
        let ly = top + 18.0 * i as f64 + 10.0;
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{ly:.2}" r="4" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="12">{m}</text>"#, w - right + 20.0, w - right + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Appends records to a `trials.csv` as they arrive.
pub struct TrialsCsvWriter {
    inner: csv::Writer<fs::File>,
}

impl TrialsCsvWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(Self { inner: csv::Writer::from_path(path)? })
    }

    pub fn write(&mut self, record: &TrialRecord) -> Result<(), HarnessError> {
        for row in rows(std::slice::from_ref(record)) {
            self.inner.serialize(row)?;
        }
        self.inner.flush()?;
        Ok(())
    }
}

/// Write `summary.csv` and `scatter.svg` into `out_dir`.
pub fn emit_summary(records: &[TrialRecord], summary: &ConfusionSummary, cutoff: f64, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let summary_path = out_dir.join("summary.csv");
    let svg = out_dir.join("scatter.svg");
    fs::write(&summary_path, summary_csv(summary)?)?;
    let csv_rows: Vec<_> = rows(records).collect();
    fs::write(&svg, render_scatter_svg(&csv_rows, summary.epsilon, cutoff))?;
    Ok(vec![summary_path, svg])
}

/// Write `trials.csv`, `summary.csv` and `scatter.svg` into `out_dir`.
pub fn emit_reports(records: &[TrialRecord], summary: &ConfusionSummary, cutoff: f64, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to report".into()));
    }
    fs::create_dir_all(out_dir)?;
    let trials = out_dir.join("trials.csv");
    fs::write(&trials, trials_csv(records)?)?;
    let mut written = vec![trials];
    written.extend(emit_summary(records, summary, cutoff, out_dir)?);
    Ok(written)
}

/// Rebuild `summary.csv` and `scatter.svg` from an existing `trials.csv`.
pub fn report_from_csv(records: &Path, epsilon: f64, band: [f64; 2], cutoff: f64, out_dir: &Path) -> Result<ConfusionSummary, HarnessError> {
    let rows = read_trials_csv(records)?;
    if rows.is_empty() {
        return Err(HarnessError::Config("records file has no rows".into()));
    }
    let summary = summary_from_rows(&rows, epsilon, band)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("summary.csv"), summary_csv(&summary)?)?;
    fs::write(out_dir.join("scatter.svg"), render_scatter_svg(&rows, epsilon, cutoff))?;
    Ok(summary)
}

/// Epsilon and band recorded in a `summary.csv`.
pub fn read_summary_settings(path: &Path) -> Result<(f64, [f64; 2]), HarnessError> {
    #[derive(Deserialize)]
    struct Settings {
        epsilon: f64,
        band_lo: f64,
        band_hi: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    let first: Settings = r.deserialize().next().ok_or_else(|| HarnessError::Io(format!("{} has no rows", path.display())))??;
    Ok((first.epsilon, [first.band_lo, first.band_hi]))
}
