//! Pre-log summary from one or more sweep CSVs.

use std::fs::File;
use std::path::PathBuf;

use prelog_core::info_metrics::{prelog_fit, read_sweep_csv, Frontend, MISweepPoint, PrelogFit};
use serde::Serialize;

use crate::experiments::Outcome;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FrontendRow {
    pub frontend: Frontend,
    pub fit: PrelogFit,
}

#[derive(Debug, Serialize)]
pub struct PrelogReport {
    pub n: usize,
    pub q: usize,
    /// `1 - Q/N`.
    pub reference_symbol_rate: f64,
    /// `1 - 1/N`.
    pub reference_oversampled: f64,
    pub rows: Vec<FrontendRow>,
    /// Oversampled slope minus symbol-rate slope.
    pub gap: Option<f64>,
    pub note: Option<String>,
}

#[derive(Serialize)]
struct LongRow<'a> {
    series: &'a str,
    quantity: &'a str,
    rho_db: Option<f64>,
    value: f64,
}

pub fn summarize(points: &[MISweepPoint]) -> Result<PrelogReport, CliError> {
    let first = points.first().ok_or_else(|| CliError::Config("no sweep points in the inputs".into()))?;
    let (n, q) = (first.n, first.q);
    if let Some(p) = points.iter().find(|p| (p.n, p.q) != (n, q)) {
        return Err(CliError::Config(format!(
            "inputs mix block specs: (N, Q) = ({n}, {q}) and ({}, {})",
            p.n, p.q
        )));
    }
    let mut rows = Vec::new();
    for fe in [Frontend::SymbolRate, Frontend::Oversampled] {
        let subset: Vec<MISweepPoint> = points.iter().filter(|p| p.frontend == fe).cloned().collect();
        if !subset.is_empty() {
            rows.push(FrontendRow { frontend: fe, fit: prelog_fit(&subset, n)? });
        }
    }
    let slope = |fe| rows.iter().find(|r| r.frontend == fe).map(|r| r.fit.slope_per_channel_use);
    let gap = slope(Frontend::Oversampled).zip(slope(Frontend::SymbolRate)).map(|(o, s)| o - s);
    let note = (rows.len() == 1)
        .then(|| format!("only the {} frontend is present; no gap reported", rows[0].frontend.as_str()));
    Ok(PrelogReport {
        n,
        q,
        reference_symbol_rate: 1.0 - q as f64 / n as f64,
        reference_oversampled: 1.0 - 1.0 / n as f64,
        rows,
        gap,
        note,
    })
}

fn long_csv(report: &PrelogReport, points: &[MISweepPoint]) -> Result<Vec<u8>, CliError> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        let per_use = p.mi_nats / p.n as f64;
        w.serialize(LongRow { series: p.frontend.as_str(), quantity: "mi_nats_per_use", rho_db: Some(p.rho_db), value: per_use })
            .map_err(io)?;
    }
    for r in &report.rows {
        let s = r.frontend.as_str();
        w.serialize(LongRow { series: s, quantity: "slope", rho_db: None, value: r.fit.slope_per_channel_use }).map_err(io)?;
        w.serialize(LongRow { series: s, quantity: "slope_stderr", rho_db: None, value: r.fit.slope_stderr }).map_err(io)?;
    }
    let refs = [
        ("reference_1_minus_q_over_n", report.reference_symbol_rate),
        ("reference_1_minus_1_over_n", report.reference_oversampled),
    ];
    for (name, v) in refs {
        w.serialize(LongRow { series: name, quantity: "slope", rho_db: None, value: v }).map_err(io)?;
    }
    if let Some(g) = report.gap {
        w.serialize(LongRow { series: "gap", quantity: "slope", rho_db: None, value: g }).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn prelog_report(inputs: &[PathBuf]) -> Result<Outcome, CliError> {
    let mut points = Vec::new();
    for path in inputs {
        let f = File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let pts = read_sweep_csv(f).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        points.extend(pts);
    }
    let report = summarize(&points)?;
    let mut lines = vec![format!(
        "prelog-report: N = {}, Q = {}, reference 1-Q/N = {:.3}, 1-1/N = {:.3}",
        report.n, report.q, report.reference_symbol_rate, report.reference_oversampled
    )];
    for r in &report.rows {
        lines.push(format!(
            "  {:<12} slope {:.3} +- {:.3} over {} points",
            r.frontend.as_str(),
            r.fit.slope_per_channel_use,
            r.fit.slope_stderr,
            r.fit.n_points
        ));
    }
    match (report.gap, &report.note) {
        (Some(g), _) => lines.push(format!("  gap (oversampled - symbol_rate) {g:.3}")),
        (None, Some(n)) => lines.push(format!("  note: {n}")),
        _ => {}
    }
    let csv = long_csv(&report, &points)?;
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    Ok(Outcome {
        artifacts: vec![("prelog_report.json".into(), json), ("prelog_report.csv".into(), csv)],
        summary: lines.join("\n"),
        failed_invariant: None,
    })
}
