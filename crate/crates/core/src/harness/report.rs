use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{CrossValReport, TwoPhaseReport};
use super::pipeline::XvalReport;
use super::sweep::SweepReport;
use crate::error::{Error, Result};
use crate::evalkit::EvalCurves;

/// One curve point tagged with the cell or volume it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub cell: String,
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

impl CurveRow {
    pub fn from_curves(cell: &str, c: &EvalCurves) -> Vec<CurveRow> {
        let rows = |kind: &str, pts: &[crate::evalkit::CurvePoint]| -> Vec<CurveRow> {
            pts.iter()
                .map(|p| CurveRow {
                    cell: cell.to_string(),
                    kind: kind.to_string(),
                    x: p.x,
                    y: p.y,
                    threshold: p.threshold,
                })
                .collect()
        };
        let mut out = rows("roc", &c.roc);
        out.extend(rows("pr", &c.pr));
        out
    }
}

/// Anything `emit_report` can write: a JSON summary, a flat table with one
/// row per cell, and tagged curve points.
pub trait Report: Serialize {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>);
    fn curves(&self) -> &[CurveRow] {
        &[]
    }
}

fn num(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn grid_table(r: &CrossValReport, phase: Option<&str>) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = phase.iter().map(|_| "phase".to_string()).collect();
    header.extend(["alpha", "beta", "gamma"].map(String::from));
    header.extend((0..r.folds).map(|f| format!("fold_{f}")));
    header.extend(["mean", "stderr", "valid"].map(String::from));
    let rows = r
        .cells
        .iter()
        .map(|c| {
            let mut row: Vec<String> = phase.iter().map(|p| p.to_string()).collect();
            row.extend([num(c.params.alpha), num(c.params.beta), num(c.params.gamma)]);
            row.extend(c.fold_values.iter().map(|v| opt(*v)));
            row.push(opt(c.summary.map(|s| s.mean)));
            row.push(opt(c.summary.map(|s| s.stderr)));
            row.push(c.is_valid().to_string());
            row
        })
        .collect();
    (header, rows)
}

impl Report for CrossValReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        grid_table(self, None)
    }
}

impl Report for TwoPhaseReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let (header, mut rows) = grid_table(&self.phase_one, Some("1"));
        rows.extend(grid_table(&self.phase_two, Some("2")).1);
        (header, rows)
    }
}

impl Report for XvalReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["fold", "volume", "auc_raw", "ap_raw", "auc", "ap", "dice", "lambda", "sigma", "threshold"]
            .map(String::from)
            .to_vec();
        let mut rows = Vec::new();
        for f in &self.folds {
            for v in &f.validation {
                rows.push(vec![
                    f.index.to_string(),
                    v.name.clone(),
                    num(v.raw.auc),
                    num(v.raw.ap),
                    opt(v.post.map(|p| p.auc)),
                    opt(v.post.map(|p| p.ap)),
                    num(v.dice),
                    opt(v.postproc.map(|p| p.lambda)),
                    opt(v.postproc.map(|p| p.sigma)),
                    num(f.threshold),
                ]);
            }
        }
        (header, rows)
    }

    fn curves(&self) -> &[CurveRow] {
        &self.curves
    }
}

impl Report for SweepReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = ["exposure", "projections", "auc_raw", "ap_raw", "auc", "ap", "valid"]
            .map(String::from)
            .to_vec();
        let rows = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    num(c.exposure),
                    num(c.projections),
                    opt(c.auc_raw),
                    opt(c.ap_raw),
                    opt(c.auc),
                    opt(c.ap),
                    c.error.is_none().to_string(),
                ]
            })
            .collect();
        (header, rows)
    }

    fn curves(&self) -> &[CurveRow] {
        &self.curves
    }
}

/// Writes `summary.json`, `table.csv` and `curves.csv` into `dir`.
pub fn emit_report<R: Report>(report: &R, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;

    let table = dir.join("table.csv");
    let mut w = csv::Writer::from_path(&table).map_err(|e| csv_io(&table, e))?;
    let (header, rows) = report.table();
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(&table, e))?;

    let curves = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves).map_err(|e| csv_io(&curves, e))?;
    w.write_record(["cell", "kind", "x", "y", "threshold"])?;
    for c in report.curves() {
        w.write_record([c.cell.clone(), c.kind.clone(), num(c.x), num(c.y), num(c.threshold)])?;
    }
    w.flush().map_err(|e| Error::io(&curves, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::grid::{run_grid_search, GridSpec};

    fn report() -> CrossValReport {
        run_grid_search(&GridSpec::default().phase_one(), 5, "abc", 9, |p, f| {
            Ok(p.alpha * 0.1 + p.beta / 3.0 + f as f64 * 1e-17 + 1.0 / 7.0)
        })
        .unwrap()
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = report();
        let text = serde_json::to_string(&r).unwrap();
        let back: CrossValReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn table_has_one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        emit_report(&r, dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(dir.path().join("table.csv")).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), r.cells.len());
        // full precision survives the text form
        let m: f64 = rows[3][8].parse().unwrap();
        assert_eq!(m, r.cells[3].summary.unwrap().mean);
        let back: CrossValReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(dir.path().join("curves.csv").exists());
    }

    #[test]
    fn infinite_thresholds_survive_csv() {
        assert_eq!(num(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
        assert_eq!(num(0.1 + 0.2).parse::<f64>().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_report(&report(), file.join("sub")).is_err());
    }
}
