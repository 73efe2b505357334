//! Dataset CSVs, suite manifests and report tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qdiag_core::classifier::Diagnosis;
use qdiag_core::data::RawSeries;
use qdiag_core::eval::{EnergyHistogramSet, EvalReport, HeatmapGrid, IdentificationMetrics};
use qdiag_core::training::LossCurve;
use qdiag_core::Matrix;

use crate::error::{AppError, AppResult};

pub fn read_text(path: &Path) -> AppResult<String> {
    std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// Parses a dataset CSV: header row of variable names and an optional final
/// `label` column.
pub fn parse_csv(text: &str) -> AppResult<RawSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| AppError::Data(format!("header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let has_label = headers.last().map(|h| h == "label").unwrap_or(false);
    let names: Vec<String> = if has_label {
        headers[..headers.len() - 1].to_vec()
    } else {
        headers.clone()
    };
    if names.is_empty() {
        return Err(AppError::Data("no variable columns".into()));
    }
    let d = names.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| AppError::Data(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(AppError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                AppError::Data(format!("row {row}, column {} (`{}`): `{cell}` is not a number", c + 1, names[c]))
            })?;
            if !v.is_finite() {
                return Err(AppError::Data(format!("row {row}, column {}: non-finite value", c + 1)));
            }
            values.push(v);
        }
        if has_label {
            let cell = record.get(d).unwrap_or("").trim();
            let l: usize = cell
                .parse()
                .map_err(|_| AppError::Data(format!("row {row}: label `{cell}` is not a non-negative integer")))?;
            labels.push(l);
        } else {
            labels.push(0);
        }
    }
    if labels.is_empty() {
        return Err(AppError::Data("no data rows".into()));
    }
    let n = labels.len();
    Ok(RawSeries::new(Matrix::from_vec(n, d, values)?, labels, names)?)
}

pub fn load_csv(path: &Path) -> AppResult<RawSeries> {
    parse_csv(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Writes values with the shortest representation that parses back exactly,
/// plus a trailing `label` column.
pub fn write_csv(series: &RawSeries) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<&str> = series.variable_names.iter().map(String::as_str).collect();
    header.push("label");
    let _ = w.write_record(&header);
    for (row, label) in series.values.iter_rows().zip(&series.labels) {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        cells.push(label.to_string());
        let _ = w.write_record(&cells);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub fault_id: usize,
    pub onset: Option<usize>,
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("name,path,fault_id,onset\n");
    for e in entries {
        let onset = e.onset.map_or(String::new(), |o| o.to_string());
        let _ = writeln!(out, "{},{},{},{}", e.name, e.path.display(), e.fault_id, onset);
    }
    out
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> AppResult<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let bad = |msg: String| AppError::Data(format!("{}: row {}: {msg}", path.display(), r + 1));
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 4 {
            return Err(bad("expected name,path,fault_id,onset".into()));
        }
        let fault_id = record[2].trim().parse().map_err(|_| bad("invalid fault_id".into()))?;
        let onset = match record[3].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("invalid onset".into()))?),
        };
        let p = PathBuf::from(record[1].trim());
        out.push(ManifestEntry {
            name: record[0].trim().to_string(),
            path: if p.is_absolute() { p } else { base.join(p) },
            fault_id,
            onset,
        });
    }
    Ok(out)
}

pub fn predictions_csv(d: &Diagnosis) -> String {
    let mut out = String::from("sample_index,p_normal,p_faulty,state\n");
    for (i, (row, faulty)) in d.probs.iter_rows().zip(&d.faulty).enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", row[0], row[1], *faulty as u8);
    }
    out
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("fault_id,fdr,far\n");
    for r in &report.rows {
        let _ = writeln!(out, "{},{},{}", r.fault_id, opt(r.metrics.fdr), opt(r.metrics.far));
    }
    out
}

/// Per-class identification rates; `class_ids[k]` names class `k`.
pub fn identification_report_csv(m: &IdentificationMetrics, class_ids: &[usize]) -> String {
    let mut out = String::from("fault_id,fdr,far\n");
    for (k, id) in class_ids.iter().enumerate() {
        let _ = writeln!(out, "{id},{},{}", opt(m.fdr[k]), opt(m.far[k]));
    }
    out
}

pub fn confusion_csv(m: &IdentificationMetrics, class_ids: &[usize]) -> String {
    let mut out = String::from("true_class,pred_class,count\n");
    for (i, row) in m.confusion.iter().enumerate() {
        for (j, count) in row.iter().enumerate() {
            let _ = writeln!(out, "{},{},{count}", class_ids[i], class_ids[j]);
        }
    }
    out
}

pub fn grid_csv(g: &HeatmapGrid) -> String {
    let mut out = String::from("h1,h2,fault_id,fdr\n");
    for c in &g.cells {
        let _ = writeln!(out, "{},{},{},{}", c.h1, c.h2, c.fault_id, opt(c.fdr));
    }
    out
}

pub fn loss_csv(curves: &[&LossCurve]) -> String {
    let mut out = String::from("epoch,loss,sampler\n");
    for curve in curves {
        for r in &curve.records {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.sampler);
        }
    }
    out
}

pub fn histogram_csv(set: &EnergyHistogramSet) -> String {
    let mut out = String::from("scaling_factor,bin_lo,bin_hi,count\n");
    for h in &set.histograms {
        for (k, count) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{count}", h.scaling_factor, set.edges[k], set.edges[k + 1]);
        }
    }
    out
}
