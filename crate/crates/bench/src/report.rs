//! CSV and JSON artifacts and the printed result tables.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::metrics::{MetricsReport, RttSample};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn slug(scheme: &str) -> String {
    scheme.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}

/// Writes `<scheme>-samples.csv` and `<scheme>-report.json` under `dir`.
pub fn emit_report(dir: &Path, report: &MetricsReport, samples: &[RttSample]) -> Result<(PathBuf, PathBuf), ReportError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(format!("{}-samples.csv", slug(&report.scheme)));
    let json_path = dir.join(format!("{}-report.json", slug(&report.scheme)));
    write_samples(&csv_path, samples)?;
    let json = serde_json::to_string_pretty(report).map_err(|source| ReportError::Json { path: json_path.clone(), source })?;
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;
    Ok((csv_path, json_path))
}

pub fn write_samples(path: &Path, samples: &[RttSample]) -> Result<(), ReportError> {
    let csv = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv)?;
    w.write_record(["index", "rtt_ms"]).map_err(csv)?;
    for s in samples {
        w.write_record([s.index.to_string(), format!("{:.6}", s.rtt_ms)]).map_err(csv)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_samples(path: &Path) -> Result<Vec<RttSample>, ReportError> {
    let csv = |source| ReportError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv)?;
    r.deserialize().collect::<Result<Vec<RttSample>, _>>().map_err(csv)
}

pub fn read_report(path: &Path) -> Result<MetricsReport, ReportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json { path: path.to_path_buf(), source })
}

/// Every `*-report.json` in `dir`, sorted by file name.
pub fn read_reports(dir: &Path) -> Result<Vec<MetricsReport>, ReportError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("-report.json")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_report(p)).collect()
}

/// RTT table followed by the throughput and share table.
pub fn format_tables(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "Scheme", "Mean", "Median", "σ", "Min", "Max", "Range", "Mid-Range", "Timeouts"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8}",
            r.scheme, r.mean, r.median, r.stddev, r.min, r.max, r.range, r.mid_range, r.timeouts
        );
    }
    s.push('\n');
    let labels: Vec<String> = reports
        .first()
        .map(|r| r.shares.iter().map(|sh| format!("≤{} ms", sh.threshold_ms)).collect())
        .unwrap_or_default();
    let _ = write!(s, "{:<14} {:>9}", "Scheme", "PPS");
    for l in &labels {
        let _ = write!(s, " {l:>10}");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<14} {:>9.1}", r.scheme, r.throughput_pps);
        for sh in &r.shares {
            let _ = write!(s, " {:>9.2}%", sh.percent);
        }
        s.push('\n');
    }
    s
}
