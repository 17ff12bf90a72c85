//! RTT statistics and cumulative message-class shares.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One completed echo exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttSample {
    pub index: u32,
    pub rtt_ms: f64,
}

/// Upper RTT bound of a message class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub label: String,
    pub ms: f64,
}

/// IEC 61850 message classes by transfer-time limit.
pub fn message_classes() -> Vec<Threshold> {
    [("1A/4", 6.0), ("1B", 40.0), ("2", 200.0), ("3/5/6", 1000.0)]
        .into_iter()
        .map(|(label, ms)| Threshold { label: label.into(), ms })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub label: String,
    pub threshold_ms: f64,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub n: usize,
    pub timeouts: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub mid_range: f64,
    pub elapsed_s: f64,
    pub throughput_pps: f64,
    pub shares: Vec<Share>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("thresholds must be strictly increasing")]
    Thresholds,
}

/// (range, mid-range) of an extremum pair.
pub fn extrema(min: f64, max: f64) -> (f64, f64) {
    (max - min, (min + max) / 2.0)
}

pub fn compute_metrics(
    scheme: &str,
    samples: &[RttSample],
    timeouts: usize,
    elapsed_s: f64,
    thresholds: &[Threshold],
) -> Result<MetricsReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    if thresholds.windows(2).any(|w| w[0].ms >= w[1].ms) {
        return Err(MetricsError::Thresholds);
    }
    let mut rtts: Vec<f64> = samples.iter().map(|s| s.rtt_ms).collect();
    rtts.sort_by(f64::total_cmp);
    let n = rtts.len();
    let mean = rtts.iter().sum::<f64>() / n as f64;
    let var = rtts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let (min, max) = (rtts[0], rtts[n - 1]);
    let (range, mid_range) = extrema(min, max);
    let shares = thresholds
        .iter()
        .map(|t| {
            let count = rtts.partition_point(|x| *x <= t.ms);
            Share { label: t.label.clone(), threshold_ms: t.ms, count, percent: 100.0 * count as f64 / n as f64 }
        })
        .collect();
    Ok(MetricsReport {
        scheme: scheme.to_string(),
        n,
        timeouts,
        mean,
        median: rtts[(n - 1) / 2],
        stddev: var.sqrt(),
        min,
        max,
        range,
        mid_range,
        elapsed_s,
        throughput_pps: if elapsed_s > 0.0 { n as f64 / elapsed_s } else { 0.0 },
        shares,
    })
}
