//! Agreement and performance metrics, threshold sweeps and detection-rate drift.

use std::fmt::Write as _;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_proba, BinaryLabel, ForestModel};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// 2x2 confusion matrix; rows are the first (gold/human) label, columns the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        ConfusionMatrix { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// Swap the roles of the two raters.
    pub fn transpose(&self) -> Self {
        ConfusionMatrix::new(self.tn, self.fn_, self.fp, self.tp)
    }
}

pub fn confusion(gold: &[BinaryLabel], pred: &[BinaryLabel]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no labels to compare".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        match (g.is_positive(), p.is_positive()) {
            (false, false) => cm.tn += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (true, true) => cm.tp += 1,
        }
    }
    Ok(cm)
}

/// Precision, recall and F1 as proportions; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn prf(cm: &ConfusionMatrix) -> Prf {
    let precision = (cm.tp + cm.fp > 0).then(|| cm.tp as f64 / (cm.tp + cm.fp) as f64);
    let recall = (cm.tp + cm.fn_ > 0).then(|| cm.tp as f64 / (cm.tp + cm.fn_) as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub exact: f64,
    /// Cohen's kappa; `None` when chance agreement is 1.
    pub kappa: Option<f64>,
}

pub fn agreement(cm: &ConfusionMatrix) -> Result<Agreement> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Empty("confusion matrix has no observations".into()));
    }
    let n = n as f64;
    let observed = (cm.tn + cm.tp) as f64 / n;
    let row_neg = (cm.tn + cm.fp) as f64 / n;
    let row_pos = (cm.fn_ + cm.tp) as f64 / n;
    let col_neg = (cm.tn + cm.fn_) as f64 / n;
    let col_pos = (cm.fp + cm.tp) as f64 / n;
    let expected = row_neg * col_neg + row_pos * col_pos;
    let kappa = (expected < 1.0).then(|| (observed - expected) / (1.0 - expected));
    Ok(Agreement {
        exact: observed,
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub exact_agreement: f64,
    pub kappa: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let p = prf(cm);
        let a = agreement(cm)?;
        Ok(MetricsReport {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            exact_agreement: a.exact,
            kappa: a.kappa,
        })
    }
}

/// Proportion as a percent rounded to one decimal, ties to even.
pub fn percent_1dp(v: f64) -> f64 {
    (v * 1000.0).round_ties_even() / 10.0
}

/// Ties to even, so exact halves such as 0.8125 round down to 0.812.
pub fn round_3dp(v: f64) -> f64 {
    (v * 1000.0).round_ties_even() / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub detection_rate: f64,
}

/// Share of `probabilities` at or above each threshold, sorted by threshold.
pub fn sweep_probabilities(probabilities: &[f64], thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if probabilities.is_empty() {
        return Err(Error::Empty("no responses to calibrate on".into()));
    }
    let mut sorted = probabilities.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut ts = thresholds.to_vec();
    ts.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    Ok(ts
        .into_iter()
        .map(|t| {
            let below = sorted.partition_point(|&p| p < t);
            SweepRow {
                threshold: t,
                detection_rate: (sorted.len() - below) as f64 / n,
            }
        })
        .collect())
}

pub fn sweep_thresholds(
    model: &ForestModel,
    corpus: &[FeatureVector],
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    let probs: Vec<f64> = corpus.iter().map(|x| predict_proba(model, x)).collect();
    sweep_probabilities(&probs, thresholds)
}

/// `0, step, 2*step, ...` up to and including 1 (within rounding).
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidParams(format!("threshold step {step} not in (0, 1]")));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((i as f64 * step) * 1e6).round() / 1e6).collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,detection_rate\n");
    for r in rows {
        let _ = writeln!(out, "{:.2},{}", r.threshold, r.detection_rate);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBucket {
    pub period_start: NaiveDate,
    pub n: u64,
    pub detected: u64,
    /// `None` for empty buckets.
    pub detection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub bucket_days: u32,
    pub buckets: Vec<DriftBucket>,
    pub releases: Vec<NaiveDate>,
}

/// Group detections into consecutive `bucket_days`-day periods starting at the
/// earliest detection's date. Every period up to the latest detection is
/// present, including empty ones.
pub fn drift_report(
    detections: &[(NaiveDate, BinaryLabel)],
    releases: &[NaiveDate],
    bucket_days: u32,
) -> Result<DriftSeries> {
    if bucket_days == 0 {
        return Err(Error::InvalidParams("bucket length must be positive".into()));
    }
    let first = detections
        .iter()
        .map(|d| d.0)
        .min()
        .ok_or_else(|| Error::Empty("no timestamped detections".into()))?;
    let last = detections.iter().map(|d| d.0).max().expect("non-empty");
    let span = (last - first).num_days() as u64;
    let n_buckets = (span / bucket_days as u64 + 1) as usize;
    let mut counts = vec![(0u64, 0u64); n_buckets];
    for (date, label) in detections {
        let b = ((*date - first).num_days() as u64 / bucket_days as u64) as usize;
        counts[b].0 += 1;
        counts[b].1 += u64::from(label.is_positive());
    }
    let buckets = counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, detected))| DriftBucket {
            period_start: first + Duration::days(i as i64 * bucket_days as i64),
            n,
            detected,
            detection_rate: (n > 0).then(|| detected as f64 / n as f64),
        })
        .collect();
    let mut releases = releases.to_vec();
    releases.sort();
    Ok(DriftSeries {
        bucket_days,
        buckets,
        releases,
    })
}

impl DriftSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period_start,n,detection_rate\n");
        for b in &self.buckets {
            let rate = b.detection_rate.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", b.period_start, b.n, rate);
        }
        out
    }

    /// Line chart of detection rate per bucket with dashed vertical release markers.
    pub fn to_svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 300.0;
        const PAD: f64 = 40.0;
        let Some(first) = self.buckets.first().map(|b| b.period_start) else {
            return String::new();
        };
        let end = self.buckets.last().expect("non-empty").period_start
            + Duration::days(self.bucket_days as i64);
        let total_days = (end - first).num_days().max(1) as f64;
        let x_of = |d: NaiveDate| PAD + (d - first).num_days() as f64 / total_days * (W - 2.0 * PAD);
        let y_of = |r: f64| H - PAD - r * (H - 2.0 * PAD);
        let half = self.bucket_days as i64 / 2;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
            H - PAD,
            W - PAD
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{0}" stroke="black"/>"#,
            H - PAD
        );
        let mut segment: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        for b in &self.buckets {
            match b.detection_rate {
                Some(r) => segment.push(format!(
                    "{:.1},{:.1}",
                    x_of(b.period_start + Duration::days(half)),
                    y_of(r)
                )),
                None if !segment.is_empty() => segments.push(std::mem::take(&mut segment)),
                None => {}
            }
        }
        if !segment.is_empty() {
            segments.push(segment);
        }
        for s in segments {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
                s.join(" ")
            );
        }
        for r in self.releases.iter().filter(|r| **r >= first && **r <= end) {
            let x = x_of(*r);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{PAD}" x2="{x:.1}" y2="{0}" stroke="gray" stroke-dasharray="4,4"/>"#,
                H - PAD
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{PAD}" y="{0}" font-size="12">{first}</text>"#,
            H - PAD / 3.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Parse a drift CSV back into `(period_start, n, detection_rate)` rows.
pub fn parse_drift_csv(csv: &str) -> Result<Vec<(NaiveDate, u64, Option<f64>)>> {
    let mut lines = csv.lines();
    if lines.next() != Some("period_start,n,detection_rate") {
        return Err(Error::InvalidParams("unexpected drift CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: &str| Error::InvalidParams(format!("drift CSV row {}: {m}", i + 2));
            let mut cols = line.split(',');
            let (Some(d), Some(n), Some(r), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected 3 columns"));
            };
            let date = d.parse::<NaiveDate>().map_err(|_| bad("bad date"))?;
            let n = n.parse::<u64>().map_err(|_| bad("bad count"))?;
            let rate = if r.is_empty() {
                None
            } else {
                Some(r.parse::<f64>().map_err(|_| bad("bad rate"))?)
            };
            Ok((date, n, rate))
        })
        .collect()
}
