//! Run reports: JSON with everything, CSV tables with mean and std.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::GroupStats;
use crate::metrics::MetricsReport;

use super::train::EpochRecord;

/// One seed of one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub trace: Vec<EpochRecord>,
    pub converged_at: Option<usize>,
    pub parameter_count: usize,
    pub mean_epoch_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

/// Named scalar metrics of one run, in a stable column order.
pub fn metric_values(m: &MetricsReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, v) in &m.hr {
        out.push((format!("HR@{k}"), *v));
    }
    for (k, v) in &m.ndcg {
        out.push((format!("NDCG@{k}"), *v));
    }
    for (k, v) in &m.prec {
        out.push((format!("PREC@{k}"), *v));
    }
    out.push(("rHR".into(), m.rhr));
    out.push(("rND".into(), m.rnd));
    for (g, v) in &m.group_hr20 {
        out.push((format!("HR@20({g})"), *v));
    }
    if let (Some(a), Some(b)) = (m.group_hr20.get("T2H"), m.group_hr20.get("SfH")) {
        out.push(("HR@20 gap".into(), (a - b).abs()));
    }
    out
}

fn is_fairness_metric(name: &str) -> bool {
    name == "rHR" || name == "rND" || name == "HR@20 gap"
}

/// Seed runs of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub runs: Vec<RunReport>,
    pub summary: BTreeMap<String, MeanStd>,
}

impl VariantReport {
    pub fn new(name: impl Into<String>, runs: Vec<RunReport>) -> Self {
        let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &runs {
            for (k, v) in metric_values(&r.metrics) {
                columns.entry(k).or_default().push(v);
            }
        }
        let summary = columns
            .into_iter()
            .filter_map(|(k, v)| MeanStd::of(&v).map(|s| (k, s)))
            .collect();
        VariantReport {
            name: name.into(),
            runs,
            summary,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).map(|s| s.mean)
    }
}

/// Mean epoch time at one subsampling fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub fraction: f64,
    pub vertices: usize,
    pub edges: usize,
    pub parameter_count: usize,
    pub mean_epoch_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// `train`, `ablation`, `plugin` or `scale`.
    pub kind: String,
    pub config_echo: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Label group statistics of the training graph, keyed by label.
    pub group_statistics: BTreeMap<String, GroupStats>,
    /// The reference variant comes first.
    pub variants: Vec<VariantReport>,
    pub scalability: Vec<ScalePoint>,
}

impl ExperimentReport {
    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Relative change of `value` against `reference`, in percent.
fn percent_change(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| (value - reference) / reference * 100.0)
}

/// Variant rows with mean and std per metric. With more than one variant,
/// every later row also gets `Dec.` (accuracy drop) and `Inc.` (fairness
/// metric rise) percentages against the first.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut metrics: Vec<String> = Vec::new();
    for v in &report.variants {
        for k in v.summary.keys() {
            if !metrics.contains(k) {
                metrics.push(k.clone());
            }
        }
    }
    let reference = report.variants.first();
    let with_deltas = report.variants.len() > 1;
    let mut out = String::from("variant");
    for m in &metrics {
        let _ = write!(out, ",{m} mean,{m} std");
    }
    if with_deltas {
        for m in &metrics {
            let tag = if is_fairness_metric(m) { "Inc." } else { "Dec." };
            let _ = write!(out, ",{tag} {m} (%)");
        }
    }
    out.push('\n');
    for v in &report.variants {
        out.push_str(&v.name);
        for m in &metrics {
            match v.summary.get(m) {
                Some(s) => {
                    let _ = write!(out, ",{},{}", s.mean, s.std);
                }
                None => out.push_str(",,"),
            }
        }
        if with_deltas {
            for m in &metrics {
                let delta = match (v.mean(m), reference.and_then(|r| r.mean(m))) {
                    (Some(x), Some(r)) => percent_change(x, r).map(|d| if is_fairness_metric(m) { d } else { -d }),
                    _ => None,
                };
                match delta {
                    Some(d) => {
                        let _ = write!(out, ",{d}");
                    }
                    None => out.push(','),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Group statistics in the layout of a degree-trend table: one row per
/// label with count, ratio and per-snapshot mean and std degrees.
pub fn group_statistics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("group,count,ratio,mean_degree,std_degree\n");
    for (g, s) in &report.group_statistics {
        let join = |v: &Option<Vec<f64>>| {
            v.as_ref()
                .map(|x| x.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
                .unwrap_or_default()
        };
        let _ = writeln!(out, "{g},{},{},{},{}", s.count, s.ratio, join(&s.mean_degree), join(&s.std_degree));
    }
    out
}

pub fn scalability_csv(points: &[ScalePoint]) -> String {
    let mut out = String::from("fraction,vertices,edges,parameters,mean_epoch_seconds\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.fraction, p.vertices, p.edges, p.parameter_count, p.mean_epoch_seconds
        );
    }
    out
}

/// Writes `report.json`, `summary.csv`, `groups.csv` and, for probes,
/// `scalability.csv` into `dir`.
pub fn emit_report(dir: impl AsRef<Path>, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join("report.json"), serde_json::to_string_pretty(report)?),
        (dir.join("summary.csv"), summary_csv(report)),
        (dir.join("groups.csv"), group_statistics_csv(report)),
    ];
    if !report.scalability.is_empty() {
        files.push((dir.join("scalability.csv"), scalability_csv(&report.scalability)));
    }
    for (path, text) in &files {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, hr: f64, rnd: f64) -> RunReport {
        let mut m = MetricsReport::default();
        m.hr.insert(20, hr);
        m.rnd = rnd;
        m.rhr = rnd / 2.0;
        m.group_hr20.insert("T2H".into(), hr / 3.0);
        m.group_hr20.insert("SfH".into(), hr);
        RunReport {
            seed,
            metrics: m,
            trace: Vec::new(),
            converged_at: Some(7),
            parameter_count: 10,
            mean_epoch_seconds: 0.1,
        }
    }

    fn report() -> ExperimentReport {
        ExperimentReport {
            kind: "ablation".into(),
            config_echo: serde_json::json!({"dim": 64}),
            seeds: vec![0, 1],
            group_statistics: BTreeMap::new(),
            variants: vec![
                VariantReport::new("full", vec![run(0, 0.4, 0.2), run(1, 0.2, 0.4)]),
                VariantReport::new("no_gru", vec![run(0, 0.15, 0.3), run(1, 0.15, 0.3)]),
            ],
            scalability: Vec::new(),
        }
    }

    #[test]
    fn mean_and_sample_std() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(MeanStd::of(&[4.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn written_report_reads_back_equal() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let files = emit_report(dir.path(), &r).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(read_report(&files[0]).unwrap(), r);
    }

    #[test]
    fn ablation_csv_has_decrease_and_increase_columns() {
        let csv = summary_csv(&report());
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!(header.contains(&"HR@20 mean") && header.contains(&"HR@20 std"));
        let dec = header.iter().position(|h| *h == "Dec. HR@20 (%)").unwrap();
        let inc = header.iter().position(|h| *h == "Inc. rND (%)").unwrap();
        lines.next();
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "no_gru");
        assert!((row[dec].parse::<f64>().unwrap() - 50.0).abs() < 1e-9);
        assert!((row[inc].parse::<f64>().unwrap() - 0.0).abs() < 1e-9);
    }
}
