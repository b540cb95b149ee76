//! Evolution labels from degree time series.
//!
//! Two annotators are provided: a slope-based one that takes the top
//! fraction of vertices as the head group and separates the rest by whether
//! their peak degree comes after their lowest degree, and a fixed-threshold
//! one that compares first and last snapshot degrees against a cutoff.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::DegreeSeries;

/// Biased structural evolution class, in classifier output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvolutionLabel {
    /// Starting-from-Head.
    SfH,
    /// Tail-to-Head.
    T2H,
    /// Fluctuation-at-Tail.
    FaT,
}

impl EvolutionLabel {
    pub const ALL: [EvolutionLabel; 3] = [EvolutionLabel::SfH, EvolutionLabel::T2H, EvolutionLabel::FaT];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvolutionLabel::SfH => "SfH",
            EvolutionLabel::T2H => "T2H",
            EvolutionLabel::FaT => "FaT",
        }
    }
}

impl fmt::Display for EvolutionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvolutionLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SfH" => Ok(EvolutionLabel::SfH),
            "T2H" => Ok(EvolutionLabel::T2H),
            "FaT" => Ok(EvolutionLabel::FaT),
            other => Err(Error::Config(format!("unknown evolution label `{other}`"))),
        }
    }
}

/// Four-way first/last threshold pattern; H2T and FaH merge into SfH.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DegreePattern {
    FaT,
    T2H,
    H2T,
    FaH,
}

impl DegreePattern {
    pub const ALL: [DegreePattern; 4] = [DegreePattern::FaT, DegreePattern::T2H, DegreePattern::H2T, DegreePattern::FaH];

    pub fn evolution(self) -> EvolutionLabel {
        match self {
            DegreePattern::FaT => EvolutionLabel::FaT,
            DegreePattern::T2H => EvolutionLabel::T2H,
            DegreePattern::H2T | DegreePattern::FaH => EvolutionLabel::SfH,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DegreePattern::FaT => "FaT",
            DegreePattern::T2H => "T2H",
            DegreePattern::H2T => "H2T",
            DegreePattern::FaH => "FaH",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelerMode {
    Slope,
    DegreeThreshold,
}

impl FromStr for LabelerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slope" => Ok(LabelerMode::Slope),
            "threshold" | "degree_threshold" => Ok(LabelerMode::DegreeThreshold),
            other => Err(Error::Config(format!("unknown labeler mode `{other}`"))),
        }
    }
}

impl fmt::Display for LabelerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelerMode::Slope => "slope",
            LabelerMode::DegreeThreshold => "threshold",
        })
    }
}

/// Degree reduction used to rank vertices into the head group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadRanking {
    TotalDegree,
    LastSnapshotDegree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub mode: LabelerMode,
    /// Head group fraction, in (0, 1).
    pub head_ratio: f64,
    /// Minimum index gap between peak and trough for T2H.
    pub degree_variation: i64,
    pub degree_threshold: u32,
    pub head_ranking: HeadRanking,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            mode: LabelerMode::Slope,
            head_ratio: 0.2,
            degree_variation: 0,
            degree_threshold: 10,
            head_ranking: HeadRanking::TotalDegree,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.head_ratio > 0.0 && self.head_ratio < 1.0) {
            return Err(Error::Config(format!("head ratio {} outside (0, 1)", self.head_ratio)));
        }
        Ok(())
    }
}

/// Earliest index of the largest value.
fn first_argmax(values: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Earliest index of the smallest value.
fn first_argmin(values: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Vertices of the head group: top `ceil(n * head_ratio)` by the configured
/// degree reduction, ties broken by ascending vertex id.
pub fn head_group(series: &[DegreeSeries], cfg: &LabelerConfig) -> Vec<usize> {
    let head_num = (series.len() as f64 * cfg.head_ratio).ceil() as usize;
    let key = |s: &DegreeSeries| match cfg.head_ranking {
        HeadRanking::TotalDegree => s.total(),
        HeadRanking::LastSnapshotDegree => s.values.last().map_or(0, |&d| u64::from(d)),
    };
    let mut order: Vec<&DegreeSeries> = series.iter().collect();
    order.sort_by_key(|s| (Reverse(key(s)), s.vertex));
    order.into_iter().take(head_num).map(|s| s.vertex).collect()
}

/// Slope-based annotation; returned map is keyed by vertex id.
pub fn label_slope(series: &[DegreeSeries], cfg: &LabelerConfig) -> Result<BTreeMap<usize, EvolutionLabel>> {
    cfg.validate()?;
    if let Some(first) = series.first() {
        if series.iter().any(|s| s.values.len() != first.values.len()) {
            return Err(Error::Config("degree series lengths differ".into()));
        }
    }
    let head: std::collections::HashSet<usize> = head_group(series, cfg).into_iter().collect();
    Ok(series
        .iter()
        .map(|s| {
            let label = if head.contains(&s.vertex) {
                EvolutionLabel::SfH
            } else {
                let peak = first_argmax(&s.values) as i64;
                let trough = first_argmin(&s.values) as i64;
                if peak - trough > cfg.degree_variation {
                    EvolutionLabel::T2H
                } else {
                    EvolutionLabel::FaT
                }
            };
            (s.vertex, label)
        })
        .collect())
}

/// First/last snapshot threshold pattern of one series.
pub fn degree_pattern(values: &[u32], threshold: u32) -> DegreePattern {
    let first = values.first().copied().unwrap_or(0);
    let last = values.last().copied().unwrap_or(0);
    match (first >= threshold, last >= threshold) {
        (false, false) => DegreePattern::FaT,
        (false, true) => DegreePattern::T2H,
        (true, false) => DegreePattern::H2T,
        (true, true) => DegreePattern::FaH,
    }
}

pub fn pattern_threshold(series: &[DegreeSeries], threshold: u32) -> BTreeMap<usize, DegreePattern> {
    series
        .iter()
        .map(|s| (s.vertex, degree_pattern(&s.values, threshold)))
        .collect()
}

pub fn label_degree_threshold(series: &[DegreeSeries], cfg: &LabelerConfig) -> BTreeMap<usize, EvolutionLabel> {
    series
        .iter()
        .map(|s| (s.vertex, degree_pattern(&s.values, cfg.degree_threshold).evolution()))
        .collect()
}

/// Dispatches on `cfg.mode`.
pub fn label(series: &[DegreeSeries], cfg: &LabelerConfig) -> Result<BTreeMap<usize, EvolutionLabel>> {
    match cfg.mode {
        LabelerMode::Slope => label_slope(series, cfg),
        LabelerMode::DegreeThreshold => {
            cfg.validate()?;
            Ok(label_degree_threshold(series, cfg))
        }
    }
}

/// Per-group summary in the layout of a degree-trend statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub ratio: f64,
    /// Population mean degree per snapshot; `None` for an empty group.
    pub mean_degree: Option<Vec<f64>>,
    /// Population standard deviation per snapshot; `None` for an empty group.
    pub std_degree: Option<Vec<f64>>,
}

/// Statistics for every group key in `labels`, plus empty entries for any
/// key listed in `groups` that has no members.
pub fn group_statistics<K: Ord + Copy>(
    labels: &BTreeMap<usize, K>,
    series: &[DegreeSeries],
    groups: &[K],
) -> Result<BTreeMap<K, GroupStats>> {
    let total = series.len();
    let mut members: BTreeMap<K, Vec<&DegreeSeries>> = groups.iter().map(|&g| (g, Vec::new())).collect();
    for s in series {
        let g = labels
            .get(&s.vertex)
            .ok_or_else(|| Error::MissingLabel(s.vertex.to_string()))?;
        members.entry(*g).or_default().push(s);
    }
    Ok(members
        .into_iter()
        .map(|(g, list)| {
            let count = list.len();
            let ratio = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let (mean_degree, std_degree) = if count == 0 {
                (None, None)
            } else {
                let t_len = list[0].values.len();
                let n = count as f64;
                let means: Vec<f64> = (0..t_len)
                    .map(|t| list.iter().map(|s| f64::from(s.values[t])).sum::<f64>() / n)
                    .collect();
                let stds = (0..t_len)
                    .map(|t| {
                        let var = list
                            .iter()
                            .map(|s| (f64::from(s.values[t]) - means[t]).powi(2))
                            .sum::<f64>()
                            / n;
                        var.sqrt()
                    })
                    .collect();
                (Some(means), Some(stds))
            };
            (
                g,
                GroupStats {
                    count,
                    ratio,
                    mean_degree,
                    std_degree,
                },
            )
        })
        .collect())
}

/// Writes one `vertex<TAB>label` line per labeled vertex, using `names` for
/// the vertex column.
pub fn write_labels(labels: &BTreeMap<usize, EvolutionLabel>, names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (&v, l) in labels {
        let name = names
            .get(v)
            .ok_or_else(|| Error::Config(format!("label for unknown vertex {v}")))?;
        out.push_str(name);
        out.push('\t');
        out.push_str(l.as_str());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_labels`], keyed by vertex name.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, EvolutionLabel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let (name, label) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `vertex<TAB>label`".into()))?;
        let label = label.parse::<EvolutionLabel>().map_err(|e| bad(e.to_string()))?;
        if out.insert(name.to_string(), label).is_some() {
            return Err(bad(format!("vertex `{name}` labeled twice")));
        }
    }
    Ok(out)
}
