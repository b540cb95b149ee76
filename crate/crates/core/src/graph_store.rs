//! Interaction logs, snapshot sequences and degree time series.
//!
//! Users and items share one vertex universe. Vertex names carry a side
//! prefix (`u:` for users, `i:` for items) so that a user and an item with
//! the same raw id stay distinct. Vertices are indexed in lexicographic
//! order of their names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vertex index into [`DynamicGraph::names`].
pub type VertexId = usize;

pub const USER_PREFIX: &str = "u:";
pub const ITEM_PREFIX: &str = "i:";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
}

impl InteractionRecord {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: u64) -> Self {
        InteractionRecord {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
        }
    }

    pub fn user_vertex(&self) -> String {
        format!("{USER_PREFIX}{}", self.user_id)
    }

    pub fn item_vertex(&self) -> String {
        format!("{ITEM_PREFIX}{}", self.item_id)
    }
}

/// Column layout of a delimited interaction log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogFormat {
    pub delimiter: char,
    pub user_column: usize,
    pub item_column: usize,
    pub timestamp_column: usize,
}

impl Default for LogFormat {
    fn default() -> Self {
        LogFormat {
            delimiter: '\t',
            user_column: 0,
            item_column: 1,
            timestamp_column: 2,
        }
    }
}

/// Reads one interaction per line. A first line whose timestamp field is not
/// numeric is treated as a header; blank lines are skipped.
pub fn ingest_log(path: impl AsRef<Path>, format: &LogFormat) -> Result<Vec<InteractionRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut records = Vec::new();
    let needed = format
        .user_column
        .max(format.item_column)
        .max(format.timestamp_column);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).collect();
        let parse_err = |message: String| Error::Parse {
            path: display.clone(),
            line: line_no,
            message,
        };
        if fields.len() <= needed {
            return Err(parse_err(format!(
                "expected at least {} fields, found {}",
                needed + 1,
                fields.len()
            )));
        }
        let ts_field = fields[format.timestamp_column].trim();
        let timestamp = match ts_field.parse::<u64>() {
            Ok(ts) => ts,
            Err(_) if line_no == 1 && ts_field.parse::<f64>().is_err() => continue,
            Err(_) => return Err(parse_err(format!("invalid timestamp `{ts_field}`"))),
        };
        let user = fields[format.user_column].trim();
        let item = fields[format.item_column].trim();
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        records.push(InteractionRecord::new(user, item, timestamp));
    }
    Ok(records)
}

/// Writes `user<d>item<d>timestamp` lines readable by [`ingest_log`] under the
/// default column layout.
pub fn write_log(records: &[InteractionRecord], path: impl AsRef<Path>, delimiter: char) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        writeln!(out, "{}{delimiter}{}{delimiter}{}", r.user_id, r.item_id, r.timestamp).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Static graph of one time interval. Edges are stored once as `(a, b)` with
/// `a < b`, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    /// 1-based position in the sequence.
    pub index: usize,
    edges: Vec<(VertexId, VertexId)>,
}

impl SnapshotGraph {
    /// Normalizes, deduplicates and drops self-loops.
    pub fn new(index: usize, edges: impl IntoIterator<Item = (VertexId, VertexId)>) -> Self {
        let set: BTreeSet<(VertexId, VertexId)> = edges
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        SnapshotGraph {
            index,
            edges: set.into_iter().collect(),
        }
    }

    pub fn edges(&self) -> &[(VertexId, VertexId)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Endpoints of the snapshot's edges.
    pub fn vertices(&self) -> BTreeSet<VertexId> {
        self.edges.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

/// Ordered snapshot sequence over a fixed vertex universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraph {
    names: Vec<String>,
    snapshots: Vec<SnapshotGraph>,
    /// `T + 1` interval boundaries in timestamp units.
    boundaries: Vec<f64>,
}

impl DynamicGraph {
    /// `names` must be sorted and unique; every edge endpoint must index it.
    pub fn new(names: Vec<String>, snapshots: Vec<SnapshotGraph>, boundaries: Vec<f64>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Config("a dynamic graph needs at least one snapshot".into()));
        }
        if !names.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("vertex names must be sorted and unique".into()));
        }
        for s in &snapshots {
            if s.edges.iter().any(|&(_, b)| b >= names.len()) {
                return Err(Error::Config(format!("snapshot {} references an unknown vertex", s.index)));
            }
        }
        if boundaries.len() != snapshots.len() + 1 {
            return Err(Error::Config("expected T + 1 interval boundaries".into()));
        }
        Ok(DynamicGraph {
            names,
            snapshots,
            boundaries,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.names.len()
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: VertexId) -> &str {
        &self.names[v]
    }

    pub fn vertex(&self, name: &str) -> Option<VertexId> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn snapshots(&self) -> &[SnapshotGraph] {
        &self.snapshots
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn is_user(&self, v: VertexId) -> bool {
        self.names[v].starts_with(USER_PREFIX)
    }

    pub fn is_item(&self, v: VertexId) -> bool {
        self.names[v].starts_with(ITEM_PREFIX)
    }

    pub fn users(&self) -> Vec<VertexId> {
        (0..self.num_vertices()).filter(|&v| self.is_user(v)).collect()
    }

    pub fn items(&self) -> Vec<VertexId> {
        (0..self.num_vertices()).filter(|&v| self.is_item(v)).collect()
    }

    /// Distinct edges across all snapshots.
    pub fn union_edges(&self) -> Vec<(VertexId, VertexId)> {
        let set: BTreeSet<_> = self.snapshots.iter().flat_map(|s| s.edges.iter().copied()).collect();
        set.into_iter().collect()
    }

    /// Sorted neighbor lists of the union graph.
    pub fn union_neighbors(&self) -> Vec<Vec<VertexId>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for (a, b) in self.union_edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Contiguous snapshot ranges of `window_count` equally long windows.
    pub fn windows(&self, window_count: usize) -> Result<Vec<Range<usize>>> {
        window_ranges(self.num_snapshots(), window_count)
    }

    /// Same universe, snapshots `range` only (renumbered from 1).
    pub fn restrict(&self, range: Range<usize>) -> DynamicGraph {
        let snapshots = self.snapshots[range.clone()]
            .iter()
            .enumerate()
            .map(|(i, s)| SnapshotGraph {
                index: i + 1,
                edges: s.edges.clone(),
            })
            .collect();
        DynamicGraph {
            names: self.names.clone(),
            snapshots,
            boundaries: self.boundaries[range.start..=range.end].to_vec(),
        }
    }
}

pub(crate) fn window_ranges(snapshots: usize, window_count: usize) -> Result<Vec<Range<usize>>> {
    if window_count == 0 || !snapshots.is_multiple_of(window_count) {
        return Err(Error::Config(format!(
            "window count {window_count} does not divide {snapshots} snapshots"
        )));
    }
    let len = snapshots / window_count;
    Ok((0..window_count).map(|w| w * len..(w + 1) * len).collect())
}

/// Partitions the log's time range into `snapshots` equal-width intervals.
///
/// Interval `t` covers `[min + t*w, min + (t+1)*w)`, the last interval also
/// includes the maximum timestamp. The vertex universe is every user and
/// item in `records`.
pub fn build_snapshots(records: &[InteractionRecord], snapshots: usize, window_count: usize) -> Result<DynamicGraph> {
    if snapshots == 0 {
        return Err(Error::Config("snapshot count must be positive".into()));
    }
    window_ranges(snapshots, window_count)?;
    if records.is_empty() {
        return Err(Error::Config("cannot build snapshots from an empty log".into()));
    }
    let names: Vec<String> = records
        .iter()
        .flat_map(|r| [r.user_vertex(), r.item_vertex()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let min = records.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let max = records.iter().map(|r| r.timestamp).max().unwrap_or(0);
    let mut distinct: Vec<u64> = records.iter().map(|r| r.timestamp).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < snapshots {
        warn!(
            "{} distinct timestamps for {snapshots} snapshots; some intervals will be empty",
            distinct.len()
        );
    }
    build_snapshots_over(records, names, (min, max), snapshots)
}

/// Like [`build_snapshots`] but with a caller-fixed vertex universe and time
/// range, so that a subset of a log lands in the same intervals and vertex
/// ids as the full log.
pub fn build_snapshots_over(
    records: &[InteractionRecord],
    names: Vec<String>,
    (min, max): (u64, u64),
    snapshots: usize,
) -> Result<DynamicGraph> {
    if snapshots == 0 {
        return Err(Error::Config("snapshot count must be positive".into()));
    }
    if max < min {
        return Err(Error::Config("time range is reversed".into()));
    }
    let mut sorted: Vec<&InteractionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.timestamp, &a.user_id, &a.item_id).cmp(&(b.timestamp, &b.user_id, &b.item_id))
    });
    let index: HashMap<&str, VertexId> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let span = max - min;
    let mut buckets: Vec<Vec<(VertexId, VertexId)>> = vec![Vec::new(); snapshots];
    for r in &sorted {
        if r.timestamp < min || r.timestamp > max {
            return Err(Error::Config(format!("timestamp {} outside [{min}, {max}]", r.timestamp)));
        }
        let t = if span == 0 {
            0
        } else {
            let t = (u128::from(r.timestamp - min) * snapshots as u128 / u128::from(span)) as usize;
            t.min(snapshots - 1)
        };
        let lookup = |name: String| {
            index
                .get(name.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("vertex `{name}` is not in the universe")))
        };
        let u = lookup(r.user_vertex())?;
        let i = lookup(r.item_vertex())?;
        buckets[t].push((u, i));
    }
    let snaps = buckets
        .into_iter()
        .enumerate()
        .map(|(t, edges)| SnapshotGraph::new(t + 1, edges))
        .collect();
    let boundaries = (0..=snapshots)
        .map(|k| min as f64 + span as f64 * k as f64 / snapshots as f64)
        .collect();
    DynamicGraph::new(names, snaps, boundaries)
}

/// Degree time series of one vertex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSeries {
    pub vertex: VertexId,
    pub values: Vec<u32>,
}

impl DegreeSeries {
    pub fn total(&self) -> u64 {
        self.values.iter().map(|&d| u64::from(d)).sum()
    }
}

/// One series per vertex, indexed by vertex id.
pub fn degree_series(g: &DynamicGraph) -> Vec<DegreeSeries> {
    let t_len = g.num_snapshots();
    let mut out: Vec<DegreeSeries> = (0..g.num_vertices())
        .map(|v| DegreeSeries {
            vertex: v,
            values: vec![0; t_len],
        })
        .collect();
    for (t, snap) in g.snapshots().iter().enumerate() {
        for &(a, b) in snap.edges() {
            out[a].values[t] += 1;
            out[b].values[t] += 1;
        }
    }
    out
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Writes `t<TAB>a<TAB>b` per edge plus a `<path>.manifest` key-value file.
pub fn write_snapshots(g: &DynamicGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut rows = 0usize;
    for s in g.snapshots() {
        for &(a, b) in s.edges() {
            writeln!(out, "{}\t{}\t{}", s.index, g.name(a), g.name(b)).map_err(|e| Error::io(path, e))?;
            rows += 1;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;

    let mut touched = vec![false; g.num_vertices()];
    for (a, b) in g.union_edges() {
        touched[a] = true;
        touched[b] = true;
    }
    let isolated: Vec<&str> = (0..g.num_vertices())
        .filter(|&v| !touched[v])
        .map(|v| g.name(v))
        .collect();

    let mut m = String::new();
    let _ = writeln!(m, "snapshots={}", g.num_snapshots());
    let _ = writeln!(m, "vertices={}", g.num_vertices());
    let _ = writeln!(m, "edges={}", g.union_edges().len());
    let _ = writeln!(m, "edge_rows={rows}");
    for (k, b) in g.boundaries().iter().enumerate() {
        let _ = writeln!(m, "boundary.{k}={b}");
    }
    let _ = writeln!(m, "isolated={}", isolated.join("\t"));
    let mpath = manifest_path(path);
    fs::write(&mpath, m).map_err(|e| Error::io(mpath, e))
}

/// Inverse of [`write_snapshots`].
pub fn read_snapshots(path: impl AsRef<Path>) -> Result<DynamicGraph> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let kv = parse_key_values(&manifest, &mpath.display().to_string())?;
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::Config(format!("manifest lacks `{k}`")))
    };
    let t_len: usize = get("snapshots")?
        .parse()
        .map_err(|_| Error::Config("bad snapshot count".into()))?;
    let n: usize = get("vertices")?
        .parse()
        .map_err(|_| Error::Config("bad vertex count".into()))?;
    let boundaries = (0..=t_len)
        .map(|k| {
            get(&format!("boundary.{k}"))?
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad boundary {k}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut raw: Vec<(usize, String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let t = f.first().and_then(|s| s.parse::<usize>().ok());
        match (t, f.len()) {
            (Some(t), 3) if (1..=t_len).contains(&t) => raw.push((t, f[1].to_string(), f[2].to_string())),
            _ => {
                return Err(Error::Parse {
                    path: display,
                    line: i + 1,
                    message: "expected `t<TAB>a<TAB>b`".into(),
                })
            }
        }
    }
    let mut names: BTreeSet<String> = raw.iter().flat_map(|(_, a, b)| [a.clone(), b.clone()]).collect();
    if let Some(iso) = kv.get("isolated") {
        names.extend(iso.split('\t').filter(|s| !s.is_empty()).map(str::to_string));
    }
    let names: Vec<String> = names.into_iter().collect();
    if names.len() != n {
        return Err(Error::Config(format!("manifest says {n} vertices, dump has {}", names.len())));
    }
    let index: HashMap<&str, VertexId> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut buckets = vec![Vec::new(); t_len];
    for (t, a, b) in &raw {
        buckets[t - 1].push((index[a.as_str()], index[b.as_str()]));
    }
    let snaps = buckets
        .into_iter()
        .enumerate()
        .map(|(t, e)| SnapshotGraph::new(t + 1, e))
        .collect();
    DynamicGraph::new(names, snaps, boundaries)
}

/// Parses `key=value` lines; `#` starts a comment line.
pub fn parse_key_values(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "expected key=value".into(),
            });
        };
        out.insert(k.trim().to_string(), v.trim_matches(|c| c == ' ' || c == '\r').to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(u: &str, i: &str, ts: u64) -> InteractionRecord {
        InteractionRecord::new(u, i, ts)
    }

    #[test]
    fn ingest_counts_rows_and_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.tsv");
        fs::write(&p, "user\titem\ttime\nu1\ti1\t10\nu2\ti1\t20\nu1\ti2\t30\n").unwrap();
        let recs = ingest_log(&p, &LogFormat::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2], rec("u1", "i2", 30));
    }

    #[test]
    fn ingest_reports_malformed_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.tsv");
        fs::write(&p, "a\tx\t1\nb\tx\t2\nc\ty\t3\nd\ty\tnot-a-time\ne\tz\t5\n").unwrap();
        match ingest_log(&p, &LogFormat::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_empty_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.tsv");
        fs::write(&p, "").unwrap();
        assert!(ingest_log(&p, &LogFormat::default()).unwrap().is_empty());
    }

    #[test]
    fn midpoint_split_places_three_and_three() {
        // Range [0, 100]: the midpoint boundary is 50.
        let recs = vec![
            rec("a", "x", 0),
            rec("b", "x", 10),
            rec("c", "y", 49),
            rec("a", "y", 51),
            rec("b", "z", 70),
            rec("c", "z", 100),
        ];
        let g = build_snapshots(&recs, 2, 1).unwrap();
        assert_eq!(g.snapshots()[0].edge_count(), 3);
        assert_eq!(g.snapshots()[1].edge_count(), 3);
        assert_eq!(g.boundaries(), &[0.0, 50.0, 100.0]);
    }

    #[test]
    fn empty_interval_yields_empty_snapshot() {
        let recs = vec![rec("a", "x", 0), rec("b", "y", 100)];
        let g = build_snapshots(&recs, 3, 1).unwrap();
        assert_eq!(g.snapshots()[1].edge_count(), 0);
        assert!(g.snapshots()[1].vertices().is_empty());
    }

    #[test]
    fn window_count_must_divide() {
        let recs = vec![rec("a", "x", 0), rec("b", "y", 100)];
        assert!(matches!(build_snapshots(&recs, 5, 2), Err(Error::Config(_))));
        assert!(build_snapshots(&recs, 4, 2).is_ok());
        assert!(build_snapshots(&[], 2, 1).is_err());
    }

    #[test]
    fn duplicates_collapse_within_snapshot() {
        let recs = vec![rec("a", "x", 0), rec("a", "x", 1), rec("a", "x", 2)];
        let g = build_snapshots(&recs, 1, 1).unwrap();
        assert_eq!(g.snapshots()[0].edge_count(), 1);
        assert_eq!(degree_series(&g)[0].values, vec![1]);
    }

    #[test]
    fn degree_series_counts_incident_edges() {
        // v is adjacent to a and b in snapshot 1 and to a in snapshot 2.
        let names: Vec<String> = ["a", "b", "lonely", "v"].iter().map(|s| s.to_string()).collect();
        let g = DynamicGraph::new(
            names,
            vec![SnapshotGraph::new(1, [(3, 0), (3, 1)]), SnapshotGraph::new(2, [(3, 0)])],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        let deg = degree_series(&g);
        assert_eq!(deg[3].values, vec![2, 1]);
        assert_eq!(deg[2].values, vec![0, 0]);
    }

    #[test]
    fn isolated_vertices_survive_round_trip() {
        let names: Vec<String> = ["i:x", "u:a", "u:z"].iter().map(|s| s.to_string()).collect();
        let g = DynamicGraph::new(names, vec![SnapshotGraph::new(1, [(0, 1)])], vec![0.0, 7.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        write_snapshots(&g, &p).unwrap();
        assert_eq!(read_snapshots(&p).unwrap(), g);
    }

    fn arb_records() -> impl Strategy<Value = Vec<InteractionRecord>> {
        prop::collection::vec((0u8..12, 0u8..15, 0u64..1_000), 1..80).prop_map(|v| {
            v.into_iter()
                .map(|(u, i, ts)| rec(&format!("{u}"), &format!("{i}"), ts))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn handshake_and_partition(recs in arb_records(), t in 1usize..7) {
            let g = build_snapshots(&recs, t, 1).unwrap();
            let deg = degree_series(&g);
            for (ti, s) in g.snapshots().iter().enumerate() {
                let total: u32 = deg.iter().map(|d| d.values[ti]).sum();
                prop_assert_eq!(total as usize, 2 * s.edge_count());
            }
            let pairs: BTreeSet<(VertexId, VertexId)> = recs
                .iter()
                .map(|r| {
                    let a = g.vertex(&r.user_vertex()).unwrap();
                    let b = g.vertex(&r.item_vertex()).unwrap();
                    (a.min(b), a.max(b))
                })
                .collect();
            prop_assert_eq!(pairs.into_iter().collect::<Vec<_>>(), g.union_edges());
        }

        #[test]
        fn deterministic_and_round_trips(recs in arb_records(), t in 1usize..5) {
            let g = build_snapshots(&recs, t, 1).unwrap();
            let mut shuffled = recs.clone();
            shuffled.reverse();
            prop_assert_eq!(&build_snapshots(&shuffled, t, 1).unwrap(), &g);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("g.tsv");
            write_snapshots(&g, &p).unwrap();
            prop_assert_eq!(read_snapshots(&p).unwrap(), g);
        }
    }

    #[test]
    fn written_log_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let recs = vec![InteractionRecord::new("a", "x", 3), InteractionRecord::new("b", "y", 0)];
        write_log(&recs, &path, ',').unwrap();
        let format = LogFormat {
            delimiter: ',',
            ..LogFormat::default()
        };
        assert_eq!(ingest_log(&path, &format).unwrap(), recs);
    }
}
