//! Loading, held-out split and labeling.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph_store::{build_snapshots, build_snapshots_over, degree_series, ingest_log, DynamicGraph, InteractionRecord, LogFormat};
use crate::labeler::{label, EvolutionLabel};

use super::config::{DataSource, ExperimentConfig};
use super::synthetic::generate_synthetic;

/// Interaction log plus planted labels when synthetic.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<InteractionRecord>,
    /// Keyed by vertex name.
    pub planted: Option<BTreeMap<String, EvolutionLabel>>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let d = generate_synthetic(spec, cfg.snapshots, cfg.data_seed)?;
            Ok(Dataset {
                records: d.records,
                planted: Some(d.planted),
            })
        }
        DataSource::Log { path, delimiter } => {
            let format = LogFormat {
                delimiter: *delimiter,
                ..LogFormat::default()
            };
            Ok(Dataset {
                records: ingest_log(path, &format)?,
                planted: None,
            })
        }
    }
}

/// Splits off each user's last interacted item. Users with a single
/// distinct item stay entirely in training. Every interaction of a held-out
/// pair leaves the training log. Ties on the timestamp go to the larger
/// item id.
pub fn holdout_split(records: &[InteractionRecord]) -> (Vec<InteractionRecord>, BTreeMap<String, String>) {
    let mut last: BTreeMap<&str, (u64, &str)> = BTreeMap::new();
    let mut distinct: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        distinct.entry(&r.user_id).or_default().insert(&r.item_id);
        let e = last.entry(&r.user_id).or_insert((r.timestamp, &r.item_id));
        if (r.timestamp, r.item_id.as_str()) > *e {
            *e = (r.timestamp, &r.item_id);
        }
    }
    let held: BTreeMap<String, String> = last
        .into_iter()
        .filter(|(u, _)| distinct[u].len() >= 2)
        .map(|(u, (_, i))| (u.to_string(), i.to_string()))
        .collect();
    let train = records
        .iter()
        .filter(|r| held.get(&r.user_id) != Some(&r.item_id))
        .cloned()
        .collect();
    (train, held)
}

/// Everything shared by the runs of one experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// All interactions.
    pub full: DynamicGraph,
    /// Same universe and intervals, held-out pairs removed.
    pub train: DynamicGraph,
    /// `(user, item)` vertex ids of held-out pairs.
    pub test: Vec<(usize, usize)>,
    /// Labeler output on the training graph, every vertex.
    pub labels: BTreeMap<usize, EvolutionLabel>,
    /// Planted labels by vertex id, synthetic data only.
    pub planted: Option<BTreeMap<usize, EvolutionLabel>>,
    /// Union-graph neighbors in training, sorted.
    pub train_neighbors: Vec<Vec<usize>>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = load_dataset(cfg)?;
    prepare_records(&data, cfg)
}

pub fn prepare_records(data: &Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let full = build_snapshots(&data.records, cfg.snapshots, cfg.windows)?;
    let (train_records, held) = holdout_split(&data.records);
    let min = data.records.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let max = data.records.iter().map(|r| r.timestamp).max().unwrap_or(0);
    let train = build_snapshots_over(&train_records, full.names().to_vec(), (min, max), cfg.snapshots)?;
    let vertex = |name: String| {
        full.vertex(&name)
            .ok_or_else(|| Error::Config(format!("held-out vertex `{name}` is missing")))
    };
    let test = held
        .into_iter()
        .map(|(u, i)| {
            let r = InteractionRecord::new(u, i, 0);
            Ok((vertex(r.user_vertex())?, vertex(r.item_vertex())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = label(&degree_series(&train), &cfg.labeler)?;
    let planted = data.planted.as_ref().map(|p| {
        p.iter()
            .filter_map(|(name, &l)| full.vertex(name).map(|v| (v, l)))
            .collect()
    });
    let train_neighbors = train.union_neighbors();
    Ok(Prepared {
        users: full.users(),
        items: full.items(),
        full,
        train,
        test,
        labels,
        planted,
        train_neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, ts: u64) -> InteractionRecord {
        InteractionRecord::new(u, i, ts)
    }

    #[test]
    fn holdout_takes_the_last_item_and_all_its_interactions() {
        let log = vec![
            rec("a", "x", 1),
            rec("a", "y", 5),
            rec("a", "y", 2),
            rec("a", "z", 3),
            rec("b", "x", 4),
            rec("b", "x", 9),
        ];
        let (train, held) = holdout_split(&log);
        assert_eq!(held.len(), 1);
        assert_eq!(held["a"], "y");
        assert!(train.iter().all(|r| !(r.user_id == "a" && r.item_id == "y")));
        assert_eq!(train.len(), 4);
    }

    #[test]
    fn held_out_pairs_never_reach_training_snapshots() {
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic(super::super::synthetic::SyntheticSpec {
                vertices: 600,
                edges_per_snapshot: 700,
                ..Default::default()
            }),
            snapshots: 3,
            ..ExperimentConfig::default()
        };
        let p = prepare(&cfg).unwrap();
        assert!(!p.test.is_empty());
        assert_eq!(p.full.num_vertices(), p.train.num_vertices());
        for &(u, i) in &p.test {
            let (a, b) = (u.min(i), u.max(i));
            for s in p.train.snapshots() {
                assert!(s.edges().binary_search(&(a, b)).is_err());
            }
            assert!(p.full.is_user(u) && p.full.is_item(i));
        }
        assert_eq!(p.labels.len(), p.train.num_vertices());
    }
}
