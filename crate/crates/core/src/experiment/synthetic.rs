//! Synthetic bipartite interaction logs with planted evolution groups.
//!
//! FaT vertices draw low stationary degrees from a truncated power law, T2H
//! vertices ramp from below the threshold to well above it, SfH vertices stay
//! high throughout. Each snapshot is wired by a bipartite configuration model
//! whose stubs prefer partners from the same planted community, so that the
//! held-out item of a user is predictable from structure.

use std::collections::BTreeMap;

use log::warn;
use rand::distr::{Distribution, Uniform, weighted::WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::{build_snapshots, DynamicGraph, InteractionRecord, ITEM_PREFIX, USER_PREFIX};
use crate::labeler::EvolutionLabel;

/// Timestamp units per snapshot.
pub const SNAPSHOT_WIDTH: u64 = 1000;
const MAX_RETRIES: usize = 10;
/// Order of [`SyntheticSpec::ratios`].
pub const RATIO_ORDER: [EvolutionLabel; 3] = [EvolutionLabel::FaT, EvolutionLabel::T2H, EvolutionLabel::SfH];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vertices: usize,
    /// Target shares of FaT, T2H and SfH.
    pub ratios: [f64; 3],
    /// Exponent of the FaT degree power law.
    pub exponent: f64,
    pub edges_per_snapshot: usize,
    pub user_fraction: f64,
    pub communities: usize,
    /// Probability that a stub looks for a partner in its own community.
    pub intra_probability: f64,
    /// Head threshold the degree schedules are planted around.
    pub threshold: u32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vertices: 5000,
            ratios: [0.9067, 0.0702, 0.0231],
            exponent: 2.5,
            edges_per_snapshot: 6000,
            user_fraction: 0.5,
            communities: 10,
            intra_probability: 0.8,
            threshold: 10,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.ratios.iter().sum();
        if self.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("group ratios {:?} must be shares summing to 1", self.ratios)));
        }
        if self.vertices < 2 || !(self.user_fraction > 0.0 && self.user_fraction < 1.0) {
            return Err(Error::Config("need users and items".into()));
        }
        if self.threshold < 2 || !(self.exponent > 0.0) || self.communities == 0 {
            return Err(Error::Config("threshold >= 2, positive exponent and communities required".into()));
        }
        if !(0.0..=1.0).contains(&self.intra_probability) {
            return Err(Error::Config("intra-community probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        ((self.vertices as f64 * self.user_fraction).round() as usize).clamp(1, self.vertices - 1)
    }
}

/// Generated log, its snapshot graph and the planted labels by vertex name.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub records: Vec<InteractionRecord>,
    pub graph: DynamicGraph,
    pub planted: BTreeMap<String, EvolutionLabel>,
}

struct Vertex {
    name: String,
    is_user: bool,
    label: EvolutionLabel,
    community: usize,
}

fn pad(i: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("{i:0width$}")
}

/// Planted groups: counts by rounding, FaT absorbs the remainder.
fn group_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let t2h = (n as f64 * ratios[1]).round() as usize;
    let sfh = (n as f64 * ratios[2]).round() as usize;
    [n.saturating_sub(t2h + sfh), t2h, sfh]
}

pub fn generate_synthetic(spec: &SyntheticSpec, snapshots: usize, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    if snapshots < 2 {
        return Err(Error::Config("synthetic evolution needs at least two snapshots".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.vertices;
    let n_users = spec.users();
    let n_items = n - n_users;

    let mut labels: Vec<EvolutionLabel> = Vec::with_capacity(n);
    for (label, count) in RATIO_ORDER.iter().zip(group_sizes(n, spec.ratios)) {
        labels.extend(std::iter::repeat_n(*label, count));
    }
    labels.shuffle(&mut rng);
    let vertices: Vec<Vertex> = (0..n)
        .map(|v| {
            let is_user = v < n_users;
            let name = if is_user {
                pad(v, n_users)
            } else {
                pad(v - n_users, n_items)
            };
            Vertex {
                name,
                is_user,
                label: labels[v],
                community: rng.random_range(0..spec.communities),
            }
        })
        .collect();

    let schedules = degree_schedules(&vertices, spec, snapshots, &mut rng)?;

    let mut records = Vec::new();
    for t in 0..snapshots {
        let degree = |v: usize| schedules[v][t];
        let pairs = wire_snapshot(&vertices, n_users, degree, spec, &mut rng);
        let offsets = Uniform::new(0, SNAPSHOT_WIDTH).expect("non-empty range");
        for (u, i) in pairs {
            let ts = t as u64 * SNAPSHOT_WIDTH + offsets.sample(&mut rng);
            records.push(InteractionRecord::new(vertices[u].name.clone(), vertices[i].name.clone(), ts));
        }
    }
    if records.is_empty() {
        return Err(Error::Config("no edges were generated".into()));
    }
    // Pin the time range so interval t is exactly [t*W, (t+1)*W).
    let first = records
        .iter()
        .position(|r| r.timestamp < SNAPSHOT_WIDTH)
        .ok_or_else(|| Error::Config("first synthetic snapshot is empty".into()))?;
    records[first].timestamp = 0;
    let last_start = (snapshots as u64 - 1) * SNAPSHOT_WIDTH;
    let last = records
        .iter()
        .rposition(|r| r.timestamp >= last_start)
        .ok_or_else(|| Error::Config("last synthetic snapshot is empty".into()))?;
    records[last].timestamp = snapshots as u64 * SNAPSHOT_WIDTH - 1;

    let graph = build_snapshots(&records, snapshots, 1)?;
    let planted = vertices
        .iter()
        .map(|v| {
            let prefix = if v.is_user { USER_PREFIX } else { ITEM_PREFIX };
            (format!("{prefix}{}", v.name), v.label)
        })
        .filter(|(name, _)| graph.vertex(name).is_some())
        .collect();
    Ok(SyntheticData { records, graph, planted })
}

/// Per-vertex degree per snapshot. FaT degrees on each side are adjusted
/// so that user and item stub totals both equal the edge budget.
fn degree_schedules(vertices: &[Vertex], spec: &SyntheticSpec, snapshots: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<u32>>> {
    let theta = spec.threshold;
    let fat_max = theta - 1;
    let power: Vec<f64> = (1..=fat_max).map(|d| f64::from(d).powf(-spec.exponent)).collect();
    let fat_draw = WeightedIndex::new(&power).map_err(|e| Error::Config(e.to_string()))?;
    let low = Uniform::new_inclusive(1, (theta / 2).max(1)).expect("valid range");
    let rise = Uniform::new_inclusive(theta + theta / 2, 2 * theta).expect("valid range");
    let high = Uniform::new_inclusive(theta + theta / 2, 3 * theta).expect("valid range");

    let mut schedules: Vec<Vec<u32>> = vertices
        .iter()
        .map(|v| match v.label {
            EvolutionLabel::SfH => (0..snapshots).map(|_| high.sample(rng)).collect(),
            EvolutionLabel::T2H => {
                let (a, b) = (f64::from(low.sample(rng)), f64::from(rise.sample(rng)));
                (0..snapshots)
                    .map(|t| (a + (b - a) * t as f64 / (snapshots - 1) as f64).round() as u32)
                    .collect()
            }
            EvolutionLabel::FaT => (0..snapshots).map(|_| fat_draw.sample(rng) as u32 + 1).collect(),
        })
        .collect();

    let budget = spec.edges_per_snapshot as u64;
    for t in 0..snapshots {
        for side in [true, false] {
            let members: Vec<usize> = (0..vertices.len()).filter(|&v| vertices[v].is_user == side).collect();
            let fat: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&v| vertices[v].label == EvolutionLabel::FaT)
                .collect();
            let mut attempt = 0;
            loop {
                let fixed: u64 = members
                    .iter()
                    .filter(|&&v| vertices[v].label != EvolutionLabel::FaT)
                    .map(|&v| u64::from(schedules[v][t]))
                    .sum();
                let capacity = fat.len() as u64 * u64::from(fat_max);
                if fixed <= budget && budget - fixed <= capacity {
                    balance(&mut schedules, &fat, t, budget - fixed, fat_max, rng);
                    break;
                }
                attempt += 1;
                if attempt > MAX_RETRIES {
                    warn!(
                        "snapshot {}: {fixed} planted stubs against a budget of {budget} with {capacity} FaT slots",
                        t + 1
                    );
                    return Err(Error::InfeasibleDegrees(MAX_RETRIES));
                }
                warn!("snapshot {}: infeasible degree sequence, resampling ({attempt}/{MAX_RETRIES})", t + 1);
                for &v in &members {
                    if vertices[v].label == EvolutionLabel::SfH {
                        schedules[v][t] = high.sample(rng);
                    }
                }
            }
        }
    }
    Ok(schedules)
}

/// Moves FaT degrees one stub at a time until they sum to `target`.
fn balance(schedules: &mut [Vec<u32>], fat: &[usize], t: usize, target: u64, max: u32, rng: &mut ChaCha8Rng) {
    let mut sum: u64 = fat.iter().map(|&v| u64::from(schedules[v][t])).sum();
    while sum != target {
        let v = fat[rng.random_range(0..fat.len())];
        let d = &mut schedules[v][t];
        if sum > target && *d > 0 {
            *d -= 1;
            sum -= 1;
        } else if sum < target && *d < max {
            *d += 1;
            sum += 1;
        }
    }
}

/// Bipartite configuration model with community preference; returns
/// `(user, item)` vertex indices, possibly repeated.
fn wire_snapshot(
    vertices: &[Vertex],
    n_users: usize,
    degree: impl Fn(usize) -> u32,
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let c = spec.communities;
    let mut local_users: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut local_items: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut global_users = Vec::new();
    let mut global_items = Vec::new();
    for (v, vx) in vertices.iter().enumerate() {
        for _ in 0..degree(v) {
            let local = rng.random_bool(spec.intra_probability);
            match (v < n_users, local) {
                (true, true) => local_users[vx.community].push(v),
                (true, false) => global_users.push(v),
                (false, true) => local_items[vx.community].push(v),
                (false, false) => global_items.push(v),
            }
        }
    }
    let mut pairs = Vec::new();
    for k in 0..c {
        local_users[k].shuffle(rng);
        local_items[k].shuffle(rng);
        let m = local_users[k].len().min(local_items[k].len());
        pairs.extend(local_users[k].drain(..m).zip(local_items[k].drain(..m)));
        global_users.append(&mut local_users[k]);
        global_items.append(&mut local_items[k]);
    }
    global_users.shuffle(rng);
    global_items.shuffle(rng);
    pairs.extend(global_users.into_iter().zip(global_items));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_store::degree_series;
    use crate::labeler::{label, LabelerConfig, LabelerMode};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            vertices: 2000,
            edges_per_snapshot: 2400,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn fixed_seed_gives_identical_graph() {
        let a = generate_synthetic(&small(), 4, 9).unwrap();
        let b = generate_synthetic(&small(), 4, 9).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.graph, b.graph);
        let c = generate_synthetic(&small(), 4, 10).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn snapshot_intervals_follow_generation() {
        let d = generate_synthetic(&small(), 4, 1).unwrap();
        assert_eq!(d.graph.num_snapshots(), 4);
        let per_snapshot: Vec<usize> = d.graph.snapshots().iter().map(|s| s.edge_count()).collect();
        // Duplicates collapse, so counts sit at or slightly below the budget.
        for e in per_snapshot {
            assert!(e <= 2400 && e > 2000, "{e}");
        }
    }

    #[test]
    fn planted_sfh_has_higher_mean_degree_than_fat() {
        let d = generate_synthetic(&small(), 4, 3).unwrap();
        let series = degree_series(&d.graph);
        let mean = |l: EvolutionLabel| {
            let v: Vec<u64> = d
                .planted
                .iter()
                .filter(|(_, &x)| x == l)
                .map(|(name, _)| series[d.graph.vertex(name).unwrap()].total())
                .collect();
            v.iter().sum::<u64>() as f64 / v.len() as f64
        };
        assert!(mean(EvolutionLabel::SfH) > mean(EvolutionLabel::FaT));
    }

    #[test]
    fn threshold_labeler_recovers_planted_ratios() {
        let d = generate_synthetic(&small(), 4, 5).unwrap();
        let cfg = LabelerConfig {
            mode: LabelerMode::DegreeThreshold,
            ..LabelerConfig::default()
        };
        let labels = label(&degree_series(&d.graph), &cfg).unwrap();
        let n = d.graph.num_vertices() as f64;
        for l in RATIO_ORDER {
            let got = labels.values().filter(|&&x| x == l).count() as f64 / n;
            let planted = d.planted.values().filter(|&&x| x == l).count() as f64 / n;
            assert!((got - planted).abs() <= 0.02, "{l}: {got} vs {planted}");
        }
    }

    #[test]
    fn infeasible_budget_is_an_error() {
        let spec = SyntheticSpec {
            vertices: 200,
            edges_per_snapshot: 5,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec, 3, 0), Err(Error::InfeasibleDegrees(_))));
        let bad = SyntheticSpec {
            ratios: [0.5, 0.1, 0.1],
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad, 3, 0).is_err());
    }
}
