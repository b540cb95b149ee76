//! Recommendation accuracy (HR, PREC, NDCG at k) and ranking fairness
//! (rHR, rND) of T2H items.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default fairness cutoffs.
pub const FAIRNESS_KS: [usize; 9] = [1, 5, 10, 15, 20, 40, 60, 80, 100];

/// One user's ranked candidates (best first) and held-out positives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub positives: BTreeSet<usize>,
}

impl RankedList {
    fn hits(&self, k: usize) -> usize {
        self.items.iter().take(k).filter(|i| self.positives.contains(i)).count()
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("cutoff k must be at least 1".into()));
    }
    Ok(())
}

/// Total top-k hits over total positives.
pub fn hr_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check_k(k)?;
    let pos: usize = lists.iter().map(|l| l.positives.len()).sum();
    if pos == 0 {
        return Err(Error::UndefinedMetric("HR@k without positives"));
    }
    let hits: usize = lists.iter().map(|l| l.hits(k)).sum();
    Ok(hits as f64 / pos as f64)
}

/// Total top-k hits over total recommended slots.
pub fn prec_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check_k(k)?;
    let slots: usize = lists.iter().map(|l| l.items.len().min(k)).sum();
    if slots == 0 {
        return Err(Error::UndefinedMetric("PREC@k over empty prediction lists"));
    }
    let hits: usize = lists.iter().map(|l| l.hits(k)).sum();
    Ok(hits as f64 / slots as f64)
}

/// Sum of `1 / log2(rank + 1)` over positives ranked in the top k, divided by
/// the total number of positives.
pub fn ndcg_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check_k(k)?;
    let pos: usize = lists.iter().map(|l| l.positives.len()).sum();
    if pos == 0 {
        return Err(Error::UndefinedMetric("NDCG@k without positives"));
    }
    let gain: f64 = lists
        .iter()
        .map(|l| {
            l.items
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, i)| l.positives.contains(i))
                .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
                .sum::<f64>()
        })
        .sum();
    Ok(gain / pos as f64)
}

/// Choice of the worst-case value that normalizes rHR and rND.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalizer {
    /// Larger of the all-protected-first and all-protected-last rankings.
    #[default]
    Extremal,
    /// Maximum over every ranking of the universe.
    Exact,
}

/// Protected items and cutoffs for the ranking-fairness measures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessContext {
    pub ks: Vec<usize>,
    pub t2h: BTreeSet<usize>,
    pub universe: usize,
    pub normalizer: Normalizer,
}

impl FairnessContext {
    pub fn new(ks: Vec<usize>, t2h: BTreeSet<usize>, universe: usize) -> Result<Self> {
        if universe == 0 {
            return Err(Error::UndefinedMetric("ranking fairness over an empty universe"));
        }
        if t2h.len() > universe {
            return Err(Error::Config("more protected items than the universe holds".into()));
        }
        if ks.is_empty() || ks.contains(&0) || !ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("cutoffs must be positive and strictly ascending".into()));
        }
        Ok(FairnessContext {
            ks,
            t2h,
            universe,
            normalizer: Normalizer::Extremal,
        })
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = normalizer;
        self
    }

    /// Cutoffs not exceeding the universe or the ranking length.
    pub fn effective_ks(&self, ranking_len: usize) -> Vec<usize> {
        let cap = self.universe.min(ranking_len);
        self.ks.iter().copied().filter(|&k| k <= cap).collect()
    }

    fn global_share(&self) -> f64 {
        self.t2h.len() as f64 / self.universe as f64
    }
}

fn unnormalized(protected: &[bool], ks: &[usize], share: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let mut prefix = Vec::with_capacity(protected.len() + 1);
    prefix.push(0usize);
    for &p in protected {
        prefix.push(prefix.last().unwrap() + usize::from(p));
    }
    ks.iter()
        .map(|&k| weight(k) * (prefix[k] as f64 / k as f64 - share).abs())
        .sum()
}

fn normalized(ranking: &[usize], ctx: &FairnessContext, weight: impl Fn(usize) -> f64) -> Result<f64> {
    let ks = ctx.effective_ks(ranking.len());
    let share = ctx.global_share();
    let flags: Vec<bool> = ranking.iter().map(|i| ctx.t2h.contains(i)).collect();
    let n_t2h = ctx.t2h.len();
    let z = match ctx.normalizer {
        Normalizer::Extremal => {
            let first: Vec<bool> = (0..ctx.universe).map(|i| i < n_t2h).collect();
            let last: Vec<bool> = (0..ctx.universe).map(|i| i >= ctx.universe - n_t2h).collect();
            unnormalized(&first, &ks, share, &weight).max(unnormalized(&last, &ks, share, &weight))
        }
        Normalizer::Exact => exact_worst_case(ctx.universe, n_t2h, &ks, share, &weight),
    };
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok(unnormalized(&flags, &ks, share, &weight) / z)
}

/// Largest unnormalized sum over all rankings, by dynamic programming over
/// the protected count at each cutoff.
fn exact_worst_case(n: usize, t: usize, ks: &[usize], share: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let mut prev_k = 0usize;
    // best[c] = best partial sum with c protected items in the current prefix.
    let mut best: Vec<f64> = vec![0.0];
    let mut lo_prev = 0usize;
    for &k in ks {
        let lo = t.saturating_sub(n - k);
        let hi = t.min(k);
        let step = k - prev_k;
        let mut next = vec![f64::NEG_INFINITY; hi - lo + 1];
        for c in lo..=hi {
            let from = c.saturating_sub(step).max(lo_prev);
            let to = c.min(lo_prev + best.len() - 1);
            let mut m = f64::NEG_INFINITY;
            for cp in from..=to.max(from) {
                if cp <= to {
                    m = m.max(best[cp - lo_prev]);
                }
            }
            if m > f64::NEG_INFINITY {
                next[c - lo] = m + weight(k) * (c as f64 / k as f64 - share).abs();
            }
        }
        best = next;
        lo_prev = lo;
        prev_k = k;
    }
    best.into_iter().fold(0.0, f64::max)
}

/// Hit-ratio difference of the protected share over the cutoffs, divided by
/// its worst case.
pub fn rhr(ranking: &[usize], ctx: &FairnessContext) -> Result<f64> {
    normalized(ranking, ctx, |_| 1.0)
}

/// Log-discounted variant of [`rhr`]; the cutoff `k = 1` is skipped.
pub fn rnd(ranking: &[usize], ctx: &FairnessContext) -> Result<f64> {
    normalized(ranking, ctx, |k| if k == 1 { 0.0 } else { 1.0 / (k as f64).log2() })
}

/// How rHR and rND aggregate over users.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FairnessMode {
    /// Each user's candidate list is its own universe; results are averaged.
    PerUser,
    /// One ranking of the catalog by the number of users placing each item in
    /// their top `max(K)`.
    Global,
}

/// Mean rHR and rND over users; each list is its own universe.
pub fn fairness_per_user(lists: &[RankedList], t2h_items: &BTreeSet<usize>, ks: &[usize]) -> Result<(f64, f64)> {
    fairness_per_user_with(lists, |l| {
        let t2h: BTreeSet<usize> = l.items.iter().copied().filter(|i| t2h_items.contains(i)).collect();
        FairnessContext::new(ks.to_vec(), t2h, l.items.len())
    })
}

/// Mean rHR and rND over users with a caller-built context per list, for
/// truncated lists whose universe is the full candidate set.
pub fn fairness_per_user_with(
    lists: &[RankedList],
    mut context: impl FnMut(&RankedList) -> Result<FairnessContext>,
) -> Result<(f64, f64)> {
    if lists.is_empty() {
        return Err(Error::UndefinedMetric("ranking fairness without users"));
    }
    let (mut a, mut b) = (0.0, 0.0);
    for l in lists {
        let ctx = context(l)?;
        a += rhr(&l.items, &ctx)?;
        b += rnd(&l.items, &ctx)?;
    }
    let n = lists.len() as f64;
    Ok((a / n, b / n))
}

/// rHR and rND of one aggregated catalog ranking.
pub fn fairness_global(
    lists: &[RankedList],
    catalog: &[usize],
    t2h_items: &BTreeSet<usize>,
    ks: &[usize],
) -> Result<(f64, f64)> {
    let depth = ks.iter().copied().max().unwrap_or(1);
    let mut votes: BTreeMap<usize, usize> = catalog.iter().map(|&i| (i, 0)).collect();
    for l in lists {
        for i in l.items.iter().take(depth) {
            *votes.entry(*i).or_default() += 1;
        }
    }
    let mut ranking: Vec<(usize, usize)> = votes.into_iter().collect();
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranking: Vec<usize> = ranking.into_iter().map(|(i, _)| i).collect();
    let t2h: BTreeSet<usize> = t2h_items.intersection(&catalog.iter().copied().collect()).copied().collect();
    let ctx = FairnessContext::new(ks.to_vec(), t2h, ranking.len())?;
    Ok((rhr(&ranking, &ctx)?, rnd(&ranking, &ctx)?))
}

/// Metrics of one evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub prec: BTreeMap<usize, f64>,
    pub rhr: f64,
    pub rnd: f64,
    /// HR@20 of users whose held-out item carries each label.
    pub group_hr20: BTreeMap<String, f64>,
    /// Fairness cutoffs actually used.
    pub fairness_ks: Vec<usize>,
    pub config_echo: serde_json::Value,
}

/// Accuracy metrics at each of `ks` plus the fairness pair.
pub fn evaluate_lists(
    lists: &[RankedList],
    ks: &[usize],
    t2h_items: &BTreeSet<usize>,
    fairness_ks: &[usize],
    mode: FairnessMode,
    catalog: &[usize],
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for &k in ks {
        report.hr.insert(k, hr_at_k(lists, k)?);
        report.ndcg.insert(k, ndcg_at_k(lists, k)?);
        report.prec.insert(k, prec_at_k(lists, k)?);
    }
    let (a, b) = match mode {
        FairnessMode::PerUser => fairness_per_user(lists, t2h_items, fairness_ks)?,
        FairnessMode::Global => fairness_global(lists, catalog, t2h_items, fairness_ks)?,
    };
    report.rhr = a;
    report.rnd = b;
    let shortest = lists.iter().map(|l| l.items.len()).min().unwrap_or(0);
    report.fairness_ks = fairness_ks.iter().copied().filter(|&k| k <= shortest).collect();
    Ok(report)
}
