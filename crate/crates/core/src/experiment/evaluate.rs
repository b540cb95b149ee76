//! Held-out ranking evaluation of trained embeddings.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::labeler::EvolutionLabel;
use crate::matrix::{gemm_into, Matrix};
use crate::metrics::{
    fairness_global, fairness_per_user_with, hr_at_k, ndcg_at_k, prec_at_k, FairnessContext, FairnessMode,
    MetricsReport, RankedList,
};
use crate::scalar::Scalar;

use super::config::ExperimentConfig;
use super::data::Prepared;

const USER_BLOCK: usize = 256;

/// One test user's truncated ranking and the size of its candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRanking {
    pub list: RankedList,
    pub candidates: usize,
}

/// Ranks, for each held-out pair, every item the user has no training edge
/// to by ascending squared embedding distance (ties by item id), keeping the
/// best `depth`.
pub fn rank_held_out<T: Scalar>(emb: &Matrix<T>, p: &Prepared, depth: usize) -> Vec<UserRanking> {
    let emb: Matrix<f64> = emb.convert();
    let dim = emb.cols();
    let items = &p.items;
    let mut item_emb = Matrix::zeros(items.len(), dim);
    for (r, &i) in items.iter().enumerate() {
        item_emb.row_mut(r).copy_from_slice(emb.row(i));
    }
    let item_sq: Vec<f64> = (0..items.len()).map(|r| item_emb.row(r).iter().map(|x| x * x).sum()).collect();

    let mut out = Vec::with_capacity(p.test.len());
    for block in p.test.chunks(USER_BLOCK) {
        let mut user_emb = Matrix::zeros(block.len(), dim);
        for (r, &(u, _)) in block.iter().enumerate() {
            user_emb.row_mut(r).copy_from_slice(emb.row(u));
        }
        let mut dots = Matrix::zeros(block.len(), items.len());
        gemm_into(&user_emb, false, &item_emb, true, 1.0, 0.0, &mut dots);
        for (r, &(u, held)) in block.iter().enumerate() {
            let u_sq: f64 = user_emb.row(r).iter().map(|x| x * x).sum();
            let seen = &p.train_neighbors[u];
            let mut scored: Vec<(f64, usize)> = dots
                .row(r)
                .iter()
                .zip(items)
                .zip(&item_sq)
                .filter(|((_, i), _)| seen.binary_search(i).is_err())
                .map(|((&d, &i), &sq)| (u_sq + sq - 2.0 * d, i))
                .collect();
            let candidates = scored.len();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if scored.len() > depth {
                scored.select_nth_unstable_by(depth, cmp);
                scored.truncate(depth);
            }
            scored.sort_unstable_by(cmp);
            out.push(UserRanking {
                list: RankedList {
                    user: u,
                    items: scored.into_iter().map(|(_, i)| i).collect(),
                    positives: BTreeSet::from([held]),
                },
                candidates,
            });
        }
    }
    out
}

/// Accuracy, fairness and group-wise HR@20 of embeddings on the held-out
/// pairs of `p`. The protected items are the T2H items of the training
/// labels.
pub fn evaluate_embeddings<T: Scalar>(emb: &Matrix<T>, p: &Prepared, cfg: &ExperimentConfig) -> Result<MetricsReport> {
    if p.test.is_empty() {
        return Err(Error::UndefinedMetric("evaluation without held-out pairs"));
    }
    let max_eval = cfg.eval_ks.iter().copied().max().unwrap_or(1);
    let max_fair = cfg.fairness_ks.iter().copied().max().unwrap_or(1);
    let depth = max_eval.max(max_fair).max(20);
    let rankings = rank_held_out(emb, p, depth);
    let lists: Vec<RankedList> = rankings.iter().map(|r| r.list.clone()).collect();

    let mut report = MetricsReport::default();
    for &k in &cfg.eval_ks {
        report.hr.insert(k, hr_at_k(&lists, k)?);
        report.ndcg.insert(k, ndcg_at_k(&lists, k)?);
        report.prec.insert(k, prec_at_k(&lists, k)?);
    }

    let t2h: BTreeSet<usize> = p
        .items
        .iter()
        .copied()
        .filter(|i| p.labels.get(i) == Some(&EvolutionLabel::T2H))
        .collect();
    let (rhr, rnd) = match cfg.fairness_mode {
        FairnessMode::PerUser => {
            let candidates: BTreeMap<usize, usize> = rankings.iter().map(|r| (r.list.user, r.candidates)).collect();
            fairness_per_user_with(&lists, |l| {
                let seen = &p.train_neighbors[l.user];
                let protected = t2h.iter().copied().filter(|i| seen.binary_search(i).is_err()).collect();
                Ok(FairnessContext::new(cfg.fairness_ks.clone(), protected, candidates[&l.user])?
                    .with_normalizer(cfg.normalizer))
            })?
        }
        FairnessMode::Global => fairness_global(&lists, &p.items, &t2h, &cfg.fairness_ks)?,
    };
    report.rhr = rhr;
    report.rnd = rnd;
    let shortest = rankings.iter().map(|r| r.list.items.len()).min().unwrap_or(0);
    report.fairness_ks = cfg.fairness_ks.iter().copied().filter(|&k| k <= shortest).collect();

    for l in EvolutionLabel::ALL {
        let group: Vec<RankedList> = lists
            .iter()
            .filter(|x| x.positives.iter().all(|i| p.labels.get(i) == Some(&l)))
            .cloned()
            .collect();
        if !group.is_empty() {
            report.group_hr20.insert(l.as_str().to_string(), hr_at_k(&group, 20)?);
        }
    }
    report.config_echo = cfg.echo();
    Ok(report)
}
