//! Ranking evaluation over the full catalog.
//!
//! For every user the candidate list is the whole catalog minus that user's
//! train items (masked items are removed, never down-ranked). Score ties
//! resolve to the smaller item index. Recall@K divides hits by the size of
//! the user's held-out set; NDCG@K uses binary gains with the ideal DCG
//! truncated at min(K, held-out size). Users whose held-out set is empty
//! are excluded from the averages.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::ForwardTrace;

/// Which split supplies the relevant items. `Train` ranks with no mask at
/// all (memorization probes); `Val` and `Test` mask the user's train items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn tag(&self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<SplitKind> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split '{other}' (expected train, val, or test)"
            ))),
        }
    }
}

/// Top-k unmasked item indices by descending score, ties to smaller index.
/// `masked` must be sorted ascending. Returns fewer than k entries when the
/// catalog minus the mask is smaller than k.
pub fn rank_topk(scores: &[f64], masked: &[u32], k: usize) -> Vec<u32> {
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(scores.len().saturating_sub(masked.len()));
    for (i, &s) in scores.iter().enumerate() {
        let i = i as u32;
        if masked.binary_search(&i).is_err() {
            cand.push((s, i));
        }
    }
    let order = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Fraction of the relevant set retrieved in the top-k. `relevant` must be
/// sorted ascending and nonempty.
pub fn recall_at_k(topk: &[u32], relevant: &[u32]) -> f64 {
    let hits = topk.iter().filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG. Rank r (1-based) contributes 1/log2(r+1); the ideal
/// ranking fills the first min(k, |relevant|) positions.
pub fn ndcg_at_k(topk: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, i) in topk.iter().take(k).enumerate() {
        if relevant.binary_search(i).is_ok() {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_len = k.min(relevant.len());
    let mut idcg = 0.0;
    for pos in 0..ideal_len {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// One evaluated user's metrics, aligned with the requested cutoffs.
#[derive(Debug, Clone, Serialize)]
pub struct UserMetrics {
    pub user: u32,
    pub relevant: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

/// Averages over evaluated users, aligned with `k_values`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub split: String,
    pub k_values: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

impl MetricReport {
    /// Mean recall at the given cutoff, if it was evaluated.
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&kk| kk == k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.k_values.iter().position(|&kk| kk == k).map(|p| self.ndcg[p])
    }

    /// Fixed-width table, one row per cutoff.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:>10} {:>10}\n",
            format!("{}@K", self.split),
            "Recall",
            "NDCG"
        ));
        for (pos, k) in self.k_values.iter().enumerate() {
            out.push_str(&format!(
                "K={:<6} {:>10.6} {:>10.6}\n",
                k, self.recall[pos], self.ndcg[pos]
            ));
        }
        out.push_str(&format!(
            "users evaluated: {}, skipped (empty {} set): {}\n",
            self.users_evaluated,
            self.split,
            self.users_skipped
        ));
        out
    }
}

/// Per-user metrics for every user with a nonempty held-out set.
pub fn per_user_metrics(
    trace: &ForwardTrace,
    ds: &InteractionDataset,
    which: SplitKind,
    ks: &[usize],
) -> Result<Vec<UserMetrics>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("cutoff list must be nonempty and positive".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k > ds.num_items) {
        return Err(Error::InvalidArgument(format!(
            "cutoff K={bad} exceeds the catalog of {} items",
            ds.num_items
        )));
    }
    if trace.num_users != ds.num_users || trace.num_items != ds.num_items {
        return Err(Error::DimensionMismatch(format!(
            "trace is {}x{} but dataset is {}x{}",
            trace.num_users, trace.num_items, ds.num_users, ds.num_items
        )));
    }
    let (held, mask_train) = match which {
        SplitKind::Train => (&ds.train, false),
        SplitKind::Val => (&ds.val, true),
        SplitKind::Test => (&ds.test, true),
    };
    let empty_mask: Vec<u32> = Vec::new();
    let max_k = *ks.iter().max().unwrap();
    let metrics: Vec<Option<UserMetrics>> = (0..ds.num_users)
        .into_par_iter()
        .map(|u| {
            let relevant = &held[u];
            if relevant.is_empty() {
                return None;
            }
            let scores = trace.scores_for_user(u);
            let mask = if mask_train { &ds.train[u] } else { &empty_mask };
            let topk = rank_topk(&scores, mask, max_k);
            let recall = ks.iter().map(|&k| recall_at_k(&topk[..k.min(topk.len())], relevant)).collect();
            let ndcg = ks.iter().map(|&k| ndcg_at_k(&topk, relevant, k)).collect();
            Some(UserMetrics {
                user: u as u32,
                relevant: relevant.len(),
                recall,
                ndcg,
            })
        })
        .collect();
    Ok(metrics.into_iter().flatten().collect())
}

/// Catalog-wide evaluation at each cutoff.
pub fn evaluate(
    trace: &ForwardTrace,
    ds: &InteractionDataset,
    which: SplitKind,
    ks: &[usize],
) -> Result<MetricReport> {
    let users = per_user_metrics(trace, ds, which, ks)?;
    let evaluated = users.len();
    if evaluated == 0 {
        return Err(Error::InvalidArgument(format!(
            "no user has any {} items to evaluate against",
            which.tag()
        )));
    }
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for um in &users {
        for p in 0..ks.len() {
            recall[p] += um.recall[p];
            ndcg[p] += um.ndcg[p];
        }
    }
    for p in 0..ks.len() {
        recall[p] /= evaluated as f64;
        ndcg[p] /= evaluated as f64;
    }
    Ok(MetricReport {
        split: which.tag().to_string(),
        k_values: ks.to_vec(),
        recall,
        ndcg,
        users_evaluated: evaluated,
        users_skipped: ds.num_users - evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_topk_orders_by_score_then_index() {
        let scores = [0.5, 0.9, 0.9, 0.1, 0.7];
        let top = rank_topk(&scores, &[], 3);
        // 0.9 tie between items 1 and 2 resolves to 1 first
        assert_eq!(top, vec![1, 2, 4]);
    }

    #[test]
    fn rank_topk_removes_masked_items_entirely() {
        let scores = [10.0, 9.0, 8.0, 7.0];
        let top = rank_topk(&scores, &[0, 2], 3);
        assert_eq!(top, vec![1, 3]);
        // k larger than the unmasked catalog returns what exists
        let top = rank_topk(&scores, &[0, 1, 2], 4);
        assert_eq!(top, vec![3]);
    }

    #[test]
    fn recall_and_ndcg_hand_case() {
        // top-4 = [7, 3, 9, 1], relevant = {3, 9, 5}
        let topk = [7u32, 3, 9, 1];
        let relevant = [3u32, 5, 9];
        let r = recall_at_k(&topk, &relevant);
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        // hits at ranks 2 and 3: dcg = 1/log2(3) + 1/log2(4)
        let dcg = 1.0 / 3f64.log2() + 1.0 / 4f64.log2();
        // ideal fills ranks 1..3: idcg = 1 + 1/log2(3) + 1/log2(4)
        let idcg = 1.0 + 1.0 / 3f64.log2() + 1.0 / 4f64.log2();
        let n = ndcg_at_k(&topk, &relevant, 4);
        assert!((n - dcg / idcg).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let topk = [2u32, 5, 8];
        let relevant = [2u32, 5, 8];
        assert_eq!(recall_at_k(&topk, &relevant), 1.0);
        assert!((ndcg_at_k(&topk, &relevant, 3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_truncates_ideal_at_relevant_size() {
        // one relevant item ranked first: ndcg@5 must be exactly 1
        let topk = [4u32, 0, 1, 2, 3];
        let relevant = [4u32];
        assert!((ndcg_at_k(&topk, &relevant, 5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let scores: Vec<f64> = (0..20).map(|i| ((i * 13) % 7) as f64).collect();
        let relevant = [1u32, 4, 9, 16];
        let mut prev = 0.0;
        for k in 1..=20 {
            let topk = rank_topk(&scores, &[], k);
            let r = recall_at_k(&topk, &relevant);
            assert!(r >= prev - 1e-15, "recall dropped at k={k}");
            prev = r;
        }
        assert_eq!(prev, 1.0);
    }
}
