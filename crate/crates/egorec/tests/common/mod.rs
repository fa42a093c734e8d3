//! Shared oracles for the integration suite: scalar reimplementations of
//! the library's optimized paths, written from the definitions rather than
//! the production code so the two can disagree.

#![allow(dead_code)]

use egorec::dataset::{split, InteractionDataset, RawInteractions};
use egorec::mat::Mat;
use rand::Rng;

/// Dataset from explicit (user, item) token pairs, everything in train.
pub fn all_train_dataset(pairs: &[(String, String)]) -> InteractionDataset {
    let raw = RawInteractions {
        records: pairs.iter().map(|(u, i)| (u.clone(), i.clone(), None)).collect(),
        duplicates_dropped: 0,
    };
    split(&raw, (1.0, 0.0, 0.0), 1).expect("all-train split")
}

/// Random all-train bipartite instance where every user has at least one
/// item and every item has at least one user.
pub fn random_dataset(rng: &mut impl Rng, max_users: usize, max_items: usize) -> InteractionDataset {
    let num_users = rng.gen_range(3..=max_users);
    let num_items = rng.gen_range(3..=max_items);
    let mut seen = std::collections::BTreeSet::new();
    for u in 0..num_users {
        let count = rng.gen_range(1..=4.min(num_items));
        for _ in 0..count {
            seen.insert((u, rng.gen_range(0..num_items)));
        }
    }
    // cover items that no user drew
    for i in 0..num_items {
        seen.insert((i % num_users, i));
    }
    let pairs: Vec<(String, String)> =
        seen.into_iter().map(|(u, i)| (format!("u{u}"), format!("i{i}"))).collect();
    all_train_dataset(&pairs)
}

/// Dense symmetric-normalized bipartite adjacency over stacked
/// users-then-items nodes: entry 1/sqrt(deg_u * deg_i) per train edge.
pub fn dense_bipartite(ds: &InteractionDataset) -> Vec<Vec<f64>> {
    let n = ds.num_users + ds.num_items;
    let mut item_deg = vec![0usize; ds.num_items];
    for items in &ds.train {
        for &i in items {
            item_deg[i as usize] += 1;
        }
    }
    let mut adj = vec![vec![0.0; n]; n];
    for (u, items) in ds.train.iter().enumerate() {
        for &i in items {
            let w = 1.0 / ((items.len() * item_deg[i as usize]) as f64).sqrt();
            adj[u][ds.num_users + i as usize] = w;
            adj[ds.num_users + i as usize][u] = w;
        }
    }
    adj
}

/// out = adj * x with explicit index loops.
pub fn dense_apply(adj: &[Vec<f64>], x: &Mat) -> Mat {
    let n = adj.len();
    let d = x.cols();
    let mut out = Mat::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            let mut acc = 0.0;
            for k in 0..n {
                acc += adj[r][k] * x.get(k, c);
            }
            out.set(r, c, acc);
        }
    }
    out
}

/// Largest absolute entry difference between two same-shape matrices.
pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.rows(), b.rows());
    assert_eq!(a.cols(), b.cols());
    let mut worst = 0.0f64;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            worst = worst.max((a.get(r, c) - b.get(r, c)).abs());
        }
    }
    worst
}

/// Sequential dot product, same accumulation order as the library's.
pub fn seq_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Brute-force cosine top-k: unit-normalize rows (zero rows stay zero),
/// score every other row, full-sort by (similarity desc, index asc), keep
/// k, and report neighbors sorted by index. Float operations match the
/// production kernel step for step, so values must agree bitwise.
pub fn brute_cosine_topk(features: &Mat, k: usize) -> Vec<Vec<(u32, f64)>> {
    let n = features.rows();
    let mut normed = features.clone();
    for r in 0..n {
        let row = normed.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let fr: Vec<f64> = normed.row(r).to_vec();
        let mut cand: Vec<(f64, u32)> = (0..n)
            .filter(|&j| j != r)
            .map(|j| (seq_dot(&fr, normed.row(j)), j as u32))
            .collect();
        cand.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        let mut picked: Vec<(u32, f64)> = cand.into_iter().map(|(v, j)| (j, v)).collect();
        picked.sort_unstable_by_key(|&(j, _)| j);
        out.push(picked);
    }
    out
}

/// Top-k item indices by (score desc, index asc) with a linear-scan mask.
pub fn scalar_topk(scores: &[f64], masked: &[u32], k: usize) -> Vec<u32> {
    let mut cand: Vec<(f64, u32)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !masked.contains(&(*i as u32)))
        .map(|(i, &s)| (s, i as u32))
        .collect();
    cand.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Hit fraction of the relevant set, linear scans only.
pub fn scalar_recall(topk: &[u32], relevant: &[u32]) -> f64 {
    let hits = topk.iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG against an ideal ranking of min(k, |relevant|) hits.
pub fn scalar_ndcg(topk: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, i) in topk.iter().take(k).enumerate() {
        if relevant.contains(i) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(relevant.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Uniform random matrix in (-1, 1).
pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m.set(r, c, rng.gen_range(-1.0..1.0));
        }
    }
    m
}
