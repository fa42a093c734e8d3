//! Synthetic fixtures: tiny deterministic datasets with known structure,
//! used by tests, the gradient-check command, and the runnable examples.

use std::path::Path;

use rand::Rng;

use crate::dataset::{self, InteractionDataset, Modality, ModalityFeatures, RawInteractions};
use crate::error::Result;
use crate::io;
use crate::mat::Mat;
use crate::rng::derive_rng;

/// Tiny two-modality fixture for gradient checking: 6 users, 8 items, every
/// interaction in the training split, every user and item covered.
pub fn gradient_fixture() -> (InteractionDataset, Vec<ModalityFeatures>) {
    let mut records: Vec<(String, String, Option<i64>)> = Vec::new();
    for u in 0..6u32 {
        for off in [0u32, 1, 3] {
            let i = (u + off) % 8;
            records.push((format!("u{u}"), format!("i{i}"), Some((u * 10 + i) as i64)));
        }
    }
    let raw = RawInteractions {
        records,
        duplicates_dropped: 0,
    };
    let ds = dataset::split(&raw, (1.0, 0.0, 0.0), 11).expect("fixture split is valid");
    let features = vec![
        random_features(&ds, Modality::Visual, 5, 101),
        random_features(&ds, Modality::Textual, 3, 102),
    ];
    (ds, features)
}

/// Clustered fixture: 3 groups of 30 items and 60 users, each user taking a
/// 20-item circulant window of their own group so baskets overlap without
/// coinciding. Features sit near per-group centroids, so the interaction
/// graph and the feature graphs carry the same signal. Split 80/10/10 leaves
/// each user 16 train, 2 val, and 2 test interactions; the catalog is large
/// enough that recall at 20 starts far from saturation.
pub fn planted_clusters(seed: u64) -> (InteractionDataset, Vec<ModalityFeatures>) {
    let clusters = 3usize;
    let items_per_cluster = 30usize;
    let users_per_cluster = 20usize;
    let basket = 20usize;
    let mut records: Vec<(String, String, Option<i64>)> = Vec::new();
    for u in 0..clusters * users_per_cluster {
        let c = u % clusters;
        let rank = u / clusters;
        for j in 0..basket {
            let i = c * items_per_cluster + (rank + j) % items_per_cluster;
            records.push((format!("u{u}"), format!("i{i}"), Some((u * 100 + j) as i64)));
        }
    }
    let raw = RawInteractions {
        records,
        duplicates_dropped: 0,
    };
    let ds = dataset::split(&raw, (0.8, 0.1, 0.1), seed).expect("fixture split is valid");
    assert_train_coverage(&ds);
    let features = vec![
        clustered_features(&ds, Modality::Visual, 8, clusters, items_per_cluster, seed ^ 0x5eed_0001),
        clustered_features(&ds, Modality::Textual, 6, clusters, items_per_cluster, seed ^ 0x5eed_0002),
    ];
    (ds, features)
}

/// Compact variant for memorization tests: 3 groups of 10 items, 50 users
/// each consuming every item of their own group, split 8/1/1 per user. With
/// at most 8 train items per user, train-split recall at 10 can reach 1.
pub fn overfit_fixture(seed: u64) -> (InteractionDataset, Vec<ModalityFeatures>) {
    let clusters = 3usize;
    let items_per_cluster = 10usize;
    let num_users = 50usize;
    let mut records: Vec<(String, String, Option<i64>)> = Vec::new();
    for u in 0..num_users {
        let c = u % clusters;
        for j in 0..items_per_cluster {
            let i = c * items_per_cluster + j;
            records.push((format!("u{u}"), format!("i{i}"), Some((u * 100 + j) as i64)));
        }
    }
    let raw = RawInteractions {
        records,
        duplicates_dropped: 0,
    };
    let ds = dataset::split(&raw, (0.8, 0.1, 0.1), seed).expect("fixture split is valid");
    assert_train_coverage(&ds);
    let features = vec![
        clustered_features(&ds, Modality::Visual, 8, clusters, items_per_cluster, seed ^ 0x5eed_0003),
        clustered_features(&ds, Modality::Textual, 6, clusters, items_per_cluster, seed ^ 0x5eed_0004),
    ];
    (ds, features)
}

fn assert_train_coverage(ds: &InteractionDataset) {
    let deg = ds.item_train_degrees();
    assert!(
        deg.iter().all(|&d| d > 0),
        "fixture split left an item without train edges; pick another seed"
    );
}

fn random_features(
    ds: &InteractionDataset,
    modality: Modality,
    dim: usize,
    seed: u64,
) -> ModalityFeatures {
    let mut rng = derive_rng(seed, &format!("synth-feat-{}", modality.tag()));
    let mut matrix = Mat::zeros(ds.num_items, dim);
    for v in matrix.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    ModalityFeatures { modality, matrix }
}

fn clustered_features(
    ds: &InteractionDataset,
    modality: Modality,
    dim: usize,
    clusters: usize,
    items_per_cluster: usize,
    seed: u64,
) -> ModalityFeatures {
    let mut rng = derive_rng(seed, &format!("synth-cluster-{}", modality.tag()));
    let mut centers = Mat::zeros(clusters, dim);
    for v in centers.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut matrix = Mat::zeros(ds.num_items, dim);
    for idx in 0..ds.num_items {
        // Item tokens are "i{n}" with n encoding the planted cluster; recover
        // it from the token so feature rows line up with the dense indexing.
        let token = &ds.item_tokens[idx];
        let n: usize = token[1..].parse().expect("synthetic token");
        let c = (n / items_per_cluster).min(clusters - 1);
        for d in 0..dim {
            let noise: f64 = rng.gen_range(-0.05..0.05);
            matrix.set(idx, d, centers.get(c, d) + noise);
        }
    }
    ModalityFeatures { modality, matrix }
}

/// Write the clustered fixture to disk in the exact shape the command-line
/// pipeline ingests: an interactions TSV plus one feature matrix and token
/// sidecar per modality. Returns the dataset and features it wrote.
pub fn write_fixture_inputs(
    dir: &Path,
    seed: u64,
) -> Result<(InteractionDataset, Vec<ModalityFeatures>)> {
    let (ds, features) = planted_clusters(seed);
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;

    let mut tsv = String::new();
    let mut stamp = 0i64;
    for (split, name) in [(&ds.train, 0), (&ds.val, 1), (&ds.test, 2)] {
        let _ = name;
        for (u, items) in split.iter().enumerate() {
            for &i in items {
                tsv.push_str(&format!(
                    "{}\t{}\t{}\n",
                    ds.user_tokens[u], ds.item_tokens[i as usize], stamp
                ));
                stamp += 1;
            }
        }
    }
    io::atomic_write(&dir.join("interactions.tsv"), tsv.as_bytes())?;

    for mf in &features {
        let path = dir.join(format!("{}.mmft", mf.modality.tag()));
        io::write_mmft(&path, &mf.matrix, io::MmftDtype::F32)?;
        io::write_tokens_sidecar(&path, &ds.item_tokens)?;
    }
    Ok((ds, features))
}
