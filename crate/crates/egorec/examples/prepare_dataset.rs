//! Ingest an interaction log, core-filter it, split it, and persist the
//! result. Uses a synthetic log so the example runs without any downloads.

use egorec::{dataset, synth};

fn main() -> egorec::Result<()> {
    let dir = std::env::temp_dir().join("egorec-example-prepare");
    let (_, _) = synth::write_fixture_inputs(&dir, 7)?;
    println!("synthetic inputs under {}", dir.display());

    // Parse the TSV log; duplicate (user, item) rows collapse to one.
    let raw = dataset::load_interactions(&dir.join("interactions.tsv"))?;
    println!(
        "loaded {} interactions ({} duplicates dropped)",
        raw.records.len(),
        raw.duplicates_dropped
    );

    // Iteratively drop users and items with fewer than five interactions.
    let filtered = dataset::kcore_filter(&raw, 5)?;
    println!("after 5-core filtering: {} interactions", filtered.records.len());

    // Deterministic per-user holdout split.
    let ds = dataset::split(&filtered, (0.8, 0.1, 0.1), 42)?;
    println!(
        "indexed {} users x {} items ({})",
        ds.num_users,
        ds.num_items,
        dataset::format_sparsity(ds.sparsity())
    );
    let count = |s: &[Vec<u32>]| s.iter().map(Vec::len).sum::<usize>();
    println!(
        "split: {} train / {} val / {} test",
        count(&ds.train),
        count(&ds.val),
        count(&ds.test)
    );

    // Round-trip through the on-disk layout the command-line tool uses.
    let out = dir.join("prepared");
    dataset::write_prepared(&out, &ds)?;
    let back = dataset::load_prepared(&out)?;
    assert_eq!(back.num_users, ds.num_users);
    assert_eq!(back.train, ds.train);
    println!("write_prepared/load_prepared round-trip ok at {}", out.display());

    // Feature matrices are re-indexed to the dataset's dense item order.
    let features = dataset::load_features(&dir.join("visual.mmft"), dataset::Modality::Visual, &ds)?;
    println!(
        "aligned visual features: {} rows x {} dims",
        features.matrix.rows(),
        features.dim()
    );
    Ok(())
}
