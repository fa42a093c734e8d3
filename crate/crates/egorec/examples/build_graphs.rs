//! Build the frozen k-nearest-neighbor item graphs from feature matrices,
//! inspect their content hashes, and blend them into the fused structure
//! the model propagates over.

use egorec::graphs::{content_hash, cosine_topk, fuse_item_graphs, normalize_item_graph, ItemItemGraphs};
use egorec::synth;

fn main() -> egorec::Result<()> {
    let (ds, features) = synth::planted_clusters(7);
    println!(
        "catalog: {} items, {} feature sets",
        ds.num_items,
        features.len()
    );

    // Raw neighbor search: top-5 cosine neighbors per item, self excluded.
    let raw = cosine_topk(&features[0].matrix, 5)?;
    println!("visual graph: {} edges before normalization", raw.nnz());
    let (cols, vals) = raw.row_entries(0);
    println!("item 0 neighbors: {:?}", cols);
    println!("item 0 weights:   {:?}", vals.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());

    // Symmetric degree normalization clips negative similarities first.
    let norm = normalize_item_graph(&raw);
    println!("normalized hash: {}", &content_hash(&norm)[..16]);

    // The bundled builder does search + normalization for every modality and
    // records a content hash per graph so freezing is verifiable.
    let built = ItemItemGraphs::build(&features, 5, true)?;
    for (m, tag) in built.modalities.iter().enumerate() {
        println!(
            "{}: {} edges, hash {}",
            tag.tag(),
            built.graphs[m].nnz(),
            &built.hashes[m][..16]
        );
    }
    assert!(built.verify_frozen(), "graphs must hash to what was recorded");
    println!("frozen check: ok");

    // A trainable blend combines the per-modality graphs; with weights
    // (1, 0) the blend reproduces the first graph exactly.
    let only_visual = fuse_item_graphs(&built.graphs, &[1.0, 0.0])?;
    assert_eq!(only_visual.to_dense().as_slice(), built.graphs[0].to_dense().as_slice());
    println!("blend with weights (1,0) matches the visual graph exactly");

    let blended = fuse_item_graphs(&built.graphs, &[0.5, 0.5])?;
    println!("blend with weights (0.5,0.5): {} edges in the union", blended.nnz());

    // The fused bundle shares one union sparsity pattern across modalities,
    // which is what the model multiplies through at every forward pass.
    let fused = built.fused()?;
    let x = egorec::mat::Mat::from_fn(ds.num_items, 3, |r, c| (r + c) as f64 / 10.0);
    let y = fused.spmv_fused(&[0.5, 0.5], &x);
    println!("fused multiply: {} x {} in, {} x {} out", x.rows(), x.cols(), y.rows(), y.cols());
    Ok(())
}
