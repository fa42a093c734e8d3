//! Export every intermediate embedding of a trained model to matrix files
//! and summarize the dispersion of each stage.

use egorec::diagnostics::{dispersion, export_embeddings, EmbeddingKind};
use egorec::graphs::{build_bipartite, ItemItemGraphs};
use egorec::io;
use egorec::model::{forward, ModelGraphs};
use egorec::synth;
use egorec::trainer::{self, TrainConfig};

fn main() -> egorec::Result<()> {
    let (ds, features) = synth::planted_clusters(9);
    let config = TrainConfig {
        embed_dim: 16,
        num_layers: 2,
        num_neighbors: 5,
        learning_rate: 5e-3,
        max_epochs: 20,
        patience: 20,
        batch_size: 512,
        ..TrainConfig::default()
    };
    let run = trainer::fit(&ds, &features, &config)?;
    let graphs = ModelGraphs {
        bipartite: build_bipartite(&ds)?,
        item: ItemItemGraphs::build(&features, config.num_neighbors, config.item_graph_normalize)?.fused()?,
    };
    let trace = forward(&run.best, &graphs, None, config.num_layers)?;

    let dir = std::env::temp_dir().join("egorec-example-export");
    for kind in [
        EmbeddingKind::Ego,
        EmbeddingKind::NeighborMean,
        EmbeddingKind::ModalFinal,
        EmbeddingKind::Fused,
    ] {
        let files = export_embeddings(&trace, kind, &dir)?;
        for f in &files {
            let m = io::read_mmft(f)?;
            let items = m.slice_rows(trace.num_users, trace.num_users + trace.num_items);
            let d = dispersion(&items, 10_000, 1)?;
            println!(
                "{:<28} {} x {}  item dispersion {:.4}, nn similarity {:.4}",
                f.file_name().unwrap().to_string_lossy(),
                m.rows(),
                m.cols(),
                d.mean_distance,
                d.mean_nn_similarity
            );
        }
    }
    println!("files under {}", dir.display());
    Ok(())
}
