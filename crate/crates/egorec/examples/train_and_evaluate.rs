//! Full training run on a clustered fixture: early stopping on validation
//! recall, checkpointing, and final test-set metrics.

use egorec::eval::{self, SplitKind};
use egorec::graphs::{build_bipartite, ItemItemGraphs};
use egorec::model::{forward, ModelGraphs};
use egorec::synth;
use egorec::trainer::{self, TrainConfig};

fn main() -> egorec::Result<()> {
    let (ds, features) = synth::planted_clusters(7);
    println!(
        "dataset: {} users x {} items, {} train interactions",
        ds.num_users,
        ds.num_items,
        ds.num_train_interactions()
    );

    let config = TrainConfig {
        embed_dim: 16,
        num_layers: 2,
        num_neighbors: 5,
        learning_rate: 5e-3,
        max_epochs: 60,
        patience: 10,
        batch_size: 512,
        ..TrainConfig::default()
    };
    let run = trainer::fit(&ds, &features, &config)?;
    println!(
        "trained {} epoch(s); best epoch {} at validation recall {:.4}",
        run.epochs_run, run.best_epoch, run.best_val_recall
    );
    for rec in run.history.iter().take(3) {
        println!("  {}", rec.jsonl_line(&[features[0].modality, features[1].modality]));
    }
    if run.epochs_run > 3 {
        println!("  ... {} more epochs in the history", run.epochs_run - 3);
    }

    // Persist and restore the best checkpoint, bit for bit.
    let dir = std::env::temp_dir().join("egorec-example-train");
    trainer::save_checkpoint(&dir, &run.best, &config, run.best_epoch, run.best_val_recall)?;
    let (params, meta) = trainer::load_checkpoint(&dir)?;
    println!("checkpoint restored from {} (epoch {})", dir.display(), meta.epoch);

    // Rebuild the graphs the checkpoint was trained with and score the
    // held-out test split.
    let graphs = ModelGraphs {
        bipartite: build_bipartite(&ds)?,
        item: ItemItemGraphs::build(&features, meta.config.num_neighbors, meta.config.item_graph_normalize)?
            .fused()?,
    };
    let trace = forward(&params, &graphs, None, meta.config.num_layers)?;
    let report = eval::evaluate(&trace, &ds, SplitKind::Test, &[5, 10, 20])?;
    print!("{}", report.table());
    Ok(())
}
