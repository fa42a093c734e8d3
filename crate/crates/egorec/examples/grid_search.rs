//! Rank regularization and alignment strengths by validation recall.

use egorec::synth;
use egorec::trainer::{grid_search, grid_table, GridSpec, TrainConfig};

fn main() -> egorec::Result<()> {
    let (ds, features) = synth::planted_clusters(5);
    let base = TrainConfig {
        embed_dim: 16,
        num_layers: 2,
        num_neighbors: 5,
        learning_rate: 5e-3,
        max_epochs: 15,
        patience: 15,
        batch_size: 512,
        ..TrainConfig::default()
    };

    // Two axes vary; the others keep their base values.
    let spec = GridSpec {
        lambda: vec![1e-4, 1e-2],
        lambda_cl: vec![0.0, 1e-2],
        ..GridSpec::default()
    };
    let rows = grid_search(&ds, &features, &base, &spec)?;
    print!("{}", grid_table(&rows));
    println!(
        "winner: lambda {:.0e}, lambda_cl {:.0e} at recall {:.4}",
        rows[0].config.lambda, rows[0].config.lambda_cl, rows[0].val_recall
    );
    Ok(())
}
