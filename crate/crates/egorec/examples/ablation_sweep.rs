//! Sweep the propagation depth and watch ranking quality change: the layer
//! count is the main dial between under- and over-smoothing.

use egorec::eval::{self, SplitKind};
use egorec::graphs::{build_bipartite, ItemItemGraphs};
use egorec::model::{forward, ModelGraphs};
use egorec::synth;
use egorec::trainer::{self, TrainConfig};

fn main() -> egorec::Result<()> {
    let (ds, features) = synth::planted_clusters(3);
    let base = TrainConfig {
        embed_dim: 16,
        num_neighbors: 5,
        learning_rate: 5e-3,
        max_epochs: 30,
        patience: 30,
        batch_size: 512,
        ..TrainConfig::default()
    };

    let graphs = ModelGraphs {
        bipartite: build_bipartite(&ds)?,
        item: ItemItemGraphs::build(&features, base.num_neighbors, base.item_graph_normalize)?.fused()?,
    };
    let k = 20.min(ds.num_items);

    println!("layers  val_recall@{k}  test_recall@{k}  test_ndcg@{k}  best_epoch");
    for num_layers in [1usize, 2, 3, 4] {
        let mut cfg = base.clone();
        cfg.num_layers = num_layers;
        let run = trainer::fit(&ds, &features, &cfg)?;
        let trace = forward(&run.best, &graphs, None, num_layers)?;
        let test = eval::evaluate(&trace, &ds, SplitKind::Test, &[k])?;
        println!(
            "{:<7} {:<15.4} {:<16.4} {:<14.4} {}",
            num_layers, run.best_val_recall, test.recall[0], test.ndcg[0], run.best_epoch
        );
    }
    Ok(())
}
