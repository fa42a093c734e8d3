//! Command-line pipeline: prepare data, freeze graphs, train, evaluate,
//! sweep, check gradients, and export diagnostics. The binary is a thin
//! wrapper around [`run`]; everything here delegates to the library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config;
use crate::dataset::{self, InteractionDataset, Modality, ModalityFeatures};
use crate::diagnostics::{self, EmbeddingKind};
use crate::error::{Error, Result};
use crate::eval::{self, SplitKind};
use crate::graphs::{self, ItemItemGraphs};
use crate::io;
use crate::mat::Mat;
use crate::model::{forward, ForwardTrace, ModelGraphs, ModelParameters};
use crate::objective::{self, GradCheckOptions, LossConfig, PoolMode};
use crate::rng::derive_rng;
use crate::synth;
use crate::trainer::{self, TrainConfig, TripletSampler};

#[derive(Parser)]
#[command(
    name = "egorec",
    version,
    about = "Multimodal graph recommender: train, evaluate, and diagnose"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Filter an interaction log, split it, and align feature matrices.
    Prepare(PrepareArgs),
    /// Build and freeze the per-modality item neighbor graphs.
    BuildGraphs(BuildGraphsArgs),
    /// Train with early stopping; writes checkpoints and an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a held-out split.
    Evaluate(EvaluateArgs),
    /// Train every grid point and rank by validation recall.
    GridSearch(GridSearchArgs),
    /// Retrain at several propagation depths and tabulate the metrics.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences on a fixture.
    GradCheck(GradCheckArgs),
    /// Export intermediate embeddings from a checkpoint.
    Export(ExportArgs),
    /// Measure embedding dispersion, optionally against a second run.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct PrepareArgs {
    /// TSV of `user<TAB>item[<TAB>timestamp]` rows.
    #[arg(long)]
    pub interactions: PathBuf,
    /// Feature source per modality, as `<modality>=<path>`; repeatable.
    #[arg(long = "features", value_name = "MODALITY=PATH")]
    pub features: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Iteratively drop users and items with fewer interactions than this.
    #[arg(long, default_value_t = 5)]
    pub kcore: usize,
    /// Train, validation, and test shares, comma separated.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args)]
pub struct BuildGraphsArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub prepared: PathBuf,
    /// Neighbors kept per item.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Keep raw cosine weights instead of degree-normalizing.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write human-readable edge lists.
    #[arg(long)]
    pub dump_tsv: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    /// `key = value` configuration file; defaults apply underneath.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single-key override, as `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Which split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Cutoffs, comma separated.
    #[arg(long, default_value = "10,20")]
    pub k: String,
    /// Where to write metrics.json (and the per-user table if requested).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per_user.csv under --out.
    #[arg(long)]
    pub per_user: bool,
}

#[derive(Args)]
pub struct GridSearchArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Regularization strengths to try, comma separated.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Alignment strengths to try, comma separated.
    #[arg(long)]
    pub lambda_cl: Option<String>,
    /// Neighbor counts to try, comma separated.
    #[arg(long)]
    pub num_neighbors: Option<String>,
    /// Temperatures to try, comma separated.
    #[arg(long)]
    pub tau: Option<String>,
    /// Where to write grid.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Propagation depths to train, comma separated.
    #[arg(long, default_value = "1,2,3,4")]
    pub layers: String,
    /// Where to write ablation.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 4)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub num_layers: usize,
    /// Neighbors per item in the fixture graphs.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_cl: f64,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    /// Triplets in the probe batch.
    #[arg(long, default_value_t = 6)]
    pub batch: usize,
    #[arg(long, default_value_t = 9)]
    pub seed: u64,
    /// Check the projection parameterization instead of free tables.
    #[arg(long)]
    pub projections: bool,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// ego, neighbor_mean, modal_final, or fused.
    #[arg(long, default_value = "fused")]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint to compare against, e.g. one trained without
    /// alignment.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Pairs sampled when the catalog is too large for exact statistics.
    #[arg(long, default_value_t = 100_000)]
    pub sample_pairs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Execute one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => prepare(args),
        Command::BuildGraphs(args) => build_graphs(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::GridSearch(args) => grid_search(args),
        Command::Ablate(args) => ablate(args),
        Command::GradCheck(args) => grad_check(args),
        Command::Export(args) => export(args),
        Command::Diagnose(args) => diagnose(args),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(part.parse::<T>().map_err(|_| {
            Error::InvalidArgument(format!("cannot parse '{part}' in {what} list"))
        })?);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} list is empty")));
    }
    Ok(out)
}

fn merged_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let base = match path {
        Some(p) => config::load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if sets.is_empty() {
        return Ok(base);
    }
    let mut text = String::new();
    for s in sets {
        let Some((k, v)) = s.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "--set expects key=value, got '{s}'"
            )));
        };
        text.push_str(&format!("{} = {}\n", k.trim(), v.trim()));
    }
    config::parse_train_config(&text, base)
}

/// Load the dataset and the aligned feature matrices `prepare` wrote.
fn load_world(prepared: &Path) -> Result<(InteractionDataset, Vec<ModalityFeatures>)> {
    let ds = dataset::load_prepared(prepared)?;
    let mut features = Vec::new();
    for modality in [Modality::Visual, Modality::Textual] {
        let path = prepared.join("features").join(format!("{}.mmft", modality.tag()));
        if path.exists() {
            features.push(dataset::load_features(&path, modality, &ds)?);
        }
    }
    if features.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no feature matrices under {}; run prepare with --features",
            prepared.join("features").display()
        )));
    }
    Ok((ds, features))
}

fn assemble_graphs(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    num_neighbors: usize,
    normalize: bool,
) -> Result<(ModelGraphs, Vec<String>)> {
    let bipartite = graphs::build_bipartite(ds)?;
    let item_graphs = ItemItemGraphs::build(features, num_neighbors, normalize)?;
    let hashes = item_graphs.hashes.clone();
    Ok((
        ModelGraphs {
            bipartite,
            item: item_graphs.fused()?,
        },
        hashes,
    ))
}

fn feature_mats(features: &[ModalityFeatures], projections: bool) -> Option<Vec<Mat>> {
    if projections {
        Some(features.iter().map(|f| f.matrix.clone()).collect())
    } else {
        None
    }
}

/// Rebuild the forward trace a checkpoint was trained to produce.
fn trace_from_checkpoint(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    params: &ModelParameters,
    cfg: &TrainConfig,
) -> Result<ForwardTrace> {
    if params.num_users != ds.num_users || params.num_items != ds.num_items {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint covers {}x{} but the dataset is {}x{}",
            params.num_users, params.num_items, ds.num_users, ds.num_items
        )));
    }
    let (graphs, _) = assemble_graphs(ds, features, cfg.num_neighbors, cfg.item_graph_normalize)?;
    let mats = feature_mats(features, params.uses_projections());
    forward(params, &graphs, mats.as_deref(), cfg.num_layers)
}

#[derive(Serialize)]
struct FeatureSummary {
    modality: String,
    source: String,
    source_sha256: String,
    rows: usize,
    dim: usize,
}

#[derive(Serialize)]
struct PrepareManifest {
    interactions: String,
    interactions_sha256: String,
    kcore: usize,
    ratios: [f64; 3],
    seed: u64,
    duplicates_dropped: usize,
    num_users: usize,
    num_items: usize,
    train_interactions: usize,
    val_interactions: usize,
    test_interactions: usize,
    sparsity: f64,
    features: Vec<FeatureSummary>,
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let ratios = parse_list::<f64>(&args.ratios, "ratio")?;
    if ratios.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "--ratios needs exactly three shares, got {}",
            ratios.len()
        )));
    }
    let ratios = (ratios[0], ratios[1], ratios[2]);

    let raw = dataset::load_interactions(&args.interactions)?;
    let filtered = dataset::kcore_filter(&raw, args.kcore)?;
    let ds = dataset::split(&filtered, ratios, args.seed)?;
    dataset::write_prepared(&args.out, &ds)?;

    let mut summaries = Vec::new();
    let feature_dir = args.out.join("features");
    std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    for spec in &args.features {
        let Some((tag, path)) = spec.split_once('=') else {
            return Err(Error::InvalidArgument(format!(
                "--features expects <modality>=<path>, got '{spec}'"
            )));
        };
        let modality = Modality::parse(tag.trim())?;
        let source = PathBuf::from(path.trim());
        let mf = dataset::load_features(&source, modality, &ds)?;
        let dest = feature_dir.join(format!("{}.mmft", modality.tag()));
        io::write_mmft(&dest, &mf.matrix, io::MmftDtype::F64)?;
        io::write_tokens_sidecar(&dest, &ds.item_tokens)?;
        summaries.push(FeatureSummary {
            modality: modality.tag().to_string(),
            source: source.display().to_string(),
            source_sha256: io::sha256_file(&source)?,
            rows: mf.matrix.rows(),
            dim: mf.dim(),
        });
    }

    let count = |splits: &[Vec<u32>]| splits.iter().map(Vec::len).sum::<usize>();
    let manifest = PrepareManifest {
        interactions: args.interactions.display().to_string(),
        interactions_sha256: io::sha256_file(&args.interactions)?,
        kcore: args.kcore,
        ratios: [ratios.0, ratios.1, ratios.2],
        seed: args.seed,
        duplicates_dropped: filtered.duplicates_dropped,
        num_users: ds.num_users,
        num_items: ds.num_items,
        train_interactions: count(&ds.train),
        val_interactions: count(&ds.val),
        test_interactions: count(&ds.test),
        sparsity: ds.sparsity(),
        features: summaries,
    };
    io::write_json(&args.out.join("prepare_manifest.json"), &manifest)?;

    println!(
        "prepared {} users x {} items, {} interactions ({})",
        ds.num_users,
        ds.num_items,
        ds.num_interactions(),
        dataset::format_sparsity(ds.sparsity())
    );
    println!(
        "splits: {} train / {} val / {} test",
        manifest.train_interactions, manifest.val_interactions, manifest.test_interactions
    );
    for f in &manifest.features {
        println!("aligned {} features: {} rows x {} dims", f.modality, f.rows, f.dim);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GraphSummary {
    modality: String,
    path: String,
    content_hash: String,
    rows: usize,
    nnz: usize,
}

#[derive(Serialize)]
struct GraphsManifest {
    k: usize,
    normalize: bool,
    frozen_check: bool,
    graphs: Vec<GraphSummary>,
}

fn build_graphs(args: BuildGraphsArgs) -> Result<()> {
    let (_, features) = load_world(&args.prepared)?;
    let built = ItemItemGraphs::build(&features, args.k, !args.no_normalize)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut summaries = Vec::new();
    for (m, graph) in built.graphs.iter().enumerate() {
        let tag = built.modalities[m].tag();
        let path = args.out.join(format!("item_graph_{tag}.csrg"));
        let written_hash = io::write_csrg(&path, &graph.to_parts())?;
        if written_hash != built.hashes[m] {
            return Err(Error::Other(format!(
                "{tag} graph hash changed between build and write"
            )));
        }
        if args.dump_tsv {
            let tsv = args.out.join(format!("item_graph_{tag}.tsv"));
            io::atomic_write(&tsv, graph.to_edge_tsv().as_bytes())?;
        }
        summaries.push(GraphSummary {
            modality: tag.to_string(),
            path: path.display().to_string(),
            content_hash: built.hashes[m].clone(),
            rows: graph.rows,
            nnz: graph.nnz(),
        });
    }
    let manifest = GraphsManifest {
        k: args.k,
        normalize: !args.no_normalize,
        frozen_check: built.verify_frozen(),
        graphs: summaries,
    };
    io::write_json(&args.out.join("graphs_manifest.json"), &manifest)?;

    for g in &manifest.graphs {
        println!(
            "{}: {} rows, {} edges, hash {}",
            g.modality,
            g.rows,
            g.nnz,
            &g.content_hash[..16]
        );
    }
    println!(
        "frozen check: {}",
        if manifest.frozen_check { "ok" } else { "FAILED" }
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainManifest {
    config: TrainConfig,
    graph_hashes: Vec<String>,
    epochs_run: usize,
    best_epoch: usize,
    best_val_recall: f64,
    best_val_ndcg: f64,
    diverged: bool,
    checkpoint_best: String,
    checkpoint_final: String,
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = merged_config(args.config.as_deref(), &args.sets)?;
    let (ds, features) = load_world(&args.prepared)?;
    let modalities: Vec<Modality> = features.iter().map(|f| f.modality).collect();

    println!(
        "training on {} users x {} items, {} modalities, seed {}",
        ds.num_users,
        ds.num_items,
        features.len(),
        cfg.seed
    );
    let run = trainer::fit(&ds, &features, &cfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let best_dir = args.out.join("checkpoint_best");
    let final_dir = args.out.join("checkpoint_final");
    trainer::save_checkpoint(&best_dir, &run.best, &cfg, run.best_epoch, run.best_val_recall)?;
    let last_epoch = run.epochs_run;
    let last_recall = run.history.last().map(|r| r.val_recall).unwrap_or(run.best_val_recall);
    trainer::save_checkpoint(&final_dir, &run.final_params, &cfg, last_epoch, last_recall)?;

    let mut log = String::new();
    for rec in &run.history {
        log.push_str(&rec.jsonl_line(&modalities));
        log.push('\n');
    }
    io::atomic_write(&args.out.join("history.jsonl"), log.as_bytes())?;

    let manifest = TrainManifest {
        config: cfg,
        graph_hashes: run.graph_hashes.clone(),
        epochs_run: run.epochs_run,
        best_epoch: run.best_epoch,
        best_val_recall: run.best_val_recall,
        best_val_ndcg: run.best_val_ndcg,
        diverged: run.diverged,
        checkpoint_best: best_dir.display().to_string(),
        checkpoint_final: final_dir.display().to_string(),
    };
    io::write_json(&args.out.join("manifest.json"), &manifest)?;

    if run.diverged {
        println!("WARNING: training diverged; kept the best checkpoint seen before the blow-up");
    }
    println!(
        "ran {} epoch(s); best epoch {} with validation recall {:.6}",
        run.epochs_run, run.best_epoch, run.best_val_recall
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let which = SplitKind::parse(&args.split)?;
    let ks = parse_list::<usize>(&args.k, "cutoff")?;
    let (ds, features) = load_world(&args.prepared)?;
    let (params, meta) = trainer::load_checkpoint(&args.checkpoint)?;
    let trace = trace_from_checkpoint(&ds, &features, &params, &meta.config)?;
    let report = eval::evaluate(&trace, &ds, which, &ks)?;
    print!("{}", report.table());

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        io::write_json(&out.join("metrics.json"), &report)?;
        if args.per_user {
            let users = eval::per_user_metrics(&trace, &ds, which, &ks)?;
            let mut csv = String::from("user,relevant");
            for k in &ks {
                csv.push_str(&format!(",recall@{k},ndcg@{k}"));
            }
            csv.push('\n');
            for um in &users {
                csv.push_str(&format!("{},{}", um.user, um.relevant));
                for p in 0..ks.len() {
                    csv.push_str(&format!(",{},{}", um.recall[p], um.ndcg[p]));
                }
                csv.push('\n');
            }
            io::atomic_write(&out.join("per_user.csv"), csv.as_bytes())?;
        }
        println!("wrote {}", out.display());
    } else if args.per_user {
        return Err(Error::InvalidArgument(
            "--per-user needs --out to know where to write the table".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct GridManifest {
    base: TrainConfig,
    rows: Vec<GridRowOut>,
}

#[derive(Serialize)]
struct GridRowOut {
    lambda: f64,
    lambda_cl: f64,
    num_neighbors: usize,
    tau: f64,
    val_recall: f64,
    val_ndcg: f64,
    best_epoch: usize,
    diverged: bool,
}

fn grid_search(args: GridSearchArgs) -> Result<()> {
    let base = merged_config(args.config.as_deref(), &args.sets)?;
    let (ds, features) = load_world(&args.prepared)?;
    let spec = trainer::GridSpec {
        lambda: args.lambda.as_deref().map(|s| parse_list(s, "lambda")).transpose()?.unwrap_or_default(),
        lambda_cl: args.lambda_cl.as_deref().map(|s| parse_list(s, "lambda_cl")).transpose()?.unwrap_or_default(),
        num_neighbors: args.num_neighbors.as_deref().map(|s| parse_list(s, "num_neighbors")).transpose()?.unwrap_or_default(),
        tau: args.tau.as_deref().map(|s| parse_list(s, "tau")).transpose()?.unwrap_or_default(),
    };
    let rows = trainer::grid_search(&ds, &features, &base, &spec)?;
    print!("{}", trainer::grid_table(&rows));

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let manifest = GridManifest {
            base,
            rows: rows
                .iter()
                .map(|r| GridRowOut {
                    lambda: r.config.lambda,
                    lambda_cl: r.config.lambda_cl,
                    num_neighbors: r.config.num_neighbors,
                    tau: r.config.tau,
                    val_recall: r.val_recall,
                    val_ndcg: r.val_ndcg,
                    best_epoch: r.best_epoch,
                    diverged: r.diverged,
                })
                .collect(),
        };
        io::write_json(&out.join("grid.json"), &manifest)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    num_layers: usize,
    val_recall: f64,
    test_recall: f64,
    test_ndcg: f64,
    best_epoch: usize,
    diverged: bool,
}

fn ablate(args: AblateArgs) -> Result<()> {
    let base = merged_config(args.config.as_deref(), &args.sets)?;
    let layer_list = parse_list::<usize>(&args.layers, "layer")?;
    let (ds, features) = load_world(&args.prepared)?;
    let k = 20.min(ds.num_items);

    let mut rows = Vec::new();
    for &num_layers in &layer_list {
        let mut cfg = base.clone();
        cfg.num_layers = num_layers;
        let run = trainer::fit(&ds, &features, &cfg)?;
        let trace = trace_from_checkpoint(&ds, &features, &run.best, &cfg)?;
        let test = eval::evaluate(&trace, &ds, SplitKind::Test, &[k])?;
        rows.push(AblationRow {
            num_layers,
            val_recall: run.best_val_recall,
            test_recall: test.recall[0],
            test_ndcg: test.ndcg[0],
            best_epoch: run.best_epoch,
            diverged: run.diverged,
        });
    }

    println!("layers  val_recall@{k}  test_recall@{k}  test_ndcg@{k}  best_epoch  diverged");
    for r in &rows {
        println!(
            "{:<7} {:<15.6} {:<16.6} {:<14.6} {:<11} {}",
            r.num_layers, r.val_recall, r.test_recall, r.test_ndcg, r.best_epoch, r.diverged
        );
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        io::write_json(&out.join("ablation.json"), &rows)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn grad_check(args: GradCheckArgs) -> Result<()> {
    let (ds, features) = synth::gradient_fixture();
    let (graphs, _) = assemble_graphs(&ds, &features, args.k, true)?;
    let modalities: Vec<Modality> = features.iter().map(|f| f.modality).collect();
    let mut params = if args.projections {
        let dims: Vec<usize> = features.iter().map(|f| f.dim()).collect();
        ModelParameters::zeros_projected(&modalities, ds.num_users, ds.num_items, args.embed_dim, &dims)
    } else {
        ModelParameters::zeros(&modalities, ds.num_users, ds.num_items, args.embed_dim)
    };
    trainer::xavier_init(&mut params, args.seed);
    let mats = feature_mats(&features, args.projections);

    let sampler = TripletSampler::new(&ds)?;
    let mut rng = derive_rng(args.seed, "gradcheck-batch");
    let batch = sampler.sample(args.batch, &mut rng);
    let cfg = LossConfig {
        lambda: args.lambda,
        lambda_cl: args.lambda_cl,
        tau: args.tau,
        pool: PoolMode::FullSet,
    };
    cfg.validate()?;

    let (report, grads) = objective::backward(
        &params,
        &graphs,
        mats.as_deref(),
        args.num_layers,
        &batch,
        &cfg,
    )?;
    println!(
        "probe batch of {}: total loss {:.6} (rec {:.6}, reg {:.6})",
        batch.len(),
        report.total,
        report.rec_loss,
        report.reg_loss
    );

    let mut loss_at = objective::loss_closure(&graphs, mats.as_deref(), args.num_layers, &batch, &cfg);
    let check = objective::finite_diff_check(&params, &grads, &mut loss_at, &GradCheckOptions::default())?;
    print!("{}", check.table());
    if check.passed() {
        println!("gradient check passed: max relative error {:.3e}", check.max_rel_err);
        Ok(())
    } else {
        Err(Error::Other(format!(
            "gradient check FAILED: {} has relative error {:.3e} (tolerance {:.1e})",
            check.worst_param, check.max_rel_err, check.tolerance
        )))
    }
}

fn export(args: ExportArgs) -> Result<()> {
    let kind = EmbeddingKind::parse(&args.kind)?;
    let (ds, features) = load_world(&args.prepared)?;
    let (params, meta) = trainer::load_checkpoint(&args.checkpoint)?;
    let trace = trace_from_checkpoint(&ds, &features, &params, &meta.config)?;
    let files = diagnostics::export_embeddings(&trace, kind, &args.out)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let (ds, features) = load_world(&args.prepared)?;
    let (params, meta) = trainer::load_checkpoint(&args.checkpoint)?;
    let trace = trace_from_checkpoint(&ds, &features, &params, &meta.config)?;

    match &args.baseline {
        None => {
            let items = trace
                .fused
                .slice_rows(trace.num_users, trace.num_users + trace.num_items);
            let report = diagnostics::dispersion(&items, args.sample_pairs, args.seed)?;
            println!("fused item embeddings:");
            print!("{}", report.table());
        }
        Some(baseline) => {
            let (b_params, b_meta) = trainer::load_checkpoint(baseline)?;
            let b_trace = trace_from_checkpoint(&ds, &features, &b_params, &b_meta.config)?;
            let (a, b) = diagnostics::compare_variants(&trace, &b_trace, args.sample_pairs, args.seed)?;
            println!("checkpoint ({}):", args.checkpoint.display());
            print!("{}", a.table());
            println!("baseline ({}):", baseline.display());
            print!("{}", b.table());
            println!(
                "distance ratio checkpoint/baseline: {:.4}",
                a.mean_distance / b.mean_distance
            );
        }
    }
    Ok(())
}

/// Keys accepted by `--set` and configuration files, with one-line help.
pub fn config_keys() -> BTreeMap<&'static str, &'static str> {
    BTreeMap::from([
        ("learning_rate", "Adam step size"),
        ("embed_dim", "embedding width per modality"),
        ("num_layers", "propagation hops"),
        ("num_neighbors", "edges kept per item in each feature graph"),
        ("lambda", "L2 strength on touched layer-0 rows"),
        ("lambda_cl", "alignment strength; 0 disables alignment"),
        ("tau", "alignment temperature"),
        ("batch_size", "triplets per step"),
        ("max_epochs", "epoch cap"),
        ("patience", "epochs without improvement before stopping"),
        ("seed", "root seed for init, sampling, and splits"),
        ("pool", "alignment pool: in-batch or full-set"),
        ("use_projections", "derive item embeddings from features"),
        ("item_graph_normalize", "degree-normalize the item graphs"),
    ])
}
