//! Training loop: initialization, triplet sampling, Adam, early stopping on
//! validation recall, checkpointing, and a small hyperparameter grid search.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, Modality, ModalityFeatures};
use crate::error::{Error, Result};
use crate::eval::{self, SplitKind};
use crate::graphs::{self, ItemItemGraphs};
use crate::io;
use crate::mat::Mat;
use crate::model::{forward, GradientSet, ItemRepresentation, ModelGraphs, ModelParameters};
use crate::objective::{backward, LossConfig, PoolMode, TripletBatch};
use crate::rng::derive_rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Everything a training run needs besides the data itself. Stored verbatim
/// in checkpoints so evaluation can rebuild the exact same graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub embed_dim: usize,
    /// Propagation hops over the interaction graph.
    pub num_layers: usize,
    /// Neighbors kept per item in each feature graph.
    pub num_neighbors: usize,
    /// L2 strength on the layer-0 rows touched by a batch.
    pub lambda: f64,
    /// Alignment strength; zero disables the alignment branch.
    pub lambda_cl: f64,
    /// Alignment temperature.
    pub tau: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; zero stops
    /// after the first epoch.
    pub patience: usize,
    pub seed: u64,
    pub pool: PoolMode,
    /// Derive item embeddings by projecting features instead of free tables.
    pub use_projections: bool,
    /// Degree-normalize the item graphs after the neighbor search.
    pub item_graph_normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            embed_dim: 64,
            num_layers: 3,
            num_neighbors: 10,
            lambda: 1e-4,
            lambda_cl: 1e-2,
            tau: 0.2,
            batch_size: 2048,
            max_epochs: 200,
            patience: 20,
            seed: 42,
            pool: PoolMode::InBatch,
            use_projections: false,
            item_graph_normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embed_dim must be at least 1".into()));
        }
        if self.num_neighbors == 0 {
            return Err(Error::InvalidConfig("num_neighbors must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.lambda_cl > 0.0 && self.num_layers == 0 {
            return Err(Error::InvalidConfig(
                "alignment needs at least one propagation layer; set num_layers >= 1 or lambda_cl = 0".into(),
            ));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            lambda_cl: self.lambda_cl,
            tau: self.tau,
            pool: self.pool,
        }
    }
}

fn fill_uniform(m: &mut Mat, rng: &mut ChaCha20Rng, bound: f64) {
    for v in m.as_mut_slice() {
        *v = rng.gen_range(-bound..bound);
    }
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Xavier/Glorot init for every table, each from its own stream so
/// the draw for one tensor never depends on the shapes of the others. Blend
/// and channel weights start at 0.5.
pub fn xavier_init(params: &mut ModelParameters, seed: u64) {
    let d = params.embed_dim;
    let tags: Vec<&'static str> = params.modalities.iter().map(|m| m.tag()).collect();
    for (m, table) in params.user_tables.iter_mut().enumerate() {
        let mut rng = derive_rng(seed, &format!("init-user-{}", tags[m]));
        let b = xavier_bound(table.rows(), d);
        fill_uniform(table, &mut rng, b);
    }
    match &mut params.items {
        ItemRepresentation::Free { tables } => {
            for (m, table) in tables.iter_mut().enumerate() {
                let mut rng = derive_rng(seed, &format!("init-item-{}", tags[m]));
                let b = xavier_bound(table.rows(), d);
                fill_uniform(table, &mut rng, b);
            }
        }
        ItemRepresentation::Projected { weights } => {
            for (m, w) in weights.iter_mut().enumerate() {
                let mut rng = derive_rng(seed, &format!("init-projection-{}", tags[m]));
                let b = xavier_bound(w.rows(), d);
                fill_uniform(w, &mut rng, b);
            }
        }
    }
    for a in params.alpha.iter_mut() {
        *a = 0.5;
    }
    for b in params.beta.iter_mut() {
        *b = 0.5;
    }
}

/// Uniform sampler over observed (user, positive) training pairs with
/// uniform negatives drawn from the items the user has not trained on.
pub struct TripletSampler {
    pairs: Vec<(u32, u32)>,
    num_items: usize,
    /// Sorted per-user train items, for membership tests and complements.
    train_sorted: Vec<Vec<u32>>,
    /// Users whose training set covers the whole catalog; their pairs are
    /// excluded because no negative exists for them.
    pub saturated_users: usize,
}

impl TripletSampler {
    pub fn new(ds: &InteractionDataset) -> Result<TripletSampler> {
        let mut train_sorted: Vec<Vec<u32>> = ds.train.clone();
        for v in train_sorted.iter_mut() {
            v.sort_unstable();
        }
        let mut pairs = Vec::new();
        let mut saturated = 0usize;
        for (u, items) in train_sorted.iter().enumerate() {
            if items.len() >= ds.num_items {
                saturated += 1;
                continue;
            }
            for &i in items {
                pairs.push((u as u32, i));
            }
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument(
                "no user leaves any item unseen; negative sampling is impossible".into(),
            ));
        }
        if saturated > 0 {
            eprintln!(
                "warning: {saturated} user(s) trained on the whole catalog; skipping them during sampling"
            );
        }
        Ok(TripletSampler {
            pairs,
            num_items: ds.num_items,
            train_sorted,
            saturated_users: saturated,
        })
    }

    /// Draw `count` triplets. Negatives are rejection-sampled; after 32
    /// misses the draw falls back to indexing the explicit complement, so a
    /// user who trained on almost everything still terminates.
    pub fn sample(&self, count: usize, rng: &mut ChaCha20Rng) -> TripletBatch {
        let mut users = Vec::with_capacity(count);
        let mut pos = Vec::with_capacity(count);
        let mut neg = Vec::with_capacity(count);
        for _ in 0..count {
            let (u, p) = self.pairs[rng.gen_range(0..self.pairs.len())];
            let seen = &self.train_sorted[u as usize];
            let mut picked = None;
            for _ in 0..32 {
                let j = rng.gen_range(0..self.num_items) as u32;
                if seen.binary_search(&j).is_err() {
                    picked = Some(j);
                    break;
                }
            }
            let n = picked.unwrap_or_else(|| {
                let complement: Vec<u32> = (0..self.num_items as u32)
                    .filter(|j| seen.binary_search(j).is_err())
                    .collect();
                complement[rng.gen_range(0..complement.len())]
            });
            users.push(u);
            pos.push(p);
            neg.push(n);
        }
        TripletBatch { users, pos, neg }
    }
}

/// One-shot convenience around [`TripletSampler`].
pub fn sample_triplets(
    ds: &InteractionDataset,
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<TripletBatch> {
    Ok(TripletSampler::new(ds)?.sample(count, rng))
}

/// First and second moment accumulators, one slot per parameter.
pub struct AdamState {
    m: ModelParameters,
    v: ModelParameters,
    step: u64,
}

impl AdamState {
    pub fn new(like: &ModelParameters) -> AdamState {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ModelParameters,
    grads: &GradientSet,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.flat_len() != grads.flat_len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} coordinates but the model has {}",
            grads.flat_len(),
            params.flat_len()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(
            "gradients went non-finite; lower the learning rate".into(),
        ));
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let mut p_slices = params.param_slices_mut();
    let g_slices = grads.param_slices();
    let mut m_slices = state.m.param_slices_mut();
    let mut v_slices = state.v.param_slices_mut();
    for t in 0..p_slices.len() {
        let (p, g) = (&mut p_slices[t], g_slices[t]);
        let (m, v) = (&mut m_slices[t], &mut v_slices[t]);
        for k in 0..p.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Losses and validation metrics for one epoch, averaged over its batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rec_loss: f64,
    pub cl_loss: Vec<f64>,
    pub reg_loss: f64,
    pub total_loss: f64,
    pub val_recall: f64,
    pub val_ndcg: f64,
}

impl EpochRecord {
    /// One JSON object per line; alignment losses get per-modality keys like
    /// `cl_loss_v` for the visual channel.
    pub fn jsonl_line(&self, modalities: &[Modality]) -> String {
        let mut map = BTreeMap::new();
        map.insert("epoch".to_string(), serde_json::json!(self.epoch));
        map.insert("rec_loss".to_string(), json_num(self.rec_loss));
        map.insert("reg_loss".to_string(), json_num(self.reg_loss));
        for (m, &v) in self.cl_loss.iter().enumerate() {
            let tag = modalities
                .get(m)
                .map(|md| &md.tag()[..1])
                .unwrap_or("x");
            map.insert(format!("cl_loss_{tag}"), json_num(v));
        }
        map.insert("total_loss".to_string(), json_num(self.total_loss));
        map.insert("val_recall".to_string(), json_num(self.val_recall));
        map.insert("val_ndcg".to_string(), json_num(self.val_ndcg));
        serde_json::to_string(&map).expect("json map of numbers")
    }
}

fn json_num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Outcome of [`fit`]: the best-validation parameters, the last parameters,
/// and the full epoch history.
pub struct FitResult {
    pub best: ModelParameters,
    pub final_params: ModelParameters,
    pub history: Vec<EpochRecord>,
    /// Epoch whose validation recall was best; 0 means the initializer was
    /// never beaten.
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub best_val_ndcg: f64,
    /// True when a batch produced non-finite values and training stopped
    /// early with the best parameters seen so far.
    pub diverged: bool,
    /// Content hashes of the frozen per-modality item graphs.
    pub graph_hashes: Vec<String>,
    pub epochs_run: usize,
}

fn val_cutoff(ds: &InteractionDataset) -> usize {
    20.min(ds.num_items)
}

/// Train until validation recall stops improving. Non-finite batches mark
/// the run as diverged instead of failing it: the best checkpoint up to that
/// point is still returned.
pub fn fit(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if ds.val.iter().all(|v| v.is_empty()) {
        return Err(Error::InvalidArgument(
            "early stopping needs a validation split; re-split with a positive validation ratio".into(),
        ));
    }

    let bipartite = graphs::build_bipartite(ds)?;
    let item_graphs = ItemItemGraphs::build(features, config.num_neighbors, config.item_graph_normalize)?;
    let graph_hashes = item_graphs.hashes.clone();
    let graphs = ModelGraphs {
        bipartite,
        item: item_graphs.fused()?,
    };

    let modalities: Vec<Modality> = features.iter().map(|f| f.modality).collect();
    let feature_mats: Option<Vec<Mat>> = if config.use_projections {
        Some(features.iter().map(|f| f.matrix.clone()).collect())
    } else {
        None
    };
    let mut params = if config.use_projections {
        let dims: Vec<usize> = features.iter().map(|f| f.dim()).collect();
        ModelParameters::zeros_projected(&modalities, ds.num_users, ds.num_items, config.embed_dim, &dims)
    } else {
        ModelParameters::zeros(&modalities, ds.num_users, ds.num_items, config.embed_dim)
    };
    xavier_init(&mut params, config.seed);

    let sampler = TripletSampler::new(ds)?;
    let loss_cfg = config.loss_config();
    let mut adam = AdamState::new(&params);
    let ks = [val_cutoff(ds)];

    let eval_params = |p: &ModelParameters| -> Result<(f64, f64)> {
        let trace = forward(p, &graphs, feature_mats.as_deref(), config.num_layers)?;
        let report = eval::evaluate(&trace, ds, SplitKind::Val, &ks)?;
        Ok((report.recall[0], report.ndcg[0]))
    };

    // The untrained model is the baseline every epoch must strictly beat.
    let (mut best_recall, mut best_ndcg) = eval_params(&params)?;
    let mut best = params.clone();
    let mut best_epoch = 0usize;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut stall = 0usize;
    let mut diverged = false;
    let draws_per_epoch = ds.num_train_interactions();

    'epochs: for epoch in 1..=config.max_epochs {
        let mut rng = derive_rng(config.seed, &format!("epoch-{epoch}"));
        let mut remaining = draws_per_epoch;
        let mut sums = (0.0f64, vec![0.0f64; modalities.len()], 0.0f64, 0.0f64);
        while remaining > 0 {
            let n = remaining.min(config.batch_size);
            remaining -= n;
            let batch = sampler.sample(n, &mut rng);
            let step = backward(
                &params,
                &graphs,
                feature_mats.as_deref(),
                config.num_layers,
                &batch,
                &loss_cfg,
            )
            .and_then(|(report, grads)| {
                adam_step(&mut params, &grads, &mut adam, config.learning_rate)?;
                Ok(report)
            });
            let report = match step {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if !params.is_finite() {
                diverged = true;
                break 'epochs;
            }
            let w = n as f64;
            sums.0 += report.rec_loss * w;
            for (m, &c) in report.cl_loss.iter().enumerate() {
                sums.1[m] += c * w;
            }
            sums.2 += report.reg_loss * w;
            sums.3 += report.total * w;
        }

        let (val_recall, val_ndcg) = eval_params(&params)?;
        let total = draws_per_epoch as f64;
        history.push(EpochRecord {
            epoch,
            rec_loss: sums.0 / total,
            cl_loss: sums.1.iter().map(|s| s / total).collect(),
            reg_loss: sums.2 / total,
            total_loss: sums.3 / total,
            val_recall,
            val_ndcg,
        });

        if val_recall > best_recall {
            best_recall = val_recall;
            best_ndcg = val_ndcg;
            best = params.clone();
            best_epoch = epoch;
            stall = 0;
        } else {
            stall += 1;
        }
        if stall >= config.patience {
            break;
        }
    }

    let epochs_run = history.len();
    Ok(FitResult {
        best,
        final_params: params,
        history,
        best_epoch,
        best_val_recall: best_recall,
        best_val_ndcg: best_ndcg,
        diverged,
        graph_hashes,
        epochs_run,
    })
}

/// Sidecar JSON stored next to the parameter matrices of a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub modalities: Vec<String>,
    pub num_users: usize,
    pub num_items: usize,
    pub embed_dim: usize,
    /// "free" or "projected".
    pub item_mode: String,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub epoch: usize,
    pub val_recall: f64,
}

/// Write every parameter tensor as a 64-bit matrix file plus a JSON sidecar
/// carrying the scalars and the full training configuration.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParameters,
    config: &TrainConfig,
    epoch: usize,
    val_recall: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (m, table) in params.user_tables.iter().enumerate() {
        let tag = params.modalities[m].tag();
        io::write_mmft(&dir.join(format!("user_{tag}.mmft")), table, io::MmftDtype::F64)?;
    }
    let item_mode = match &params.items {
        ItemRepresentation::Free { tables } => {
            for (m, table) in tables.iter().enumerate() {
                let tag = params.modalities[m].tag();
                io::write_mmft(&dir.join(format!("item_{tag}.mmft")), table, io::MmftDtype::F64)?;
            }
            "free"
        }
        ItemRepresentation::Projected { weights } => {
            for (m, w) in weights.iter().enumerate() {
                let tag = params.modalities[m].tag();
                io::write_mmft(&dir.join(format!("projection_{tag}.mmft")), w, io::MmftDtype::F64)?;
            }
            "projected"
        }
    };
    let meta = CheckpointMeta {
        config: config.clone(),
        modalities: params.modalities.iter().map(|m| m.tag().to_string()).collect(),
        num_users: params.num_users,
        num_items: params.num_items,
        embed_dim: params.embed_dim,
        item_mode: item_mode.to_string(),
        alpha: params.alpha.clone(),
        beta: params.beta.clone(),
        epoch,
        val_recall,
    };
    io::write_json(&dir.join("checkpoint.json"), &meta)
}

/// Load a checkpoint written by [`save_checkpoint`], bit-for-bit.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParameters, CheckpointMeta)> {
    let meta_path = dir.join("checkpoint.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::BadFormat {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    let modalities: Vec<Modality> = meta
        .modalities
        .iter()
        .map(|t| Modality::parse(t))
        .collect::<Result<_>>()?;
    let expect = |m: &Mat, rows: usize, what: &str| -> Result<()> {
        if m.rows() != rows || m.cols() != meta.embed_dim {
            return Err(Error::BadFormat {
                path: dir.to_path_buf(),
                reason: format!(
                    "{what} is {}x{} but the sidecar promises {rows}x{}",
                    m.rows(),
                    m.cols(),
                    meta.embed_dim
                ),
            });
        }
        Ok(())
    };
    let mut user_tables = Vec::with_capacity(modalities.len());
    for m in &modalities {
        let t = io::read_mmft(&dir.join(format!("user_{}.mmft", m.tag())))?;
        expect(&t, meta.num_users, "user table")?;
        user_tables.push(t);
    }
    let items = match meta.item_mode.as_str() {
        "free" => {
            let mut tables = Vec::with_capacity(modalities.len());
            for m in &modalities {
                let t = io::read_mmft(&dir.join(format!("item_{}.mmft", m.tag())))?;
                expect(&t, meta.num_items, "item table")?;
                tables.push(t);
            }
            ItemRepresentation::Free { tables }
        }
        "projected" => {
            let mut weights = Vec::with_capacity(modalities.len());
            for m in &modalities {
                let w = io::read_mmft(&dir.join(format!("projection_{}.mmft", m.tag())))?;
                if w.cols() != meta.embed_dim {
                    return Err(Error::BadFormat {
                        path: dir.to_path_buf(),
                        reason: format!(
                            "projection has {} columns but the sidecar promises {}",
                            w.cols(),
                            meta.embed_dim
                        ),
                    });
                }
                weights.push(w);
            }
            ItemRepresentation::Projected { weights }
        }
        other => {
            return Err(Error::BadFormat {
                path: meta_path,
                reason: format!("unknown item_mode '{other}'"),
            })
        }
    };
    if meta.alpha.len() != modalities.len() || meta.beta.len() != modalities.len() {
        return Err(Error::BadFormat {
            path: meta_path,
            reason: "alpha/beta length does not match the modality list".into(),
        });
    }
    let params = ModelParameters {
        modalities,
        num_users: meta.num_users,
        num_items: meta.num_items,
        embed_dim: meta.embed_dim,
        user_tables,
        items,
        alpha: meta.alpha.clone(),
        beta: meta.beta.clone(),
    };
    Ok((params, meta))
}

/// Axes of the hyperparameter sweep; an empty axis keeps the base value.
#[derive(Debug, Clone, Default)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub lambda_cl: Vec<f64>,
    pub num_neighbors: Vec<usize>,
    pub tau: Vec<f64>,
}

/// One grid point and how it fared.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub config: TrainConfig,
    pub val_recall: f64,
    pub val_ndcg: f64,
    pub best_epoch: usize,
    pub diverged: bool,
}

/// Train every point of the cartesian grid and rank by validation recall.
pub fn grid_search(
    ds: &InteractionDataset,
    features: &[ModalityFeatures],
    base: &TrainConfig,
    spec: &GridSpec,
) -> Result<Vec<GridRow>> {
    let lambdas = if spec.lambda.is_empty() { vec![base.lambda] } else { spec.lambda.clone() };
    let lambda_cls = if spec.lambda_cl.is_empty() { vec![base.lambda_cl] } else { spec.lambda_cl.clone() };
    let neighbors = if spec.num_neighbors.is_empty() { vec![base.num_neighbors] } else { spec.num_neighbors.clone() };
    let taus = if spec.tau.is_empty() { vec![base.tau] } else { spec.tau.clone() };

    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for &lambda_cl in &lambda_cls {
            for &k in &neighbors {
                for &tau in &taus {
                    let mut config = base.clone();
                    config.lambda = lambda;
                    config.lambda_cl = lambda_cl;
                    config.num_neighbors = k;
                    config.tau = tau;
                    let run = fit(ds, features, &config)?;
                    rows.push(GridRow {
                        config,
                        val_recall: run.best_val_recall,
                        val_ndcg: run.best_val_ndcg,
                        best_epoch: run.best_epoch,
                        diverged: run.diverged,
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| b.val_recall.total_cmp(&a.val_recall));
    Ok(rows)
}

/// Plain-text ranking of grid results, best first.
pub fn grid_table(rows: &[GridRow]) -> String {
    let mut out = String::new();
    out.push_str("rank  lambda      lambda_cl   k    tau     recall    ndcg      best_epoch  diverged\n");
    for (r, row) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{:<5} {:<11} {:<11} {:<4} {:<7} {:<9.4} {:<9.4} {:<11} {}\n",
            r + 1,
            format!("{:.1e}", row.config.lambda),
            format!("{:.1e}", row.config.lambda_cl),
            row.config.num_neighbors,
            format!("{:.2}", row.config.tau),
            row.val_recall,
            row.val_ndcg,
            row.best_epoch,
            row.diverged
        ));
    }
    out
}
