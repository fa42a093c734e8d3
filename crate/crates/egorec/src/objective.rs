//! Training objective: pairwise ranking loss with L2 regularization,
//! per-modality ego-neighbor alignment, and the exact analytic gradients
//! of their sum.
//!
//! The backward pass mirrors the forward structure. Score gradients land on
//! fused rows, flow back through the item enhancement (transposed blended
//! graph), split into per-modality blocks of the concatenation, and then
//! walk the propagation chain in reverse. The stacked adjacency is
//! symmetric, so the reverse chain reuses the forward operator:
//! R_l = A * R_{l+1} + T_l, where T_l collects the readout, alignment, and
//! regularization terms that touch layer l. R_0 is the layer-0 gradient.
//!
//! Alignment pools: the in-batch mode contrasts the distinct users and the
//! distinct positive items of the batch; the full-set mode contrasts every
//! user and every item and refuses pools larger than 2000 rows. When the
//! alignment weight is zero the branch is skipped outright, so the
//! gradients are bit-identical to a pure ranking run.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::model::{self, GradientSet, ItemRepresentation, ModelGraphs, ModelParameters};

/// Largest pool accepted by the exact full-set alignment mode.
pub const FULL_SET_LIMIT: usize = 2000;

/// Which rows enter the alignment pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMode {
    /// Distinct users and distinct positive items of the batch.
    InBatch,
    /// Every user and every item; exact but capped at [`FULL_SET_LIMIT`].
    FullSet,
}

impl PoolMode {
    pub fn tag(&self) -> &'static str {
        match self {
            PoolMode::InBatch => "in-batch",
            PoolMode::FullSet => "full-set",
        }
    }

    pub fn parse(s: &str) -> Result<PoolMode> {
        match s {
            "in-batch" => Ok(PoolMode::InBatch),
            "full-set" => Ok(PoolMode::FullSet),
            other => Err(Error::InvalidArgument(format!(
                "unknown pool mode '{other}', expected in-batch or full-set"
            ))),
        }
    }
}

/// One positive and one sampled negative item per user occurrence.
#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub users: Vec<u32>,
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn validate(&self, num_users: usize, num_items: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty triplet batch".into()));
        }
        if self.users.len() != self.pos.len() || self.users.len() != self.neg.len() {
            return Err(Error::InvalidArgument(format!(
                "ragged triplet batch: {} users, {} positives, {} negatives",
                self.users.len(),
                self.pos.len(),
                self.neg.len()
            )));
        }
        for (t, ((&u, &p), &n)) in self.users.iter().zip(&self.pos).zip(&self.neg).enumerate() {
            if u as usize >= num_users {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet {t}: user {u} out of range, have {num_users}"
                )));
            }
            if p as usize >= num_items || n as usize >= num_items {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet {t}: item out of range, have {num_items}"
                )));
            }
            if p == n {
                return Err(Error::InvalidArgument(format!(
                    "triplet {t}: positive and negative are both item {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// L2 strength on the layer-0 rows touched by the batch.
    pub lambda: f64,
    /// Alignment strength; zero disables the branch entirely.
    pub lambda_cl: f64,
    /// Alignment temperature; must be positive when the branch is active.
    pub tau: f64,
    pub pool: PoolMode,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "regularization weight must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.lambda_cl.is_finite() || self.lambda_cl < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alignment weight must be finite and nonnegative, got {}",
                self.lambda_cl
            )));
        }
        if self.lambda_cl > 0.0 && !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// One batch's loss decomposition. The regularization term is folded into
/// `rec_loss` and also reported on its own for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Ranking loss plus regularization, averaged over the batch.
    pub rec_loss: f64,
    /// Per-modality alignment losses, unweighted.
    pub cl_loss: Vec<f64>,
    /// The regularization part of `rec_loss`.
    pub reg_loss: f64,
    /// rec_loss + lambda_cl * sum(cl_loss).
    pub total: f64,
}

impl LossReport {
    fn compose(bpr_mean: f64, reg_mean: f64, cl_loss: Vec<f64>, lambda_cl: f64) -> LossReport {
        let rec_loss = bpr_mean + reg_mean;
        let total = rec_loss + lambda_cl * cl_loss.iter().sum::<f64>();
        LossReport {
            rec_loss,
            cl_loss,
            reg_loss: reg_mean,
            total,
        }
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// 1 / (1 + e^-x) without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bpr_sum(scores_p: &[f64], scores_n: &[f64]) -> Result<f64> {
    if scores_p.is_empty() {
        return Err(Error::InvalidArgument("no score pairs".into()));
    }
    if scores_p.len() != scores_n.len() {
        return Err(Error::InvalidArgument(format!(
            "ragged score pairs: {} positives, {} negatives",
            scores_p.len(),
            scores_n.len()
        )));
    }
    let mut sum = 0.0;
    for (&sp, &sn) in scores_p.iter().zip(scores_n) {
        if !sp.is_finite() || !sn.is_finite() {
            return Err(Error::NonFinite("non-finite score in ranking loss".into()));
        }
        sum += softplus(sn - sp);
    }
    Ok(sum)
}

fn rec_parts(scores_p: &[f64], scores_n: &[f64], reg_sq_norm: f64, lambda: f64) -> Result<(f64, f64)> {
    // Overflowed norms signal divergence, not caller error.
    if !reg_sq_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "squared parameter norm is {reg_sq_norm}"
        )));
    }
    if reg_sq_norm < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "squared norm must be nonnegative, got {reg_sq_norm}"
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization weight must be finite and nonnegative, got {lambda}"
        )));
    }
    let b = scores_p.len() as f64;
    let bpr_mean = bpr_sum(scores_p, scores_n)? / b;
    let reg_mean = lambda * reg_sq_norm / b;
    Ok((bpr_mean, reg_mean))
}

/// Batch-mean pairwise ranking loss with the L2 term folded in:
/// (sum_t ln(1 + e^{-(sp_t - sn_t)}) + lambda * reg_sq_norm) / B.
/// Equal scores contribute exactly ln 2 each.
pub fn bpr_loss(scores_p: &[f64], scores_n: &[f64], reg_sq_norm: f64, lambda: f64) -> Result<f64> {
    let (bpr_mean, reg_mean) = rec_parts(scores_p, scores_n, reg_sq_norm, lambda)?;
    Ok(bpr_mean + reg_mean)
}

/// Row-aligned contrastive pool: anchors[i] and partners[i] are the
/// positive pair; every other partner row is a negative. Similarity is the
/// dot product scaled by 1/tau. Returns the sum over rows of
/// lse_j(sim(i,j)) - sim(i,i); a single pair scores exactly zero, and a
/// pool with row-constant similarities scores N ln N.
pub fn infonce_loss(anchors: &Mat, partners: &Mat, tau: f64) -> Result<f64> {
    let (loss, _) = nce_pool(anchors, partners, tau, false)?;
    Ok(loss)
}

/// Shared pool kernel; optionally returns (d loss / d anchors, d loss / d
/// partners).
fn nce_pool(anchors: &Mat, partners: &Mat, tau: f64, want_grads: bool) -> Result<(f64, Option<(Mat, Mat)>)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let n = anchors.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty alignment pool".into()));
    }
    if partners.rows() != n || partners.cols() != anchors.cols() {
        return Err(Error::DimensionMismatch(format!(
            "pool sides are {}x{} and {}x{}",
            anchors.rows(),
            anchors.cols(),
            partners.rows(),
            partners.cols()
        )));
    }

    // probs[i][j] = softmax_j(dot(a_i, p_j) / tau), computed row by row
    // with max-subtraction; rows are thread-owned, the loss reduction is
    // sequential in row order.
    let mut probs = Mat::zeros(n, n);
    let losses: Vec<f64> = probs
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, prow)| {
            let a = anchors.row(i);
            for (j, p) in prow.iter_mut().enumerate() {
                *p = dot(a, partners.row(j)) / tau;
            }
            let m = prow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for p in prow.iter_mut() {
                *p = (*p - m).exp();
                z += *p;
            }
            let diag = prow[i];
            for p in prow.iter_mut() {
                *p /= z;
            }
            // lse - a_ii = ln(z) + m - (ln(diag) + m)
            z.ln() - diag.ln()
        })
        .collect();
    let loss: f64 = losses.iter().sum();
    if !loss.is_finite() {
        return Err(Error::NonFinite("alignment loss went non-finite".into()));
    }
    if !want_grads {
        return Ok((loss, None));
    }

    // d/da_i = (sum_j probs_ij p_j - p_i) / tau; d/dp_j = (sum_i probs_ij a_i - a_j) / tau
    let mut ga = probs.matmul(partners);
    ga.axpy(-1.0, partners);
    ga.scale(1.0 / tau);
    let mut gp = probs.t_matmul(anchors);
    gp.axpy(-1.0, anchors);
    gp.scale(1.0 / tau);
    Ok((loss, Some((ga, gp))))
}

/// Stacked row indices of the two alignment pools: users first, items
/// second. Skipped entirely when the alignment weight is zero.
fn alignment_pools(
    batch: &TripletBatch,
    num_users: usize,
    num_items: usize,
    pool: PoolMode,
) -> Result<(Vec<usize>, Vec<usize>)> {
    match pool {
        PoolMode::InBatch => {
            let users: BTreeSet<u32> = batch.users.iter().copied().collect();
            let items: BTreeSet<u32> = batch.pos.iter().copied().collect();
            Ok((
                users.into_iter().map(|u| u as usize).collect(),
                items.into_iter().map(|i| num_users + i as usize).collect(),
            ))
        }
        PoolMode::FullSet => {
            if num_users > FULL_SET_LIMIT {
                return Err(Error::InvalidArgument(format!(
                    "full-set alignment pool has {num_users} users, limit {FULL_SET_LIMIT}"
                )));
            }
            if num_items > FULL_SET_LIMIT {
                return Err(Error::InvalidArgument(format!(
                    "full-set alignment pool has {num_items} items, limit {FULL_SET_LIMIT}"
                )));
            }
            Ok((
                (0..num_users).collect(),
                (num_users..num_users + num_items).collect(),
            ))
        }
    }
}

fn gather_rows(src: &Mat, rows: &[usize]) -> Mat {
    let mut out = Mat::zeros(rows.len(), src.cols());
    for (n, &r) in rows.iter().enumerate() {
        out.row_mut(n).copy_from_slice(src.row(r));
    }
    out
}

fn scatter_rows_add(target: &mut Mat, rows: &[usize], source: &Mat, scale: f64) {
    for (n, &r) in rows.iter().enumerate() {
        let trow = target.row_mut(r);
        for (t, &s) in trow.iter_mut().zip(source.row(n)) {
            *t += scale * s;
        }
    }
}

/// Batch-mean loss of the full objective at the current parameters.
pub fn total_loss(
    params: &ModelParameters,
    graphs: &ModelGraphs,
    features: Option<&[Mat]>,
    num_layers: usize,
    batch: &TripletBatch,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let (report, _) = compute(params, graphs, features, num_layers, batch, cfg, false)?;
    Ok(report)
}

/// Loss and exact analytic gradients for every trainable tensor.
pub fn backward(
    params: &ModelParameters,
    graphs: &ModelGraphs,
    features: Option<&[Mat]>,
    num_layers: usize,
    batch: &TripletBatch,
    cfg: &LossConfig,
) -> Result<(LossReport, GradientSet)> {
    let (report, grads) = compute(params, graphs, features, num_layers, batch, cfg, true)?;
    Ok((report, grads.expect("gradients requested")))
}

fn compute(
    params: &ModelParameters,
    graphs: &ModelGraphs,
    features: Option<&[Mat]>,
    num_layers: usize,
    batch: &TripletBatch,
    cfg: &LossConfig,
    want_grads: bool,
) -> Result<(LossReport, Option<GradientSet>)> {
    cfg.validate()?;
    batch.validate(params.num_users, params.num_items)?;

    let traces = model::propagate(params, &graphs.bipartite, num_layers, features)?;
    let trace = model::fuse(traces, params, &graphs.item)?;
    let m_count = params.num_modalities();
    let u_count = params.num_users;
    let b = batch.len() as f64;

    // ranking scores
    let scores_p: Vec<f64> = batch
        .users
        .iter()
        .zip(&batch.pos)
        .map(|(&u, &p)| trace.score_unchecked(u as usize, p as usize))
        .collect();
    let scores_n: Vec<f64> = batch
        .users
        .iter()
        .zip(&batch.neg)
        .map(|(&u, &n)| trace.score_unchecked(u as usize, n as usize))
        .collect();

    // L2 over the layer-0 rows each triplet touches, counted with
    // multiplicity, summed over modalities
    let mut touch_counts = vec![0u32; u_count + params.num_items];
    for ((&u, &p), &n) in batch.users.iter().zip(&batch.pos).zip(&batch.neg) {
        touch_counts[u as usize] += 1;
        touch_counts[u_count + p as usize] += 1;
        touch_counts[u_count + n as usize] += 1;
    }
    let mut reg_sq_norm = 0.0;
    for t in &trace.per_modality {
        let ego = t.ego();
        for (r, &c) in touch_counts.iter().enumerate() {
            if c > 0 {
                reg_sq_norm += c as f64 * ego.row(r).iter().map(|v| v * v).sum::<f64>();
            }
        }
    }

    let (bpr_mean, reg_mean) = rec_parts(&scores_p, &scores_n, reg_sq_norm, cfg.lambda)?;

    // per-modality alignment, skipped outright at zero weight
    let cl_active = cfg.lambda_cl > 0.0;
    let mut cl_loss = vec![0.0; m_count];
    let mut pool_grads: Vec<Option<((Mat, Mat), (Mat, Mat))>> = (0..m_count).map(|_| None).collect();
    let mut pools: Option<(Vec<usize>, Vec<usize>)> = None;
    if cl_active {
        if num_layers == 0 {
            return Err(Error::InvalidArgument(
                "alignment needs at least one propagation layer".into(),
            ));
        }
        let (user_rows, item_rows) =
            alignment_pools(batch, u_count, params.num_items, cfg.pool)?;
        for (m, t) in trace.per_modality.iter().enumerate() {
            let ego = t.ego();
            let nb = t.neighbor_mean()?;
            let (lu, gu) = nce_pool(
                &gather_rows(ego, &user_rows),
                &gather_rows(&nb, &user_rows),
                cfg.tau,
                want_grads,
            )?;
            let (li, gi) = nce_pool(
                &gather_rows(ego, &item_rows),
                &gather_rows(&nb, &item_rows),
                cfg.tau,
                want_grads,
            )?;
            cl_loss[m] = (lu + li) / b;
            if want_grads {
                pool_grads[m] = Some((gu.expect("gradients requested"), gi.expect("gradients requested")));
            }
        }
        pools = Some((user_rows, item_rows));
    }

    let report = LossReport::compose(bpr_mean, reg_mean, cl_loss, cfg.lambda_cl);
    if !want_grads {
        return Ok((report, None));
    }

    // ---- backward ----
    let width = trace.width();
    let d = params.embed_dim;

    // score gradients on fused rows; batch order, sequential
    let mut g_fused = Mat::zeros(u_count + params.num_items, width);
    for (t, ((&u, &p), &n)) in batch.users.iter().zip(&batch.pos).zip(&batch.neg).enumerate() {
        let coef = -sigmoid(scores_n[t] - scores_p[t]) / b;
        let (u, p, n) = (u as usize, u_count + p as usize, u_count + n as usize);
        for c in 0..width {
            let fu = trace.fused.get(u, c);
            let fp = trace.fused.get(p, c);
            let fn_ = trace.fused.get(n, c);
            *g_fused.row_mut(u).get_mut(c).unwrap() += coef * (fp - fn_);
            *g_fused.row_mut(p).get_mut(c).unwrap() += coef * fu;
            *g_fused.row_mut(n).get_mut(c).unwrap() -= coef * fu;
        }
    }

    // through the item enhancement: dC_items = G_items + S_bar^T G_items;
    // blend-weight gradients are Frobenius products against S_m C_items
    let g_fused_items = g_fused.slice_rows(u_count, u_count + params.num_items);
    let c_items = trace.concat_items();
    let mut grads = params.zeros_like();
    for m in 0..m_count {
        let sm_c = graphs.item.spmv_single(m, &c_items);
        grads.alpha[m] = g_fused_items.frob_dot(&sm_c);
    }
    let back_items = graphs.item.spmv_fused_t(&params.alpha, &g_fused_items);
    let mut g_concat = g_fused;
    for i in 0..params.num_items {
        let grow = g_concat.row_mut(u_count + i);
        for (g, &v) in grow.iter_mut().zip(back_items.row(i)) {
            *g += v;
        }
    }

    // split into per-modality readout gradients; channel weights collect
    // Frobenius products against the unscaled readouts
    let nodes = u_count + params.num_items;
    for (m, t) in trace.per_modality.iter().enumerate() {
        let mut acc = 0.0;
        for r in 0..nodes {
            acc += dot(&g_concat.row(r)[m * d..(m + 1) * d], t.modal_final.row(r));
        }
        grads.beta[m] = acc;
    }

    for m in 0..m_count {
        // G_final: beta-scaled slice of the concat gradient, added at every
        // layer of the reverse chain
        let mut g_final = Mat::zeros(nodes, d);
        for r in 0..nodes {
            let src = &g_concat.row(r)[m * d..(m + 1) * d];
            let dst = g_final.row_mut(r);
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = params.beta[m] * v;
            }
        }

        // alignment injections: anchors at layer 0, partner means spread
        // evenly over layers 1..=L
        let (t_hi, t_lo) = if let (Some(((gu, gi), _)), Some((user_rows, item_rows))) = (
            pool_grads[m].as_ref().map(|g| (g.clone(), ())),
            pools.as_ref(),
        ) {
            let scale_ego = cfg.lambda_cl / b;
            let scale_nb = cfg.lambda_cl / (b * num_layers as f64);
            let mut t0 = g_final.clone();
            scatter_rows_add(&mut t0, user_rows, &gu.0, scale_ego);
            scatter_rows_add(&mut t0, item_rows, &gi.0, scale_ego);
            let mut thi = g_final.clone();
            scatter_rows_add(&mut thi, user_rows, &gu.1, scale_nb);
            scatter_rows_add(&mut thi, item_rows, &gi.1, scale_nb);
            (thi, t0)
        } else {
            (g_final.clone(), g_final.clone())
        };

        // reverse chain: R_L = T_L; R_l = A R_{l+1} + T_l; R_0 is the
        // layer-0 gradient
        let mut r = t_hi.clone();
        for _ in 1..num_layers {
            r = graphs.bipartite.apply(&r);
            r.axpy(1.0, &t_hi);
        }
        if num_layers >= 1 {
            r = graphs.bipartite.apply(&r);
            r.axpy(1.0, &t_lo);
        }

        // regularization acts on layer 0 directly
        let ego = trace.per_modality[m].ego();
        let reg_coef = 2.0 * cfg.lambda / b;
        for (row, &c) in touch_counts.iter().enumerate() {
            if c > 0 {
                let rrow = r.row_mut(row);
                for (g, &v) in rrow.iter_mut().zip(ego.row(row)) {
                    *g += reg_coef * c as f64 * v;
                }
            }
        }

        // distribute the stacked layer-0 gradient onto parameters
        let g_users = r.slice_rows(0, u_count);
        let g_items = r.slice_rows(u_count, nodes);
        grads.user_tables[m] = g_users;
        match &mut grads.items {
            ItemRepresentation::Free { tables } => {
                tables[m] = g_items;
            }
            ItemRepresentation::Projected { weights } => {
                let feats = features.ok_or_else(|| {
                    Error::InvalidArgument("projection mode needs the raw feature matrices".into())
                })?;
                weights[m] = feats[m].t_matmul(&g_items);
            }
        }
    }

    Ok((report, Some(grads)))
}

/// The canonical parameters-to-loss pipeline, for gradient checking.
pub fn loss_closure<'a>(
    graphs: &'a ModelGraphs,
    features: Option<&'a [Mat]>,
    num_layers: usize,
    batch: &'a TripletBatch,
    cfg: &'a LossConfig,
) -> impl FnMut(&ModelParameters) -> Result<f64> + 'a {
    move |p: &ModelParameters| Ok(total_loss(p, graphs, features, num_layers, batch, cfg)?.total)
}

/// Central-difference verification settings.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation size; must be positive.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Refuse models with more coordinates than this.
    pub max_coords: usize,
}

impl Default for GradCheckOptions {
    fn default() -> GradCheckOptions {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 5000,
        }
    }
}

/// Per-coordinate comparison of analytic gradients against central
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    /// Tensor and flat offset of the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    /// Max relative error per tensor, aligned with the parameter order.
    pub per_param: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn table(&self) -> String {
        let mut out = String::from("tensor              max-rel-err\n");
        for (name, err) in &self.per_param {
            out.push_str(&format!("{name:<20}{err:.3e}\n"));
        }
        out.push_str(&format!(
            "worst: {} [{}] at {:.3e} ({} coords, tolerance {:.1e})\n",
            self.worst_param, self.worst_index, self.max_rel_err, self.coords_checked, self.tolerance
        ));
        out
    }
}

/// Check every coordinate of `grads` against a central difference of
/// `loss_at`. The relative error uses |a - f| / max(|a|, |f|, 1e-6).
pub fn finite_diff_check<F>(
    params: &ModelParameters,
    grads: &GradientSet,
    mut loss_at: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ModelParameters) -> Result<f64>,
{
    if !(opts.step > 0.0) || !opts.step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step h must be positive, got {}",
            opts.step
        )));
    }
    let total = params.flat_len();
    if total > opts.max_coords {
        return Err(Error::InvalidArgument(format!(
            "model has {total} coordinates, checking is capped at {}; use a smaller fixture",
            opts.max_coords
        )));
    }
    let names = params.param_names();
    let lens: Vec<usize> = params.param_slices().iter().map(|s| s.len()).collect();
    let h = opts.step;

    let mut work = params.clone();
    let mut per_param: Vec<(String, f64)> = names.iter().map(|n| (n.clone(), 0.0)).collect();
    let mut max_rel_err = 0.0;
    let mut worst = (names[0].clone(), 0usize);
    let mut checked = 0usize;
    for si in 0..lens.len() {
        for off in 0..lens[si] {
            let orig = params.param_slices()[si][off];
            work.param_slices_mut()[si][off] = orig + h;
            let lp = loss_at(&work)?;
            work.param_slices_mut()[si][off] = orig - h;
            let lm = loss_at(&work)?;
            work.param_slices_mut()[si][off] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = grads.param_slices()[si][off];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > per_param[si].1 {
                per_param[si].1 = rel;
            }
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (names[si].clone(), off);
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        coords_checked: checked,
        max_rel_err,
        worst_param: worst.0,
        worst_index: worst.1,
        per_param,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split, InteractionDataset, Modality, RawInteractions};
    use crate::graphs::{build_bipartite, FusedItemGraph, SparseGraph};
    use crate::rng::derive_rng;
    use rand::Rng;

    const MODS: [Modality; 2] = [Modality::Visual, Modality::Textual];

    fn dataset(pairs: &[(&str, &str)]) -> InteractionDataset {
        let raw = RawInteractions {
            records: pairs
                .iter()
                .map(|(u, i)| (u.to_string(), i.to_string(), None))
                .collect(),
            duplicates_dropped: 0,
        };
        split(&raw, (1.0, 0.0, 0.0), 1).unwrap()
    }

    /// Small connected fixture: 5 users, 6 items, random item graphs.
    fn fixture(seed: u64) -> (InteractionDataset, ModelGraphs) {
        let ds = dataset(&[
            ("u0", "i0"),
            ("u0", "i1"),
            ("u0", "i4"),
            ("u1", "i1"),
            ("u1", "i2"),
            ("u2", "i2"),
            ("u2", "i3"),
            ("u2", "i5"),
            ("u3", "i3"),
            ("u3", "i4"),
            ("u4", "i5"),
            ("u4", "i0"),
        ]);
        let bipartite = build_bipartite(&ds).unwrap();
        let mut rng = derive_rng(seed, "objective-item-graphs");
        let mk = |rng: &mut rand_chacha::ChaCha20Rng| {
            let n = ds.num_items as u32;
            let mut t = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    if r != c && rng.gen_bool(0.4) {
                        t.push((r, c, rng.gen_range(0.0..0.8)));
                    }
                }
            }
            SparseGraph::from_triplets(n as usize, n as usize, t)
        };
        let item = FusedItemGraph::build(&[mk(&mut rng), mk(&mut rng)]).unwrap();
        (ds, ModelGraphs { bipartite, item })
    }

    fn random_params(ds: &InteractionDataset, d: usize, seed: u64) -> ModelParameters {
        let mut rng = derive_rng(seed, "objective-params");
        let mut p = ModelParameters::zeros(&MODS, ds.num_users, ds.num_items, d);
        for s in p.param_slices_mut() {
            for v in s.iter_mut() {
                *v = rng.gen_range(-0.7..0.7);
            }
        }
        p
    }

    fn random_batch(ds: &InteractionDataset, len: usize, seed: u64) -> TripletBatch {
        let mut rng = derive_rng(seed, "objective-batch");
        let mut batch = TripletBatch::default();
        for _ in 0..len {
            let u = rng.gen_range(0..ds.num_users as u32);
            let p = rng.gen_range(0..ds.num_items as u32);
            let n = loop {
                let n = rng.gen_range(0..ds.num_items as u32);
                if n != p {
                    break n;
                }
            };
            batch.users.push(u);
            batch.pos.push(p);
            batch.neg.push(n);
        }
        batch
    }

    fn cfg(lambda: f64, lambda_cl: f64, tau: f64, pool: PoolMode) -> LossConfig {
        LossConfig {
            lambda,
            lambda_cl,
            tau,
            pool,
        }
    }

    #[test]
    fn bpr_equal_scores_is_ln2_per_pair() {
        let mut rng = derive_rng(60, "ln2");
        let s: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let loss = bpr_loss(&s, &s, 0.0, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bpr_matches_scalar_oracle() {
        let mut rng = derive_rng(61, "bpr-oracle");
        let sp: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let sn: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let raw = 3.7;
        let lambda = 0.02;
        let got = bpr_loss(&sp, &sn, raw, lambda).unwrap();
        let mut want = 0.0;
        for t in 0..7 {
            let delta = sp[t] - sn[t];
            // direct form is safe at this score scale
            want += (1.0 + (-delta).exp()).ln();
        }
        want = want / 7.0 + lambda * raw / 7.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn bpr_is_translation_invariant() {
        // dyadic scores and shift keep the additions exact, so the loss is
        // bit-identical
        let sp = vec![0.5, -0.25, 1.75, -2.0];
        let sn = vec![0.25, 0.5, -1.5, 0.125];
        let c = 4.0;
        let sp2: Vec<f64> = sp.iter().map(|v| v + c).collect();
        let sn2: Vec<f64> = sn.iter().map(|v| v + c).collect();
        let a = bpr_loss(&sp, &sn, 0.0, 0.0).unwrap();
        let b = bpr_loss(&sp2, &sn2, 0.0, 0.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        // non-dyadic shifts stay within rounding noise
        let mut rng = derive_rng(62, "shift");
        let sp: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sn: Vec<f64> = (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let c = 0.731;
        let sp2: Vec<f64> = sp.iter().map(|v| v + c).collect();
        let sn2: Vec<f64> = sn.iter().map(|v| v + c).collect();
        let a = bpr_loss(&sp, &sn, 0.0, 0.0).unwrap();
        let b = bpr_loss(&sp2, &sn2, 0.0, 0.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bpr_rejects_bad_inputs() {
        assert!(bpr_loss(&[], &[], 0.0, 0.0).is_err());
        assert!(bpr_loss(&[1.0, 2.0], &[1.0], 0.0, 0.0).is_err());
        assert!(bpr_loss(&[f64::NAN], &[1.0], 0.0, 0.0).is_err());
        assert!(bpr_loss(&[1.0], &[1.0], -1.0, 0.1).is_err());
        assert!(bpr_loss(&[1.0], &[1.0], 1.0, -0.1).is_err());
    }

    #[test]
    fn infonce_single_pair_is_exactly_zero() {
        let x = Mat::from_vec(1, 3, vec![0.3, -0.7, 1.1]);
        let y = Mat::from_vec(1, 3, vec![0.9, 0.2, -0.4]);
        assert_eq!(infonce_loss(&x, &y, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn infonce_uniform_similarities_give_n_log_n() {
        // identical partner rows make every row's similarities constant
        let n = 6;
        let x = Mat::from_fn(n, 4, |r, c| ((r + c) as f64 * 0.37).sin());
        let y = Mat::from_fn(n, 4, |_, c| 0.3 + 0.1 * c as f64);
        let loss = infonce_loss(&x, &y, 0.2).unwrap();
        assert!((loss - n as f64 * (n as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn infonce_is_nonnegative_and_permutation_invariant() {
        let mut rng = derive_rng(63, "nce-perm");
        for round in 0..10 {
            let n = rng.gen_range(2..12);
            let d = rng.gen_range(1..6);
            let x = Mat::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5));
            let y = Mat::from_fn(n, d, |_, _| rng.gen_range(-1.5..1.5));
            let loss = infonce_loss(&x, &y, 0.3).unwrap();
            assert!(loss > -1e-10, "round {round}: negative loss {loss}");

            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let px = Mat::from_fn(n, d, |r, c| x.get(perm[r], c));
            let py = Mat::from_fn(n, d, |r, c| y.get(perm[r], c));
            let ploss = infonce_loss(&px, &py, 0.3).unwrap();
            assert!((loss - ploss).abs() < 1e-9, "round {round}");
        }
    }

    #[test]
    fn infonce_matches_double_loop_oracle() {
        let mut rng = derive_rng(64, "nce-oracle");
        let n = 9;
        let d = 5;
        let tau = 0.17;
        let x = Mat::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let y = Mat::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let got = infonce_loss(&x, &y, tau).unwrap();
        let mut want = 0.0;
        for i in 0..n {
            let mut z = 0.0;
            for j in 0..n {
                z += (dot(x.row(i), y.row(j)) / tau).exp();
            }
            want += z.ln() - dot(x.row(i), y.row(i)) / tau;
        }
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn infonce_rejects_bad_temperature_and_shapes() {
        let x = Mat::zeros(3, 2);
        let y = Mat::zeros(3, 2);
        assert!(infonce_loss(&x, &y, 0.0).is_err());
        assert!(infonce_loss(&x, &y, -0.5).is_err());
        assert!(infonce_loss(&x, &Mat::zeros(4, 2), 0.2).is_err());
        assert!(infonce_loss(&Mat::zeros(0, 2), &Mat::zeros(0, 2), 0.2).is_err());
    }

    #[test]
    fn pool_rows_deduplicate_users_and_positives() {
        let batch = TripletBatch {
            users: vec![1, 1, 2],
            pos: vec![4, 4, 5],
            neg: vec![0, 1, 2],
        };
        let (users, items) = alignment_pools(&batch, 6, 7, PoolMode::InBatch).unwrap();
        assert_eq!(users, vec![1, 2]);
        assert_eq!(items, vec![6 + 4, 6 + 5]); // negatives stay out
        let (users, items) = alignment_pools(&batch, 6, 7, PoolMode::FullSet).unwrap();
        assert_eq!(users.len(), 6);
        assert_eq!(items.len(), 7);
        assert!(alignment_pools(&batch, FULL_SET_LIMIT + 1, 7, PoolMode::FullSet).is_err());
    }

    #[test]
    fn report_composition_invariant_holds() {
        let (ds, graphs) = fixture(70);
        let p = random_params(&ds, 3, 70);
        let batch = random_batch(&ds, 6, 70);
        let c = cfg(1e-3, 0.05, 0.25, PoolMode::InBatch);
        let report = total_loss(&p, &graphs, None, 2, &batch, &c).unwrap();
        let recomposed = report.rec_loss + c.lambda_cl * report.cl_loss.iter().sum::<f64>();
        assert_eq!(report.total.to_bits(), recomposed.to_bits());
        assert!(report.reg_loss > 0.0);
        assert!(report.cl_loss.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_embeddings_give_closed_form_losses() {
        let (ds, graphs) = fixture(71);
        let p = ModelParameters::zeros(&MODS, ds.num_users, ds.num_items, 3);
        let batch = random_batch(&ds, 6, 71);
        let c = cfg(0.0, 0.5, 0.2, PoolMode::FullSet);
        let report = total_loss(&p, &graphs, None, 2, &batch, &c).unwrap();
        assert!((report.rec_loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (nu, ni) = (ds.num_users as f64, ds.num_items as f64);
        let want_cl = (nu * nu.ln() + ni * ni.ln()) / batch.len() as f64;
        for &v in &report.cl_loss {
            assert!((v - want_cl).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_alignment_weight_skips_the_branch_bitwise() {
        let (ds, graphs) = fixture(72);
        let p = random_params(&ds, 4, 72);
        let batch = random_batch(&ds, 8, 72);
        // pool choice cannot matter when the branch is skipped
        let c_in = cfg(1e-3, 0.0, 0.2, PoolMode::InBatch);
        let c_full = cfg(1e-3, 0.0, 0.2, PoolMode::FullSet);
        let (r1, g1) = backward(&p, &graphs, None, 2, &batch, &c_in).unwrap();
        let (r2, g2) = backward(&p, &graphs, None, 2, &batch, &c_full).unwrap();
        assert_eq!(r1.total.to_bits(), r2.total.to_bits());
        assert_eq!(r1.total.to_bits(), r1.rec_loss.to_bits());
        assert!(r1.cl_loss.iter().all(|&v| v == 0.0));
        for (a, b) in g1.param_slices().iter().zip(g2.param_slices().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn saturated_ranking_pairs_have_vanishing_gradients() {
        // zero-hop mode keeps the readout at layer 0, so the margin is
        // fully under our control: item 0 mirrors +1, item 1 mirrors -1
        let (ds, graphs) = fixture(73);
        let mut p = ModelParameters::zeros(&MODS, ds.num_users, ds.num_items, 3);
        for m in 0..2 {
            for v in p.user_tables[m].as_mut_slice() {
                *v = 1.0;
            }
            if let ItemRepresentation::Free { tables } = &mut p.items {
                for c in 0..3 {
                    tables[m].set(0, c, 1.0);
                    tables[m].set(1, c, -1.0);
                }
            }
        }
        p.alpha = vec![0.2, 0.2];
        p.beta = vec![1.0, 1.0];
        let batch = TripletBatch {
            users: vec![0],
            pos: vec![0],
            neg: vec![1],
        };
        let c = cfg(0.0, 0.0, 0.2, PoolMode::InBatch);
        // doubling all parameters grows the positive margin monotonically
        let mut margin = 0.0;
        for _ in 0..12 {
            let trace = model::forward(&p, &graphs, None, 0).unwrap();
            margin = trace.score_unchecked(0, 0) - trace.score_unchecked(0, 1);
            if margin > 50.0 {
                break;
            }
            for s in p.param_slices_mut() {
                for v in s.iter_mut() {
                    *v *= 2.0;
                }
            }
        }
        assert!(margin > 50.0, "margin never saturated: {margin}");
        let (_, grads) = backward(&p, &graphs, None, 0, &batch, &c).unwrap();
        let gn = grads.sq_norm().sqrt();
        assert!(gn < 1e-12, "gradient norm {gn} for margin {margin}");
    }

    #[test]
    fn gradients_match_finite_differences_free_mode() {
        let (ds, graphs) = fixture(74);
        let p = random_params(&ds, 3, 74);
        let batch = random_batch(&ds, 6, 74);
        let c = cfg(1e-3, 0.05, 0.25, PoolMode::InBatch);
        let (_, grads) = backward(&p, &graphs, None, 2, &batch, &c).unwrap();
        let report = finite_diff_check(
            &p,
            &grads,
            loss_closure(&graphs, None, 2, &batch, &c),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.table());
    }

    #[test]
    fn gradients_match_finite_differences_full_set_pools() {
        let (ds, graphs) = fixture(75);
        let p = random_params(&ds, 3, 75);
        let batch = random_batch(&ds, 5, 75);
        let c = cfg(2e-3, 0.08, 0.2, PoolMode::FullSet);
        let (_, grads) = backward(&p, &graphs, None, 3, &batch, &c).unwrap();
        let report = finite_diff_check(
            &p,
            &grads,
            loss_closure(&graphs, None, 3, &batch, &c),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.table());
    }

    #[test]
    fn gradients_match_finite_differences_projection_mode() {
        let (ds, graphs) = fixture(76);
        let mut rng = derive_rng(76, "proj-params");
        let feat_dims = [4usize, 3usize];
        let mut p =
            ModelParameters::zeros_projected(&MODS, ds.num_users, ds.num_items, 3, &feat_dims);
        for s in p.param_slices_mut() {
            for v in s.iter_mut() {
                *v = rng.gen_range(-0.7..0.7);
            }
        }
        let feats: Vec<Mat> = feat_dims
            .iter()
            .map(|&f| Mat::from_fn(ds.num_items, f, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let batch = random_batch(&ds, 6, 76);
        let c = cfg(1e-3, 0.05, 0.25, PoolMode::InBatch);
        let (_, grads) = backward(&p, &graphs, Some(&feats), 2, &batch, &c).unwrap();
        let report = finite_diff_check(
            &p,
            &grads,
            loss_closure(&graphs, Some(&feats), 2, &batch, &c),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", report.table());
    }

    #[test]
    fn corrupted_channel_gradient_is_caught_and_named() {
        let (ds, graphs) = fixture(77);
        let p = random_params(&ds, 3, 77);
        let batch = random_batch(&ds, 6, 77);
        let c = cfg(1e-3, 0.05, 0.25, PoolMode::InBatch);
        let (_, mut grads) = backward(&p, &graphs, None, 2, &batch, &c).unwrap();
        grads.beta[0] += 0.05;
        let report = finite_diff_check(
            &p,
            &grads,
            loss_closure(&graphs, None, 2, &batch, &c),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst_param, "beta");
        assert_eq!(report.worst_index, 0);
    }

    #[test]
    fn finite_diff_check_validates_its_inputs() {
        let (ds, graphs) = fixture(78);
        let p = random_params(&ds, 3, 78);
        let batch = random_batch(&ds, 4, 78);
        let c = cfg(0.0, 0.0, 0.2, PoolMode::InBatch);
        let (_, grads) = backward(&p, &graphs, None, 2, &batch, &c).unwrap();
        let bad_step = GradCheckOptions {
            step: 0.0,
            ..GradCheckOptions::default()
        };
        match finite_diff_check(&p, &grads, loss_closure(&graphs, None, 2, &batch, &c), &bad_step) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("positive"), "{msg}"),
            other => panic!("expected step error, got {other:?}"),
        }
        let tiny_cap = GradCheckOptions {
            max_coords: 3,
            ..GradCheckOptions::default()
        };
        match finite_diff_check(&p, &grads, loss_closure(&graphs, None, 2, &batch, &c), &tiny_cap) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("smaller fixture"), "{msg}"),
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn batch_validation_rejects_malformed_triplets() {
        let ok = TripletBatch {
            users: vec![0, 1],
            pos: vec![1, 2],
            neg: vec![0, 0],
        };
        assert!(ok.validate(3, 4).is_ok());
        assert!(TripletBatch::default().validate(3, 4).is_err());
        let ragged = TripletBatch {
            users: vec![0, 1],
            pos: vec![1],
            neg: vec![0, 0],
        };
        assert!(ragged.validate(3, 4).is_err());
        let out_of_range = TripletBatch {
            users: vec![5],
            pos: vec![1],
            neg: vec![0],
        };
        assert!(out_of_range.validate(3, 4).is_err());
        let self_pair = TripletBatch {
            users: vec![0],
            pos: vec![2],
            neg: vec![2],
        };
        assert!(self_pair.validate(3, 4).is_err());
    }

    #[test]
    fn total_loss_and_backward_report_identically() {
        let (ds, graphs) = fixture(79);
        let p = random_params(&ds, 4, 79);
        let batch = random_batch(&ds, 7, 79);
        let c = cfg(5e-4, 0.03, 0.3, PoolMode::InBatch);
        let r1 = total_loss(&p, &graphs, None, 2, &batch, &c).unwrap();
        let (r2, _) = backward(&p, &graphs, None, 2, &batch, &c).unwrap();
        assert_eq!(r1.total.to_bits(), r2.total.to_bits());
        assert_eq!(r1.rec_loss.to_bits(), r2.rec_loss.to_bits());
        for (a, b) in r1.cl_loss.iter().zip(&r2.cl_loss) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
