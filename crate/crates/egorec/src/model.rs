//! Model parameters and the forward pass: per-modality embedding tables
//! (or feature projections), weight-free propagation over the user-item
//! adjacency, layer readout, and cross-modal fusion with neighbor
//! enhancement on the item side.

use serde::{Deserialize, Serialize};

use crate::dataset::Modality;
use crate::error::{Error, Result};
use crate::graphs::{BipartiteAdjacency, FusedItemGraph};
use crate::mat::{dot, Mat};

/// Item embeddings are either free tables or linear projections of frozen
/// content features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ItemRepresentation {
    /// One trainable num_items x d table per modality.
    Free { tables: Vec<Mat> },
    /// One trainable feat_dim x d projection per modality; layer-0 item
    /// rows are features * weights.
    Projected { weights: Vec<Mat> },
}

/// Every trainable tensor and scalar in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub modalities: Vec<Modality>,
    pub num_users: usize,
    pub num_items: usize,
    pub embed_dim: usize,
    /// Per-modality num_users x d tables.
    pub user_tables: Vec<Mat>,
    pub items: ItemRepresentation,
    /// Item-graph blend weights, one per modality.
    pub alpha: Vec<f64>,
    /// Modality channel weights applied before concatenation.
    pub beta: Vec<f64>,
}

/// Gradients carry exactly the parameter shape.
pub type GradientSet = ModelParameters;

impl ModelParameters {
    /// All-zero parameters in free-table mode.
    pub fn zeros(modalities: &[Modality], num_users: usize, num_items: usize, embed_dim: usize) -> ModelParameters {
        ModelParameters {
            modalities: modalities.to_vec(),
            num_users,
            num_items,
            embed_dim,
            user_tables: modalities.iter().map(|_| Mat::zeros(num_users, embed_dim)).collect(),
            items: ItemRepresentation::Free {
                tables: modalities.iter().map(|_| Mat::zeros(num_items, embed_dim)).collect(),
            },
            alpha: vec![0.0; modalities.len()],
            beta: vec![0.0; modalities.len()],
        }
    }

    /// All-zero parameters in projection mode; `feat_dims[m]` is the raw
    /// feature width of modality m.
    pub fn zeros_projected(
        modalities: &[Modality],
        num_users: usize,
        num_items: usize,
        embed_dim: usize,
        feat_dims: &[usize],
    ) -> ModelParameters {
        assert_eq!(modalities.len(), feat_dims.len());
        ModelParameters {
            modalities: modalities.to_vec(),
            num_users,
            num_items,
            embed_dim,
            user_tables: modalities.iter().map(|_| Mat::zeros(num_users, embed_dim)).collect(),
            items: ItemRepresentation::Projected {
                weights: feat_dims.iter().map(|&f| Mat::zeros(f, embed_dim)).collect(),
            },
            alpha: vec![0.0; modalities.len()],
            beta: vec![0.0; modalities.len()],
        }
    }

    /// Same shapes, every value zero. Gradient and moment buffers start here.
    pub fn zeros_like(&self) -> ModelParameters {
        let mut z = self.clone();
        for s in z.param_slices_mut() {
            s.fill(0.0);
        }
        z
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn uses_projections(&self) -> bool {
        matches!(self.items, ItemRepresentation::Projected { .. })
    }

    /// Trainable tensors in a fixed order: user tables, then item tables or
    /// projections, then the blend weights, then the channel weights.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.user_tables.iter().map(|m| m.as_slice()).collect();
        match &self.items {
            ItemRepresentation::Free { tables } => out.extend(tables.iter().map(|m| m.as_slice())),
            ItemRepresentation::Projected { weights } => out.extend(weights.iter().map(|m| m.as_slice())),
        }
        out.push(&self.alpha);
        out.push(&self.beta);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.user_tables.iter_mut().map(|m| m.as_mut_slice()).collect();
        match &mut self.items {
            ItemRepresentation::Free { tables } => out.extend(tables.iter_mut().map(|m| m.as_mut_slice())),
            ItemRepresentation::Projected { weights } => out.extend(weights.iter_mut().map(|m| m.as_mut_slice())),
        }
        out.push(self.alpha.as_mut_slice());
        out.push(self.beta.as_mut_slice());
        out
    }

    /// Human-readable names aligned with [`Self::param_slices`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .modalities
            .iter()
            .map(|m| format!("user[{}]", m.tag()))
            .collect();
        match &self.items {
            ItemRepresentation::Free { .. } => {
                out.extend(self.modalities.iter().map(|m| format!("item[{}]", m.tag())));
            }
            ItemRepresentation::Projected { .. } => {
                out.extend(self.modalities.iter().map(|m| format!("projection[{}]", m.tag())));
            }
        }
        out.push("alpha".into());
        out.push("beta".into());
        out
    }

    pub fn flat_len(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.param_slices()
            .iter()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Stacked layer-0 embedding for modality m: user rows above item rows.
    /// `features[m]` is required in projection mode and ignored otherwise.
    pub fn layer0(&self, m: usize, features: Option<&[Mat]>) -> Result<Mat> {
        let users = &self.user_tables[m];
        if users.rows() != self.num_users || users.cols() != self.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "user table {m} is {}x{}, expected {}x{}",
                users.rows(),
                users.cols(),
                self.num_users,
                self.embed_dim
            )));
        }
        let items = match &self.items {
            ItemRepresentation::Free { tables } => {
                let t = &tables[m];
                if t.rows() != self.num_items || t.cols() != self.embed_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "item table {m} is {}x{}, expected {}x{}",
                        t.rows(),
                        t.cols(),
                        self.num_items,
                        self.embed_dim
                    )));
                }
                t.clone()
            }
            ItemRepresentation::Projected { weights } => {
                let feats = features.ok_or_else(|| {
                    Error::InvalidArgument("projection mode needs the raw feature matrices".into())
                })?;
                if feats.len() != self.num_modalities() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} feature matrices for {} modalities",
                        feats.len(),
                        self.num_modalities()
                    )));
                }
                let f = &feats[m];
                let w = &weights[m];
                if f.rows() != self.num_items {
                    return Err(Error::DimensionMismatch(format!(
                        "feature matrix {m} has {} rows, expected {}",
                        f.rows(),
                        self.num_items
                    )));
                }
                if f.cols() != w.rows() || w.cols() != self.embed_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "projection {m} is {}x{}, features are {}x{}",
                        w.rows(),
                        w.cols(),
                        f.rows(),
                        f.cols()
                    )));
                }
                f.matmul(w)
            }
        };
        Ok(Mat::vstack(users, &items))
    }
}

/// Propagation record for one modality.
#[derive(Debug, Clone)]
pub struct ModalTrace {
    pub modality: Modality,
    /// layers[l] is the stacked embedding after l propagation steps;
    /// layers[0] is the ego embedding.
    pub layers: Vec<Mat>,
    /// Sum of layers 1..=L, kept unscaled so that
    /// modal_final = ego + neighbor_sum holds bitwise.
    pub neighbor_sum: Mat,
    /// ego + neighbor_sum; the per-modality readout.
    pub modal_final: Mat,
}

impl ModalTrace {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn ego(&self) -> &Mat {
        &self.layers[0]
    }

    /// Mean of the neighbor layers 1..=L.
    pub fn neighbor_mean(&self) -> Result<Mat> {
        let l = self.num_layers();
        if l == 0 {
            return Err(Error::InvalidArgument(
                "no neighbor layers: propagation ran with zero hops".into(),
            ));
        }
        Ok(self.neighbor_sum.scaled(1.0 / l as f64))
    }
}

/// The ego view and the averaged neighbor view of one modality trace; the
/// two sides of the alignment objective.
pub fn split_ego_neighbor(trace: &ModalTrace) -> Result<(&Mat, Mat)> {
    Ok((trace.ego(), trace.neighbor_mean()?))
}

/// Run `num_layers` weight-free propagation steps for every modality.
/// `num_layers = 0` is the degenerate readout-only mode: the readout is
/// the layer-0 embedding itself.
pub fn propagate(
    params: &ModelParameters,
    adj: &BipartiteAdjacency,
    num_layers: usize,
    features: Option<&[Mat]>,
) -> Result<Vec<ModalTrace>> {
    if adj.num_users() != params.num_users || adj.num_items() != params.num_items {
        return Err(Error::DimensionMismatch(format!(
            "adjacency is {}+{} nodes, parameters expect {}+{}",
            adj.num_users(),
            adj.num_items(),
            params.num_users,
            params.num_items
        )));
    }
    let mut out = Vec::with_capacity(params.num_modalities());
    for m in 0..params.num_modalities() {
        let z0 = params.layer0(m, features)?;
        let mut layers = Vec::with_capacity(num_layers + 1);
        layers.push(z0);
        for l in 1..=num_layers {
            let next = adj.apply(&layers[l - 1]);
            layers.push(next);
        }
        let mut neighbor_sum = Mat::zeros(layers[0].rows(), layers[0].cols());
        for layer in &layers[1..] {
            neighbor_sum.axpy(1.0, layer);
        }
        let mut modal_final = layers[0].clone();
        modal_final.axpy(1.0, &neighbor_sum);
        out.push(ModalTrace {
            modality: params.modalities[m],
            layers,
            neighbor_sum,
            modal_final,
        });
    }
    Ok(out)
}

/// Complete forward record: per-modality traces plus the fused embeddings.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub num_users: usize,
    pub num_items: usize,
    pub num_layers: usize,
    pub per_modality: Vec<ModalTrace>,
    /// Channel-weighted concatenation, (U+I) x (M*d).
    pub concat: Mat,
    /// concat with neighbor-enhanced item rows; score inputs.
    pub fused: Mat,
}

impl ForwardTrace {
    pub fn width(&self) -> usize {
        self.fused.cols()
    }

    /// Item block of the concatenation.
    pub fn concat_items(&self) -> Mat {
        self.concat.slice_rows(self.num_users, self.num_users + self.num_items)
    }

    /// Unchecked preference score; see the free [`score`] for the checked
    /// variant.
    pub fn score_unchecked(&self, user: usize, item: usize) -> f64 {
        dot(self.fused.row(user), self.fused.row(self.num_users + item))
    }

    /// Scores of one user against the whole catalog.
    pub fn scores_for_user(&self, user: usize) -> Vec<f64> {
        let urow = self.fused.row(user);
        (0..self.num_items)
            .map(|i| dot(urow, self.fused.row(self.num_users + i)))
            .collect()
    }
}

/// Preference score of a user-item pair from the fused embeddings.
pub fn score(trace: &ForwardTrace, user: usize, item: usize) -> Result<f64> {
    if user >= trace.num_users {
        return Err(Error::IndexOutOfRange(format!(
            "user {user} out of range, have {}",
            trace.num_users
        )));
    }
    if item >= trace.num_items {
        return Err(Error::IndexOutOfRange(format!(
            "item {item} out of range, have {}",
            trace.num_items
        )));
    }
    Ok(trace.score_unchecked(user, item))
}

/// Channel-weight each per-modality readout, concatenate, and enhance the
/// item rows with blended item-graph neighbors. User rows pass through.
pub fn fuse(
    per_modality: Vec<ModalTrace>,
    params: &ModelParameters,
    item_graph: &FusedItemGraph,
) -> Result<ForwardTrace> {
    let m_count = params.num_modalities();
    if per_modality.len() != m_count {
        return Err(Error::DimensionMismatch(format!(
            "{} traces for {} modalities",
            per_modality.len(),
            m_count
        )));
    }
    if item_graph.num_modalities != m_count {
        return Err(Error::DimensionMismatch(format!(
            "item graph blends {} modalities, model has {}",
            item_graph.num_modalities, m_count
        )));
    }
    if item_graph.rows != params.num_items {
        return Err(Error::DimensionMismatch(format!(
            "item graph covers {} items, model has {}",
            item_graph.rows, params.num_items
        )));
    }
    let nodes = params.num_users + params.num_items;
    let num_layers = per_modality[0].num_layers();
    for t in &per_modality {
        if t.modal_final.rows() != nodes || t.modal_final.cols() != params.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "modal readout is {}x{}, expected {}x{}",
                t.modal_final.rows(),
                t.modal_final.cols(),
                nodes,
                params.embed_dim
            )));
        }
        if t.num_layers() != num_layers {
            return Err(Error::DimensionMismatch(
                "modalities propagated different layer counts".into(),
            ));
        }
    }

    // channel-weighted concatenation, built in one pass
    let d = params.embed_dim;
    let mut concat = Mat::zeros(nodes, m_count * d);
    for r in 0..nodes {
        let orow = concat.row_mut(r);
        for (m, t) in per_modality.iter().enumerate() {
            let b = params.beta[m];
            for (o, &v) in orow[m * d..(m + 1) * d].iter_mut().zip(t.modal_final.row(r)) {
                *o = b * v;
            }
        }
    }

    // item rows gain blended-graph neighborhood context
    let c_items = concat.slice_rows(params.num_users, nodes);
    let enhanced = item_graph.spmv_fused(&params.alpha, &c_items);
    let mut fused = concat.clone();
    for i in 0..params.num_items {
        let frow = fused.row_mut(params.num_users + i);
        for (f, &e) in frow.iter_mut().zip(enhanced.row(i)) {
            *f += e;
        }
    }

    Ok(ForwardTrace {
        num_users: params.num_users,
        num_items: params.num_items,
        num_layers,
        per_modality,
        concat,
        fused,
    })
}

/// The graph inputs of a forward pass.
#[derive(Debug, Clone)]
pub struct ModelGraphs {
    pub bipartite: BipartiteAdjacency,
    pub item: FusedItemGraph,
}

/// Propagate then fuse.
pub fn forward(
    params: &ModelParameters,
    graphs: &ModelGraphs,
    features: Option<&[Mat]>,
    num_layers: usize,
) -> Result<ForwardTrace> {
    let traces = propagate(params, &graphs.bipartite, num_layers, features)?;
    fuse(traces, params, &graphs.item)
}
