//! Graph construction: the degree-normalized user-item adjacency and the
//! frozen per-modality item-item neighbor graphs, with runtime fusion under
//! trainable blend weights.
//!
//! All sparse matrices are CSR with entries sorted by column inside each
//! row. Products parallelize over output rows; each row accumulates
//! sequentially in storage order, so results are bitwise reproducible
//! regardless of thread count.

use rayon::prelude::*;

use crate::dataset::{InteractionDataset, Modality, ModalityFeatures};
use crate::error::{Error, Result};
use crate::io::{self, CsrgParts};
use crate::mat::{dot, Mat};

/// Rows processed per chunk when scoring item-item similarities. Bounds the
/// transient candidate storage so the full all-pairs matrix never exists.
const COSINE_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseGraph {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Build from (row, col, value) triplets; duplicates are forbidden.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f64)>) -> SparseGraph {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        debug_assert!(entries.windows(2).all(|w| (w[0].0, w[0].1) != (w[1].0, w[1].1)));
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r as usize + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        SparseGraph {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row_entries(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// out = self * x. Panics on shape mismatch; use [`spmv_multi`] for the
    /// checked variant.
    pub fn spmv_into(&self, x: &Mat, out: &mut Mat) {
        assert_eq!(self.cols, x.rows(), "spmv dimension mismatch");
        assert_eq!(out.rows(), self.rows);
        assert_eq!(out.cols(), x.cols());
        let ncols = x.cols();
        out.as_mut_slice()
            .par_chunks_mut(ncols)
            .enumerate()
            .for_each(|(r, orow)| {
                orow.fill(0.0);
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let w = self.values[e];
                    let xrow = x.row(self.col_idx[e] as usize);
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += w * xv;
                    }
                }
            });
    }

    pub fn spmv(&self, x: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, x.cols());
        self.spmv_into(x, &mut out);
        out
    }

    /// Exact transpose; values are copied bit-for-bit.
    pub fn transpose(&self) -> SparseGraph {
        let triplets: Vec<(u32, u32, f64)> = (0..self.rows)
            .flat_map(|r| {
                let (cols, vals) = self.row_entries(r);
                cols.iter()
                    .zip(vals)
                    .map(move |(&c, &v)| (c, r as u32, v))
                    .collect::<Vec<_>>()
            })
            .collect();
        SparseGraph::from_triplets(self.cols, self.rows, triplets)
    }

    /// Dense copy; debugging and oracle checks only.
    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m.set(r, c as usize, v);
            }
        }
        m
    }

    pub fn to_parts(&self) -> CsrgParts {
        CsrgParts {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.iter().map(|&p| p as u64).collect(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_parts(parts: &CsrgParts) -> SparseGraph {
        SparseGraph {
            rows: parts.rows,
            cols: parts.cols,
            row_ptr: parts.row_ptr.iter().map(|&p| p as usize).collect(),
            col_idx: parts.col_idx.clone(),
            values: parts.values.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Edge list as `row \t col \t value` lines, for inspection.
    pub fn to_edge_tsv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.push_str(&format!("{r}\t{c}\t{v}\n"));
            }
        }
        out
    }
}

/// Checked CSR times dense product.
pub fn spmv_multi(g: &SparseGraph, x: &Mat) -> Result<Mat> {
    if g.cols != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "graph is {}x{} but input has {} rows",
            g.rows,
            g.cols,
            x.rows()
        )));
    }
    Ok(g.spmv(x))
}

/// Hex digest of the graph's serialized form; stable across runs, changes
/// with any pattern or value edit.
pub fn content_hash(g: &SparseGraph) -> String {
    io::sha256_hex(&io::csrg_bytes(&g.to_parts()))
}

/// Train-interaction adjacency in two blocks: user rows against item
/// columns and its exact transpose. Edge weight is 1/sqrt(deg(u)*deg(i))
/// over train degrees.
#[derive(Debug, Clone)]
pub struct BipartiteAdjacency {
    pub user_to_item: SparseGraph,
    pub item_to_user: SparseGraph,
}

impl BipartiteAdjacency {
    pub fn num_users(&self) -> usize {
        self.user_to_item.rows
    }

    pub fn num_items(&self) -> usize {
        self.user_to_item.cols
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users() + self.num_items()
    }

    /// One propagation step on a stacked matrix (user rows above item
    /// rows): new user block = A * items, new item block = A^T * users.
    /// The stacked operator is symmetric, so this is also its transpose.
    pub fn apply(&self, x: &Mat) -> Mat {
        let u = self.num_users();
        let n = self.num_nodes();
        assert_eq!(x.rows(), n, "stacked input must have one row per node");
        let x_users = x.slice_rows(0, u);
        let x_items = x.slice_rows(u, n);
        let top = self.user_to_item.spmv(&x_items);
        let bottom = self.item_to_user.spmv(&x_users);
        Mat::vstack(&top, &bottom)
    }

    /// Stacked (U+I) x (U+I) form, for oracles and serialization.
    pub fn to_stacked(&self) -> SparseGraph {
        let u = self.num_users();
        let mut triplets = Vec::with_capacity(2 * self.user_to_item.nnz());
        for r in 0..u {
            let (cols, vals) = self.user_to_item.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((r as u32, (u + c as usize) as u32, v));
            }
        }
        for r in 0..self.num_items() {
            let (cols, vals) = self.item_to_user.row_entries(r);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push(((u + r) as u32, c, v));
            }
        }
        SparseGraph::from_triplets(self.num_nodes(), self.num_nodes(), triplets)
    }
}

/// Build the normalized adjacency from train interactions. Every user and
/// every item must carry at least one train interaction.
pub fn build_bipartite(ds: &InteractionDataset) -> Result<BipartiteAdjacency> {
    let item_deg = ds.item_train_degrees();
    if let Some(u) = ds.train.iter().position(|items| items.is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "user {u} has no train interactions; the adjacency needs positive degrees"
        )));
    }
    if let Some(i) = item_deg.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "item {i} has no train interactions; re-split or tighten the core filter"
        )));
    }
    let mut triplets = Vec::with_capacity(ds.num_train_interactions());
    for (u, items) in ds.train.iter().enumerate() {
        let du = items.len() as f64;
        for &i in items {
            let di = item_deg[i as usize] as f64;
            triplets.push((u as u32, i, 1.0 / (du * di).sqrt()));
        }
    }
    let user_to_item = SparseGraph::from_triplets(ds.num_users, ds.num_items, triplets);
    let item_to_user = user_to_item.transpose();
    Ok(BipartiteAdjacency {
        user_to_item,
        item_to_user,
    })
}

/// Directed top-k cosine neighbor graph over item feature rows. Self loops
/// are excluded; ties in similarity resolve to the smaller item index.
/// Values are raw cosines (may be negative or zero).
pub fn cosine_topk(features: &Mat, k: usize) -> Result<SparseGraph> {
    let n = features.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("neighbor count k must be positive".into()));
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "neighbor count k={k} needs at least k+1={} items, have {n}",
            k + 1
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("feature matrix contains non-finite values".into()));
    }

    // unit-normalize rows once; zero rows stay zero and match nothing
    let mut normed = features.clone();
    for r in 0..n {
        let row = normed.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }

    let order = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let mut triplets: Vec<(u32, u32, f64)> = Vec::with_capacity(n * k);
    for block_start in (0..n).step_by(COSINE_BLOCK) {
        let block_end = (block_start + COSINE_BLOCK).min(n);
        let block: Vec<Vec<(u32, f64)>> = (block_start..block_end)
            .into_par_iter()
            .map(|r| {
                let fr = normed.row(r);
                let mut cand: Vec<(f64, u32)> = (0..n)
                    .filter(|&j| j != r)
                    .map(|j| (dot(fr, normed.row(j)), j as u32))
                    .collect();
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, order);
                    cand.truncate(k);
                }
                let mut picked: Vec<(u32, f64)> = cand.into_iter().map(|(v, j)| (j, v)).collect();
                picked.sort_unstable_by_key(|&(j, _)| j);
                picked
            })
            .collect();
        for (off, picked) in block.into_iter().enumerate() {
            let r = (block_start + off) as u32;
            for (j, v) in picked {
                triplets.push((r, j, v));
            }
        }
    }
    Ok(SparseGraph::from_triplets(n, n, triplets))
}

/// Clip negative similarities to zero, then rescale each entry by
/// 1 / sqrt(d_row * d_col) where d is the row sum of clipped weights.
/// Rows with zero degree pass through as zero rows.
pub fn normalize_item_graph(g: &SparseGraph) -> SparseGraph {
    assert_eq!(g.rows, g.cols, "item graph must be square");
    let clipped: Vec<f64> = g.values.iter().map(|&v| v.max(0.0)).collect();
    let mut deg = vec![0.0f64; g.rows];
    for r in 0..g.rows {
        for e in g.row_ptr[r]..g.row_ptr[r + 1] {
            deg[r] += clipped[e];
        }
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = g.clone();
    for r in 0..g.rows {
        for e in g.row_ptr[r]..g.row_ptr[r + 1] {
            let c = g.col_idx[e] as usize;
            out.values[e] = clipped[e] * inv_sqrt[r] * inv_sqrt[c];
        }
    }
    out
}

/// The per-modality item neighbor graphs, frozen at construction.
#[derive(Debug, Clone)]
pub struct ItemItemGraphs {
    pub modalities: Vec<Modality>,
    pub graphs: Vec<SparseGraph>,
    pub k: usize,
    /// Content hashes recorded at construction; [`Self::verify_frozen`]
    /// recomputes and compares.
    pub hashes: Vec<String>,
}

impl ItemItemGraphs {
    /// Build one top-k graph per modality, normalized unless disabled.
    pub fn build(features: &[ModalityFeatures], k: usize, normalize: bool) -> Result<ItemItemGraphs> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("need at least one feature set".into()));
        }
        let mut graphs = Vec::with_capacity(features.len());
        let mut hashes = Vec::with_capacity(features.len());
        for f in features {
            let raw = cosine_topk(&f.matrix, k)?;
            let g = if normalize { normalize_item_graph(&raw) } else { raw };
            hashes.push(content_hash(&g));
            graphs.push(g);
        }
        Ok(ItemItemGraphs {
            modalities: features.iter().map(|f| f.modality).collect(),
            graphs,
            k,
            hashes,
        })
    }

    /// True when current content hashes match the ones recorded at build.
    pub fn verify_frozen(&self) -> bool {
        self.graphs
            .iter()
            .zip(&self.hashes)
            .all(|(g, h)| content_hash(g) == *h)
    }

    /// Shared-pattern bundle for the training path.
    pub fn fused(&self) -> Result<FusedItemGraph> {
        FusedItemGraph::build(&self.graphs)
    }
}

/// Materialized blend sum_m alpha[m] * S_m on the union sparsity pattern.
pub fn fuse_item_graphs(graphs: &[SparseGraph], alpha: &[f64]) -> Result<SparseGraph> {
    if graphs.len() != alpha.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} graphs but {} blend weights",
            graphs.len(),
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("blend weights must be finite".into()));
    }
    let fused = FusedItemGraph::build(graphs)?;
    let nnz = fused.nnz();
    let mut values = vec![0.0f64; nnz];
    for (vm, &am) in fused.values.iter().zip(alpha) {
        for (o, &v) in values.iter_mut().zip(vm) {
            *o += am * v;
        }
    }
    Ok(SparseGraph {
        rows: fused.rows,
        cols: fused.rows,
        row_ptr: fused.row_ptr.clone(),
        col_idx: fused.col_idx.clone(),
        values,
    })
}

/// Item graphs from every modality merged onto one shared sparsity pattern,
/// with per-modality value arrays and a matching transpose. The blend
/// weights stay runtime parameters, so re-weighting never rebuilds the
/// pattern; gradients w.r.t. the weights come from per-modality products.
#[derive(Debug, Clone)]
pub struct FusedItemGraph {
    pub rows: usize,
    pub num_modalities: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    /// values[m] is aligned with col_idx; absent entries are zero.
    pub values: Vec<Vec<f64>>,
    t_row_ptr: Vec<usize>,
    t_col_idx: Vec<u32>,
    t_values: Vec<Vec<f64>>,
}

impl FusedItemGraph {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Merge per-modality graphs onto the union pattern.
    pub fn build(graphs: &[SparseGraph]) -> Result<FusedItemGraph> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument("fusion needs at least one item graph".into()));
        }
        let rows = graphs[0].rows;
        for g in graphs {
            if g.rows != rows || g.cols != rows {
                return Err(Error::DimensionMismatch(format!(
                    "item graphs must all be {rows}x{rows}, got {}x{}",
                    g.rows, g.cols
                )));
            }
        }
        let m_count = graphs.len();
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx: Vec<u32> = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); m_count];

        let mut cursors = vec![0usize; m_count];
        for r in 0..rows {
            for (m, g) in graphs.iter().enumerate() {
                cursors[m] = g.row_ptr[r];
            }
            loop {
                let mut next: Option<u32> = None;
                for (m, g) in graphs.iter().enumerate() {
                    if cursors[m] < g.row_ptr[r + 1] {
                        let c = g.col_idx[cursors[m]];
                        next = Some(next.map_or(c, |n| n.min(c)));
                    }
                }
                let Some(c) = next else { break };
                col_idx.push(c);
                for (m, g) in graphs.iter().enumerate() {
                    if cursors[m] < g.row_ptr[r + 1] && g.col_idx[cursors[m]] == c {
                        values[m].push(g.values[cursors[m]]);
                        cursors[m] += 1;
                    } else {
                        values[m].push(0.0);
                    }
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }

        // transpose of the union pattern, values carried per modality
        let nnz = col_idx.len();
        let row_of = {
            let mut row_of = vec![0u32; nnz];
            for r in 0..rows {
                for e in row_ptr[r]..row_ptr[r + 1] {
                    row_of[e] = r as u32;
                }
            }
            row_of
        };
        let mut order: Vec<usize> = (0..nnz).collect();
        order.sort_unstable_by_key(|&e| (col_idx[e], row_of[e]));
        let mut t_row_ptr = vec![0usize; rows + 1];
        let mut t_col_idx = Vec::with_capacity(nnz);
        let mut t_values: Vec<Vec<f64>> = vec![Vec::with_capacity(nnz); m_count];
        for &e in &order {
            t_row_ptr[col_idx[e] as usize + 1] += 1;
            t_col_idx.push(row_of[e]);
            for m in 0..m_count {
                t_values[m].push(values[m][e]);
            }
        }
        for r in 0..rows {
            t_row_ptr[r + 1] += t_row_ptr[r];
        }

        Ok(FusedItemGraph {
            rows,
            num_modalities: m_count,
            row_ptr,
            col_idx,
            values,
            t_row_ptr,
            t_col_idx,
            t_values,
        })
    }

    fn spmv_pattern(
        rows: usize,
        row_ptr: &[usize],
        col_idx: &[u32],
        weights: &[Vec<f64>],
        alpha: &[f64],
        x: &Mat,
        out: &mut Mat,
    ) {
        assert_eq!(out.rows(), rows);
        assert_eq!(out.cols(), x.cols());
        assert_eq!(weights.len(), alpha.len());
        let ncols = x.cols();
        out.as_mut_slice()
            .par_chunks_mut(ncols)
            .enumerate()
            .for_each(|(r, orow)| {
                orow.fill(0.0);
                for e in row_ptr[r]..row_ptr[r + 1] {
                    let mut w = 0.0;
                    for (vm, &am) in weights.iter().zip(alpha) {
                        w += am * vm[e];
                    }
                    let xrow = x.row(col_idx[e] as usize);
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += w * xv;
                    }
                }
            });
    }

    /// (sum_m alpha[m] * S_m) * x.
    pub fn spmv_fused(&self, alpha: &[f64], x: &Mat) -> Mat {
        assert_eq!(alpha.len(), self.num_modalities);
        assert_eq!(x.rows(), self.rows);
        let mut out = Mat::zeros(self.rows, x.cols());
        Self::spmv_pattern(self.rows, &self.row_ptr, &self.col_idx, &self.values, alpha, x, &mut out);
        out
    }

    /// (sum_m alpha[m] * S_m)^T * x.
    pub fn spmv_fused_t(&self, alpha: &[f64], x: &Mat) -> Mat {
        assert_eq!(alpha.len(), self.num_modalities);
        assert_eq!(x.rows(), self.rows);
        let mut out = Mat::zeros(self.rows, x.cols());
        Self::spmv_pattern(
            self.rows,
            &self.t_row_ptr,
            &self.t_col_idx,
            &self.t_values,
            alpha,
            x,
            &mut out,
        );
        out
    }

    /// S_m * x for one modality.
    pub fn spmv_single(&self, m: usize, x: &Mat) -> Mat {
        let mut alpha = vec![0.0; self.num_modalities];
        alpha[m] = 1.0;
        self.spmv_fused(&alpha, x)
    }
}
