//! Embedding diagnostics: dispersion statistics that reveal representation
//! collapse, plus exports of every intermediate embedding for offline tools.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::io;
use crate::mat::Mat;
use crate::model::ForwardTrace;
use crate::rng::derive_rng;

/// Row counts up to this limit get exact all-pairs statistics; larger
/// matrices are sampled.
pub const DISPERSION_EXACT_LIMIT: usize = 2000;

/// Anchors scanned for nearest-neighbor similarity when sampling.
const NN_SAMPLE_ANCHORS: usize = 512;

/// How spread out a set of row embeddings is. Collapsing representations
/// drive `mean_distance` toward zero and `mean_nn_similarity` toward one.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionReport {
    /// Mean euclidean distance over row pairs.
    pub mean_distance: f64,
    /// Mean cosine similarity between each anchor row and its nearest
    /// neighbor; zero-norm rows contribute zero.
    pub mean_nn_similarity: f64,
    /// Pairs behind `mean_distance`.
    pub pairs: usize,
    pub rows: usize,
    /// True when every pair and every row was visited.
    pub exact: bool,
}

impl DispersionReport {
    pub fn table(&self) -> String {
        format!(
            "rows {}  pairs {}{}\nmean pairwise distance   {:.6}\nmean nearest-neighbor cos {:.6}\n",
            self.rows,
            self.pairs,
            if self.exact { " (exact)" } else { " (sampled)" },
            self.mean_distance,
            self.mean_nn_similarity
        )
    }
}

fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn row_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn nn_similarity(m: &Mat, anchor: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for j in 0..m.rows() {
        if j == anchor {
            continue;
        }
        let s = row_cosine(m.row(anchor), m.row(j));
        if s > best {
            best = s;
        }
    }
    best
}

/// Dispersion of the rows of `embeddings`. Small matrices are measured
/// exactly; past [`DISPERSION_EXACT_LIMIT`] rows, `sample_pairs` random pairs
/// estimate the mean distance and a fixed anchor subset estimates the
/// nearest-neighbor similarity. Sampling is seeded and reproducible.
pub fn dispersion(embeddings: &Mat, sample_pairs: usize, seed: u64) -> Result<DispersionReport> {
    let rows = embeddings.rows();
    if rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "dispersion needs at least two rows, got {rows}"
        )));
    }
    if sample_pairs == 0 {
        return Err(Error::InvalidArgument("sample_pairs must be positive".into()));
    }
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("embedding matrix contains non-finite values".into()));
    }

    let exact = rows <= DISPERSION_EXACT_LIMIT;
    let (mean_distance, pairs) = if exact {
        let mut sum = 0.0;
        for i in 0..rows {
            for j in (i + 1)..rows {
                sum += row_distance(embeddings.row(i), embeddings.row(j));
            }
        }
        let n = rows * (rows - 1) / 2;
        (sum / n as f64, n)
    } else {
        let mut rng = derive_rng(seed, "dispersion-pairs");
        let mut sum = 0.0;
        for _ in 0..sample_pairs {
            let i = rng.gen_range(0..rows);
            let j = loop {
                let j = rng.gen_range(0..rows);
                if j != i {
                    break j;
                }
            };
            sum += row_distance(embeddings.row(i), embeddings.row(j));
        }
        (sum / sample_pairs as f64, sample_pairs)
    };

    let mean_nn_similarity = if exact {
        let sum: f64 = (0..rows).map(|i| nn_similarity(embeddings, i)).sum();
        sum / rows as f64
    } else {
        let mut rng = derive_rng(seed, "dispersion-anchors");
        let anchors = NN_SAMPLE_ANCHORS.min(rows);
        let sum: f64 = (0..anchors)
            .map(|_| nn_similarity(embeddings, rng.gen_range(0..rows)))
            .sum();
        sum / anchors as f64
    };

    Ok(DispersionReport {
        mean_distance,
        mean_nn_similarity,
        pairs,
        rows,
        exact,
    })
}

/// Which intermediate embedding of a forward pass to export or measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Layer-0 tables before any propagation.
    Ego,
    /// Average of the propagated layers.
    NeighborMean,
    /// Ego plus the propagated layers; the per-modality readout.
    ModalFinal,
    /// Channel-weighted concatenation with enhanced item rows.
    Fused,
}

impl EmbeddingKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EmbeddingKind::Ego => "ego",
            EmbeddingKind::NeighborMean => "neighbor_mean",
            EmbeddingKind::ModalFinal => "modal_final",
            EmbeddingKind::Fused => "fused",
        }
    }

    pub fn parse(tag: &str) -> Result<EmbeddingKind> {
        match tag {
            "ego" => Ok(EmbeddingKind::Ego),
            "neighbor_mean" => Ok(EmbeddingKind::NeighborMean),
            "modal_final" => Ok(EmbeddingKind::ModalFinal),
            "fused" => Ok(EmbeddingKind::Fused),
            other => Err(Error::InvalidArgument(format!(
                "unknown embedding kind '{other}'; expected ego, neighbor_mean, modal_final, or fused"
            ))),
        }
    }
}

/// Write the chosen embedding as 64-bit matrix files under `dir`: one file
/// per modality for per-modality kinds, a single file for the fused rows.
/// Rows are users first, then items. Returns the written paths.
pub fn export_embeddings(
    trace: &ForwardTrace,
    kind: EmbeddingKind,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match kind {
        EmbeddingKind::Fused => {
            let path = dir.join("fused.mmft");
            io::write_mmft(&path, &trace.fused, io::MmftDtype::F64)?;
            written.push(path);
        }
        _ => {
            for mt in &trace.per_modality {
                let matrix = match kind {
                    EmbeddingKind::Ego => mt.ego().clone(),
                    EmbeddingKind::NeighborMean => mt.neighbor_mean()?,
                    EmbeddingKind::ModalFinal => mt.modal_final.clone(),
                    EmbeddingKind::Fused => unreachable!(),
                };
                let path = dir.join(format!("{}_{}.mmft", kind.tag(), mt.modality.tag()));
                io::write_mmft(&path, &matrix, io::MmftDtype::F64)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Dispersion of the fused item rows of two traces over the same catalog,
/// e.g. a model trained with alignment against one trained without.
pub fn compare_variants(
    trace_a: &ForwardTrace,
    trace_b: &ForwardTrace,
    sample_pairs: usize,
    seed: u64,
) -> Result<(DispersionReport, DispersionReport)> {
    if trace_a.num_items != trace_b.num_items || trace_a.num_users != trace_b.num_users {
        return Err(Error::DimensionMismatch(format!(
            "traces cover different catalogs: {}x{} vs {}x{}",
            trace_a.num_users, trace_a.num_items, trace_b.num_users, trace_b.num_items
        )));
    }
    let items_a = trace_a.fused.slice_rows(trace_a.num_users, trace_a.num_users + trace_a.num_items);
    let items_b = trace_b.fused.slice_rows(trace_b.num_users, trace_b.num_users + trace_b.num_items);
    Ok((
        dispersion(&items_a, sample_pairs, seed)?,
        dispersion(&items_b, sample_pairs, seed)?,
    ))
}
