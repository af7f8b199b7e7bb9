//! Numeric kernels for bi-encoder scoring: cosine similarity, the interaction
//! head, in-batch contrastive loss, BM25 and a small trainable embedder.
//!
//! Embeddings are plain `f64` slices supplied by the caller or produced by
//! [`embedder::ToyEmbedder`].

pub mod bm25;
pub mod contrastive;
pub mod embedder;
pub mod files;
pub mod head;

pub use bm25::{bm25_score, tokenize, Bm25Params, CorpusStats};
pub use contrastive::{contrastive_loss, ContrastiveOutput, Temperature};
pub use embedder::{train_toy_embedder, ToyEmbedder, TrainConfig, TrainOutcome};
pub use head::{Activation, HeadGradient, InteractionHead};

use crate::error::{Error, Result};

pub(crate) fn check_vector(v: &[f64]) -> Result<f64> {
    let mut sq = 0.0;
    for &x in v {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        sq += x * x;
    }
    let norm = sq.sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(norm)
}

pub(crate) fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `qᵀd / (‖q‖ ‖d‖)`.
pub fn cosine_sim(q: &[f64], d: &[f64]) -> Result<f64> {
    check_dims(q, d)?;
    let (nq, nd) = (check_vector(q)?, check_vector(d)?);
    Ok((dot(q, d) / (nq * nd)).clamp(-1.0, 1.0))
}

/// Cosine similarity together with its gradients with respect to both
/// inputs.
pub(crate) fn cosine_with_grad(q: &[f64], d: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_dims(q, d)?;
    let (nq, nd) = (check_vector(q)?, check_vector(d)?);
    let c = dot(q, d) / (nq * nd);
    let gq = q
        .iter()
        .zip(d)
        .map(|(&qi, &di)| di / (nq * nd) - c * qi / (nq * nq))
        .collect();
    let gd = q
        .iter()
        .zip(d)
        .map(|(&qi, &di)| qi / (nq * nd) - c * di / (nd * nd))
        .collect();
    Ok((c, gq, gd))
}
