//! A hashed bag-of-tokens embedder trained with the contrastive loss.
//!
//! Each token is hashed into one of `buckets` rows of a lookup table; a text
//! embeds as the mean of its token rows. It stands in for a pretrained
//! encoder so the training and scoring path can be exercised end to end.

use rand_distr::{Distribution, Normal};

use super::contrastive::{contrastive_loss, Temperature};
use super::{cosine_with_grad, tokenize};
use crate::dataset::LabeledRow;
use crate::error::{Error, Result};
use crate::seed;

const EMPTY_TOKEN: &str = "\u{0}empty";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEmbedder {
    pub dim: usize,
    pub buckets: usize,
    /// `buckets × dim`, row-major.
    pub table: Vec<f64>,
    pub temperature: Temperature,
}

impl ToyEmbedder {
    pub fn random(dim: usize, buckets: usize, rng_seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(rng_seed, "embedder.init"));
        let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt()).unwrap();
        ToyEmbedder {
            dim,
            buckets,
            table: (0..dim * buckets).map(|_| normal.sample(&mut rng)).collect(),
            temperature: Temperature::default(),
        }
    }

    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        let tokens = tokenize(text);
        let bucket = |t: &str| (seed::fnv1a(t.as_bytes()) % self.buckets as u64) as usize;
        if tokens.is_empty() {
            return vec![bucket(EMPTY_TOKEN)];
        }
        tokens.iter().map(|t| bucket(t)).collect()
    }

    fn embed_ids(&self, ids: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &id in ids {
            let row = &self.table[id * self.dim..(id + 1) * self.dim];
            v.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / ids.len() as f64;
        v.iter_mut().for_each(|x| *x *= inv);
        v
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embed_ids(&self.token_ids(text))
    }

    fn apply(&mut self, ids: &[usize], grad: &[f64], lr: f64) {
        let scale = lr / ids.len() as f64;
        for &id in ids {
            let row = &mut self.table[id * self.dim..(id + 1) * self.dim];
            row.iter_mut().zip(grad).for_each(|(w, g)| *w -= scale * g);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub buckets: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the pointwise term `w·(cos(q, d) − label)²`, averaged over
    /// the batch and added to the contrastive loss.
    pub pointwise_mix: f64,
    pub learn_temperature: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            buckets: 4096,
            epochs: 10,
            lr: 0.05,
            seed: 0,
            pointwise_mix: 0.0,
            learn_temperature: true,
        }
    }
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::DivergenceDetected { epoch },
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub embedder: ToyEmbedder,
    /// Mean batch loss of each epoch, measured before each batch's update.
    pub loss_trace: Vec<f64>,
}

/// Plain SGD over the given batches, in order, for `epochs` passes.
///
/// Rows with a positive label are the positive pairs of the in-batch
/// contrastive loss; every row enters the pointwise term.
pub fn train_toy_embedder(batches: &[Vec<LabeledRow>], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.dim == 0 || cfg.buckets == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::InvalidConfig("dim and buckets must be positive, lr >= 0".into()));
    }
    let mut model = ToyEmbedder::random(cfg.dim, cfg.buckets, cfg.seed);
    let tokenized: Vec<Vec<(Vec<usize>, Vec<usize>)>> = batches
        .iter()
        .map(|b| {
            b.iter()
                .map(|r| (model.token_ids(&r.query), model.token_ids(&r.doc_text())))
                .collect()
        })
        .collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut counted = 0usize;
        for (batch, ids) in batches.iter().zip(&tokenized) {
            if batch.is_empty() {
                continue;
            }
            let q: Vec<Vec<f64>> = ids.iter().map(|(qi, _)| model.embed_ids(qi)).collect();
            let d: Vec<Vec<f64>> = ids.iter().map(|(_, di)| model.embed_ids(di)).collect();
            let mut gq = vec![vec![0.0; cfg.dim]; batch.len()];
            let mut gd = vec![vec![0.0; cfg.dim]; batch.len()];
            let mut loss = 0.0;
            let mut g_log_tau = 0.0;

            let positives: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].label > 0.0).collect();
            if positives.len() >= 2 {
                let pq: Vec<&[f64]> = positives.iter().map(|&i| q[i].as_slice()).collect();
                let pd: Vec<&[f64]> = positives.iter().map(|&i| d[i].as_slice()).collect();
                let out = contrastive_loss(&pq, &pd, model.temperature.tau()).map_err(|e| diverged(e, epoch))?;
                loss += out.loss;
                g_log_tau = out.grad_log_tau;
                for (k, &i) in positives.iter().enumerate() {
                    gq[i] = out.grad_q[k].clone();
                    gd[i] = out.grad_d[k].clone();
                }
            }
            if cfg.pointwise_mix > 0.0 {
                let scale = cfg.pointwise_mix / batch.len() as f64;
                for (i, row) in batch.iter().enumerate() {
                    let (c, cq, cd) = cosine_with_grad(&q[i], &d[i]).map_err(|e| diverged(e, epoch))?;
                    let err = c - row.label;
                    loss += scale * row.weight * err * err;
                    let g = scale * row.weight * 2.0 * err;
                    gq[i].iter_mut().zip(&cq).for_each(|(a, b)| *a += g * b);
                    gd[i].iter_mut().zip(&cd).for_each(|(a, b)| *a += g * b);
                }
            }
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            epoch_loss += loss;
            counted += 1;

            if cfg.lr > 0.0 {
                for (i, (qi, di)) in ids.iter().enumerate() {
                    model.apply(qi, &gq[i], cfg.lr);
                    model.apply(di, &gd[i], cfg.lr);
                }
                if cfg.learn_temperature {
                    model.temperature.log_tau -= cfg.lr * g_log_tau;
                }
            }
        }
        let mean = epoch_loss / counted.max(1) as f64;
        if !mean.is_finite() || model.table.iter().any(|w| !w.is_finite()) {
            return Err(Error::DivergenceDetected { epoch });
        }
        trace.push(mean);
    }
    Ok(TrainOutcome {
        embedder: model,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(q: &str, doc: &str) -> LabeledRow {
        LabeledRow {
            query: q.into(),
            url: format!("https://{doc}"),
            title: doc.into(),
            bte: String::new(),
            label: 0.5,
            weight: 1.0,
        }
    }

    fn batch() -> Vec<LabeledRow> {
        vec![
            row("red apple pie", "apple pie recipe"),
            row("blue ocean waves", "ocean surfing waves"),
            row("green forest trail", "forest hiking trail"),
            row("yellow taxi cab", "taxi cab fares"),
        ]
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            dim: 8,
            buckets: 64,
            ..Default::default()
        };
        let out = train_toy_embedder(&[batch()], &cfg).unwrap();
        assert_eq!(out.embedder, ToyEmbedder::random(8, 64, cfg.seed));
        assert_eq!(out.loss_trace.len(), 3);
    }

    #[test]
    fn repeated_batch_loss_decreases() {
        let cfg = TrainConfig {
            lr: 0.02,
            epochs: 5,
            dim: 16,
            buckets: 256,
            ..Default::default()
        };
        let out = train_toy_embedder(&[batch()], &cfg).unwrap();
        for w in out.loss_trace.windows(2) {
            assert!(w[1] < w[0], "{:?}", out.loss_trace);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = TrainConfig {
            dim: 8,
            buckets: 64,
            pointwise_mix: 0.5,
            ..Default::default()
        };
        let a = train_toy_embedder(&[batch()], &cfg).unwrap();
        let b = train_toy_embedder(&[batch()], &cfg).unwrap();
        assert_eq!(a.embedder, b.embedder);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn divergence_is_detected() {
        let cfg = TrainConfig {
            dim: 8,
            buckets: 64,
            lr: 1e300,
            epochs: 4,
            ..Default::default()
        };
        assert!(matches!(
            train_toy_embedder(&[batch()], &cfg),
            Err(Error::DivergenceDetected { .. })
        ));
    }

    #[test]
    fn empty_text_embeds_to_a_fixed_row() {
        let e = ToyEmbedder::random(4, 16, 3);
        assert_eq!(e.embed(""), e.embed("  ,, "));
        assert!(e.embed("").iter().any(|&x| x != 0.0));
    }
}
