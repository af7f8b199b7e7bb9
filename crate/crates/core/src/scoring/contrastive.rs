//! Temperature-scaled cross-entropy with in-batch negatives.
//!
//! For a batch of `N` positive pairs `(q_i, d_i)`, every `d_j` with `j ≠ i`
//! acts as a negative for `q_i`:
//!
//! ```text
//! loss = mean_i [ −log( exp(s_ii/τ) / Σ_j exp(s_ij/τ) ) ],   s_ij = cos(q_i, d_j)
//! ```

use super::cosine_with_grad;
use crate::error::{Error, Result};

/// Learnable temperature kept positive by storing `ln τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature {
    pub log_tau: f64,
}

impl Temperature {
    pub const INITIAL: f64 = 0.07;

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature must be > 0, got {tau}")));
        }
        Ok(Temperature { log_tau: tau.ln() })
    }

    pub fn tau(self) -> f64 {
        self.log_tau.exp()
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature {
            log_tau: Self::INITIAL.ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_q: Vec<Vec<f64>>,
    pub grad_d: Vec<Vec<f64>>,
    pub grad_tau: f64,
    /// Gradient with respect to `ln τ`, i.e. `τ · grad_tau`.
    pub grad_log_tau: f64,
}

/// Mean in-batch contrastive loss and its gradients.
pub fn contrastive_loss<E: AsRef<[f64]>>(queries: &[E], docs: &[E], tau: f64) -> Result<ContrastiveOutput> {
    let n = queries.len();
    if n == 0 || docs.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n.max(1),
            found: docs.len(),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonFinite(tau));
    }
    let dim = queries[0].as_ref().len();

    // s[i][j] with gradients of s_ij wrt q_i and d_j
    let mut sims = vec![vec![0.0; n]; n];
    let mut gq_sim = vec![Vec::with_capacity(n); n];
    let mut gd_sim = vec![Vec::with_capacity(n); n];
    for i in 0..n {
        for j in 0..n {
            let (s, gq, gd) = cosine_with_grad(queries[i].as_ref(), docs[j].as_ref())?;
            sims[i][j] = s;
            gq_sim[i].push(gq);
            gd_sim[i].push(gd);
        }
    }

    let mut loss = 0.0;
    let mut grad_q = vec![vec![0.0; dim]; n];
    let mut grad_d = vec![vec![0.0; dim]; n];
    let mut grad_tau = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let logits: Vec<f64> = sims[i].iter().map(|s| s / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += (max - logits[i]) + total.ln();
        for j in 0..n {
            let p = exps[j] / total;
            // d loss / d logit_ij
            let g_logit = (p - if i == j { 1.0 } else { 0.0 }) * inv_n;
            let g_sim = g_logit / tau;
            grad_tau -= g_logit * sims[i][j] / (tau * tau);
            for k in 0..dim {
                grad_q[i][k] += g_sim * gq_sim[i][j][k];
                grad_d[j][k] += g_sim * gd_sim[i][j][k];
            }
        }
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(loss));
    }
    Ok(ContrastiveOutput {
        loss,
        grad_q,
        grad_d,
        grad_tau,
        grad_log_tau: grad_tau * tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let out = contrastive_loss(&[vec![0.3, 0.1]], &[vec![-1.0, 2.0]], 0.07).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_q[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_pairs_closed_form() {
        // cosine matrix [[1, 0], [0, 1]]
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = contrastive_loss(&e, &e, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-15);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let q = vec![vec![1.0, 0.2, -0.3], vec![0.1, 1.0, 0.4], vec![-0.5, 0.3, 1.0]];
        let d = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.1], vec![0.0, -0.2, 1.1]];
        let a = contrastive_loss(&q, &d, 0.1).unwrap().loss;
        let order = [2, 0, 1];
        let qp: Vec<_> = order.iter().map(|&i| q[i].clone()).collect();
        let dp: Vec<_> = order.iter().map(|&i| d[i].clone()).collect();
        let b = contrastive_loss(&qp, &dp, 0.1).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            contrastive_loss(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 1.0),
            Err(Error::ZeroVector)
        ));
        assert!(contrastive_loss::<Vec<f64>>(&[], &[], 1.0).is_err());
        assert!(Temperature::new(0.0).is_err());
        assert!((Temperature::default().tau() - 0.07).abs() < 1e-15);
    }
}
