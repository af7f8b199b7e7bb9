//! Interaction head of the bi-encoder.
//!
//! ```text
//! m     = max(q, d)                      element-wise
//! h     = m + W2·act(W1·m + b1) + b2     residual 2-layer FFN
//! z     = [h, ‖q − d‖₂, cos(q, d)]
//! score = sigmoid(w_out·z + b_out)
//! ```

use rand_distr::{Distribution, Normal};

use super::{check_dims, check_vector, cosine_with_grad, dot};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// GELU, tanh approximation.
    Gelu,
    Tanh,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
                0.5 * (1.0 + t)
                    + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Activation> {
        match code {
            0 => Some(Activation::Gelu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Head weights for embedding dimension `dim`. Matrices are row-major,
/// `dim × dim`, mapping input index (column) to output index (row).
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionHead {
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `dim + 2` weights: the residual output, then distance, then cosine.
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub activation: Activation,
}

/// Gradients of the head output, laid out like the head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub q: Vec<f64>,
    pub d: Vec<f64>,
}

impl HeadGradient {
    /// Weight gradients in [`InteractionHead::parameters`] order.
    pub fn weights_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.extend(&self.b2);
        v.extend(&self.w_out);
        v.push(self.b_out);
        v
    }
}

struct Forward {
    max_from_q: Vec<bool>,
    m: Vec<f64>,
    pre1: Vec<f64>,
    hidden: Vec<f64>,
    z: Vec<f64>,
    diff: Vec<f64>,
    dist: f64,
    cos_gq: Vec<f64>,
    cos_gd: Vec<f64>,
    score: f64,
}

fn matvec(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(row, bias)| bias + dot(&w[row * n..(row + 1) * n], x))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl InteractionHead {
    pub fn zeros(dim: usize, activation: Activation) -> Self {
        InteractionHead {
            dim,
            w1: vec![0.0; dim * dim],
            b1: vec![0.0; dim],
            w2: vec![0.0; dim * dim],
            b2: vec![0.0; dim],
            w_out: vec![0.0; dim + 2],
            b_out: 0.0,
            activation,
        }
    }

    /// Gaussian initialization with standard deviation `1/√dim`.
    pub fn random(dim: usize, activation: Activation, rng_seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(rng_seed, "head.init"));
        let normal = Normal::new(0.0, 1.0 / (dim.max(1) as f64).sqrt()).unwrap();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        InteractionHead {
            dim,
            w1: draw(dim * dim),
            b1: draw(dim),
            w2: draw(dim * dim),
            b2: draw(dim),
            w_out: draw(dim + 2),
            b_out: draw(1)[0],
            activation,
        }
    }

    /// A head whose score is `sigmoid(gain · cos(q, d))`: all weights zero
    /// except the cosine read-out.
    pub fn cosine_readout(dim: usize, gain: f64) -> Self {
        let mut head = InteractionHead::zeros(dim, Activation::Gelu);
        head.w_out[dim + 1] = gain;
        head
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.dim * self.dim + 2 * self.dim + self.dim + 3
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.extend(&self.b2);
        v.extend(&self.w_out);
        v.push(self.b_out);
        v
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        let (d, dd) = (self.dim, self.dim * self.dim);
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        self.w1 = take(dd);
        self.b1 = take(d);
        self.w2 = take(dd);
        self.b2 = take(d);
        self.w_out = take(d + 2);
        self.b_out = take(1)[0];
        Ok(())
    }

    fn check_shapes(&self, q: &[f64], d: &[f64]) -> Result<()> {
        let expected = [
            (self.dim, q.len()),
            (self.dim, d.len()),
            (self.dim * self.dim, self.w1.len()),
            (self.dim * self.dim, self.w2.len()),
            (self.dim, self.b1.len()),
            (self.dim, self.b2.len()),
            (self.dim + 2, self.w_out.len()),
        ];
        for (want, got) in expected {
            if want != got {
                return Err(Error::ShapeMismatch {
                    expected: want,
                    found: got,
                });
            }
        }
        check_dims(q, d)
    }

    fn run(&self, q: &[f64], d: &[f64]) -> Result<Forward> {
        self.check_shapes(q, d)?;
        check_vector(q)?;
        check_vector(d)?;
        let max_from_q: Vec<bool> = q.iter().zip(d).map(|(a, b)| a >= b).collect();
        let m: Vec<f64> = q.iter().zip(d).map(|(a, b)| a.max(*b)).collect();
        let pre1 = matvec(&self.w1, &m, &self.b1);
        let hidden: Vec<f64> = pre1.iter().map(|&x| self.activation.apply(x)).collect();
        let ffn = matvec(&self.w2, &hidden, &self.b2);
        let diff: Vec<f64> = q.iter().zip(d).map(|(a, b)| a - b).collect();
        let dist = dot(&diff, &diff).sqrt();
        let (cos, cos_gq, cos_gd) = cosine_with_grad(q, d)?;
        let mut z: Vec<f64> = m.iter().zip(&ffn).map(|(a, b)| a + b).collect();
        z.push(dist);
        z.push(cos);
        let score = sigmoid(dot(&self.w_out, &z) + self.b_out);
        Ok(Forward {
            max_from_q,
            m,
            pre1,
            hidden,
            z,
            diff,
            dist,
            cos_gq,
            cos_gd,
            score,
        })
    }

    /// Relevance score in (0, 1).
    pub fn forward(&self, q: &[f64], d: &[f64]) -> Result<f64> {
        Ok(self.run(q, d)?.score)
    }

    /// Exact gradients of `upstream · score` with respect to every weight and
    /// both embeddings. At ties of the element-wise maximum the gradient goes
    /// to `q`; the distance feature has zero gradient at `q = d`.
    pub fn gradient(&self, q: &[f64], d: &[f64], upstream: f64) -> Result<HeadGradient> {
        let f = self.run(q, d)?;
        let n = self.dim;
        let g_logit = upstream * f.score * (1.0 - f.score);

        let w_out: Vec<f64> = f.z.iter().map(|z| g_logit * z).collect();
        let g_h: Vec<f64> = self.w_out[..n].iter().map(|w| g_logit * w).collect();
        let g_dist = g_logit * self.w_out[n];
        let g_cos = g_logit * self.w_out[n + 1];

        // h = m + W2·hidden + b2
        let b2 = g_h.clone();
        let mut w2 = vec![0.0; n * n];
        let mut g_hidden = vec![0.0; n];
        for row in 0..n {
            for col in 0..n {
                w2[row * n + col] = g_h[row] * f.hidden[col];
                g_hidden[col] += self.w2[row * n + col] * g_h[row];
            }
        }
        // hidden = act(W1·m + b1)
        let g_pre1: Vec<f64> = g_hidden
            .iter()
            .zip(&f.pre1)
            .map(|(g, &x)| g * self.activation.derivative(x))
            .collect();
        let b1 = g_pre1.clone();
        let mut w1 = vec![0.0; n * n];
        let mut g_m = g_h;
        for row in 0..n {
            for col in 0..n {
                w1[row * n + col] = g_pre1[row] * f.m[col];
                g_m[col] += self.w1[row * n + col] * g_pre1[row];
            }
        }

        let mut gq = vec![0.0; n];
        let mut gd = vec![0.0; n];
        for i in 0..n {
            if f.max_from_q[i] {
                gq[i] += g_m[i];
            } else {
                gd[i] += g_m[i];
            }
            if f.dist > 0.0 {
                let g = g_dist * f.diff[i] / f.dist;
                gq[i] += g;
                gd[i] -= g;
            }
            gq[i] += g_cos * f.cos_gq[i];
            gd[i] += g_cos * f.cos_gd[i];
        }

        Ok(HeadGradient {
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out: g_logit,
            q: gq,
            d: gd,
        })
    }
}
