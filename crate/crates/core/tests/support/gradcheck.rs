//! Central finite-difference checks of the head and the contrastive loss.

#![allow(dead_code)]

use clicklabel::scoring::contrastive::contrastive_loss;
use clicklabel::scoring::head::{Activation, InteractionHead};
use clicklabel::seed::mix64;

const STEP: f64 = 1e-5;

/// Uniform values in [-1, 1) from a counter-based generator.
pub struct Uniform(u64);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Uniform(mix64(seed ^ 0x6772_6164))
    }

    pub fn next(&mut self) -> f64 {
        self.0 = mix64(self.0);
        (self.0 >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }
}

/// Relative difference with a floor so that gradients near zero are
/// compared absolutely.
pub fn rel_diff(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

/// Worst relative difference over every weight and both inputs of a random
/// head instance.
pub fn head_instance(seed: u64, dim: usize, activation: Activation) -> f64 {
    let mut u = Uniform::new(seed);
    let mut head = InteractionHead::random(dim, activation, seed);
    // Random output weights so every feature matters.
    head.w_out = u.vec(dim + 2);
    head.b_out = u.next();
    let q = u.vec(dim);
    let d = u.vec(dim);
    let g = head.gradient(&q, &d, 1.0).unwrap();

    let mut worst = 0.0f64;
    let params = head.parameters();
    for (i, a) in g.weights_flat().into_iter().enumerate() {
        let mut h = head.clone();
        let mut p = params.clone();
        let n = central(params[i], |v| {
            p[i] = v;
            h.set_parameters(&p).unwrap();
            h.forward(&q, &d).unwrap()
        });
        worst = worst.max(rel_diff(a, n));
    }
    for k in 0..dim {
        let mut qq = q.clone();
        let n = central(q[k], |v| {
            qq[k] = v;
            head.forward(&qq, &d).unwrap()
        });
        worst = worst.max(rel_diff(g.q[k], n));
        let mut dd = d.clone();
        let n = central(d[k], |v| {
            dd[k] = v;
            head.forward(&q, &dd).unwrap()
        });
        worst = worst.max(rel_diff(g.d[k], n));
    }
    worst
}

/// Worst relative difference over all embedding entries and the log
/// temperature of a random batch.
pub fn contrastive_instance(seed: u64, batch: usize, dim: usize) -> f64 {
    let mut u = Uniform::new(seed);
    let q: Vec<Vec<f64>> = (0..batch).map(|_| u.vec(dim)).collect();
    let d: Vec<Vec<f64>> = (0..batch).map(|_| u.vec(dim)).collect();
    let tau = 0.05 + 0.5 * (u.next() + 1.0);
    let out = contrastive_loss(&q, &d, tau).unwrap();

    let mut worst = 0.0f64;
    for i in 0..batch {
        for k in 0..dim {
            let mut qq = q.clone();
            let n = central(q[i][k], |v| {
                qq[i][k] = v;
                contrastive_loss(&qq, &d, tau).unwrap().loss
            });
            worst = worst.max(rel_diff(out.grad_q[i][k], n));
            let mut dd = d.clone();
            let n = central(d[i][k], |v| {
                dd[i][k] = v;
                contrastive_loss(&q, &dd, tau).unwrap().loss
            });
            worst = worst.max(rel_diff(out.grad_d[i][k], n));
        }
    }
    let n = central(tau.ln(), |lt| contrastive_loss(&q, &d, lt.exp()).unwrap().loss);
    worst.max(rel_diff(out.grad_log_tau, n))
}
