//! Two-layer softmax classifier trained with plain mini-batch SGD.
//!
//! `logits = W2 (W1 x + b1) + b2`. The first layer is the representation that
//! gets transferred; the second is the classification head, which is always
//! re-initialized for a new label set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::world::Samples;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    /// hidden × input, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// classes × hidden, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients laid out like [`Network::flat_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl Network {
    pub fn new<R: Rng>(input_dim: usize, hidden_dim: usize, classes: usize, rng: &mut R) -> Self {
        let w1 = gaussian(rng, hidden_dim * input_dim, (1.0 / input_dim as f64).sqrt());
        let w2 = gaussian(rng, classes * hidden_dim, (1.0 / hidden_dim as f64).sqrt());
        Self {
            input_dim,
            hidden_dim,
            classes,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; classes],
        }
    }

    /// Replaces the head with a freshly initialized one for `classes` labels.
    pub fn reset_head<R: Rng>(&mut self, classes: usize, rng: &mut R) {
        self.classes = classes;
        self.w2 = gaussian(rng, classes * self.hidden_dim, (1.0 / self.hidden_dim as f64).sqrt());
        self.b2 = vec![0.0; classes];
    }

    fn hidden(&self, x: &[f64], out: &mut [f64]) {
        for (j, h) in out.iter_mut().enumerate() {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            *h = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn logits(&self, h: &[f64], out: &mut [f64]) {
        for (c, l) in out.iter_mut().enumerate() {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            *l = self.b2[c] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Softmax probabilities in place; returns `ln Σ exp(logits)`.
    fn softmax(logits: &mut [f64]) -> f64 {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
        max + sum.ln()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut h = vec![0.0; self.hidden_dim];
        let mut l = vec![0.0; self.classes];
        self.hidden(x, &mut h);
        self.logits(&h, &mut l);
        l.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Mean cross-entropy over the selected rows.
    pub fn loss(&self, data: &Samples, rows: &[usize]) -> f64 {
        let mut h = vec![0.0; self.hidden_dim];
        let mut l = vec![0.0; self.classes];
        let mut total = 0.0;
        for &i in rows {
            self.hidden(data.row(i), &mut h);
            self.logits(&h, &mut l);
            let y = data.labels[i];
            let lse = {
                let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
            };
            total += lse - l[y];
        }
        total / rows.len() as f64
    }

    /// Analytic gradient of [`Network::loss`] over the selected rows.
    pub fn gradients(&self, data: &Samples, rows: &[usize]) -> Gradients {
        let (hd, id, nc) = (self.hidden_dim, self.input_dim, self.classes);
        let mut g = Gradients {
            w1: vec![0.0; hd * id],
            b1: vec![0.0; hd],
            w2: vec![0.0; nc * hd],
            b2: vec![0.0; nc],
        };
        let scale = 1.0 / rows.len() as f64;
        let mut h = vec![0.0; hd];
        let mut p = vec![0.0; nc];
        let mut dh = vec![0.0; hd];
        for &i in rows {
            let x = data.row(i);
            self.hidden(x, &mut h);
            self.logits(&h, &mut p);
            Self::softmax(&mut p);
            p[data.labels[i]] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..nc {
                let d = p[c] * scale;
                g.b2[c] += d;
                let w_row = &self.w2[c * hd..(c + 1) * hd];
                let g_row = &mut g.w2[c * hd..(c + 1) * hd];
                for j in 0..hd {
                    g_row[j] += d * h[j];
                    dh[j] += d * w_row[j];
                }
            }
            for j in 0..hd {
                g.b1[j] += dh[j];
                let g_row = &mut g.w1[j * id..(j + 1) * id];
                for (gw, xv) in g_row.iter_mut().zip(x) {
                    *gw += dh[j] * xv;
                }
            }
        }
        g
    }

    pub fn flat_params(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let (a, rest) = params.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
    }

    fn step(&mut self, g: &Gradients, rep_rate: f64, head_rate: f64) {
        let update = |w: &mut [f64], d: &[f64], rate: f64| {
            for (wi, di) in w.iter_mut().zip(d) {
                *wi -= rate * di;
            }
        };
        update(&mut self.w1, &g.w1, rep_rate);
        update(&mut self.b1, &g.b1, rep_rate);
        update(&mut self.w2, &g.w2, head_rate);
        update(&mut self.b2, &g.b2, head_rate);
    }

    /// Runs `epochs` passes of shuffled mini-batch SGD with separate learning
    /// rates for the representation layer and the head.
    pub fn train<R: Rng>(
        &mut self,
        data: &Samples,
        epochs: usize,
        batch: usize,
        rep_rate: f64,
        head_rate: f64,
        rng: &mut R,
    ) {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let batch = batch.max(1);
        for _ in 0..epochs {
            order.shuffle(rng);
            for rows in order.chunks(batch) {
                let g = self.gradients(data, rows);
                self.step(&g, rep_rate, head_rate);
            }
        }
    }

    /// Top-1 accuracy on `data`.
    pub fn accuracy(&self, data: &Samples) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.row(i)) == data.labels[i])
            .count();
        correct as f64 / data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Samples {
        let features = gaussian(rng, n * dim, 1.0);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Samples::new(dim, features, labels, classes)
    }

    /// Central finite differences of the loss, one parameter at a time.
    fn numeric_gradient(net: &Network, data: &Samples, rows: &[usize], h: f64) -> Vec<f64> {
        let base = net.flat_params();
        let mut probe = net.clone();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] = base[i] + h;
                probe.set_flat_params(&p);
                let up = probe.loss(data, rows);
                p[i] = base[i] - h;
                probe.set_flat_params(&p);
                let down = probe.loss(data, rows);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_samples(&mut rng, 7, 5, 3);
        let net = Network::new(5, 4, 3, &mut rng);
        let rows: Vec<usize> = (0..7).collect();
        let analytic = net.gradients(&data, &rows).flat();
        let numeric = numeric_gradient(&net, &data, &rows, 1e-6);
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-5, "relative error {}", diff / norm);
    }

    #[test]
    fn learns_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let offset = if y == 0 { -2.0 } else { 2.0 };
            features.extend([offset + gaussian(&mut rng, 1, 0.5)[0], gaussian(&mut rng, 1, 1.0)[0]]);
            labels.push(y);
        }
        let data = Samples::new(2, features, labels, 2);
        let mut net = Network::new(2, 2, 2, &mut rng);
        net.train(&data, 20, 16, 0.1, 0.1, &mut rng);
        assert!(net.accuracy(&data) > 0.95);
    }
}
