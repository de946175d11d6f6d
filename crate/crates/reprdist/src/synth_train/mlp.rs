//! Fully connected LeakyReLU network `R² → R^M` and the classifier
//! `p(y|x) = softmax(f(x)ᵀg(y))` built on it, with hand-written backprop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    /// Uniform in `±1/√fan_in` for weights and biases.
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
            b: DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..bound)),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: DMatrix::zeros(fan_out, fan_in), b: DVector::zeros(fan_out) }
    }

    fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * self.w.transpose();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

struct Cache {
    /// Input to each layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

fn leaky(z: &DMatrix<f64>, slope: f64) -> DMatrix<f64> {
    z.map(|v| if v > 0.0 { v } else { slope * v })
}

impl Mlp {
    /// `sizes = [in, h₁, …, out]`; LeakyReLU after every layer but the last.
    pub fn new(sizes: &[usize], slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes.windows(2).map(|p| Linear::init(p[0], p[1], &mut rng)).collect();
        Self { layers, slope }
    }

    pub fn zeros(sizes: &[usize], slope: f64) -> Self {
        Self { layers: sizes.windows(2).map(|p| Linear::zeros(p[0], p[1])).collect(), slope }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> Cache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            if i == last {
                return Cache { inputs, pre, out: z };
            }
            a = leaky(&z, self.slope);
            pre.push(z);
        }
        unreachable!("an MLP has at least one layer")
    }

    /// Sign of every hidden pre-activation.
    pub fn activation_pattern(&self, x: &DMatrix<f64>) -> Vec<bool> {
        self.forward_cached(x).pre.iter().flat_map(|z| z.iter().map(|v| *v > 0.0).collect::<Vec<_>>()).collect()
    }

    /// Rows of `x` are inputs; rows of the result are outputs.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).out
    }

    fn backward(&self, cache: &Cache, d_out: DMatrix<f64>) -> Vec<Linear> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = d_out;
        for i in (0..self.layers.len()).rev() {
            let a = &cache.inputs[i];
            let w = dz.transpose() * a;
            let b = DVector::from_fn(dz.ncols(), |j, _| dz.column(j).sum());
            grads.push(Linear { w, b });
            if i > 0 {
                let mut da = &dz * &self.layers[i].w;
                let z = &cache.pre[i - 1];
                da.zip_apply(z, |d, zv| {
                    if zv <= 0.0 {
                        *d *= self.slope
                    }
                });
                dz = da;
            }
        }
        grads.reverse();
        grads
    }
}

/// Forward pass for a single input.
pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> DVector<f64> {
    let row = DMatrix::from_row_slice(1, x.len(), x);
    mlp.forward(&row).row(0).transpose()
}

/// Embedding network plus a free `c × M` unembedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub mlp: Mlp,
    pub unembeddings: DMatrix<f64>,
    /// Rescale every embedding to this norm (an output normalization layer).
    pub embedding_norm: Option<f64>,
}

/// Gradients with the same layout as [`Classifier`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
    pub unembeddings: DMatrix<f64>,
}

fn log_softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for i in 0..z.nrows() {
        let row = z.row(i);
        let mx = row.max();
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        out.row_mut(i).add_scalar_mut(-lse);
    }
    out
}

impl Classifier {
    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let h = self.mlp.forward(x);
        self.normalize(h)
    }

    fn normalize(&self, mut h: DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(r) = self.embedding_norm {
            for mut row in h.row_iter_mut() {
                let n = row.norm();
                if !(n > 0.0) {
                    return Err(Error::NonFinite("zero embedding under the norm constraint".into()));
                }
                row.scale_mut(r / n);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.embed(x)? * self.unembeddings.transpose())
    }

    /// Mean cross-entropy of `labels` given inputs `x`.
    pub fn loss(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let lp = log_softmax_rows(&self.logits(x)?);
        let s: f64 = labels.iter().enumerate().map(|(i, &y)| -lp[(i, y)]).sum();
        Ok(s / labels.len() as f64)
    }

    pub fn loss_and_grad(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        let bsz = labels.len() as f64;
        let cache = self.mlp.forward_cached(x);
        let f = self.normalize(cache.out.clone())?;
        let lp = log_softmax_rows(&(&f * self.unembeddings.transpose()));
        let loss = labels.iter().enumerate().map(|(i, &y)| -lp[(i, y)]).sum::<f64>() / bsz;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut d_logits = lp.map(f64::exp);
        for (i, &y) in labels.iter().enumerate() {
            d_logits[(i, y)] -= 1.0;
        }
        d_logits /= bsz;
        let d_g = d_logits.transpose() * &f;
        let mut d_f = d_logits * &self.unembeddings;
        if let Some(r) = self.embedding_norm {
            // f = r·h/‖h‖  ⇒  dh = (r/‖h‖)(df − u uᵀdf)
            for i in 0..d_f.nrows() {
                let h = cache.out.row(i);
                let n = h.norm();
                let u = h / n;
                let proj = u.dot(&d_f.row(i));
                let row = (d_f.row(i) - u * proj) * (r / n);
                d_f.set_row(i, &row);
            }
        }
        let layers = self.mlp.backward(&cache, d_f);
        Ok((loss, Gradients { layers, unembeddings: d_g }))
    }

    /// Fraction of inputs whose top label matches.
    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let z = self.logits(x)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| {
                let row = z.row(i);
                (0..row.len()).all(|j| row[j] < row[y] || j == y)
            })
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }

    pub fn n_params(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.mlp.layers {
            v.push(l.w.as_slice());
            v.push(l.b.as_slice());
        }
        v.push(self.unembeddings.as_slice());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.mlp.layers {
            v.push(l.w.as_mut_slice());
            v.push(l.b.as_mut_slice());
        }
        v.push(self.unembeddings.as_mut_slice());
        v
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for b in self.buffers_mut() {
            if idx < b.len() {
                return &mut b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            v.push(l.w.as_slice());
            v.push(l.b.as_slice());
        }
        v.push(self.unembeddings.as_slice());
        v
    }

    fn flat(&self, mut idx: usize) -> f64 {
        for b in self.buffers() {
            if idx < b.len() {
                return b[idx];
            }
            idx -= b.len();
        }
        panic!("parameter index out of range")
    }
}

/// Loss and analytic gradients on one batch.
pub fn mlp_backward(model: &Classifier, x: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
    model.loss_and_grad(x, labels)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &Classifier, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.buffers().iter().map(|b| vec![0.0; b.len()]).collect();
        Self { lr, beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, model: &mut Classifier, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let gb = grads.buffers();
        for (k, p) in model.buffers_mut().into_iter().enumerate() {
            let g = gb[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates redrawn because the step crossed a LeakyReLU kink.
    pub kink_skips: usize,
}

/// Gradients below this magnitude are compared absolutely: central
/// differences in f64 carry roughly `ε·|logit|/h` of cancellation error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Default central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares analytic gradients with central differences on `n_coords` random
/// parameters. Relative error is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
/// A coordinate whose `±h` step flips any hidden activation sign is redrawn.
pub fn gradient_check(
    model: &Classifier,
    x: &DMatrix<f64>,
    labels: &[usize],
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(x, labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = model.n_params();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kink_skips = 0;
    while checked < n_coords {
        if kink_skips > 100 * n_coords {
            return Err(Error::InvalidArgument("step too large: every coordinate crosses a kink".into()));
        }
        let idx = rng.random_range(0..total);
        let orig = *probe.param_mut(idx);
        *probe.param_mut(idx) = orig + h;
        let up = probe.loss(x, labels)?;
        let up_pattern = probe.mlp.activation_pattern(x);
        *probe.param_mut(idx) = orig - h;
        let down = probe.loss(x, labels)?;
        let down_pattern = probe.mlp.activation_pattern(x);
        *probe.param_mut(idx) = orig;
        if up_pattern != down_pattern {
            kink_skips += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.flat(idx);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
        checked += 1;
    }
    Ok(GradCheck { max_rel_error: worst, checked, kink_skips })
}
