use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::AngularDataset;
use super::mlp::{Adam, Classifier, Mlp};
use crate::model_core::ModelTable;
use crate::{Error, Result};

pub const SUPPORTED_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

/// Norm to which constrained embeddings and unembeddings are held.
pub const CONSTRAINED_NORM: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormConstraint {
    None,
    Emb20,
    Unemb20,
    Both20,
}

impl NormConstraint {
    pub fn embeddings(self) -> bool {
        matches!(self, Self::Emb20 | Self::Both20)
    }

    pub fn unembeddings(self) -> bool {
        matches!(self, Self::Unemb20 | Self::Both20)
    }
}

/// How the unembedding matrix is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum UnembeddingMode {
    /// Free `c × M` matrix, initialized `N(0, 1)` and trained.
    Learned,
    /// Frozen points on a circle: label `order[pos]` sits at angle `2π·pos/c`.
    Fixed { order: Vec<usize>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub depth: usize,
    pub dim: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub norm_constraint: NormConstraint,
    pub unembedding: UnembeddingMode,
    /// Leading fraction of the dataset used for training.
    pub train_fraction: f64,
}

impl TrainConfig {
    pub fn new(width: usize, seed: u64) -> Self {
        Self {
            width,
            depth: 3,
            dim: 2,
            batch: 128,
            steps: 15_000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            leaky_slope: 0.01,
            seed,
            norm_constraint: NormConstraint::None,
            unembedding: UnembeddingMode::Learned,
            train_fraction: 0.8,
        }
    }

    /// Same as [`TrainConfig::new`] with 3000 steps.
    pub fn ci(width: usize, seed: u64) -> Self {
        Self { steps: 3000, ..Self::new(width, seed) }
    }

    pub fn validate(&self, c: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !SUPPORTED_WIDTHS.contains(&self.width) {
            return bad(format!("width {} not in {:?}", self.width, SUPPORTED_WIDTHS));
        }
        if self.steps == 0 || self.batch == 0 || self.depth == 0 || self.dim == 0 {
            return bad("steps, batch, depth and dim must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !self.leaky_slope.is_finite() {
            return bad("lr and leaky_slope must be finite, lr nonnegative".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        if let UnembeddingMode::Fixed { order, radius } = &self.unembedding {
            let mut seen = vec![false; c];
            if order.len() != c || order.iter().any(|&l| l >= c || std::mem::replace(&mut seen[l], true)) {
                return bad(format!("fixed order must be a permutation of 0..{c}"));
            }
            if self.dim != 2 || !(*radius > 0.0) {
                return bad("fixed unembeddings need dim 2 and a positive radius".into());
            }
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![2];
        s.extend(std::iter::repeat_n(self.width, self.depth));
        s.push(self.dim);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub c: usize,
    pub classifier: Classifier,
    /// Batch loss at every step.
    pub loss_curve: Vec<f64>,
    /// Full training-split loss before the first and after the last step.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Accuracy on the held-out split.
    pub accuracy: f64,
}

pub(crate) fn points_matrix(points: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 2, |i, j| points[i][j])
}

impl TrainedModel {
    /// Embeddings of `points` with the trained unembeddings.
    pub fn to_model_table(&self, points: &[[f64; 2]]) -> Result<ModelTable> {
        let f = self.classifier.embed(&points_matrix(points))?;
        ModelTable::new(f, self.classifier.unembeddings.clone())
    }

    pub fn retained(&self, threshold: f64) -> bool {
        self.accuracy > threshold
    }
}

fn fixed_unembeddings(order: &[usize], radius: f64) -> DMatrix<f64> {
    let c = order.len();
    let mut g = DMatrix::zeros(c, 2);
    for (pos, &lab) in order.iter().enumerate() {
        let a = 2.0 * PI * pos as f64 / c as f64;
        g[(lab, 0)] = radius * a.cos();
        g[(lab, 1)] = radius * a.sin();
    }
    g
}

fn renormalize_rows(g: &mut DMatrix<f64>, r: f64) {
    for mut row in g.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row.scale_mut(r / n);
        }
    }
}

/// Adam on mini-batches drawn with replacement from the training split.
pub fn train(config: &TrainConfig, data: &AngularDataset) -> Result<TrainedModel> {
    config.validate(data.c)?;
    let (tr, te) = data.split(config.train_fraction);
    if tr.is_empty() || te.is_empty() {
        return Err(Error::InvalidArgument("dataset too small to split".into()));
    }
    let x_train = points_matrix(&tr.points);
    let x_test = points_matrix(&te.points);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut unembeddings = match &config.unembedding {
        UnembeddingMode::Learned => DMatrix::from_fn(data.c, config.dim, |_, _| init_rng.sample(StandardNormal)),
        UnembeddingMode::Fixed { order, radius } => fixed_unembeddings(order, *radius),
    };
    let frozen = matches!(config.unembedding, UnembeddingMode::Fixed { .. });
    if config.norm_constraint.unembeddings() {
        renormalize_rows(&mut unembeddings, CONSTRAINED_NORM);
    }
    let mut model = Classifier {
        mlp: Mlp::new(&config.sizes(), config.leaky_slope, config.seed),
        unembeddings,
        embedding_norm: config.norm_constraint.embeddings().then_some(CONSTRAINED_NORM),
    };
    let diverged = |step: usize| Error::Diverged(format!("seed {} width {} at step {step}", config.seed, config.width));

    let initial_loss = model.loss(&x_train, &tr.labels).map_err(|_| diverged(0))?;
    let mut opt = Adam::new(&model, config.lr, config.beta1, config.beta2, config.eps);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut loss_curve = Vec::with_capacity(config.steps);
    let mut xb = DMatrix::zeros(config.batch, 2);
    let mut yb = vec![0; config.batch];
    for step in 0..config.steps {
        for r in 0..config.batch {
            let i = batch_rng.random_range(0..tr.len());
            xb[(r, 0)] = tr.points[i][0];
            xb[(r, 1)] = tr.points[i][1];
            yb[r] = tr.labels[i];
        }
        let (loss, mut grads) = model.loss_and_grad(&xb, &yb).map_err(|_| diverged(step))?;
        if frozen {
            grads.unembeddings.fill(0.0);
        }
        opt.step(&mut model, &grads);
        if config.norm_constraint.unembeddings() {
            renormalize_rows(&mut model.unembeddings, CONSTRAINED_NORM);
        }
        if !model.all_finite() {
            return Err(diverged(step));
        }
        loss_curve.push(loss);
    }
    let final_loss = model.loss(&x_train, &tr.labels).map_err(|_| diverged(config.steps))?;
    let accuracy = model.accuracy(&x_test, &te.labels)?;
    Ok(TrainedModel {
        config: config.clone(),
        c: data.c,
        classifier: model,
        loss_curve,
        initial_loss,
        final_loss,
        accuracy,
    })
}
