use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{gen_angular_data, AngularDataset};
use super::train::{points_matrix, train, TrainConfig, TrainedModel, UnembeddingMode};
use crate::bound_lab::{interior_checks, max_d_svd, verify_bound, BoundCertificate, InteriorCheck};
use crate::metrics_distributional::{d_kl, d_llv, select_pivots, select_pivots_group, PivotSearch};
use crate::metrics_representational::{m_cca, SampleMatrix};
use crate::model_core::{cond_log_probs, CondLogProb, ModelPair, ModelTable};
use crate::{moments, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepConfig {
    pub c: usize,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    /// Template for every run; width and seed are overwritten.
    pub train: TrainConfig,
    pub n_points: usize,
    pub data_sigma: f64,
    pub data_seed: u64,
    /// Held-out points used as the shared evaluation grid.
    pub eval_points: usize,
    pub retention_accuracy: f64,
    pub min_retained: usize,
    pub search: PivotSearch,
}

impl WidthSweepConfig {
    /// All five widths, 20 seeds, 15000 steps.
    pub fn full(c: usize) -> Self {
        Self {
            c,
            widths: super::SUPPORTED_WIDTHS.to_vec(),
            seeds: (0..20).collect(),
            lambda: crate::metrics_distributional::DEFAULT_LAMBDA,
            train: TrainConfig::new(16, 0),
            n_points: 20_000,
            data_sigma: 3.0,
            data_seed: 0,
            eval_points: 2000,
            retention_accuracy: 0.9,
            min_retained: 5,
            search: PivotSearch::default(),
        }
    }

    /// Widths 16 and 64, 5 seeds, 3000 steps.
    pub fn ci(c: usize) -> Self {
        Self { widths: vec![16, 64], seeds: (0..5).collect(), train: TrainConfig::ci(16, 0), ..Self::full(c) }
    }
}

/// Aggregate over all pairs of retained models at one width. Standard
/// deviations are `None` with fewer than two pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub c: usize,
    pub width: usize,
    pub n_retained: usize,
    pub mean_d_llv: Option<f64>,
    pub std_d_llv: Option<f64>,
    pub mean_max_d_svd: Option<f64>,
    pub std_max_d_svd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub width: usize,
    pub seed_a: u64,
    pub seed_b: u64,
    pub d_llv: f64,
    pub max_d_svd: f64,
    pub certificate: BoundCertificate,
    pub interior: Vec<InteriorCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub width: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSweepResult {
    pub rows: Vec<WidthRow>,
    pub pairs: Vec<PairRecord>,
    pub runs: Vec<RunSummary>,
    pub diagnostics: Vec<String>,
}

fn mean_and_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    match v.len() {
        0 => (None, None),
        1 => (Some(v[0]), None),
        _ => {
            let (m, s) = moments::mean_std(v);
            (Some(m), Some(s))
        }
    }
}

fn grid_tables(models: &[&TrainedModel], grid: &[[f64; 2]]) -> Result<(Vec<ModelTable>, Vec<CondLogProb>)> {
    let w = moments::uniform(grid.len());
    let tables = models.iter().map(|m| m.to_model_table(grid)).collect::<Result<Vec<_>>>()?;
    let dists = tables.iter().map(|t| cond_log_probs(t, &w)).collect::<Result<Vec<_>>>()?;
    Ok((tables, dists))
}

/// Trains every `(width, seed)`, keeps models above the accuracy threshold and
/// compares all retained pairs of each width on shared pivots.
pub fn width_sweep(cfg: &WidthSweepConfig) -> Result<WidthSweepResult> {
    if cfg.widths.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("empty width or seed list".into()));
    }
    let data = gen_angular_data(cfg.c, cfg.n_points, cfg.data_sigma, cfg.data_seed)?;
    let (_, test) = data.split(cfg.train.train_fraction);
    let grid = test.head(cfg.eval_points).points;
    let jobs: Vec<(usize, u64)> = cfg.widths.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    for &(w, s) in &jobs {
        TrainConfig { width: w, seed: s, ..cfg.train.clone() }.validate(cfg.c)?;
    }
    let trained: Vec<Result<TrainedModel>> =
        jobs.par_iter().map(|&(w, s)| train(&TrainConfig { width: w, seed: s, ..cfg.train.clone() }, &data)).collect();

    let mut out = WidthSweepResult { rows: vec![], pairs: vec![], runs: vec![], diagnostics: vec![] };
    for &width in &cfg.widths {
        let mut kept: Vec<&TrainedModel> = Vec::new();
        for (r, &(w, s)) in trained.iter().zip(&jobs) {
            if w != width {
                continue;
            }
            match r {
                Ok(m) => {
                    let retained = m.retained(cfg.retention_accuracy);
                    out.runs.push(RunSummary {
                        width,
                        seed: s,
                        accuracy: m.accuracy,
                        final_loss: m.final_loss,
                        retained,
                    });
                    if retained {
                        kept.push(m);
                    }
                }
                Err(e) => out.diagnostics.push(format!("width {width} seed {s}: {e}")),
            }
        }
        if kept.len() < cfg.min_retained {
            out.diagnostics.push(format!(
                "width {width} skipped: {} retained models, need {}",
                kept.len(),
                cfg.min_retained
            ));
            continue;
        }
        let pairs = compare_group(&kept, &grid, cfg)?;
        let llv: Vec<f64> = pairs.iter().map(|p| p.d_llv).collect();
        let svd: Vec<f64> = pairs.iter().map(|p| p.max_d_svd).collect();
        let (mean_d_llv, std_d_llv) = mean_and_std(&llv);
        let (mean_max_d_svd, std_max_d_svd) = mean_and_std(&svd);
        out.rows.push(WidthRow {
            c: cfg.c,
            width,
            n_retained: kept.len(),
            mean_d_llv,
            std_d_llv,
            mean_max_d_svd,
            std_max_d_svd,
        });
        out.pairs.extend(pairs);
    }
    Ok(out)
}

fn compare_group(kept: &[&TrainedModel], grid: &[[f64; 2]], cfg: &WidthSweepConfig) -> Result<Vec<PairRecord>> {
    if kept.len() < 2 {
        return Ok(vec![]);
    }
    let (tables, dists) = grid_tables(kept, grid)?;
    let dim = tables[0].dim();
    let drefs: Vec<&CondLogProb> = dists.iter().collect();
    let trefs: Vec<&ModelTable> = tables.iter().collect();
    let pivots = select_pivots_group(&drefs, dim, Some(&trefs), &cfg.search)?;
    let idx: Vec<(usize, usize)> = (0..kept.len()).flat_map(|i| (i + 1..kept.len()).map(move |j| (i, j))).collect();
    let weights = moments::uniform(grid.len());
    idx.par_iter()
        .map(|&(i, j)| {
            let pair = ModelPair::new(tables[i].clone(), tables[j].clone(), &weights)?;
            let report = d_llv(&pair.p, &pair.q, &pivots, cfg.lambda)?;
            let svd = max_d_svd(&pair, &pivots)?;
            let certificate = verify_bound(&pair, &pivots, cfg.lambda)?;
            Ok(PairRecord {
                width: kept[i].config.width,
                seed_a: kept[i].config.seed,
                seed_b: kept[j].config.seed,
                d_llv: report.value,
                max_d_svd: svd.value,
                certificate,
                interior: interior_checks(&pair, &pivots),
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("need two equal-length samples of size ≥ 2".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let w = moments::uniform(x.len());
    let rho = moments::corr(&rank(x), &rank(y), w.as_slice());
    if rho.is_finite() {
        Ok(rho)
    } else {
        Err(Error::ZeroVariance(0))
    }
}

/// Two classifiers trained with frozen circular unembeddings whose label
/// orders differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedPairConfig {
    pub c: usize,
    pub order_a: Vec<usize>,
    pub order_b: Vec<usize>,
    pub radius: f64,
    pub train: TrainConfig,
    pub n_points: usize,
    pub data_sigma: f64,
    pub data_seed: u64,
    pub eval_points: usize,
    pub lambda: f64,
    pub search: PivotSearch,
}

impl PermutedPairConfig {
    /// Four labels, natural order against `(0, 2, 1, 3)`, radius 3, width 64.
    pub fn ci() -> Self {
        Self {
            c: 4,
            order_a: vec![0, 1, 2, 3],
            order_b: vec![0, 2, 1, 3],
            radius: 3.0,
            train: TrainConfig::ci(64, 0),
            n_points: 20_000,
            data_sigma: 3.0,
            data_seed: 0,
            eval_points: 2000,
            lambda: crate::metrics_distributional::DEFAULT_LAMBDA,
            search: PivotSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutedPairReport {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub m_cca: f64,
    pub d_llv: f64,
    pub d_kl: f64,
}

pub fn permuted_pair(cfg: &PermutedPairConfig) -> Result<PermutedPairReport> {
    let data: AngularDataset = gen_angular_data(cfg.c, cfg.n_points, cfg.data_sigma, cfg.data_seed)?;
    let mk = |order: &[usize]| TrainConfig {
        unembedding: UnembeddingMode::Fixed { order: order.to_vec(), radius: cfg.radius },
        ..cfg.train.clone()
    };
    let (a, b) = rayon::join(|| train(&mk(&cfg.order_a), &data), || train(&mk(&cfg.order_b), &data));
    let (a, b) = (a?, b?);
    let (_, test) = data.split(cfg.train.train_fraction);
    let grid = test.head(cfg.eval_points).points;
    let (tables, dists) = grid_tables(&[&a, &b], &grid)?;
    let w: DVector<f64> = moments::uniform(grid.len());
    let za = SampleMatrix::new(a.classifier.embed(&points_matrix(&grid))?, w.clone())?;
    let zb = SampleMatrix::new(b.classifier.embed(&points_matrix(&grid))?, w)?;
    let pivots = select_pivots(&dists[0], &dists[1], tables[0].dim(), Some((&tables[0], &tables[1])), &cfg.search)?;
    Ok(PermutedPairReport {
        accuracy_a: a.accuracy,
        accuracy_b: b.accuracy,
        loss_a: a.final_loss,
        loss_b: b.final_loss,
        m_cca: m_cca(&za, &zb)?,
        d_llv: d_llv(&dists[0], &dists[1], &pivots, cfg.lambda)?.value,
        d_kl: d_kl(&dists[0], &dists[1])?,
    })
}
