//! Drivers for ablations, relation-weight export and training-ratio sweeps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use textgsl_autodiff::Scalar;

use super::data::{subsample_count, Dataset};
use super::harness::{derived_seed, train, NoObserver, STREAM_SUBSAMPLE};
use super::{TrainConfig, TrainError};
use crate::corpus::Split;
use crate::graph::Relation;
use crate::model::{Mode, ModelConfig, TextGsl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub mode: Mode,
    pub seed: u64,
    pub test_acc: f64,
    pub best_val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub mode: Mode,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationTable {
    pub fn from_runs(runs: Vec<AblationRun>) -> Self {
        let summary = Mode::ALL
            .iter()
            .filter_map(|&mode| {
                let accs: Vec<f64> = runs.iter().filter(|r| r.mode == mode).map(|r| r.test_acc).collect();
                if accs.is_empty() {
                    return None;
                }
                let (mean, std) = mean_std(&accs);
                Some(AblationSummary {
                    mode,
                    runs: accs.len(),
                    mean,
                    std,
                })
            })
            .collect();
        Self { runs, summary }
    }

    pub fn mean(&self, mode: Mode) -> Option<f64> {
        self.summary.iter().find(|s| s.mode == mode).map(|s| s.mean)
    }

    /// `mode,runs,mean,std` followed by one `mode,seed,test_acc` block per run.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,runs,mean,std\n");
        for r in &self.summary {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.mode, r.runs, r.mean, r.std);
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("mode,seed,test_acc,best_val_acc\n");
        for r in &self.runs {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.mode, r.seed, r.test_acc, r.best_val_acc);
        }
        s
    }
}

/// Trains every mode for every seed on the same data.
pub fn run_ablation<T: Scalar>(
    data: &Dataset<T>,
    model_config: &ModelConfig,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable, TrainError> {
    let mut runs = Vec::new();
    for &mode in &Mode::ALL {
        for &seed in seeds {
            let cfg = TrainConfig {
                mode,
                seed,
                ..base.clone()
            };
            let out = train(data, model_config, &cfg, &mut NoObserver)?;
            log::info!("ablation {mode} seed {seed}: test {:?}", out.report.test_accuracy());
            runs.push(AblationRun {
                mode,
                seed,
                test_acc: out.report.test_accuracy().unwrap_or(f64::NAN),
                best_val_acc: out.report.best_val_acc,
            });
        }
    }
    Ok(AblationTable::from_runs(runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationWeight {
    pub relation: Relation,
    pub raw: f64,
    pub normalized: f64,
}

/// `|γ_ℓ| / Σ|γ|` per relation; all-zero weights normalize to equal shares.
pub fn normalize_gammas(raw: [f64; 3]) -> Vec<RelationWeight> {
    let total: f64 = raw.iter().map(|g| g.abs()).sum();
    Relation::ALL
        .iter()
        .map(|&relation| {
            let g = raw[relation.index()];
            RelationWeight {
                relation,
                raw: g,
                normalized: if total > 0.0 { g.abs() / total } else { 1.0 / 3.0 },
            }
        })
        .collect()
}

pub fn export_adaptive_params<T: Scalar>(model: &TextGsl<T>) -> Result<Vec<RelationWeight>, TrainError> {
    let g = model.gammas();
    if g.len() != 3 {
        return Err(TrainError::Config(format!(
            "mode {} has no structure branch and therefore no relation weights",
            model.mode()
        )));
    }
    Ok(normalize_gammas([g[0].1, g[1].1, g[2].1]))
}

pub fn gammas_csv(weights: &[RelationWeight]) -> String {
    let mut s = String::from("relation,raw,normalized\n");
    for w in weights {
        let _ = writeln!(s, "{},{},{}", w.relation.name(), w.raw, w.normalized);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub train_docs: usize,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub spearman: f64,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ratio,train_docs,test_acc\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{:.6}", p.ratio, p.train_docs, p.test_acc);
        }
        s
    }
}

pub const DEFAULT_RATIOS: [f64; 6] = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8];

/// Trains on seeded subsamples of the training split and evaluates each on
/// the full test split.
pub fn run_ratio_sweep<T: Scalar>(
    data: &Dataset<T>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    ratios: &[f64],
) -> Result<SweepResult, TrainError> {
    let mut points = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let sub = data.subsample_train(ratio, derived_seed(config.seed, STREAM_SUBSAMPLE))?;
        let out = train(&sub, model_config, config, &mut NoObserver)?;
        let acc = out
            .report
            .test_accuracy()
            .ok_or_else(|| TrainError::Data("ratio sweep needs a test split".into()))?;
        points.push(SweepPoint {
            ratio,
            train_docs: out.report.train_docs,
            test_acc: acc,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.test_acc).collect();
    Ok(SweepResult {
        spearman: spearman(&xs, &ys),
        points,
    })
}

/// Expected number of training documents at `ratio` before validation is carved.
pub fn sweep_size<T: Scalar>(data: &Dataset<T>, ratio: f64) -> usize {
    subsample_count(data.count(Split::Train), ratio)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; NaN when either side is constant or shorter than 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples");
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_normalization() {
        let w = normalize_gammas([1.0, 1.0, 1.0]);
        assert!(w.iter().all(|r| (r.normalized - 1.0 / 3.0).abs() < 1e-15));
        let w = normalize_gammas([2.0, -1.0, 1.0]);
        assert_eq!(
            w.iter().map(|r| r.normalized).collect::<Vec<_>>(),
            vec![0.5, 0.25, 0.25]
        );
        assert_eq!(w[1].raw, -1.0);
        assert!(normalize_gammas([0.0; 3]).iter().all(|r| r.normalized == 1.0 / 3.0));
        assert!(gammas_csv(&w).starts_with("relation,raw,normalized\nco,2,0.5\n"));
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[0.1, 0.5, 0.9]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_nan());
        // Hand-computed: ranks y = [1, 3, 2, 4] against [1, 2, 3, 4] gives 1 − 6·2/60 = 0.8.
        assert!((spearman(&[0.3, 0.4, 0.5, 0.6], &[0.70, 0.74, 0.72, 0.76]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.7, 0.8, 0.9]);
        assert!((m - 0.8).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
