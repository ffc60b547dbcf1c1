//! Selection-strategy ablation: one full train + validation run per
//! (strategy, λ, seed) cell.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aps::Strategy;
use crate::data::Bag;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::training::{fit_dataset, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub strategies: Vec<Strategy>,
    pub lambdas: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    pub fn cells(&self) -> Vec<(Strategy, usize, u64)> {
        let mut out =
            Vec::with_capacity(self.strategies.len() * self.lambdas.len() * self.seeds.len());
        for &s in &self.strategies {
            for &l in &self.lambdas {
                for &seed in &self.seeds {
                    out.push((s, l, seed));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub lambda: usize,
    pub seed: u64,
    pub auc: f64,
    pub acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_seconds: f64,
}

/// Runs every cell, at most `jobs` at a time. Rows come back in cell order
/// regardless of scheduling. Each cell uses its seed for both the split
/// and initialization.
pub fn ablation_run(
    bags: &[Bag],
    encoder: &EncoderConfig,
    base: &TrainConfig,
    plan: &AblationPlan,
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    if plan.strategies.is_empty() || plan.lambdas.is_empty() || plan.seeds.is_empty() {
        return Err(Error::Config(
            "ablation needs strategies, lambdas and seeds".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells = plan.cells();
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, lambda, seed)| {
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.selection.strategy = strategy;
                cfg.selection.lambda = lambda;
                let started = Instant::now();
                let out = fit_dataset(encoder, bags, &cfg, |_| {})?;
                let best = out.best();
                Ok(AblationRow {
                    strategy,
                    lambda,
                    seed,
                    auc: best.val_auc,
                    acc: best.val_acc,
                    best_epoch: out.best_epoch,
                    epochs_run: out.history.len(),
                    train_seconds: started.elapsed().as_secs_f64(),
                })
            })
            .collect()
    })
}

/// Mean AUC per strategy for one λ, in `strategies` order.
pub fn mean_auc(rows: &[AblationRow], strategy: Strategy, lambda: usize) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.strategy == strategy && r.lambda == lambda)
        .map(|r| r.auc)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn write_ablation(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "strategy",
        "lambda",
        "seed",
        "auc",
        "acc",
        "best_epoch",
        "epochs_run",
        "train_seconds",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.strategy.to_string(),
            r.lambda.to_string(),
            r.seed.to_string(),
            r.auc.to_string(),
            r.acc.to_string(),
            r.best_epoch.to_string(),
            r.epochs_run.to_string(),
            format!("{:.3}", r.train_seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_count_is_the_product() {
        let plan = AblationPlan {
            strategies: Strategy::ALL.to_vec(),
            lambdas: vec![64, 128, 256, 512],
            seeds: (0..5).collect(),
        };
        let cells = plan.cells();
        assert_eq!(cells.len(), 60);
        assert_eq!(cells[0], (Strategy::Aps, 64, 0));
        assert_eq!(cells[59], (Strategy::Random, 512, 4));
    }
}
