use std::path::Path;

use serde::Serialize;

use super::flops::count_flops;
use super::timing::{time_runs, TimingStats};
use crate::aps::{bag_seed, SelectionConfig};
use crate::data::Bag;
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::training::{score_bags, summarize, BagScore, InstanceScope};

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub auc: f64,
    pub acc: f64,
    pub loss: f64,
    pub n_bags: usize,
    pub bags: Vec<BagScore>,
    /// Mean encoder operation count per bag.
    pub encoder_flops_per_bag: f64,
    pub timing: Option<TimingStats>,
}

/// Scores `bags` and summarizes. `seed` feeds per-bag random selection.
pub fn evaluate(
    model: &Model,
    bags: &[Bag],
    selection: &SelectionConfig,
    scope: InstanceScope,
    seed: u64,
) -> Result<EvalReport> {
    if bags.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    if let Some(b) = bags.iter().find(|b| b.dim() != model.config().dim) {
        return Err(Error::Config(format!(
            "bag {} has dimension {} but the model expects {}",
            b.id,
            b.dim(),
            model.config().dim
        )));
    }
    let scores = score_bags(model, bags, selection, scope, seed)?;
    let (auc, acc, loss) = summarize(&scores)?;
    let flops: f64 = bags
        .iter()
        .map(|b| count_flops(model.config(), selection.lambda, b.len()).encoder as f64)
        .sum();
    Ok(EvalReport {
        auc,
        acc,
        loss,
        n_bags: bags.len(),
        bags: scores,
        encoder_flops_per_bag: flops / bags.len() as f64,
        timing: None,
    })
}

/// Single-bag inference latency, cycling through `bags` sequentially.
pub fn bench_inference(
    model: &Model,
    bags: &[Bag],
    selection: &SelectionConfig,
    seed: u64,
    warmup: usize,
    runs: usize,
) -> Result<TimingStats> {
    if bags.is_empty() {
        return Err(Error::Config("nothing to benchmark".into()));
    }
    let inputs: Vec<_> = bags
        .iter()
        .map(|b| (b.matrix(), bag_seed(seed, &b.id)))
        .collect();
    time_runs(warmup, runs, |i| {
        let (x, s) = &inputs[i % inputs.len()];
        model.predict(x, selection, *s).map(|_| ())
    })
}

pub fn write_bag_scores(path: impl AsRef<Path>, scores: &[BagScore]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["id", "label", "logit", "probability"])
        .map_err(csv_err)?;
    for s in scores {
        let label = s.label.map_or(String::new(), |l| u8::from(l).to_string());
        w.write_record([
            s.id.clone(),
            label,
            s.logit.to_string(),
            s.probability.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
