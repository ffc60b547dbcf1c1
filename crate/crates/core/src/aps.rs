//! Adaptive patch selection.
//!
//! Every instance is scored by relevance (max class probability), diversity
//! (one minus its mean cosine similarity to the rest of the bag) and
//! uncertainty (prediction entropy). The fixed-weight sum of the three ranks
//! the instances; the top `lambda` are kept for the sequence encoder.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity_matrix, sigmoid, softmax, Matrix};

pub const DEFAULT_LAMBDA: usize = 512;

/// Added inside the logarithm of the entropy term.
pub const ENTROPY_EPS: f64 = 1e-8;

/// Per-instance classifier outputs, `N × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLogits(Matrix);

impl InstanceLogits {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Domain(
                "instance logits need at least one class".into(),
            ));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("non-finite instance logits".into()));
        }
        Ok(InstanceLogits(values))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    /// Class probabilities of instance `i`: a single sigmoid for one class,
    /// softmax otherwise.
    pub fn probabilities(&self, i: usize) -> Vec<f64> {
        let row = self.0.row(i);
        if row.len() == 1 {
            vec![sigmoid(row[0])]
        } else {
            softmax(row).expect("non-empty row")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApsWeights {
    pub relevance: f64,
    pub diversity: f64,
    pub uncertainty: f64,
}

impl Default for ApsWeights {
    fn default() -> Self {
        ApsWeights {
            relevance: 1.0,
            diversity: 0.3,
            uncertainty: 0.3,
        }
    }
}

impl ApsWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.relevance, self.diversity, self.uncertainty]
            .iter()
            .all(|w| w.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config("APS weights must be finite".into()))
        }
    }
}

/// How the encoder's input instances are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Rank by the fused relevance/diversity/uncertainty score.
    #[default]
    Aps,
    /// Rank by relevance alone.
    #[serde(rename = "topk", alias = "top_k")]
    TopK,
    /// Seeded uniform subset.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Aps, Strategy::TopK, Strategy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Aps => "aps",
            Strategy::TopK => "topk",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aps" => Ok(Strategy::Aps),
            "topk" | "top_k" | "topk_relevance" => Ok(Strategy::TopK),
            "random" | "random_k" => Ok(Strategy::Random),
            other => Err(Error::Config(format!(
                "unknown selection strategy {other:?} (expected aps, topk or random)"
            ))),
        }
    }
}

/// Selection settings applied on every forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub lambda: usize,
    pub weights: ApsWeights,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: Strategy::Aps,
            lambda: DEFAULT_LAMBDA,
            weights: ApsWeights::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::Config("lambda must be at least 1".into()));
        }
        self.weights.validate()
    }
}

/// Per-bag seed for random selection: stable across epochs and between
/// training and evaluation.
pub fn bag_seed(seed: u64, bag_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bag_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.rotate_left(32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApsResult {
    pub s_rel: Vec<f64>,
    pub s_div: Vec<f64>,
    pub s_unc: Vec<f64>,
    pub s_final: Vec<f64>,
    /// Chosen instances, best first.
    pub selected: Vec<usize>,
    /// Softmax of `s_final` over the whole bag.
    pub attention: Vec<f64>,
}

impl ApsResult {
    /// Selected instances in original bag order, the order fed to the
    /// encoder.
    pub fn sequence_order(&self) -> Vec<usize> {
        let mut order = self.selected.clone();
        order.sort_unstable();
        order
    }

    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.s_final.len()];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

pub fn relevance_scores(logits: &InstanceLogits) -> Vec<f64> {
    (0..logits.len())
        .map(|i| {
            logits
                .probabilities(i)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `1 - mean_{j≠i} cos(f_i, f_j)`. A single-instance bag has nothing to be
/// similar to and scores 1.
pub fn diversity_scores(features: &Matrix) -> Vec<f64> {
    let n = features.rows();
    if n < 2 {
        return vec![1.0; n];
    }
    let sim = cosine_similarity_matrix(features);
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let off_diag: f64 = sim
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s)
                .sum();
            1.0 - off_diag / denom
        })
        .collect()
}

/// Entropy `-Σ p log(p + ε)`. A single logit is read as the two-class
/// distribution `{σ(c), 1 - σ(c)}`.
pub fn uncertainty_scores(logits: &InstanceLogits) -> Vec<f64> {
    (0..logits.len())
        .map(|i| {
            let mut probs = logits.probabilities(i);
            if probs.len() == 1 {
                probs.push(1.0 - probs[0]);
            }
            -probs
                .iter()
                .map(|&p| p * (p + ENTROPY_EPS).ln())
                .sum::<f64>()
        })
        .collect()
}

/// Indices of the `k` largest scores, best first; equal scores go to the
/// smaller index.
pub fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

fn check_inputs(features: &Matrix, logits: &InstanceLogits, lambda: usize) -> Result<()> {
    if lambda == 0 {
        return Err(Error::Domain("lambda must be at least 1".into()));
    }
    if features.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    if features.rows() != logits.len() {
        return Err(Error::shape(
            "aps select",
            features.shape(),
            logits.values().shape(),
        ));
    }
    Ok(())
}

fn scores(features: &Matrix, logits: &InstanceLogits, weights: &ApsWeights) -> Result<ApsResult> {
    let s_rel = relevance_scores(logits);
    let s_div = diversity_scores(features);
    let s_unc = uncertainty_scores(logits);
    let s_final: Vec<f64> = (0..s_rel.len())
        .map(|i| {
            weights.relevance * s_rel[i]
                + weights.diversity * s_div[i]
                + weights.uncertainty * s_unc[i]
        })
        .collect();
    let attention = softmax(&s_final)?;
    Ok(ApsResult {
        s_rel,
        s_div,
        s_unc,
        s_final,
        selected: Vec::new(),
        attention,
    })
}

/// Scores every instance and keeps the `min(lambda, N)` best by fused score.
pub fn select(
    features: &Matrix,
    logits: &InstanceLogits,
    weights: &ApsWeights,
    lambda: usize,
) -> Result<ApsResult> {
    select_with(Strategy::Aps, features, logits, weights, lambda, 0)
}

/// Scores every instance (so exports always carry all criteria) and picks
/// the subset according to `strategy`. `seed` only affects
/// [`Strategy::Random`].
pub fn select_with(
    strategy: Strategy,
    features: &Matrix,
    logits: &InstanceLogits,
    weights: &ApsWeights,
    lambda: usize,
    seed: u64,
) -> Result<ApsResult> {
    check_inputs(features, logits, lambda)?;
    let mut result = scores(features, logits, weights)?;
    let n = features.rows();
    let k = lambda.min(n);
    result.selected = match strategy {
        Strategy::Aps => top_indices(&result.s_final, k),
        Strategy::TopK => top_indices(&result.s_rel, k),
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, n, k).into_vec()
        }
    };
    Ok(result)
}
