//! Synthetic witness bags: a controllable stand-in for slide-level data.
//!
//! Negative bags hold `N(0, I)` instances only. A positive bag replaces a
//! uniformly drawn number of its instances with draws from `N(mu * u, I)`,
//! where `u` is a unit direction fixed by the seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::bag::Bag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub bags: usize,
    pub instances: usize,
    pub dim: usize,
    pub witness_min: usize,
    pub witness_max: usize,
    pub separation: f64,
    /// Fraction of positive bags.
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            bags: 200,
            instances: 50,
            dim: 32,
            witness_min: 5,
            witness_max: 10,
            separation: 2.5,
            positive_fraction: 0.5,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.separation.is_finite() || self.separation < 0.0 {
            return Err(Error::Domain(format!(
                "separation must be finite and non-negative, got {}",
                self.separation
            )));
        }
        if self.bags < 2 || self.instances == 0 || self.dim == 0 {
            return Err(Error::Config(
                "synthetic data needs at least 2 bags, 1 instance and 1 feature".into(),
            ));
        }
        if self.witness_min == 0
            || self.witness_min > self.witness_max
            || self.witness_max > self.instances
        {
            return Err(Error::Config(format!(
                "witness range [{}, {}] must satisfy 1 <= min <= max <= instances ({})",
                self.witness_min, self.witness_max, self.instances
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::Config("positive_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        (self.bags as f64 * self.positive_fraction).round() as usize
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub bags: Vec<Bag>,
    /// Witness instance indices per bag, sorted; empty for negatives.
    pub witnesses: Vec<Vec<usize>>,
    pub direction: Vec<f64>,
}

fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Square-ish patch grid so heatmaps have something to draw on.
fn grid_coords(n: usize) -> Vec<[i32; 2]> {
    let side = (n as f64).sqrt().ceil().max(1.0) as usize;
    (0..n)
        .map(|i| [(i % side) as i32, (i / side) as i32])
        .collect()
}

/// Generates the dataset. Labels are interleaved so manifest order is not
/// sorted by class; ids are `bag_0000`, `bag_0001`, ...
pub fn synth_witness(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let direction = unit_direction(spec.dim, &mut rng);

    let n_pos = spec.positives();
    let mut labels: Vec<bool> = (0..spec.bags).map(|i| i < n_pos).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);

    let (n, d) = (spec.instances, spec.dim);
    let mut bags = Vec::with_capacity(spec.bags);
    let mut witnesses = Vec::with_capacity(spec.bags);
    for (b, &positive) in labels.iter().enumerate() {
        let mut features: Vec<f32> = (0..n * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let mut wit = Vec::new();
        if positive {
            let k = rng.random_range(spec.witness_min..=spec.witness_max);
            wit = sample(&mut rng, n, k).into_vec();
            wit.sort_unstable();
            for &i in &wit {
                for (j, u) in direction.iter().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    features[i * d + j] = (spec.separation * u + noise) as f32;
                }
            }
        }
        let bag = Bag::new(format!("bag_{b:04}"), n, d, features, Some(positive))?
            .with_coords(grid_coords(n))?;
        bags.push(bag);
        witnesses.push(wit);
    }
    Ok(SynthDataset {
        bags,
        witnesses,
        direction,
    })
}
