use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bag::Bag;
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

pub const DEFAULT_RATIO: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 42;
pub const SPLIT_FILE: &str = "split.json";

/// Train/validation assignment. Both id lists keep manifest order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratio: f64,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl SplitSpec {
    /// Stratified split: each class contributes `round(n_c * ratio)` bags to
    /// training, chosen by a seeded shuffle.
    pub fn stratified<'a>(
        items: impl IntoIterator<Item = (&'a str, bool)>,
        ratio: f64,
        seed: u64,
    ) -> Result<SplitSpec> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio must lie in (0, 1), got {ratio}"
            )));
        }
        let items: Vec<(&str, bool)> = items.into_iter().collect();
        let mut seen = HashSet::new();
        for (id, _) in &items {
            if !seen.insert(*id) {
                return Err(Error::Config(format!("duplicate bag id {id}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_train = vec![false; items.len()];
        for class in [false, true] {
            let mut members: Vec<usize> =
                (0..items.len()).filter(|&i| items[i].1 == class).collect();
            let n = members.len();
            let n_train = (n as f64 * ratio).round() as usize;
            if n < 2 || n_train == 0 || n_train == n {
                return Err(Error::Config(format!(
                    "class {} has {n} bags; ratio {ratio} leaves an empty train or validation side",
                    u8::from(class)
                )));
            }
            members.shuffle(&mut rng);
            for &i in &members[..n_train] {
                in_train[i] = true;
            }
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (i, (id, _)) in items.iter().enumerate() {
            if in_train[i] {
                train.push(id.to_string());
            } else {
                val.push(id.to_string());
            }
        }
        Ok(SplitSpec {
            seed,
            ratio,
            train,
            val,
        })
    }

    pub fn from_manifest(m: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitSpec> {
        SplitSpec::stratified(
            m.bags.iter().map(|b| (b.id.as_str(), b.label == 1)),
            ratio,
            seed,
        )
    }

    pub fn from_bags(bags: &[Bag], ratio: f64, seed: u64) -> Result<SplitSpec> {
        let labels = bags.iter().map(Bag::target).collect::<Result<Vec<_>>>()?;
        SplitSpec::stratified(
            bags.iter()
                .zip(labels)
                .map(|(b, y)| (b.id.as_str(), y > 0.5)),
            ratio,
            seed,
        )
    }

    /// Splits `bags` into (train, val) following the assignment.
    pub fn partition(&self, bags: &[Bag]) -> Result<(Vec<Bag>, Vec<Bag>)> {
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        let val: HashSet<&str> = self.val.iter().map(String::as_str).collect();
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for bag in bags {
            if train.contains(bag.id.as_str()) {
                tr.push(bag.clone());
            } else if val.contains(bag.id.as_str()) {
                va.push(bag.clone());
            } else {
                return Err(Error::Config(format!("bag {} is not in the split", bag.id)));
            }
        }
        if tr.len() != self.train.len() || va.len() != self.val.len() {
            return Err(Error::Config(
                "split references bags missing from the dataset".into(),
            ));
        }
        Ok((tr, va))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SplitSpec> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labelled(pos: usize, neg: usize) -> Vec<(String, bool)> {
        let mut v: Vec<(String, bool)> = (0..pos).map(|i| (format!("p{i}"), true)).collect();
        v.extend((0..neg).map(|i| (format!("n{i}"), false)));
        v
    }

    fn split(v: &[(String, bool)], ratio: f64, seed: u64) -> Result<SplitSpec> {
        SplitSpec::stratified(v.iter().map(|(s, y)| (s.as_str(), *y)), ratio, seed)
    }

    #[test]
    fn exact_stratification_on_ten_bags() {
        let v = labelled(5, 5);
        let s = split(&v, 0.8, 42).unwrap();
        let pos_train = s.train.iter().filter(|id| id.starts_with('p')).count();
        assert_eq!(pos_train, 4);
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 2);
        assert_eq!(split(&v, 0.8, 42).unwrap(), s);
    }

    #[test]
    fn degenerate_ratios_are_rejected() {
        let v = labelled(5, 5);
        assert!(matches!(split(&v, 0.999, 42), Err(Error::Config(_))));
        assert!(split(&v, 0.0, 42).is_err());
        assert!(split(&v, 1.0, 42).is_err());
        assert!(matches!(
            split(&labelled(1, 5), 0.5, 42),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(&labelled(6, 9), 0.8, 7).unwrap();
        let path = dir.path().join(SPLIT_FILE);
        s.save(&path).unwrap();
        assert_eq!(SplitSpec::load(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn stratification_within_one_bag(pos in 2usize..40, neg in 2usize..40, ratio in 0.3f64..0.9, seed in any::<u64>()) {
            let v = labelled(pos, neg);
            if let Ok(s) = split(&v, ratio, seed) {
                let pt = s.train.iter().filter(|id| id.starts_with('p')).count() as f64;
                let nt = s.train.iter().filter(|id| id.starts_with('n')).count() as f64;
                prop_assert!((pt - pos as f64 * ratio).abs() <= 1.0);
                prop_assert!((nt - neg as f64 * ratio).abs() <= 1.0);
                prop_assert_eq!(s.train.len() + s.val.len(), pos + neg);
                prop_assert_eq!(split(&v, ratio, seed).unwrap(), s);
            }
        }
    }
}
