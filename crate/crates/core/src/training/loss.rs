//! Bag-level plus max-instance BCE objective with an explicit L2 penalty.

use serde::{Deserialize, Serialize};

use crate::encoders::Forward;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{bce_with_logits, Tape, Var};

/// Which instances the max-instance term ranges over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceScope {
    /// Every instance of the bag.
    #[default]
    All,
    /// Only the instances chosen for the encoder.
    Selected,
}

impl std::str::FromStr for InstanceScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(InstanceScope::All),
            "selected" => Ok(InstanceScope::Selected),
            other => Err(Error::Config(format!(
                "unknown instance scope {other:?} (expected all or selected)"
            ))),
        }
    }
}

/// Loss components for one bag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub bag: f64,
    pub instance: f64,
    pub l2: f64,
}

impl LossParts {
    /// The data term, without the penalty.
    pub fn main(&self) -> f64 {
        0.5 * self.bag + 0.5 * self.instance
    }

    pub fn total(&self) -> f64 {
        self.main() + self.l2
    }
}

pub fn check_label(label: f64) -> Result<()> {
    if label == 0.0 || label == 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("label must be 0 or 1, got {label}")))
    }
}

/// Index of the first maximum. `candidates` must be nonempty.
pub fn first_argmax(values: &[f64], candidates: impl IntoIterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for i in candidates {
        match best {
            Some(b) if values[i] <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best.expect("nonempty candidates")
}

/// `λ · Σ θ²` over every trainable tensor.
pub fn l2_penalty(store: &ParamStore, lambda: f64) -> f64 {
    lambda
        * store
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.sum_squares())
            .sum::<f64>()
}

/// Direct evaluation of the objective from plain numbers.
pub fn loss_value(
    bag_logit: f64,
    max_instance_logit: f64,
    label: f64,
    store: &ParamStore,
    l2_lambda: f64,
) -> Result<LossParts> {
    check_label(label)?;
    Ok(LossParts {
        bag: bce_with_logits(bag_logit, label),
        instance: bce_with_logits(max_instance_logit, label),
        l2: l2_penalty(store, l2_lambda),
    })
}

/// Records the objective on `tape` for a forward pass of a binary model and
/// returns the root together with its components.
pub fn objective(
    tape: &mut Tape,
    store: &ParamStore,
    fwd: &Forward,
    label: f64,
    l2_lambda: f64,
    scope: InstanceScope,
) -> Result<(Var, LossParts)> {
    check_label(label)?;
    if tape.value(fwd.bag_logits).cols() != 1 {
        return Err(Error::Config(
            "the training objective is defined for single-logit binary models".into(),
        ));
    }
    let inst = tape.value(fwd.instance_logits).data().to_vec();
    let arg = match scope {
        InstanceScope::All => first_argmax(&inst, 0..inst.len()),
        InstanceScope::Selected => first_argmax(&inst, fwd.order.iter().copied()),
    };
    let max_inst = tape.pick(fwd.instance_logits, arg, 0)?;
    let bag_term = tape.bce_with_logits(fwd.bag_logits, label)?;
    let inst_term = tape.bce_with_logits(max_inst, label)?;
    let data = tape.add(bag_term, inst_term)?;
    let mut root = tape.scale(data, 0.5);

    let mut penalty = None;
    if l2_lambda != 0.0 {
        for id in store.trainable_ids() {
            let v = tape.param(store, id);
            let sq = tape.sum_squares(v);
            penalty = Some(match penalty {
                None => sq,
                Some(acc) => tape.add(acc, sq)?,
            });
        }
    }
    if let Some(p) = penalty {
        let scaled = tape.scale(p, l2_lambda);
        root = tape.add(root, scaled)?;
    }

    let parts = LossParts {
        bag: tape.scalar(bag_term),
        instance: tape.scalar(inst_term),
        l2: penalty.map_or(0.0, |p| l2_lambda * tape.scalar(p)),
    };
    Ok((root, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Matrix::row_vector(values.to_vec()));
        s.add_buffer("frozen", Matrix::filled(1, 3, 100.0));
        s
    }

    #[test]
    fn balanced_prediction_costs_ln_two() {
        let parts = loss_value(0.0, 0.0, 1.0, &store(&[0.0, 0.0]), 1e-4).unwrap();
        assert!((parts.total() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_prediction_is_nearly_free() {
        let parts = loss_value(50.0, 50.0, 1.0, &store(&[0.0]), 1e-4).unwrap();
        assert!(parts.total() < 1e-20);
    }

    #[test]
    fn l2_covers_trainable_tensors_only() {
        let s = store(&[1.0, -2.0]);
        assert_eq!(l2_penalty(&s, 0.5), 2.5);
    }

    #[test]
    fn non_binary_labels_are_domain_errors() {
        for y in [0.5, -1.0, 2.0, f64::NAN] {
            assert!(matches!(
                loss_value(0.0, 0.0, y, &store(&[0.0]), 0.0),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn first_argmax_prefers_lowest_index() {
        assert_eq!(first_argmax(&[1.0, 3.0, 3.0, 2.0], 0..4), 1);
        assert_eq!(first_argmax(&[1.0, 3.0, 3.0, 2.0], [3, 2, 0]), 2);
        assert_eq!(first_argmax(&[5.0, 5.0], [1, 0]), 1);
    }
}
