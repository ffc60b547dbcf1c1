//! End-to-end behaviour of data loading, training, evaluation and export.

use std::path::Path;

use linmil_core::checkpoint;
use linmil_core::data::{load_musk_style, synth_witness, MuskOptions, SplitSpec, SynthSpec};
use linmil_core::heatmap::instance_records;
use linmil_core::metrics::evaluate;
use linmil_core::training::{fit, fit_dataset, l2_penalty, objective, TrainConfig};
use linmil_core::{EncoderConfig, EncoderKind, InstanceScope, Model, ModelConfig, Tape};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        bags: 60,
        instances: 20,
        dim: 8,
        witness_min: 3,
        witness_max: 6,
        separation: 3.0,
        seed,
        ..SynthSpec::default()
    }
}

fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed,
        lr: 2e-3,
        min_lr: 5e-5,
        epochs: 12,
        patience: 12,
        ..TrainConfig::default()
    };
    cfg.selection.lambda = 8;
    cfg
}

#[test]
fn musk1_has_expected_shape() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/musk1.csv");
    let bags = load_musk_style(path, &MuskOptions::default()).unwrap();
    assert_eq!(bags.len(), 92);
    assert!(bags.iter().all(|b| b.dim() == 166));
    assert_eq!(bags.iter().filter(|b| b.label == Some(true)).count(), 47);
    let instances: usize = bags.iter().map(|b| b.len()).sum();
    assert_eq!(instances, 476);
}

#[test]
fn training_loss_falls_over_first_epochs() {
    let mut first = 0.0;
    let mut fifth = 0.0;
    for seed in 0..3 {
        let data = synth_witness(&small_spec(seed)).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            patience: 5,
            ..small_config(seed)
        };
        let out = fit_dataset(
            &EncoderConfig::new(EncoderKind::Gru),
            &data.bags,
            &cfg,
            |_| {},
        )
        .unwrap();
        assert_eq!(out.history.len(), 5);
        first += out.history[0].train_loss;
        fifth += out.history[4].train_loss;
    }
    assert!(
        fifth < first,
        "mean loss went from {} to {}",
        first / 3.0,
        fifth / 3.0
    );
}

#[test]
fn best_epoch_is_history_argmax_and_eval_reproduces_it() {
    let data = synth_witness(&small_spec(1)).unwrap();
    let cfg = small_config(1);
    let split = SplitSpec::from_bags(&data.bags, cfg.split_ratio, cfg.seed).unwrap();
    let (train, val) = split.partition(&data.bags).unwrap();
    let mut seen = Vec::new();
    let out = fit(
        &EncoderConfig::new(EncoderKind::Lstm),
        &train,
        &val,
        &cfg,
        |r| seen.push(r.epoch),
    )
    .unwrap();
    assert_eq!(seen, (0..out.history.len()).collect::<Vec<_>>());

    // highest AUC, then lowest loss, then earliest
    let mut want = 0;
    for (i, r) in out.history.iter().enumerate() {
        let b = &out.history[want];
        if r.val_auc > b.val_auc || (r.val_auc == b.val_auc && r.val_loss < b.val_loss) {
            want = i;
        }
    }
    assert_eq!(out.best_epoch, want);

    let report = evaluate(
        &out.model,
        &val,
        &cfg.selection,
        cfg.instance_scope,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(report.auc, out.best().val_auc);
    assert_eq!(report.acc, out.best().val_acc);
    assert_eq!(report.loss, out.best().val_loss);

    // and the same after a checkpoint round trip
    let bytes = checkpoint::to_bytes(&out.model, cfg.seed, Some(&cfg)).unwrap();
    let (back, header) = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(header.train.as_ref(), Some(&cfg));
    let again = evaluate(&back, &val, &cfg.selection, cfg.instance_scope, cfg.seed).unwrap();
    assert_eq!(again.auc, report.auc);
}

/// Replays the stopping rule over a history and returns the expected number
/// of epochs.
fn replay_stop(history: &[linmil_core::EpochRecord], patience: usize, epochs: usize) -> usize {
    let (mut auc, mut loss, mut since) = (f64::NEG_INFINITY, f64::INFINITY, 0);
    for (i, r) in history.iter().enumerate() {
        if r.val_auc > auc || (r.val_auc == auc && r.val_loss < loss) {
            (auc, loss, since) = (r.val_auc, r.val_loss, 0);
        } else {
            since += 1;
            if since >= patience {
                return i + 1;
            }
        }
    }
    epochs
}

#[test]
fn patience_rule_decides_run_length() {
    // noisy, hard task so validation stalls
    let spec = SynthSpec {
        separation: 0.5,
        ..small_spec(2)
    };
    let data = synth_witness(&spec).unwrap();
    let mut stopped = 0;
    for seed in 0..4 {
        let cfg = TrainConfig {
            epochs: 30,
            patience: 2,
            ..small_config(seed)
        };
        let out = fit_dataset(
            &EncoderConfig::new(EncoderKind::Gru),
            &data.bags,
            &cfg,
            |_| {},
        )
        .unwrap();
        let want = replay_stop(&out.history, cfg.patience, cfg.epochs);
        assert_eq!(out.history.len(), want, "seed {seed}");
        assert_eq!(out.stopped_early, want < cfg.epochs);
        stopped += usize::from(out.stopped_early);
    }
    assert!(stopped > 0, "no run stopped early");
}

#[test]
fn trained_model_scores_witnesses_above_background() {
    let data = synth_witness(&small_spec(3)).unwrap();
    let cfg = small_config(3);
    let out = fit_dataset(
        &EncoderConfig::new(EncoderKind::Gru),
        &data.bags,
        &cfg,
        |_| {},
    )
    .unwrap();
    let (mut wit, mut bg) = (Vec::new(), Vec::new());
    for (bag, witnesses) in data.bags.iter().zip(&data.witnesses) {
        if witnesses.is_empty() {
            continue;
        }
        for r in instance_records(&out.model, bag, &cfg.selection, cfg.seed).unwrap() {
            if witnesses.binary_search(&r.index).is_ok() {
                wit.push(r.p);
            } else {
                bg.push(r.p);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&wit) > mean(&bg),
        "witness {} vs background {}",
        mean(&wit),
        mean(&bg)
    );
}

#[test]
fn penalty_matches_a_direct_sum_over_trainable_tensors() {
    let model = Model::new(
        ModelConfig::new(EncoderConfig::new(EncoderKind::Mamba), 6),
        4,
    )
    .unwrap();
    let mut direct = 0.0;
    let mut buffers = 0;
    for (_, p) in model.params().iter() {
        if p.trainable {
            direct += p.value.data().iter().map(|v| v * v).sum::<f64>();
        } else {
            buffers += 1;
        }
    }
    assert_eq!(buffers, 2);
    for lambda in [0.0, 1e-4, 0.5] {
        let got = l2_penalty(model.params(), lambda);
        assert!(
            (got - lambda * direct).abs() <= 1e-12 * direct.max(1.0),
            "{lambda}"
        );
    }

    // the taped objective carries the same term
    let bag = synth_witness(&SynthSpec {
        dim: 6,
        instances: 7,
        witness_min: 1,
        witness_max: 2,
        ..small_spec(5)
    })
    .unwrap()
    .bags
    .remove(0);
    let sel = linmil_core::SelectionConfig::default();
    let totals: Vec<f64> = [0.0, 0.5]
        .iter()
        .map(|&lambda| {
            let mut tape = Tape::new();
            let fwd = model
                .forward(&mut tape, &bag.matrix(), &sel, 0, None)
                .unwrap();
            let (root, parts) = objective(
                &mut tape,
                model.params(),
                &fwd,
                bag.target().unwrap(),
                lambda,
                InstanceScope::All,
            )
            .unwrap();
            assert!((tape.scalar(root) - parts.total()).abs() < 1e-9);
            tape.scalar(root)
        })
        .collect();
    assert!((totals[1] - totals[0] - 0.5 * direct).abs() < 1e-9 * direct.max(1.0));
}
