use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use linmil_core::aps::{SelectionConfig, DEFAULT_LAMBDA};
use linmil_core::checkpoint::{self, CheckpointHeader};
use linmil_core::data::{
    load_musk_style, read_bag, synth_witness, Bag, DatasetManifest, LabelColumn, MuskOptions,
    SplitSpec, SynthSpec, SPLIT_FILE,
};
use linmil_core::encoders::{EncoderConfig, EncoderKind, ModelConfig};
use linmil_core::heatmap::{export_heatmap, instance_records, write_records};
use linmil_core::metrics::ablation::{ablation_run, mean_auc, write_ablation, AblationPlan};
use linmil_core::metrics::eval::{bench_inference, evaluate, write_bag_scores};
use linmil_core::metrics::flops::count_flops;
use linmil_core::metrics::timing::MIN_RUNS;
use linmil_core::training::{fit, write_history, TrainConfig};
use linmil_core::{Error, Model, Result, Strategy};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;

/// Overlays the flags that were given on top of the JSON config file.
pub fn resolve<T>(args: &T, config: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Clone,
{
    let Some(path) = config else {
        return Ok(args.clone());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut base: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = &mut base else {
        return Err(Error::Config(format!(
            "{}: expected a JSON object",
            path.display()
        )));
    };
    if let Value::Object(flags) = serde_json::to_value(args)? {
        map.extend(flags);
    }
    serde_json::from_value(base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required option --{flag}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Records exactly what a command ran with next to its outputs.
fn write_resolved(dir: &Path, command: &str, args: &impl Serialize, resolved: Value) -> Result<()> {
    write_json(
        &dir.join(format!("{command}.config.json")),
        &json!({ "command": command, "args": args, "resolved": resolved }),
    )
}

fn load_manifest(path: &Path) -> Result<(DatasetManifest, Vec<Bag>)> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "manifest not found: {}",
            path.display()
        )));
    }
    let manifest = DatasetManifest::load(path)?;
    let bags = manifest.load_bags(path)?;
    Ok((manifest, bags))
}

fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "checkpoint not found: {}",
            path.display()
        )));
    }
    checkpoint::load(path)
}

fn encoder_config(m: &ModelArgs) -> EncoderConfig {
    let mut enc = EncoderConfig::new(m.model.unwrap_or(EncoderKind::Gru));
    if m.hidden.is_some() {
        enc.hidden = m.hidden;
    }
    if let Some(v) = m.layers {
        enc.layers = v;
    }
    if let Some(v) = m.dropout {
        enc.dropout = v;
    }
    if let Some(v) = m.depth {
        enc.mamba.depth = v;
    }
    if let Some(v) = m.state_dim {
        enc.mamba.state_dim = v;
    }
    if let Some(v) = m.conv_kernel {
        enc.mamba.conv_kernel = v;
    }
    if let Some(v) = m.expansion {
        enc.mamba.expansion = v;
    }
    enc
}

fn apply_selection(mut sel: SelectionConfig, a: &SelectionArgs) -> SelectionConfig {
    if let Some(v) = a.lambda {
        sel.lambda = v;
    }
    if let Some(v) = a.strategy {
        sel.strategy = v;
    }
    if let Some(v) = a.w_rel {
        sel.weights.relevance = v;
    }
    if let Some(v) = a.w_div {
        sel.weights.diversity = v;
    }
    if let Some(v) = a.w_unc {
        sel.weights.uncertainty = v;
    }
    sel
}

fn train_config(o: &OptimArgs, s: &SelectionArgs, seed: Option<u64>) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    if let Some(v) = o.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = o.patience {
        cfg.patience = v;
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.min_lr {
        cfg.min_lr = v;
    }
    if let Some(v) = o.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = o.l2 {
        cfg.l2_lambda = v;
    }
    if let Some(v) = o.ratio {
        cfg.split_ratio = v;
    }
    if let Some(v) = o.instance_scope {
        cfg.instance_scope = v;
    }
    if o.no_standardize == Some(true) {
        cfg.standardize = false;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    cfg.selection = apply_selection(cfg.selection, s);
    cfg
}

pub fn prepare_synth(args: &SynthArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let out = required(a.out.clone(), "out")?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        bags: a.bags.unwrap_or(d.bags),
        instances: a.instances.unwrap_or(d.instances),
        dim: a.dim.unwrap_or(d.dim),
        witness_min: a.witness_min.unwrap_or(d.witness_min),
        witness_max: a.witness_max.unwrap_or(d.witness_max),
        separation: a.separation.unwrap_or(d.separation),
        positive_fraction: a.positive_fraction.unwrap_or(d.positive_fraction),
        seed: a.seed.unwrap_or(d.seed),
    };
    let data = synth_witness(&spec)?;
    create_dir(&out)?;
    let notes = serde_json::to_string(&spec)?;
    let manifest = DatasetManifest::write_dataset(&out, "synth", &data.bags, &notes)?;
    let witnesses: BTreeMap<&str, &Vec<usize>> = data
        .bags
        .iter()
        .zip(&data.witnesses)
        .map(|(b, w)| (b.id.as_str(), w))
        .collect();
    write_json(&out.join("witnesses.json"), &witnesses)?;
    write_resolved(&out, "prepare-synth", &a, serde_json::to_value(&spec)?)?;
    println!(
        "wrote {} bags ({} positive), d={} to {}",
        manifest.bags.len(),
        manifest.count_label(1),
        manifest.dim,
        out.display()
    );
    Ok(())
}

pub fn prepare_musk(args: &MuskArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let csv = required(a.csv.clone(), "csv")?;
    let out = required(a.out.clone(), "out")?;
    let d = MuskOptions::default();
    let opts = MuskOptions {
        bag_column: a.bag_column.unwrap_or(d.bag_column),
        label_column: a.label_column.unwrap_or(d.label_column),
        has_header: a.header.unwrap_or(false),
        label_kind: if a.instance_labels == Some(true) {
            LabelColumn::Instance
        } else {
            LabelColumn::Bag
        },
    };
    if !csv.is_file() {
        return Err(Error::Config(format!("csv not found: {}", csv.display())));
    }
    let bags = load_musk_style(&csv, &opts)?;
    let name = a.name.clone().unwrap_or_else(|| {
        csv.file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    create_dir(&out)?;
    let manifest = DatasetManifest::write_dataset(&out, &name, &bags, "")?;
    write_resolved(
        &out,
        "prepare-musk",
        &a,
        json!({
            "bag_column": opts.bag_column,
            "label_column": opts.label_column,
            "has_header": opts.has_header,
            "instance_labels": opts.label_kind == LabelColumn::Instance,
        }),
    )?;
    println!(
        "wrote {} bags ({} positive), d={} to {}",
        manifest.bags.len(),
        manifest.count_label(1),
        manifest.dim,
        out.display()
    );
    Ok(())
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let manifest_path = required(a.manifest.clone(), "manifest")?;
    if !manifest_path.is_file() {
        return Err(Error::Config(format!(
            "manifest not found: {}",
            manifest_path.display()
        )));
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let d = TrainConfig::default();
    let spec = SplitSpec::from_manifest(
        &manifest,
        a.ratio.unwrap_or(d.split_ratio),
        a.seed.unwrap_or(d.seed),
    )?;
    let out = a.out.clone().unwrap_or_else(|| {
        manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    create_dir(&out)?;
    let path = out.join(SPLIT_FILE);
    spec.save(&path)?;
    write_resolved(
        &out,
        "split",
        &a,
        json!({ "ratio": spec.ratio, "seed": spec.seed }),
    )?;
    println!(
        "{}: {} train, {} val",
        path.display(),
        spec.train.len(),
        spec.val.len()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let manifest_path = required(a.manifest.clone(), "manifest")?;
    let out = required(a.out.clone(), "out")?;
    let encoder = encoder_config(&a.model);
    encoder.validate()?;
    let cfg = train_config(&a.optim, &a.selection, a.seed);
    cfg.validate()?;
    let (_, bags) = load_manifest(&manifest_path)?;
    let split = match &a.split {
        Some(p) => SplitSpec::load(p)?,
        None => SplitSpec::from_bags(&bags, cfg.split_ratio, cfg.seed)?,
    };
    let (train_bags, val_bags) = split.partition(&bags)?;
    create_dir(&out)?;
    split.save(out.join(SPLIT_FILE))?;
    write_resolved(
        &out,
        "train",
        &a,
        json!({ "encoder": encoder, "train": cfg, "dim": bags.first().map(Bag::dim) }),
    )?;

    let quiet = a.quiet == Some(true);
    let outcome = fit(&encoder, &train_bags, &val_bags, &cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  val_auc {:.4}  val_acc {:.4}  lr {:.2e}  {:.1}s",
                r.epoch, r.train_loss, r.val_auc, r.val_acc, r.lr, r.seconds
            );
        }
    })?;
    checkpoint::save(
        out.join("checkpoint.bin"),
        &outcome.model,
        cfg.seed,
        Some(&cfg),
    )?;
    write_history(out.join("history.csv"), &outcome.history)?;
    let best = outcome.best();
    println!(
        "best epoch {} of {}: val AUC {:.4}, val ACC {:.4}{}",
        best.epoch,
        outcome.history.len(),
        best.val_auc,
        best.val_acc,
        if outcome.stopped_early {
            " (early stop)"
        } else {
            ""
        }
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let (model, header) = load_checkpoint(&required(a.checkpoint.clone(), "checkpoint")?)?;
    let (_, bags) = load_manifest(&required(a.manifest.clone(), "manifest")?)?;
    let out = required(a.out.clone(), "out")?;
    let trained = header.train.clone().unwrap_or_default();
    let selection = apply_selection(trained.selection, &a.selection);
    selection.validate()?;
    let seed = a.seed.unwrap_or(header.seed);

    let subset = a
        .subset
        .clone()
        .unwrap_or_else(|| if a.split.is_some() { "val" } else { "all" }.into());
    let bags = match (subset.as_str(), &a.split) {
        ("all", _) => bags,
        ("train" | "val", Some(p)) => {
            let (tr, va) = SplitSpec::load(p)?.partition(&bags)?;
            if subset == "train" {
                tr
            } else {
                va
            }
        }
        ("train" | "val", None) => {
            return Err(Error::Config(format!("--subset {subset} requires --split")));
        }
        (other, _) => {
            return Err(Error::Config(format!(
                "unknown subset {other:?} (expected train, val or all)"
            )));
        }
    };

    let report = evaluate(&model, &bags, &selection, trained.instance_scope, seed)?;
    create_dir(&out)?;
    write_bag_scores(out.join("bags.csv"), &report.bags)?;
    write_json(
        &out.join("report.json"),
        &json!({
            "auc": report.auc,
            "acc": report.acc,
            "loss": report.loss,
            "n_bags": report.n_bags,
            "encoder_flops_per_bag": report.encoder_flops_per_bag,
        }),
    )?;
    write_resolved(
        &out,
        "eval",
        &a,
        json!({ "selection": selection, "seed": seed, "subset": subset, "model": header.config }),
    )?;
    println!(
        "AUC {:.4}  ACC {:.4}  ({} bags)",
        report.auc, report.acc, report.n_bags
    );

    if a.bench == Some(true) {
        let runs = a.runs.unwrap_or(MIN_RUNS);
        let warmup = a.warmup.unwrap_or(10);
        let timing = bench_inference(&model, &bags, &selection, seed, warmup, runs)?;
        write_json(&out.join("timing.json"), &timing)?;
        println!(
            "inference: mean {:.3} ms  p95 {:.3} ms  over {} runs",
            timing.mean_ms, timing.p95_ms, timing.runs
        );
    }
    Ok(())
}

pub fn select(args: &SelectArgs, with_coords: bool) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let (model, header) = load_checkpoint(&required(a.checkpoint.clone(), "checkpoint")?)?;
    let bag_path = required(a.bag.clone(), "bag")?;
    let out = required(a.out.clone(), "out")?;
    let bag = read_bag(&bag_path)?;
    let trained = header.train.clone().unwrap_or_default();
    let selection = apply_selection(trained.selection, &a.selection);
    selection.validate()?;
    let seed = a.seed.unwrap_or(header.seed);

    let (records, file, command) = if with_coords {
        (
            export_heatmap(&model, &bag, &selection, seed)?,
            "heatmap.csv",
            "heatmap",
        )
    } else {
        (
            instance_records(&model, &bag, &selection, seed)?,
            "selection.csv",
            "select",
        )
    };
    create_dir(&out)?;
    let coords = bag.coords().is_some();
    write_records(out.join(file), &records, coords)?;
    write_resolved(
        &out,
        command,
        &a,
        json!({ "selection": selection, "seed": seed }),
    )?;
    println!(
        "{}: {} instances, {} selected",
        out.join(file).display(),
        records.len(),
        records.iter().filter(|r| r.selected).count()
    );
    Ok(())
}

pub fn ablate(args: &AblateArgs, jobs: usize) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let (_, bags) = load_manifest(&required(a.manifest.clone(), "manifest")?)?;
    let out = required(a.out.clone(), "out")?;
    let encoder = encoder_config(&a.model);
    encoder.validate()?;
    let base = train_config(&a.optim, &a.selection, a.seed);
    base.validate()?;
    let n_seeds = a.seeds.unwrap_or(5);
    let plan = AblationPlan {
        strategies: a
            .strategies
            .clone()
            .unwrap_or_else(|| Strategy::ALL.to_vec()),
        lambdas: a
            .lambdas
            .clone()
            .unwrap_or_else(|| vec![a.selection.lambda.unwrap_or(DEFAULT_LAMBDA)]),
        seeds: (0..n_seeds as u64).map(|i| base.seed + i).collect(),
    };
    let rows = ablation_run(&bags, &encoder, &base, &plan, jobs)?;
    create_dir(&out)?;
    write_ablation(out.join("ablation.csv"), &rows)?;
    write_resolved(
        &out,
        "ablate",
        &a,
        json!({ "encoder": encoder, "train": base, "plan": plan }),
    )?;
    for &lambda in &plan.lambdas {
        let means: Vec<String> = plan
            .strategies
            .iter()
            .filter_map(|&s| mean_auc(&rows, s, lambda).map(|m| format!("{s} {m:.4}")))
            .collect();
        println!("lambda {lambda}: {}", means.join("  "));
    }
    Ok(())
}

pub fn flops(args: &FlopsArgs) -> Result<()> {
    let a = resolve(args, args.config.path.as_deref())?;
    let dim = required(a.dim, "dim")?;
    let lambda = a.lambda.unwrap_or(DEFAULT_LAMBDA);
    let instances = a.instances.unwrap_or(lambda);
    let cfg = ModelConfig::new(encoder_config(&a.model), dim);
    cfg.validate()?;
    let breakdown = count_flops(&cfg, lambda, instances);
    let text = serde_json::to_string_pretty(&breakdown)?;
    println!("{text}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("flops.json"), &breakdown)?;
        write_resolved(
            out,
            "flops",
            &a,
            json!({ "model": cfg, "lambda": lambda, "instances": instances }),
        )?;
    }
    Ok(())
}

/// Default worker count when `--jobs` is absent.
pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}
