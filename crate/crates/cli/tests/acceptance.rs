//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use linmil_core::aps::{select, ApsWeights, InstanceLogits, Strategy};
use linmil_core::data::{synth_witness, SynthSpec};
use linmil_core::encoders::RunRng;
use linmil_core::gradcheck::{check_gradients, DEFAULT_STEP};
use linmil_core::metrics::ablation::{ablation_run, mean_auc, AblationPlan};
use linmil_core::metrics::flops::count_flops;
use linmil_core::metrics::timing::MIN_RUNS;
use linmil_core::metrics::{linear_fit, roc_auc, time_runs};
use linmil_core::training::{fit_dataset, objective, InstanceScope, TrainConfig};
use linmil_core::{
    EncoderConfig, EncoderKind, Matrix, Model, ModelConfig, ParamStore, Result, SelectionConfig,
    Tape, Var,
};
use rand::{Rng, SeedableRng};

const MUSK_MIN_AUC: f64 = 0.85;
const MUSK_MAX_SECONDS: f64 = 300.0;
const GRAD_MAX_REL_ERR: f64 = 1e-4;
const GRAD_TRIALS: u64 = 20;
const APS_BAGS: u64 = 100;
const APS_TOL: f64 = 1e-6;
const ABLATION_SEEDS: u64 = 5;
const ABLATION_LAMBDA: usize = 16;
const ABLATION_MIN_GAP: f64 = 0.01;
const RNN_MIN_AUC: f64 = 0.95;
const SSM_MIN_AUC: f64 = 0.90;
const LINEAR_LAMBDAS: [usize; 4] = [128, 256, 512, 1024];
const LINEAR_MIN_R2: f64 = 0.95;
const AUC_SETS: u64 = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_linmil")
}

fn musk_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/musk1.csv")
}

fn linmil(args: &[&str]) -> std::result::Result<String, String> {
    let out = Command::new(bin())
        .args(args)
        .env_remove("EMIL_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "linmil {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Best validation AUC in a history CSV.
fn best_val_auc(history: &str) -> f64 {
    history
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2)?.parse::<f64>().ok())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// History without the wall-clock column.
fn without_seconds(history: &str) -> String {
    history
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn train_musk(dir: &Path, run: &str) -> std::result::Result<(f64, String, Vec<u8>), String> {
    let data = dir.join("musk1");
    if !data.join("manifest.json").is_file() {
        linmil(&[
            "prepare",
            "musk",
            "--csv",
            path_str(&musk_csv()),
            "--out",
            path_str(&data),
        ])?;
    }
    let out = dir.join(run);
    let manifest = data.join("manifest.json");
    let started = Instant::now();
    linmil(&[
        "train",
        "--manifest",
        path_str(&manifest),
        "--out",
        path_str(&out),
        "--model",
        "gru",
        "--lambda",
        "512",
        "--seed",
        "42",
        "--quiet",
    ])?;
    let secs = started.elapsed().as_secs_f64();
    let history = std::fs::read_to_string(out.join("history.csv")).map_err(|e| e.to_string())?;
    let ckpt = std::fs::read(out.join("checkpoint.bin")).map_err(|e| e.to_string())?;
    Ok((secs, history, ckpt))
}

fn musk_reproduction(dir: &Path) -> Outcome {
    match train_musk(dir, "run_a") {
        Ok((secs, history, _)) => {
            let auc = best_val_auc(&history);
            let cores = std::thread::available_parallelism().map_or(1, usize::from);
            Outcome::new(
                auc >= MUSK_MIN_AUC && secs <= MUSK_MAX_SECONDS,
                format!(
                    "val AUC {auc:.4} (>= {MUSK_MIN_AUC}), {secs:.1}s (<= {MUSK_MAX_SECONDS}s) on {cores} core(s)"
                ),
            )
        }
        Err(e) => Outcome::new(false, e),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let first = match std::fs::read_to_string(dir.join("run_a/history.csv")) {
        Ok(h) => h,
        Err(e) => return Outcome::new(false, format!("first run missing: {e}")),
    };
    let first_ckpt = std::fs::read(dir.join("run_a/checkpoint.bin")).unwrap_or_default();
    match train_musk(dir, "run_b") {
        Ok((_, second, second_ckpt)) => {
            let history_same = without_seconds(&first) == without_seconds(&second);
            let ckpt_same = !first_ckpt.is_empty() && first_ckpt == second_ckpt;
            Outcome::new(
                history_same && ckpt_same,
                format!(
                    "history (excluding seconds) identical: {history_same}; checkpoint bytes identical: {ckpt_same} ({} bytes)",
                    first_ckpt.len()
                ),
            )
        }
        Err(e) => Outcome::new(false, e),
    }
}

fn uniform(rng: &mut RunRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn probe(t: &mut Tape, out: Var, w: &Matrix) -> Result<Var> {
    let w = t.input(w.clone());
    let p = t.mul(out, w)?;
    Ok(t.sum_all(p))
}

/// Worst relative error over `GRAD_TRIALS` random instances of one check.
fn worst_over_trials(
    base_seed: u64,
    mut trial: impl FnMut(&mut RunRng) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..GRAD_TRIALS {
        let mut rng = RunRng::seed_from_u64(base_seed + k);
        worst = worst.max(trial(&mut rng)?);
    }
    Ok(worst)
}

fn op_checks() -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();

    out.push((
        "affine",
        worst_over_trials(1_000, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 4, 5, 1.0));
            let w = s.add("w", uniform(rng, 3, 5, 1.0));
            let b = s.add("b", uniform(rng, 1, 3, 1.0));
            let pw = uniform(rng, 4, 3, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (vx, vw, vb) = (t.param(st, x), t.param(st, w), t.param(st, b));
                let y = t.affine(vx, vw, Some(vb))?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "matmul",
        worst_over_trials(1_100, |rng| {
            let mut s = ParamStore::new();
            let a = s.add("a", uniform(rng, 3, 4, 1.0));
            let b = s.add("b", uniform(rng, 4, 2, 1.0));
            let pw = uniform(rng, 3, 2, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (va, vb) = (t.param(st, a), t.param(st, b));
                let y = t.matmul(va, vb)?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "elementwise",
        worst_over_trials(1_200, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 3, 4, 2.0));
            let y = s.add("y", uniform(rng, 3, 4, 2.0));
            let pw = uniform(rng, 3, 4, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (vx, vy) = (t.param(st, x), t.param(st, y));
                let a = t.sigmoid(vx);
                let b = t.tanh(vy);
                let c = t.mul(a, b)?;
                let d = t.silu(c);
                let e = t.softplus(vx);
                let f = t.sub(d, e)?;
                let g = t.exp(f);
                let h = t.add(g, vy)?;
                let k = t.scale(h, 0.5);
                probe(t, k, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "structural",
        worst_over_trials(1_300, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 4, 3, 1.0));
            let pw = uniform(rng, 1, 4, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let vx = t.param(st, x);
                let top = t.slice_rows(vx, 0, 2)?;
                let bottom = t.slice_rows(vx, 2, 2)?;
                let stacked = t.concat_rows(&[bottom, top])?;
                let col = t.slice_cols(stacked, 1, 1)?;
                let wide = t.concat_cols(&[stacked, col])?;
                let m = t.mean_rows(wide);
                let p = probe(t, m, &pw)?;
                let picked = t.pick(vx, 3, 2)?;
                let sq = t.sum_squares(picked);
                t.add(p, sq)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "layer_norm",
        worst_over_trials(1_400, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 3, 8, 2.0));
            let g = s.add("g", uniform(rng, 1, 8, 1.0));
            let b = s.add("b", uniform(rng, 1, 8, 1.0));
            let pw = uniform(rng, 3, 8, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (vx, vg, vb) = (t.param(st, x), t.param(st, g), t.param(st, b));
                let y = t.layer_norm(vx, vg, vb, 1e-5)?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "rms_norm",
        worst_over_trials(1_500, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 3, 8, 2.0));
            let g = s.add("g", uniform(rng, 1, 8, 1.0));
            let pw = uniform(rng, 3, 8, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (vx, vg) = (t.param(st, x), t.param(st, g));
                let y = t.rms_norm(vx, vg, 1e-5)?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "causal_conv",
        worst_over_trials(1_600, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 6, 4, 1.0));
            let w = s.add("w", uniform(rng, 4, 4, 1.0));
            let b = s.add("b", uniform(rng, 1, 4, 1.0));
            let pw = uniform(rng, 6, 4, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let (vx, vw, vb) = (t.param(st, x), t.param(st, w), t.param(st, b));
                let y = t.causal_conv(vx, vw, vb)?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "selective_scan",
        worst_over_trials(1_700, |rng| {
            let (len, e, n) = (6, 4, 3);
            let mut s = ParamStore::new();
            let u = s.add("u", uniform(rng, len, e, 1.0));
            let dpre = s.add("delta_pre", uniform(rng, len, e, 1.0));
            let a_log = s.add("a_log", uniform(rng, e, n, 0.5));
            let bm = s.add("b", uniform(rng, len, n, 1.0));
            let cm = s.add("c", uniform(rng, len, n, 1.0));
            let dm = s.add("d", uniform(rng, 1, e, 1.0));
            let pw = uniform(rng, len, e, 1.0);
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let vu = t.param(st, u);
                let pre = t.param(st, dpre);
                let delta = t.softplus(pre);
                let (va, vb, vc, vd) = (
                    t.param(st, a_log),
                    t.param(st, bm),
                    t.param(st, cm),
                    t.param(st, dm),
                );
                let y = t.selective_scan(vu, delta, va, vb, vc, vd)?;
                probe(t, y, &pw)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    out.push((
        "bce_with_logits",
        worst_over_trials(1_800, |rng| {
            let mut s = ParamStore::new();
            let x = s.add("x", uniform(rng, 1, 1, 4.0));
            let label = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let r = check_gradients(&mut s, DEFAULT_STEP, |st, t| {
                let vx = t.param(st, x);
                t.bce_with_logits(vx, label)
            })?;
            Ok(r.max_rel_err)
        })?,
    ));

    Ok(out)
}

/// Full objective (instance classifier, encoder, head, both loss terms and
/// the squared-norm penalty) on a tiny model.
fn model_check(kind: EncoderKind) -> Result<f64> {
    worst_over_trials(2_000 + kind as u64 * 100, |rng| {
        let (n, d) = (5, 4);
        let mut enc = EncoderConfig::new(kind);
        enc.hidden = Some(2);
        enc.mamba.depth = 2;
        enc.mamba.state_dim = 3;
        let cfg = ModelConfig::new(enc, d);
        let model = Model::new(cfg, rng.random())?;
        let mut store = model.params().clone();
        let features = uniform(rng, n, d, 1.5);
        let label = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        // λ < N so selection is active; it is piecewise constant in θ.
        let selection = SelectionConfig {
            lambda: n - 1,
            ..SelectionConfig::default()
        };
        let r = check_gradients(&mut store, DEFAULT_STEP, |st, t| {
            let m = Model::from_parts(cfg, st.clone())?;
            let fwd = m.forward(t, &features, &selection, 0, None)?;
            let (root, _) = objective(t, m.params(), &fwd, label, 1e-2, InstanceScope::All)?;
            Ok(root)
        })?;
        Ok(r.max_rel_err)
    })
}

fn gradient_integrity() -> Outcome {
    let mut results = match op_checks() {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    for (name, kind) in [
        ("model_gru", EncoderKind::Gru),
        ("model_lstm", EncoderKind::Lstm),
        ("model_mamba", EncoderKind::Mamba),
    ] {
        match model_check(kind) {
            Ok(e) => results.push((name, e)),
            Err(e) => return Outcome::new(false, format!("{name}: {e}")),
        }
    }
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut detail =
        format!("{GRAD_TRIALS} trials each, worst {worst:.2e} (< {GRAD_MAX_REL_ERR:e}):");
    for (name, e) in &results {
        let _ = write!(detail, " {name}={e:.1e}");
    }
    Outcome::new(worst < GRAD_MAX_REL_ERR, detail)
}

/// Brute-force APS written from the definitions, one instance at a time.
struct BruteAps {
    rel: Vec<f64>,
    div: Vec<f64>,
    unc: Vec<f64>,
    fused: Vec<f64>,
    selected: Vec<usize>,
}

fn brute_aps(x: &[Vec<f64>], logits: &[Vec<f64>], w: &ApsWeights, lambda: usize) -> BruteAps {
    let n = x.len();
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|l| {
            if l.len() == 1 {
                let p = 1.0 / (1.0 + (-l[0]).exp());
                vec![p, 1.0 - p]
            } else {
                let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
                l.iter().map(|v| (v - m).exp() / z).collect()
            }
        })
        .collect();
    let rel: Vec<f64> = probs
        .iter()
        .zip(logits)
        .map(|(p, l)| {
            if l.len() == 1 {
                p[0]
            } else {
                p.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = |a: &[f64], b: &[f64]| {
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
        }
    };
    let div: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                return 1.0;
            }
            let mut total = 0.0;
            for j in 0..n {
                if j != i {
                    total += cos(&x[i], &x[j]);
                }
            }
            1.0 - total / (n - 1) as f64
        })
        .collect();
    let unc: Vec<f64> = probs
        .iter()
        .map(|p| -p.iter().map(|q| q * (q + 1e-8).ln()).sum::<f64>())
        .collect();
    let fused: Vec<f64> = (0..n)
        .map(|i| w.relevance * rel[i] + w.diversity * div[i] + w.uncertainty * unc[i])
        .collect();
    // repeated arg-max, smaller index on ties
    let mut taken = vec![false; n];
    let mut selected = Vec::new();
    for _ in 0..lambda.min(n) {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| fused[i] > fused[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("remaining instance");
        taken[b] = true;
        selected.push(b);
    }
    BruteAps {
        rel,
        div,
        unc,
        fused,
        selected,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn aps_oracle() -> Outcome {
    let mut rng = RunRng::seed_from_u64(7);
    let weights = ApsWeights::default();
    let mut worst = 0.0f64;
    let mut set_mismatch = 0;
    for bag in 0..APS_BAGS {
        let n = rng.random_range(1..=64usize);
        let d = rng.random_range(1..=32usize);
        let c = if bag % 2 == 0 { 1 } else { 3 };
        let lambda = rng.random_range(1..=n + 4);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let l: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let fm = Matrix::from_vec(n, d, x.concat()).expect("shape");
        let lm = InstanceLogits::new(Matrix::from_vec(n, c, l.concat()).expect("shape"))
            .expect("logits");
        let got = match select(&fm, &lm, &weights, lambda) {
            Ok(g) => g,
            Err(e) => return Outcome::new(false, format!("bag {bag}: {e}")),
        };
        let want = brute_aps(&x, &l, &weights, lambda);
        worst = worst
            .max(max_abs_diff(&got.s_rel, &want.rel))
            .max(max_abs_diff(&got.s_div, &want.div))
            .max(max_abs_diff(&got.s_unc, &want.unc))
            .max(max_abs_diff(&got.s_final, &want.fused));
        let mut a = got.selected.clone();
        let mut b = want.selected.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            set_mismatch += 1;
        }
    }
    Outcome::new(
        worst <= APS_TOL && set_mismatch == 0,
        format!(
            "{APS_BAGS} bags, C in {{1,3}}: max score deviation {worst:.2e} (<= {APS_TOL:e}), selected-set mismatches {set_mismatch}"
        ),
    )
}

fn synth_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        bags: 200,
        instances: 50,
        dim: 32,
        separation: 2.5,
        seed,
        ..SynthSpec::default()
    }
}

fn ablation_direction() -> Outcome {
    let encoder = EncoderConfig::new(EncoderKind::Gru);
    let jobs = std::thread::available_parallelism().map_or(1, usize::from);
    let mut rows = Vec::new();
    for seed in 0..ABLATION_SEEDS {
        let data = match synth_witness(&synth_spec(seed)) {
            Ok(d) => d,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let plan = AblationPlan {
            strategies: Strategy::ALL.to_vec(),
            lambdas: vec![ABLATION_LAMBDA],
            seeds: vec![seed],
        };
        match ablation_run(&data.bags, &encoder, &TrainConfig::default(), &plan, jobs) {
            Ok(r) => rows.extend(r),
            Err(e) => return Outcome::new(false, e.to_string()),
        }
    }
    let mean = |s| mean_auc(&rows, s, ABLATION_LAMBDA).unwrap_or(f64::NAN);
    let (aps, topk, random) = (
        mean(Strategy::Aps),
        mean(Strategy::TopK),
        mean(Strategy::Random),
    );
    Outcome::new(
        aps >= topk && aps >= random && aps - random >= ABLATION_MIN_GAP,
        format!(
            "mean val AUC over {ABLATION_SEEDS} seeds at lambda={ABLATION_LAMBDA}: aps {aps:.4}, topk {topk:.4}, random {random:.4}"
        ),
    )
}

fn learnability() -> Outcome {
    let data = match synth_witness(&synth_spec(42)) {
        Ok(d) => d,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let mut pass = true;
    let mut detail = String::new();
    for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Mamba] {
        let threshold = if kind.is_recurrent() {
            RNN_MIN_AUC
        } else {
            SSM_MIN_AUC
        };
        let started = Instant::now();
        match fit_dataset(
            &EncoderConfig::new(kind),
            &data.bags,
            &TrainConfig::default(),
            |_| {},
        ) {
            Ok(out) => {
                let best = out.best();
                pass &= best.val_auc >= threshold && out.history.len() <= 50;
                let _ = write!(
                    detail,
                    "{kind} {:.4} (>= {threshold}, epoch {}, {:.1}s); ",
                    best.val_auc,
                    best.epoch,
                    started.elapsed().as_secs_f64()
                );
            }
            Err(e) => {
                pass = false;
                let _ = write!(detail, "{kind} error: {e}; ");
            }
        }
    }
    Outcome::new(pass, detail.trim_end_matches("; ").to_string())
}

fn linearity() -> Outcome {
    let d = 32;
    // large enough that no probed λ is capped by the bag size
    let n_max = 4 * LINEAR_LAMBDAS.last().expect("lambdas");
    let mut pass = true;
    let mut detail = String::new();
    for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Mamba] {
        let cfg = ModelConfig::new(EncoderConfig::new(kind), d);
        // second differences over equally spaced λ vanish iff affine
        let f = |l: usize| count_flops(&cfg, l, n_max).encoder as i128;
        let affine = (1..=8).all(|k| f(128 * (k + 1)) - 2 * f(128 * k) + f(128 * (k - 1)) == 0)
            && f(256) - f(128) == f(1024) - f(896);

        let model = match Model::new(cfg, 0) {
            Ok(m) => m,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        let mut rng = RunRng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &lambda in &LINEAR_LAMBDAS {
            let x = uniform(&mut rng, lambda, d, 1.0);
            let timing = time_runs(3, MIN_RUNS, |_| {
                let mut tape = Tape::new();
                let xv = tape.input(x.clone());
                model.encode(&mut tape, xv, None).map(|_| ())
            });
            match timing {
                Ok(t) => {
                    xs.push(lambda as f64);
                    ys.push(t.mean_ms);
                }
                Err(e) => return Outcome::new(false, e.to_string()),
            }
        }
        let fit = match linear_fit(&xs, &ys) {
            Ok(f) => f,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        pass &= affine && fit.r2 >= LINEAR_MIN_R2;
        let ms: Vec<String> = ys.iter().map(|y| format!("{y:.2}")).collect();
        let _ = write!(
            detail,
            "{kind}: flops affine {affine}, R² {:.4} (>= {LINEAR_MIN_R2}) ms [{}]; ",
            fit.r2,
            ms.join(", ")
        );
    }
    Outcome::new(pass, detail.trim_end_matches("; ").to_string())
}

/// Pair counting written out: a positive above a negative scores 1, a tie
/// scores 1/2.
fn pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

fn metric_exactness() -> Outcome {
    let mut rng = RunRng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut checked = 0;
    for k in 0..AUC_SETS {
        let len = rng.random_range(2..=50usize);
        // coarse grids force ties on half of the sets
        let grid = if k % 2 == 0 { 5 } else { 1_000_000 };
        let scores: Vec<f64> = (0..len)
            .map(|_| rng.random_range(0..grid) as f64 / grid as f64)
            .collect();
        let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = match roc_auc(&scores, &labels) {
            Ok(a) => a,
            Err(e) => return Outcome::new(false, e.to_string()),
        };
        checked += 1;
        if got.to_bits() != pair_oracle(&scores, &labels).to_bits() {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{checked} random sets (size <= 50, half with heavy ties): {mismatches} inexact"),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "musk1-reproduction",
            Box::new(|| musk_reproduction(dir.path())),
        ),
        ("gradient-integrity", Box::new(gradient_integrity)),
        ("aps-oracle", Box::new(aps_oracle)),
        ("ablation-direction", Box::new(ablation_direction)),
        ("learnability", Box::new(learnability)),
        ("linearity", Box::new(linearity)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("auc-exactness", Box::new(metric_exactness)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let started = Instant::now();
        let outcome = run();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
