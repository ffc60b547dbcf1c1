//! Selective state-space encoder: a stack of gated blocks, each with a
//! causal depthwise convolution and an input-dependent diagonal scan.
//!
//! Per block, with `E = expansion·d` channels and `S` states per channel:
//!
//! ```text
//! u        = RMSNorm(x)
//! [v, z]   = u · W_inᵀ                      (T × 2E)
//! v        = SiLU(conv_causal(v))
//! [δ, B, C] = v · W_xᵀ                       (T × (R + 2S))
//! Δ        = softplus(δ · W_dtᵀ + b_dt)     (T × E)
//! y        = scan(v, Δ, A = -exp(a_log), B, C, D)
//! x        = x + dropout((y ⊙ SiLU(z)) · W_outᵀ)
//! ```

use rand::Rng;

use super::config::EncoderConfig;
use super::init::{fan_in_uniform, inverse_softplus, uniform};
use super::RunRng;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Matrix, NORM_EPS};

pub fn param_name(block: usize, tensor: &str) -> String {
    format!("ssm.b{block}.{tensor}")
}

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

pub(crate) fn init_params<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    cfg: &EncoderConfig,
    dim: usize,
) {
    let m = &cfg.mamba;
    let e = m.expansion * dim;
    let s = m.state_dim;
    let r = cfg.dt_rank(dim);
    for b in 0..m.depth {
        store.add(param_name(b, "norm.gain"), Matrix::filled(1, dim, 1.0));
        store.add(
            param_name(b, "in_proj.weight"),
            fan_in_uniform(rng, 2 * e, dim, dim),
        );
        store.add(
            param_name(b, "conv.weight"),
            fan_in_uniform(rng, e, m.conv_kernel, m.conv_kernel),
        );
        store.add(
            param_name(b, "conv.bias"),
            fan_in_uniform(rng, 1, e, m.conv_kernel),
        );
        store.add(
            param_name(b, "x_proj.weight"),
            fan_in_uniform(rng, r + 2 * s, e, e),
        );
        store.add(
            param_name(b, "dt_proj.weight"),
            uniform(rng, e, r, 1.0 / (r as f64).sqrt()),
        );
        // step sizes start log-uniform in [DT_MIN, DT_MAX]
        let dt_bias: Vec<f64> = (0..e)
            .map(|_| {
                let t: f64 = rng.random();
                let dt = (DT_MIN.ln() + t * (DT_MAX.ln() - DT_MIN.ln())).exp();
                inverse_softplus(dt)
            })
            .collect();
        store.add(param_name(b, "dt_proj.bias"), Matrix::row_vector(dt_bias));
        // A = -(1..=S) per channel
        let mut a_log = Matrix::zeros(e, s);
        for c in 0..e {
            for k in 0..s {
                a_log.set(c, k, ((k + 1) as f64).ln());
            }
        }
        store.add(param_name(b, "a_log"), a_log);
        store.add(param_name(b, "d_skip"), Matrix::filled(1, e, 1.0));
        store.add(
            param_name(b, "out_proj.weight"),
            fan_in_uniform(rng, dim, e, e),
        );
    }
}

fn block(
    tape: &mut Tape,
    store: &ParamStore,
    index: usize,
    x: Var,
    cfg: &EncoderConfig,
    dim: usize,
    rng: Option<&mut RunRng>,
) -> Result<Var> {
    let m = &cfg.mamba;
    let e = m.expansion * dim;
    let s = m.state_dim;
    let r = cfg.dt_rank(dim);
    let mut p = |t: &str| -> Result<Var> {
        let id = store.require(&param_name(index, t))?;
        Ok(tape.param(store, id))
    };
    let gain = p("norm.gain")?;
    let w_in = p("in_proj.weight")?;
    let conv_w = p("conv.weight")?;
    let conv_b = p("conv.bias")?;
    let w_x = p("x_proj.weight")?;
    let w_dt = p("dt_proj.weight")?;
    let b_dt = p("dt_proj.bias")?;
    let a_log = p("a_log")?;
    let d_skip = p("d_skip")?;
    let w_out = p("out_proj.weight")?;

    let u = tape.rms_norm(x, gain, NORM_EPS)?;
    let xz = tape.affine(u, w_in, None)?;
    let v = tape.slice_cols(xz, 0, e)?;
    let z = tape.slice_cols(xz, e, e)?;
    let conv = tape.causal_conv(v, conv_w, conv_b)?;
    let v = tape.silu(conv);
    let proj = tape.affine(v, w_x, None)?;
    let dt_low = tape.slice_cols(proj, 0, r)?;
    let b_sel = tape.slice_cols(proj, r, s)?;
    let c_sel = tape.slice_cols(proj, r + s, s)?;
    let dt_pre = tape.affine(dt_low, w_dt, Some(b_dt))?;
    let delta = tape.softplus(dt_pre);
    let y = tape.selective_scan(v, delta, a_log, b_sel, c_sel, d_skip)?;
    if let Some(t) = first_non_finite_row(tape.value(y)) {
        return Err(Error::Numeric(format!(
            "ssm block {index} timestep {t}: non-finite state"
        )));
    }
    let gate = tape.silu(z);
    let gated = tape.mul(y, gate)?;
    let out = tape.affine(gated, w_out, None)?;
    let out = tape.dropout(out, cfg.dropout, rng);
    tape.add(x, out)
}

fn first_non_finite_row(m: &Matrix) -> Option<usize> {
    (0..m.rows()).find(|&r| m.row(r).iter().any(|v| !v.is_finite()))
}

/// Encodes `x` (`T × d`) through `depth` residual blocks; causal, so step
/// `t` depends only on steps `..=t`.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    cfg: &EncoderConfig,
    dim: usize,
    mut rng: Option<&mut RunRng>,
) -> Result<Var> {
    let mut h = x;
    for b in 0..cfg.mamba.depth {
        h = block(tape, store, b, h, cfg, dim, rng.as_deref_mut())?;
    }
    Ok(h)
}
