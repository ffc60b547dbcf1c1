//! Closed-form operation counts for one bag.
//!
//! Convention: a multiply-add counts as 2 operations, so an affine map
//! `in → out` costs `2·in·out` per application (bias adds are counted
//! separately). Elementwise arithmetic and nonlinearities count 1 per
//! element.

use serde::Serialize;

use crate::encoders::{EncoderKind, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub instance_classifier: u64,
    pub aps: u64,
    pub encoder: u64,
    pub head: u64,
    pub total: u64,
    pub total_mflops: f64,
    /// Instances fed to the encoder, `min(λ, N)`.
    pub sequence_len: u64,
    pub convention: &'static str,
}

pub const CONVENTION: &str =
    "multiply-add = 2 ops; elementwise and nonlinearity = 1 op per element";

pub fn affine(inp: u64, out: u64) -> u64 {
    2 * inp * out
}

/// One timestep of one direction of a recurrent cell.
pub fn rnn_step(kind: EncoderKind, d_in: u64, h: u64) -> u64 {
    match kind {
        // biases 6h, r/z pre-add 2h, sigmoid 2h, r·gh_n, +gi_n, tanh,
        // h − n, z·(h − n), + n
        EncoderKind::Gru => affine(d_in, 3 * h) + affine(h, 3 * h) + 16 * h,
        // biases 8h, gate pre-add 4h, three sigmoids and a tanh 4h,
        // f·c, i·g, +, tanh(c), o·tanh(c)
        EncoderKind::Lstm => affine(d_in, 4 * h) + affine(h, 4 * h) + 21 * h,
        EncoderKind::Mamba => 0,
    }
}

/// One timestep of one selective state-space block.
pub fn ssm_step(d: u64, expansion: u64, state: u64, kernel: u64, dt_rank: u64) -> u64 {
    let e = expansion * d;
    let norm = 4 * d;
    let in_proj = affine(d, 2 * e);
    let conv = 2 * kernel * e + e + e; // taps, bias, SiLU
    let x_proj = affine(e, dt_rank + 2 * state);
    let dt = affine(dt_rank, e) + 2 * e; // bias, softplus
                                         // exp(ΔA) 2, Δ·B·u 2, state update 2, ⟨h, C⟩ 2 per (channel, state)
    let scan = 8 * e * state + 2 * e;
    let gate = 2 * e; // SiLU(z), product
    let out = affine(e, d) + d; // projection, residual
    norm + in_proj + conv + x_proj + dt + scan + gate + out
}

/// Counts for a bag of `n` instances with selection size `lambda`.
pub fn count_flops(cfg: &ModelConfig, lambda: usize, n: usize) -> FlopsBreakdown {
    let d = cfg.dim as u64;
    let c = cfg.classes as u64;
    let n64 = n as u64;
    let l = lambda.min(n) as u64;
    let enc = &cfg.encoder;

    let instance_classifier = n64 * (affine(d, c) + c);
    // row normalization 3Nd, similarity 2N²d, mean similarity 2N,
    // relevance + entropy 4NC, fusion 5N, softmax 3N
    let aps = 2 * n64 * n64 * d + 3 * n64 * d + 2 * n64 + 4 * n64 * c + 5 * n64 + 3 * n64;

    let encoder = match enc.kind {
        EncoderKind::Gru | EncoderKind::Lstm => {
            let h = enc.hidden_for(cfg.dim) as u64;
            let mut per_step = 0;
            for layer in 0..enc.layers {
                let d_in = if layer == 0 { d } else { 2 * h };
                per_step += 2 * rnn_step(enc.kind, d_in, h);
            }
            if enc.needs_projection(cfg.dim) {
                per_step += affine(2 * h, d) + d;
            }
            l * per_step
        }
        EncoderKind::Mamba => {
            let m = &enc.mamba;
            let step = ssm_step(
                d,
                m.expansion as u64,
                m.state_dim as u64,
                m.conv_kernel as u64,
                enc.dt_rank(cfg.dim) as u64,
            );
            l * m.depth as u64 * step
        }
    };

    // residual add, normalization (5 or 4 per element), pooling, classifier
    let norm = if enc.kind.is_recurrent() { 5 } else { 4 };
    let head = l * d + norm * l * d + l * d + affine(d, c) + c;

    let total = instance_classifier + aps + encoder + head;
    FlopsBreakdown {
        instance_classifier,
        aps,
        encoder,
        head,
        total,
        total_mflops: total as f64 / 1e6,
        sequence_len: l,
        convention: CONVENTION,
    }
}
