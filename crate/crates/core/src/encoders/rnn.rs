//! Bidirectional stacked LSTM and GRU encoders.
//!
//! Gate layout follows the common `(r, z, n)` order for GRU and `(i, f, g, o)`
//! for LSTM, with separate input and recurrent biases.

use rand::Rng;

use super::config::{EncoderConfig, EncoderKind};
use super::init::{fan_in_uniform, orthogonal_blocks};
use super::RunRng;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

pub fn param_name(layer: usize, dir: Direction, tensor: &str) -> String {
    format!("rnn.l{layer}.{}.{tensor}", dir.tag())
}

pub(crate) fn init_params<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    cfg: &EncoderConfig,
    dim: usize,
) {
    let h = cfg.hidden_for(dim);
    let gates = cfg.kind.gates();
    for layer in 0..cfg.layers {
        let d_in = if layer == 0 { dim } else { 2 * h };
        for dir in [Direction::Forward, Direction::Backward] {
            store.add(
                param_name(layer, dir, "w_ih"),
                fan_in_uniform(rng, gates * h, d_in, h),
            );
            store.add(
                param_name(layer, dir, "w_hh"),
                orthogonal_blocks(rng, gates, h),
            );
            let mut b_ih = fan_in_uniform(rng, 1, gates * h, h);
            let b_hh = fan_in_uniform(rng, 1, gates * h, h);
            if cfg.kind == EncoderKind::Lstm {
                // forget gate starts open: b_ih + b_hh = 1 on the f block
                for j in h..2 * h {
                    b_ih.data_mut()[j] = 1.0 - b_hh.data()[j];
                }
            }
            store.add(param_name(layer, dir, "b_ih"), b_ih);
            store.add(param_name(layer, dir, "b_hh"), b_hh);
        }
    }
    if cfg.needs_projection(dim) {
        store.add("rnn.proj.weight", fan_in_uniform(rng, dim, 2 * h, 2 * h));
        store.add("rnn.proj.bias", fan_in_uniform(rng, 1, dim, 2 * h));
    }
}

struct Cell {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
}

impl Cell {
    fn load(tape: &mut Tape, store: &ParamStore, layer: usize, dir: Direction) -> Result<Cell> {
        let mut get = |t: &str| -> Result<Var> {
            let id = store.require(&param_name(layer, dir, t))?;
            Ok(tape.param(store, id))
        };
        Ok(Cell {
            w_ih: get("w_ih")?,
            w_hh: get("w_hh")?,
            b_ih: get("b_ih")?,
            b_hh: get("b_hh")?,
        })
    }
}

/// Runs one direction over precomputed input projections (`T × G·h`) and
/// returns per-step hidden states in time order.
#[allow(clippy::too_many_arguments)]
fn run_direction(
    tape: &mut Tape,
    kind: EncoderKind,
    cell: &Cell,
    x_proj: Var,
    steps: usize,
    h: usize,
    dir: Direction,
    layer: usize,
) -> Result<Vec<Var>> {
    let mut hidden = tape.input(Matrix::zeros(1, h));
    let mut cell_state = tape.input(Matrix::zeros(1, h));
    let mut outputs: Vec<Option<Var>> = vec![None; steps];
    let order: Box<dyn Iterator<Item = usize>> = match dir {
        Direction::Forward => Box::new(0..steps),
        Direction::Backward => Box::new((0..steps).rev()),
    };
    for t in order {
        let gi = tape.slice_rows(x_proj, t, 1)?;
        let gh = tape.affine(hidden, cell.w_hh, Some(cell.b_hh))?;
        hidden = match kind {
            EncoderKind::Gru => {
                let gi_rz = tape.slice_cols(gi, 0, 2 * h)?;
                let gh_rz = tape.slice_cols(gh, 0, 2 * h)?;
                let rz_pre = tape.add(gi_rz, gh_rz)?;
                let rz = tape.sigmoid(rz_pre);
                let r = tape.slice_cols(rz, 0, h)?;
                let z = tape.slice_cols(rz, h, h)?;
                let gi_n = tape.slice_cols(gi, 2 * h, h)?;
                let gh_n = tape.slice_cols(gh, 2 * h, h)?;
                let gated = tape.mul(r, gh_n)?;
                let n_pre = tape.add(gi_n, gated)?;
                let n = tape.tanh(n_pre);
                // h' = (1 - z)·n + z·h = n + z·(h - n)
                let diff = tape.sub(hidden, n)?;
                let keep = tape.mul(z, diff)?;
                tape.add(n, keep)?
            }
            EncoderKind::Lstm => {
                let pre = tape.add(gi, gh)?;
                let if_pre = tape.slice_cols(pre, 0, 2 * h)?;
                let if_gate = tape.sigmoid(if_pre);
                let i = tape.slice_cols(if_gate, 0, h)?;
                let f = tape.slice_cols(if_gate, h, h)?;
                let g_pre = tape.slice_cols(pre, 2 * h, h)?;
                let g = tape.tanh(g_pre);
                let o_pre = tape.slice_cols(pre, 3 * h, h)?;
                let o = tape.sigmoid(o_pre);
                let carry = tape.mul(f, cell_state)?;
                let write = tape.mul(i, g)?;
                cell_state = tape.add(carry, write)?;
                let squashed = tape.tanh(cell_state);
                tape.mul(o, squashed)?
            }
            EncoderKind::Mamba => unreachable!("not a recurrent kind"),
        };
        if !tape.value(hidden).is_finite() {
            return Err(Error::Numeric(format!(
                "{kind} layer {layer} {} timestep {t}: non-finite hidden state",
                dir.tag()
            )));
        }
        outputs[t] = Some(hidden);
    }
    Ok(outputs
        .into_iter()
        .map(|o| o.expect("every step visited"))
        .collect())
}

/// Encodes `x` (`T × d`) into `T × d`: stacked bidirectional layers with
/// dropout between layers, then a `2h → d` projection when widths differ.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    cfg: &EncoderConfig,
    dim: usize,
    mut rng: Option<&mut RunRng>,
) -> Result<Var> {
    let h = cfg.hidden_for(dim);
    let steps = tape.value(x).rows();
    let mut input = x;
    for layer in 0..cfg.layers {
        if layer > 0 {
            input = tape.dropout(input, cfg.dropout, rng.as_deref_mut());
        }
        let mut halves = Vec::with_capacity(2);
        for dir in [Direction::Forward, Direction::Backward] {
            let cell = Cell::load(tape, store, layer, dir)?;
            let x_proj = tape.affine(input, cell.w_ih, Some(cell.b_ih))?;
            let states = run_direction(tape, cfg.kind, &cell, x_proj, steps, h, dir, layer)?;
            halves.push(tape.concat_rows(&states)?);
        }
        input = tape.concat_cols(&halves)?;
    }
    if cfg.needs_projection(dim) {
        let w = tape.param(store, store.require("rnn.proj.weight")?);
        let b = tape.param(store, store.require("rnn.proj.bias")?);
        input = tape.affine(input, w, Some(b))?;
    }
    Ok(input)
}
