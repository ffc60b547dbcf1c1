use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Single-cycle cosine annealing, evaluated per epoch:
/// `lr(e) = min + ½(lr0 − min)(1 + cos(π·e/(epochs−1)))`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64, min_lr: f64) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::Domain(format!(
            "epoch {epoch} outside schedule of {epochs} epochs"
        )));
    }
    if epochs == 1 {
        return Ok(lr0);
    }
    let phase = PI * epoch as f64 / (epochs - 1) as f64;
    Ok(min_lr + 0.5 * (lr0 - min_lr) * (1.0 + phase.cos()))
}
