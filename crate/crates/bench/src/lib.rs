//! Fixtures shared by the criterion benches in `benches/`.

use linmil_core::{EncoderConfig, EncoderKind, Matrix, Model, ModelConfig, Result};

/// Deterministic pseudo-random features in `[-1, 1)`, without pulling an
/// RNG crate into the bench build.
pub fn features(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let data = (0..rows * cols)
        .map(|_| {
            // xorshift64*
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            let bits = state.wrapping_mul(0x2545_f491_4f6c_dd1d) >> 11;
            bits as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("rows * cols values")
}

pub fn model(kind: EncoderKind, dim: usize) -> Result<Model> {
    Model::new(ModelConfig::new(EncoderConfig::new(kind), dim), 0)
}
