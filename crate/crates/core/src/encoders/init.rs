//! Parameter initializers. All draw from the run's seeded generator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::tensor::{dot, softplus, Matrix};

/// `U(-1/√fan_in, 1/√fan_in)`.
pub(crate) fn fan_in_uniform<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, rows, cols, bound)
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// A `blocks·n × n` matrix whose `n × n` blocks each have orthonormal rows.
pub(crate) fn orthogonal_blocks<R: Rng>(rng: &mut R, blocks: usize, n: usize) -> Matrix {
    let mut out = Matrix::zeros(blocks * n, n);
    for b in 0..blocks {
        let q = orthogonal(rng, n);
        for r in 0..n {
            out.row_mut(b * n + r).copy_from_slice(q.row(r));
        }
    }
    out
}

/// Gram-Schmidt on a Gaussian matrix.
fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Matrix {
    loop {
        let data: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut m = Matrix::from_vec(n, n, data).expect("shape");
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj = dot(m.row(i), m.row(j));
                let rj = m.row(j).to_vec();
                for (a, b) in m.row_mut(i).iter_mut().zip(&rj) {
                    *a -= proj * b;
                }
            }
            let norm = dot(m.row(i), m.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return m;
        }
    }
}

/// Inverse of softplus, used to place initial step sizes.
pub(crate) fn inverse_softplus(y: f64) -> f64 {
    let x = y + (-(-y).exp_m1()).ln();
    debug_assert!((softplus(x) - y).abs() < 1e-9 * y.max(1.0));
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_blocks_have_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = orthogonal_blocks(&mut rng, 3, 5);
        for b in 0..3 {
            for i in 0..5 {
                for j in 0..5 {
                    let d = dot(m.row(b * 5 + i), m.row(b * 5 + j));
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn inverse_softplus_round_trips() {
        for y in [1e-3, 0.01, 0.1, 1.0, 5.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12);
        }
    }
}
