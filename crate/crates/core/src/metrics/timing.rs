use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

/// Fewest timed repetitions the harness accepts.
pub const MIN_RUNS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingStats {
    pub warmup: usize,
    pub runs: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Runs `f` `warmup` times untimed, then `runs` times timed.
pub fn time_runs<F>(warmup: usize, runs: usize, mut f: F) -> Result<TimingStats>
where
    F: FnMut(usize) -> Result<()>,
{
    if runs < MIN_RUNS {
        return Err(Error::Config(format!(
            "timing needs at least {MIN_RUNS} runs, got {runs}"
        )));
    }
    for i in 0..warmup {
        f(i)?;
    }
    let mut samples = Vec::with_capacity(runs);
    for i in 0..runs {
        let t = Instant::now();
        f(i)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(TimingStats {
        warmup,
        runs,
        mean_ms: samples.iter().sum::<f64>() / runs as f64,
        p95_ms: percentile(&samples, 0.95),
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Domain(
            "linear fit needs two or more paired points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r2() {
        let fit = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }

    #[test]
    fn timing_requires_enough_runs() {
        assert!(time_runs(1, 10, |_| Ok(())).is_err());
        let mut calls = 0;
        let stats = time_runs(3, 100, |_| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 103);
        assert!(stats.p95_ms >= stats.min_ms);
    }
}
