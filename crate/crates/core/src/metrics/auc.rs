use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", (scores.len(), 1), (labels.len(), 1)));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("scores contain NaN".into()));
    }
    let p = labels.iter().filter(|&&y| y).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::Domain(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    Ok((p, n))
}

/// Area under the ROC curve via sorting, `O(n log n)`.
///
/// The result is `(2·concordant + tied) / (2·P·N)` computed with integer
/// counts, so it agrees bit for bit with [`pairwise_auc`].
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = check(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut numerator: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        let (mut pg, mut ng) = (0u128, 0u128);
        // -0.0 and 0.0 compare equal under `==`, matching the pair oracle.
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            if labels[idx[end]] {
                pg += 1;
            } else {
                ng += 1;
            }
            end += 1;
        }
        numerator += 2 * pg * negatives_below + pg * ng;
        negatives_below += ng;
        start = end;
    }
    Ok(numerator as f64 / (2 * u128::from(p) * u128::from(n)) as f64)
}

/// Quadratic pair-counting reference, kept public as a test oracle.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = check(scores, labels)?;
    let mut numerator: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if si > sj {
                numerator += 2;
            } else if si == sj {
                numerator += 1;
            }
        }
    }
    Ok(numerator as f64 / (2 * u128::from(p) * u128::from(n)) as f64)
}

/// Fraction of `score >= threshold` predictions that match the label.
/// Returns 0 for empty input.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == y)
        .count();
    correct as f64 / scores.len() as f64
}
