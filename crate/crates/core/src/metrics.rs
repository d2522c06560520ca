//! Distances between transition matrices and ranking quality of scores.

use crate::error::{usage, Result};
use crate::numerics::Matrix;

fn check_pair(t: &Matrix, t_hat: &Matrix) -> Result<usize> {
    if t.rows() != t.cols() || t_hat.rows() != t_hat.cols() {
        return Err(usage("transition matrices must be square"));
    }
    if t.rows() != t_hat.rows() {
        return Err(usage(format!(
            "matrix sizes differ: {}x{} vs {}x{}",
            t.rows(),
            t.cols(),
            t_hat.rows(),
            t_hat.cols()
        )));
    }
    if t.rows() == 0 {
        return Err(usage("empty transition matrix"));
    }
    Ok(t.rows())
}

/// Average total variation: `(1/C) Σ_i ½ Σ_j |T_ij − T̂_ij|`.
pub fn atv(t: &Matrix, t_hat: &Matrix) -> Result<f64> {
    let c = check_pair(t, t_hat)?;
    let total: f64 = t
        .row_iter()
        .zip(t_hat.row_iter())
        .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    Ok(total / c as f64)
}

/// Disagreement of one column pair in half units: 2 when the strict order
/// is reversed, 1 when exactly one row ties the pair, 0 otherwise.
fn pair_disagreement(a: (f64, f64), b: (f64, f64)) -> u64 {
    let sa = a.0.partial_cmp(&a.1);
    let sb = b.0.partial_cmp(&b.1);
    use std::cmp::Ordering::Equal;
    match (sa, sb) {
        (Some(Equal), Some(Equal)) => 0,
        (Some(Equal), _) | (_, Some(Equal)) => 1,
        (x, y) if x != y => 2,
        _ => 0,
    }
}

/// KTD as an exact fraction `(numerator, denominator)` in half units.
///
/// Each row contributes its pairwise disagreements normalized by
/// `C(C−1)/2`; rows are averaged. A pair reversed between the two rows
/// counts 1, a pair tied in exactly one of them counts ½.
pub fn ktd_fraction(t: &Matrix, t_hat: &Matrix) -> Result<(u64, u64)> {
    let c = check_pair(t, t_hat)?;
    if c < 2 {
        return Err(usage("rank distance needs at least two classes"));
    }
    if !t.is_finite() || !t_hat.is_finite() {
        return Err(usage("rank distance needs finite entries"));
    }
    let mut half_units = 0u64;
    for (a, b) in t.row_iter().zip(t_hat.row_iter()) {
        for j in 0..c {
            for k in j + 1..c {
                half_units += pair_disagreement((a[j], a[k]), (b[j], b[k]));
            }
        }
    }
    let pairs = (c * (c - 1) / 2) as u64;
    Ok((half_units, 2 * pairs * c as u64))
}

/// Kendall-tau distance between matching rows, averaged, in `[0, 1]`.
pub fn ktd(t: &Matrix, t_hat: &Matrix) -> Result<f64> {
    let (num, den) = ktd_fraction(t, t_hat)?;
    Ok(num as f64 / den as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with midranks:
/// `P(score_pos > score_neg) + ½ P(score_pos = score_neg)`.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(usage(format!(
            "{} scores but {} flags",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(usage("scores must not be NaN"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(usage(
            "AUROC needs at least one positive and one negative instance",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based midranks of the positives, doubled to stay integral.
    let mut rank_sum2 = 0u128;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let twice_mid = (start + 1 + end) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| positives[i]).count() as u128;
        rank_sum2 += twice_mid * pos_in_group;
        start = end;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // U = R − p(p+1)/2, AUROC = U / (p·q).
    let twice_u = rank_sum2 - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}
