use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check(scores_len: usize, labels: &[bool]) -> Result<usize> {
    assert_eq!(scores_len, labels.len(), "one label per score");
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(pos)
}

/// Cumulative `(true positives, false positives)` at the end of each group of
/// equal scores, visiting scores from highest to lowest.
fn tie_groups<T: Scalar>(scores: &[T], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last = k + 1 == idx.len() || scores[idx[k + 1]] != scores[i];
        if last {
            out.push((tp, fp));
        }
    }
    out
}

/// Average precision with fake (`true`) as the positive class:
/// `Σ (R_k − R_{k−1}) · P_k` over descending score thresholds, one threshold
/// per group of tied scores.
pub fn average_precision<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    let pos = check(scores.len(), labels)?;
    let mut prev_tp = 0;
    let mut sum = 0.0;
    for (tp, fp) in tie_groups(scores, labels) {
        sum += (tp - prev_tp) as f64 * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    Ok(sum / pos as f64)
}

/// Precision–recall points `(recall, precision)`, one per tie group, from the
/// highest threshold down to the first threshold that reaches recall 1. The
/// origin is implicit.
pub fn pr_curve<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let pos = check(scores.len(), labels)?;
    let mut out = Vec::new();
    for (tp, fp) in tie_groups(scores, labels) {
        out.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
        if tp == pos {
            break;
        }
    }
    Ok(out)
}

/// Area under a step PR curve that starts from recall 0.
pub fn pr_area(curve: &[(f64, f64)]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for &(r, p) in curve {
        area += (r - prev) * p;
        prev = r;
    }
    area
}

/// Fraction of correct decisions when `score ≥ t` predicts fake.
pub fn accuracy_at_threshold<T: Scalar>(scores: &[T], labels: &[bool], t: f64) -> f64 {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores.iter().zip(labels).filter(|(s, &l)| (s.as_f64() >= t) == l).count();
    correct as f64 / scores.len() as f64
}

/// Accuracy-maximizing threshold over `−∞`, the midpoints between adjacent
/// distinct scores and `+∞`; the smallest maximizer wins ties.
pub fn oracle_threshold<T: Scalar>(scores: &[T], labels: &[bool]) -> (f64, f64) {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.is_empty() {
        return (f64::NEG_INFINITY, 0.0);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // At t = −∞ everything is called fake.
    let mut correct = labels.iter().filter(|&&l| l).count() as i64;
    let (mut best_t, mut best) = (f64::NEG_INFINITY, correct);
    let mut k = 0;
    while k < idx.len() {
        let s = scores[idx[k]];
        while k < idx.len() && scores[idx[k]] == s {
            correct += if labels[idx[k]] { -1 } else { 1 };
            k += 1;
        }
        let t = if k < idx.len() { (s.as_f64() + scores[idx[k]].as_f64()) / 2.0 } else { f64::INFINITY };
        if correct > best {
            best = correct;
            best_t = t;
        }
    }
    (best_t, best as f64 / scores.len() as f64)
}

/// Arithmetic mean of per-source APs.
pub fn mean_ap(aps: &[f64]) -> f64 {
    aps.iter().sum::<f64>() / aps.len() as f64
}
