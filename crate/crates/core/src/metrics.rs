//! Exact ranking metrics with tie handling.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney AUROC: `(wins + 0.5 * ties) / (P * N)`, via average ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = check(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes"));
    }
    // Ranks ascend from the lowest score; tied scores share their mean rank.
    let mut groups = tie_groups(scores);
    groups.reverse();
    let mut rank_sum = 0.0;
    let mut next_rank = 1.0;
    for g in &groups {
        let k = g.len() as f64;
        let mean_rank = next_rank + (k - 1.0) / 2.0;
        let pos_in_group = g.iter().filter(|&&i| labels[i]).count() as f64;
        rank_sum += mean_rank * pos_in_group;
        next_rank += k;
    }
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: tied scores form one threshold group, and each group
/// contributes `(positives in group / P) * precision after the group`.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, _) = check(scores, labels)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive"));
    }
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    for g in tie_groups(scores) {
        let pos = g.iter().filter(|&&i| labels[i]).count();
        tp += pos;
        seen += g.len();
        if pos > 0 {
            ap += (pos as f64 / p as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}
