//! Per-cluster sampling budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budgets: Vec<usize>,
    /// `min(size ratio, score ratio) * B` before rounding.
    pub pre_round: Vec<f64>,
    pub total: usize,
    /// Every score was zero, so size ratios alone set the budgets.
    pub fallback_used: bool,
}

/// Cluster indices by descending score, lowest index first among equals.
fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Splits `budget` over clusters as `min(size_r / Σ size, score_r / Σ score) * B`.
///
/// Rounding: floor every share, then hand the fractional mass
/// (`floor(Σ pre_round) - Σ floor`) out one unit at a time by largest
/// remainder. Budgets are capped at cluster size, and whatever the cap removes
/// goes to clusters with room, highest score first.
pub fn allocate_budgets(
    cluster_sizes: &[usize],
    scores: &[f64],
    budget: usize,
) -> Result<BudgetPlan> {
    if cluster_sizes.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} cluster sizes but {} scores",
            cluster_sizes.len(),
            scores.len()
        )));
    }
    if let Some(r) = cluster_sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("cluster {r} is empty")));
    }
    if let Some(&bad) = scores.iter().find(|&&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!(
            "scores must be finite and ≥ 0, got {bad}"
        )));
    }
    let r = cluster_sizes.len();
    let size_total: f64 = cluster_sizes.iter().map(|&s| s as f64).sum();
    let score_total: f64 = scores.iter().sum();
    let fallback_used = !(score_total > 0.0);
    let b = budget as f64;

    let pre_round: Vec<f64> = (0..r)
        .map(|k| {
            let size_ratio = cluster_sizes[k] as f64 / size_total;
            if fallback_used {
                size_ratio * b
            } else {
                size_ratio.min(scores[k] / score_total) * b
            }
        })
        .collect();

    let mut budgets: Vec<usize> = pre_round.iter().map(|&p| p.floor() as usize).collect();
    let target = ((pre_round.iter().sum::<f64>() + 1e-9).floor() as usize).min(budget);
    let mut leftover = target.saturating_sub(budgets.iter().sum());
    let mut by_remainder: Vec<usize> = (0..r).filter(|&k| pre_round[k].fract() > 0.0).collect();
    by_remainder.sort_by(|&a, &b| {
        pre_round[b]
            .fract()
            .total_cmp(&pre_round[a].fract())
            .then(a.cmp(&b))
    });
    for k in by_remainder {
        if leftover == 0 {
            break;
        }
        budgets[k] += 1;
        leftover -= 1;
    }

    let mut excess = 0;
    for (b, &cap) in budgets.iter_mut().zip(cluster_sizes) {
        if *b > cap {
            excess += *b - cap;
            *b = cap;
        }
    }
    for k in by_score_desc(scores) {
        if excess == 0 {
            break;
        }
        let room = cluster_sizes[k] - budgets[k];
        let give = room.min(excess);
        budgets[k] += give;
        excess -= give;
    }

    let total = budgets.iter().sum();
    Ok(BudgetPlan {
        budgets,
        pre_round,
        total,
        fallback_used,
    })
}
