//! Farthest-first (k-center) traversal and uniform random selection.

use rand::seq::index;
use rand::Rng;

use crate::dataset::{sq_dist, FeatureDataset};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Rows picked by farthest-first traversal, in pick order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiverseSample {
    /// Pool row indices.
    pub indices: Vec<usize>,
    /// `radii[k]`: covering radius (squared) of the candidates after `k + 1` picks.
    pub radii: Vec<f64>,
}

fn candidates(pool: &FeatureDataset, subset: Option<&[usize]>) -> Result<Vec<usize>> {
    let mut cand: Vec<usize> = match subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i >= pool.n()) {
                return Err(Error::invalid(format!(
                    "subset index {bad} out of range for {} rows",
                    pool.n()
                )));
            }
            s.to_vec()
        }
        None => (0..pool.n()).collect(),
    };
    cand.sort_unstable();
    cand.dedup();
    if cand.is_empty() {
        return Err(Error::invalid("k-center pool is empty"));
    }
    Ok(cand)
}

/// Greedy k-center over `pool` (restricted to `subset` when given).
///
/// The first pick is uniform over the candidates using `seed`; every later
/// pick maximizes the squared distance to the picks so far, ties to the lowest
/// pool index. A budget at or above the candidate count returns every
/// candidate in pick order.
pub fn kcenter_select(
    pool: &FeatureDataset,
    subset: Option<&[usize]>,
    budget: usize,
    seed: u64,
) -> Result<DiverseSample> {
    if budget == 0 {
        return Err(Error::invalid("budget must be ≥ 1"));
    }
    let cand = candidates(pool, subset)?;
    let first = cand[rng_from_seed(seed).random_range(0..cand.len())];
    farthest_first(pool, &cand, budget, first)
}

/// Same traversal with the first pick fixed to pool row `first`.
pub fn kcenter_select_from(
    pool: &FeatureDataset,
    subset: Option<&[usize]>,
    budget: usize,
    first: usize,
) -> Result<DiverseSample> {
    if budget == 0 {
        return Err(Error::invalid("budget must be ≥ 1"));
    }
    let cand = candidates(pool, subset)?;
    if cand.binary_search(&first).is_err() {
        return Err(Error::invalid(format!(
            "first pick {first} is not a candidate"
        )));
    }
    farthest_first(pool, &cand, budget, first)
}

fn farthest_first(
    pool: &FeatureDataset,
    cand: &[usize],
    budget: usize,
    first: usize,
) -> Result<DiverseSample> {
    let k = budget.min(cand.len());
    let mut selected = vec![false; cand.len()];
    let mut min_d = vec![f64::INFINITY; cand.len()];
    let mut indices = Vec::with_capacity(k);
    let mut radii = Vec::with_capacity(k);

    let mut pick = cand.binary_search(&first).expect("first is a candidate");
    loop {
        selected[pick] = true;
        indices.push(cand[pick]);
        let p = pool.row(cand[pick]);
        let mut next: Option<(f64, usize)> = None;
        let mut radius = 0.0f64;
        for (j, &c) in cand.iter().enumerate() {
            let d = sq_dist(pool.row(c), p);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if selected[j] {
                min_d[j] = 0.0;
                continue;
            }
            radius = radius.max(min_d[j]);
            if next.is_none_or(|(best, _)| min_d[j] > best) {
                next = Some((min_d[j], j));
            }
        }
        radii.push(radius);
        match next {
            Some((_, j)) if indices.len() < k => pick = j,
            _ => break,
        }
    }
    Ok(DiverseSample { indices, radii })
}

/// `budget` distinct indices drawn uniformly from `0..pool_size`.
pub fn random_select(pool_size: usize, budget: usize, seed: u64) -> Result<Vec<usize>> {
    if budget > pool_size {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds pool size {pool_size}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok(index::sample(&mut rng, pool_size, budget).into_vec())
}
