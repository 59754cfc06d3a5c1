//! Client side of the protocol: centroid coverage, privatization and scaling.
//!
//! Noise goes on the raw counts, which have bounded sensitivity; the result is
//! clamped at zero and only then raised to the power `s`. Scaling is
//! post-processing and never changes the privacy cost.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::assign;
use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::privacy::{SubsampleMode, DEFAULT_SENSITIVITY, DEFAULT_SIGMA};
use crate::seed::{derive_seed, rng_from_seed, STREAM_NOISE, STREAM_SUBSAMPLE};

pub const DEFAULT_KEEP_FRACTION: f64 = 0.7;

/// `x ↦ x^s` for a positive exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFn {
    s: f64,
}

impl ScaleFn {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid(format!(
                "scale exponent must be > 0, got {s}"
            )));
        }
        Ok(Self { s })
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.s == 1.0 {
            x
        } else {
            x.powf(self.s)
        }
    }
}

/// Client-side knobs of one scoring query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub sigma: f64,
    pub gamma: f64,
    pub scale_s: f64,
    pub sensitivity: f64,
    pub subsample_mode: SubsampleMode,
    pub confidence_mode: bool,
    pub keep_fraction: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            gamma: 1.0,
            scale_s: 1.0,
            sensitivity: DEFAULT_SENSITIVITY,
            subsample_mode: SubsampleMode::Poisson,
            confidence_mode: false,
            keep_fraction: DEFAULT_KEEP_FRACTION,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        check_sigma_gamma(self.sigma, self.gamma)?;
        ScaleFn::new(self.scale_s)?;
        if !(self.sensitivity > 0.0) || !self.sensitivity.is_finite() {
            return Err(Error::invalid(format!(
                "sensitivity must be > 0, got {}",
                self.sensitivity
            )));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "keep_fraction must be in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

/// What the client sends up: `r` noised, clamped and scaled scores plus the
/// parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub r: usize,
    pub scores: Vec<f64>,
    pub params: ScoringParams,
    pub seed: u64,
}

fn check_sigma_gamma(sigma: f64, gamma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be ≥ 0, got {sigma}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// `v[r]`: number of client rows whose nearest centroid is `r`.
pub fn coverage_scores(client: &FeatureDataset, centroids: &FeatureDataset) -> Result<Vec<u64>> {
    if client.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: client.dim(),
        });
    }
    let mut v = vec![0u64; centroids.n()];
    if client.is_empty() {
        return Ok(v);
    }
    for a in assign(centroids, client)? {
        v[a as usize] += 1;
    }
    Ok(v)
}

/// Row indices of a subsample of `0..n`. Poisson keeps each row with
/// probability `gamma`; replacement draws `ceil(gamma n)` rows uniformly.
/// `gamma == 1` keeps every row once in both modes.
pub fn subsample_rows(n: usize, gamma: f64, mode: SubsampleMode, seed: u64) -> Vec<usize> {
    if gamma >= 1.0 {
        return (0..n).collect();
    }
    let mut rng = rng_from_seed(seed);
    match mode {
        SubsampleMode::Poisson => (0..n).filter(|_| rng.random::<f64>() < gamma).collect(),
        SubsampleMode::Replacement => {
            if n == 0 {
                return Vec::new();
            }
            let m = (gamma * n as f64).ceil() as usize;
            let mut rows: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            rows.sort_unstable();
            rows
        }
    }
}

/// Adds i.i.d. `N(0, sigma²)` to every value and clamps at 0.
fn add_noise(values: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.iter().map(|&x| x.max(0.0)).collect();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let mut rng = rng_from_seed(seed);
    values
        .iter()
        .map(|&x| (x + normal.sample(&mut rng)).max(0.0))
        .collect()
}

/// Subsampled, noised and clamped counts.
///
/// Rows are expanded from the counts in cluster order, subsampled with
/// [`subsample_rows`] and recounted. `sigma == 0` with `gamma == 1` returns
/// the counts unchanged.
pub fn privatize_scores(
    v: &[u64],
    sigma: f64,
    gamma: f64,
    mode: SubsampleMode,
    seed: u64,
) -> Result<Vec<f64>> {
    check_sigma_gamma(sigma, gamma)?;
    let counts: Vec<f64> = if gamma < 1.0 {
        let owner: Vec<usize> = v
            .iter()
            .enumerate()
            .flat_map(|(r, &c)| std::iter::repeat_n(r, c as usize))
            .collect();
        let mut sub = vec![0u64; v.len()];
        for i in subsample_rows(
            owner.len(),
            gamma,
            mode,
            derive_seed(seed, STREAM_SUBSAMPLE),
        ) {
            sub[owner[i]] += 1;
        }
        sub.into_iter().map(|c| c as f64).collect()
    } else {
        v.iter().map(|&c| c as f64).collect()
    };
    Ok(add_noise(&counts, sigma, derive_seed(seed, STREAM_NOISE)))
}

/// Elementwise `x^s`. Inputs must already be clamped at 0.
pub fn scale_scores(noisy: &[f64], s: f64) -> Result<Vec<f64>> {
    let f = ScaleFn::new(s)?;
    if let Some(&bad) = noisy.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::invalid(format!("cannot scale negative score {bad}")));
    }
    Ok(noisy.iter().map(|&x| f.apply(x)).collect())
}

/// Label-aware scores of the confidence variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceScores {
    /// Per cluster: count of the most common class minus the runner-up.
    pub confidence: Vec<f64>,
    /// Per client row: survived the per-class confidence filter.
    pub keep: Vec<bool>,
    /// Per cluster: rows left after filtering.
    pub counts: Vec<u64>,
}

impl ConfidenceScores {
    /// `(confidence + count) / 2` per cluster, before noise and scaling.
    pub fn combined(&self) -> Vec<f64> {
        self.confidence
            .iter()
            .zip(&self.counts)
            .map(|(&c, &v)| (c + v as f64) / 2.0)
            .collect()
    }
}

/// Cluster confidence and the per-class filter. For each class, the
/// `ceil(keep_fraction * class size)` rows in the most confident clusters are
/// kept (earlier rows win ties), then the kept rows are recounted per cluster.
pub fn confidence_scores(
    client: &FeatureDataset,
    centroids: &FeatureDataset,
    keep_fraction: f64,
) -> Result<ConfidenceScores> {
    let labels = client
        .labels()
        .ok_or_else(|| Error::invalid("confidence scoring needs client labels"))?;
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep_fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    if client.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: client.dim(),
        });
    }
    let r = centroids.n();
    let assignment = if client.is_empty() {
        Vec::new()
    } else {
        assign(centroids, client)?
    };

    let mut votes: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); r];
    for (&a, &y) in assignment.iter().zip(labels) {
        *votes[a as usize].entry(y).or_default() += 1;
    }
    let confidence: Vec<f64> = votes
        .iter()
        .map(|v| {
            let mut top = [0u64; 2];
            for &c in v.values() {
                if c > top[0] {
                    top = [c, top[0]];
                } else if c > top[1] {
                    top[1] = c;
                }
            }
            (top[0] - top[1]) as f64
        })
        .collect();

    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut keep = vec![false; client.n()];
    for rows in by_class.values_mut() {
        rows.sort_by(|&a, &b| {
            let ca = confidence[assignment[a] as usize];
            let cb = confidence[assignment[b] as usize];
            cb.total_cmp(&ca).then(a.cmp(&b))
        });
        let quota = (keep_fraction * rows.len() as f64).ceil() as usize;
        for &i in rows.iter().take(quota) {
            keep[i] = true;
        }
    }
    let mut counts = vec![0u64; r];
    for (&a, _) in assignment.iter().zip(&keep).filter(|(_, &k)| k) {
        counts[a as usize] += 1;
    }
    Ok(ConfidenceScores {
        confidence,
        keep,
        counts,
    })
}

/// Runs the whole client step against downloaded centroids.
pub fn score_client(
    client: &FeatureDataset,
    centroids: &FeatureDataset,
    params: &ScoringParams,
    seed: u64,
) -> Result<ScoreReport> {
    params.validate()?;
    let noisy = if params.confidence_mode {
        let rows = subsample_rows(
            client.n(),
            params.gamma,
            params.subsample_mode,
            derive_seed(seed, STREAM_SUBSAMPLE),
        );
        let sub = client.subset(&rows)?;
        let conf = confidence_scores(&sub, centroids, params.keep_fraction)?;
        add_noise(
            &conf.combined(),
            params.sigma,
            derive_seed(seed, STREAM_NOISE),
        )
    } else {
        let v = coverage_scores(client, centroids)?;
        privatize_scores(&v, params.sigma, params.gamma, params.subsample_mode, seed)?
    };
    Ok(ScoreReport {
        r: centroids.n(),
        scores: scale_scores(&noisy, params.scale_s)?,
        params: params.clone(),
        seed,
    })
}

/// Multiply-accumulate estimate of the client work:
/// `c_phi * client_n + (d_e + 1) * r * client_n`.
pub fn client_cost_estimate(client_n: u64, r: u64, d_e: u64, c_phi: f64) -> f64 {
    c_phi * client_n as f64 + ((d_e + 1) * r * client_n) as f64
}
