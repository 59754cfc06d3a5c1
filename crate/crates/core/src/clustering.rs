//! Seeded k-means compression of the cloud features into `r` centroids.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{nearest, sq_dist, FeatureDataset};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const DEFAULT_R: usize = 100;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Centroids plus the cloud-side partition they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: FeatureDataset,
    assignment: Vec<u32>,
    cluster_sizes: Vec<usize>,
    seed: u64,
    iters_run: usize,
    max_iters: usize,
    tol: f64,
    sse_history: Vec<f64>,
}

/// JSON form of a codebook; the assignment travels in a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub r: usize,
    pub dim: usize,
    pub seed: u64,
    pub iters_run: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub centroids: Vec<Vec<f32>>,
    pub cluster_sizes: Vec<usize>,
}

impl Codebook {
    pub fn r(&self) -> usize {
        self.centroids.n()
    }

    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    /// Centroids as an `r x dim` dataset.
    pub fn centroids(&self) -> &FeatureDataset {
        &self.centroids
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iters_run(&self) -> usize {
        self.iters_run
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Within-cluster SSE after each assignment step, the last entry being the
    /// final partition. Empty for codebooks loaded from disk.
    pub fn sse_history(&self) -> &[f64] {
        &self.sse_history
    }

    /// Cloud row indices of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.r()];
        for (i, &a) in self.assignment.iter().enumerate() {
            members[a as usize].push(i);
        }
        members
    }

    pub fn assign(&self, ds: &FeatureDataset) -> Result<Vec<u32>> {
        assign(&self.centroids, ds)
    }

    pub fn to_file(&self) -> CodebookFile {
        CodebookFile {
            r: self.r(),
            dim: self.dim(),
            seed: self.seed,
            iters_run: self.iters_run,
            max_iters: self.max_iters,
            tol: self.tol,
            centroids: self.centroids.rows().map(<[f32]>::to_vec).collect(),
            cluster_sizes: self.cluster_sizes.clone(),
        }
    }

    /// Rebuilds a codebook from its JSON form and the stored assignment,
    /// checking that the two agree.
    pub fn from_parts(file: CodebookFile, assignment: Vec<u32>) -> Result<Self> {
        if file.centroids.len() != file.r || file.cluster_sizes.len() != file.r {
            return Err(Error::invalid(format!(
                "codebook declares r = {} but has {} centroids and {} sizes",
                file.r,
                file.centroids.len(),
                file.cluster_sizes.len()
            )));
        }
        let centroids = FeatureDataset::from_rows(&file.centroids)?;
        if file.r > 0 && centroids.dim() != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                found: centroids.dim(),
            });
        }
        let mut sizes = vec![0usize; file.r];
        for &a in &assignment {
            let slot = sizes
                .get_mut(a as usize)
                .ok_or_else(|| Error::invalid(format!("assignment {a} out of range")))?;
            *slot += 1;
        }
        if sizes != file.cluster_sizes {
            return Err(Error::invalid(
                "assignment does not match the codebook's cluster sizes",
            ));
        }
        Ok(Self {
            centroids,
            assignment,
            cluster_sizes: sizes,
            seed: file.seed,
            iters_run: file.iters_run,
            max_iters: file.max_iters,
            tol: file.tol,
            sse_history: Vec::new(),
        })
    }

    /// Writes the codebook JSON and the assignment as raw little-endian i32.
    pub fn save(&self, json_path: &Path, assignment_path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_file())?;
        fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
        let bytes: Vec<u8> = self
            .assignment
            .iter()
            .flat_map(|&a| (a as i32).to_le_bytes())
            .collect();
        fs::write(assignment_path, bytes).map_err(|e| Error::io(assignment_path, e))
    }

    pub fn load(json_path: &Path, assignment_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let file: CodebookFile = serde_json::from_str(&text)?;
        let bytes = fs::read(assignment_path).map_err(|e| Error::io(assignment_path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                message: "assignment file length is not a multiple of 4".into(),
            });
        }
        let mut assignment = Vec::with_capacity(bytes.len() / 4);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = i32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            if v < 0 {
                return Err(Error::Format {
                    offset: 4 * k as u64,
                    message: format!("negative cluster index {v}"),
                });
            }
            assignment.push(v as u32);
        }
        Self::from_parts(file, assignment)
    }
}

/// Nearest centroid per row, lowest index on ties.
pub fn assign(centroids: &FeatureDataset, ds: &FeatureDataset) -> Result<Vec<u32>> {
    if centroids.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            found: ds.dim(),
        });
    }
    if centroids.is_empty() {
        return Err(Error::invalid("codebook has no centroids"));
    }
    let dim = ds.dim();
    let refs = centroids.data();
    Ok((0..ds.n())
        .into_par_iter()
        .map(|i| nearest(ds.row(i), refs, dim).1 as u32)
        .collect())
}

fn nearest_all(data: &FeatureDataset, centroids: &[f32]) -> Vec<(f64, usize)> {
    let dim = data.dim();
    (0..data.n())
        .into_par_iter()
        .map(|i| nearest(data.row(i), centroids, dim))
        .collect()
}

/// Assigns every row to its nearest centroid and repairs empty clusters by
/// moving the centroid onto the point farthest from its own centroid, until
/// no cluster is empty. Returns the assignment and its SSE.
fn assign_repaired(
    data: &FeatureDataset,
    centroids: &mut [f32],
    r: usize,
) -> Result<(Vec<u32>, f64)> {
    let dim = data.dim();
    loop {
        let near = nearest_all(data, centroids);
        let mut sizes = vec![0usize; r];
        for &(_, a) in &near {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            let sse = near.iter().map(|&(d, _)| d).sum();
            return Ok((near.into_iter().map(|(_, a)| a as u32).collect(), sse));
        };
        let mut far = (0.0f64, usize::MAX);
        for (i, &(d, _)) in near.iter().enumerate() {
            if d > far.0 {
                far = (d, i);
            }
        }
        if far.1 == usize::MAX {
            return Err(Error::invalid(format!(
                "r = {r} exceeds the number of distinct cloud points"
            )));
        }
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(data.row(far.1));
    }
}

/// Index whose cumulative weight first exceeds `target`, skipping zero weights.
fn draw_weighted(weights: &[f64], target: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

fn kmeans_plus_plus(data: &FeatureDataset, r: usize, seed: u64) -> Vec<f32> {
    let n = data.n();
    let dim = data.dim();
    let mut rng = rng_from_seed(seed);
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(r * dim);

    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(data.row(first));
    let mut min_d: Vec<f64> = data.rows().map(|x| sq_dist(x, data.row(first))).collect();

    let trials = 2 + (r as f64).ln() as usize;
    for _ in 1..r {
        let total: f64 = min_d.iter().sum();
        if !(total > 0.0) {
            // Only duplicates left; the repair step reports this if it matters.
            let pick = chosen.iter().position(|&c| !c).unwrap_or(0);
            chosen[pick] = true;
            centroids.extend_from_slice(data.row(pick));
            continue;
        }
        // Greedy seeding: draw several D²-weighted candidates and keep the
        // one that lowers the potential most.
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = draw_weighted(&min_d, rng.random::<f64>() * total);
            let c = data.row(cand);
            let next: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| min_d[i].min(sq_dist(data.row(i), c)))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        chosen[pick] = true;
        centroids.extend_from_slice(data.row(pick));
        min_d = next;
    }
    centroids
}

fn cluster_means(
    data: &FeatureDataset,
    assignment: &[u32],
    previous: &[f32],
    r: usize,
) -> Vec<f32> {
    let dim = data.dim();
    let mut sums = vec![0f64; r * dim];
    let mut counts = vec![0usize; r];
    for (i, &a) in assignment.iter().enumerate() {
        let a = a as usize;
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(data.row(i)) {
            *s += f64::from(x);
        }
    }
    let mut out = previous.to_vec();
    for k in 0..r {
        if counts[k] == 0 {
            continue;
        }
        let inv = counts[k] as f64;
        for j in 0..dim {
            out[k * dim + j] = (sums[k * dim + j] / inv) as f32;
        }
    }
    out
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// Stops once the largest squared centroid shift is at most
/// `tol * mean_sq_norm(cloud)` or after `max_iters` iterations. The returned
/// assignment is always the nearest-centroid partition under the final
/// centroids, with no empty cluster.
pub fn kmeans_compress(
    cloud: &FeatureDataset,
    r: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Codebook> {
    if r == 0 {
        return Err(Error::invalid("r must be ≥ 1"));
    }
    if r > cloud.n() {
        return Err(Error::invalid(format!(
            "r = {r} exceeds the {} cloud rows",
            cloud.n()
        )));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be ≥ 1"));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("tol must be ≥ 0"));
    }
    let dim = cloud.dim();
    let threshold = tol * cloud.mean_sq_norm();
    let mut centroids = kmeans_plus_plus(cloud, r, seed);
    let mut sse_history: Vec<f64> = Vec::new();
    let mut iters_run = 0;

    for iter in 1..=max_iters {
        let (assignment, sse) = assign_repaired(cloud, &mut centroids, r)?;
        if let Some(&prev) = sse_history.last() {
            debug_assert!(
                sse <= prev + 1e-9 * prev.abs() + 1e-12,
                "SSE increased: {prev} -> {sse}"
            );
        }
        sse_history.push(sse);
        let next = cluster_means(cloud, &assignment, &centroids, r);
        let shift = centroids
            .chunks_exact(dim.max(1))
            .zip(next.chunks_exact(dim.max(1)))
            .map(|(a, b)| sq_dist(a, b))
            .fold(0.0f64, f64::max);
        centroids = next;
        iters_run = iter;
        if shift <= threshold {
            break;
        }
    }

    let (assignment, sse) = assign_repaired(cloud, &mut centroids, r)?;
    sse_history.push(sse);
    let mut cluster_sizes = vec![0usize; r];
    for &a in &assignment {
        cluster_sizes[a as usize] += 1;
    }
    Ok(Codebook {
        centroids: FeatureDataset::new(dim, centroids, None, None)?,
        assignment,
        cluster_sizes,
        seed,
        iters_run,
        max_iters,
        tol,
        sse_history,
    })
}
