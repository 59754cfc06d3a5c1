use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, SeededRng};

/// Isotropic Gaussian blobs, one per domain. The client is drawn from
/// `client_domains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub domains: usize,
    pub dim: usize,
    /// Cloud rows per domain.
    pub per_domain: usize,
    pub client_size: usize,
    pub client_domains: Vec<u32>,
    /// Minimum distance between any two domain means.
    pub separation: f64,
    /// Per-coordinate standard deviation of each blob.
    pub blob_std: f64,
    pub seed: u64,
    /// Draw the client from the cloud rows of its domains instead of fresh
    /// samples.
    pub client_overlap: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            domains: 5,
            dim: 8,
            per_domain: 2000,
            client_size: 500,
            client_domains: vec![0],
            separation: 10.0,
            blob_std: 1.0,
            seed: 0,
            client_overlap: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.dim == 0 {
            return Err(Error::invalid("need at least one domain and one dimension"));
        }
        if self.client_domains.is_empty() {
            return Err(Error::invalid("no client domain given"));
        }
        if let Some(&d) = self
            .client_domains
            .iter()
            .find(|&&d| d as usize >= self.domains)
        {
            return Err(Error::invalid(format!(
                "client domain {d} out of range for {} domains",
                self.domains
            )));
        }
        if !(self.separation >= 0.0) || !(self.blob_std >= 0.0) {
            return Err(Error::invalid("separation and blob_std must be ≥ 0"));
        }
        if self.client_overlap && self.client_size > self.per_domain * self.client_domains.len() {
            return Err(Error::invalid(format!(
                "client size {} exceeds the {} cloud rows of the client domains",
                self.client_size,
                self.per_domain * self.client_domains.len()
            )));
        }
        Ok(())
    }

    /// Fraction of cloud rows from the client's domains.
    pub fn base_id_rate(&self) -> f64 {
        let mut ids = self.client_domains.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len() as f64 / self.domains as f64
    }
}

fn gaussian_vec(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Domain means with pairwise distance at least `separation`. With no more
/// domains than dimensions the means are scaled orthonormal vectors, so every
/// pair is exactly `separation` apart.
fn domain_means(spec: &SynthSpec, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let dim = spec.dim;
    if spec.domains <= dim {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.domains);
        while basis.len() < spec.domains {
            let mut v = gaussian_vec(rng, dim);
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let scale = spec.separation / std::f64::consts::SQRT_2;
        return basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * scale).collect())
            .collect();
    }
    let mut half_width = spec.separation * (spec.domains as f64).powf(1.0 / dim as f64);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.domains);
    let mut failures = 0;
    while means.len() < spec.domains {
        let m: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-half_width..=half_width))
            .collect();
        let ok = means.iter().all(|o| {
            o.iter()
                .zip(&m)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                >= spec.separation * spec.separation
        });
        if ok {
            means.push(m);
        } else {
            failures += 1;
            if failures % 100 == 0 {
                half_width *= 1.5;
            }
        }
    }
    means
}

fn draw(rng: &mut SeededRng, mean: &[f64], std: f64, out: &mut Vec<f32>) {
    for &m in mean {
        let z: f64 = rng.sample(StandardNormal);
        out.push((m + std * z) as f32);
    }
}

/// Cloud rows (all domains, tagged) and client rows (client domains, tagged).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(FeatureDataset, FeatureDataset)> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let means = domain_means(spec, &mut rng);

    let n = spec.domains * spec.per_domain;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut domains = Vec::with_capacity(n);
    for (d, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_domain {
            draw(&mut rng, mean, spec.blob_std, &mut data);
            domains.push(d as u32);
        }
    }
    let cloud = FeatureDataset::new(spec.dim, data, None, Some(domains))?;

    let k = spec.client_domains.len();
    let quota = |i: usize| spec.client_size / k + usize::from(i < spec.client_size % k);
    let client = if spec.client_overlap {
        let mut want = vec![0usize; spec.domains];
        for (i, &d) in spec.client_domains.iter().enumerate() {
            want[d as usize] += quota(i);
        }
        let mut rows = Vec::with_capacity(spec.client_size);
        for (d, &w) in want.iter().enumerate() {
            if w > 0 {
                let picked = index::sample(&mut rng, spec.per_domain, w.min(spec.per_domain));
                rows.extend(picked.iter().map(|p| d * spec.per_domain + p));
            }
        }
        cloud.subset(&rows)?
    } else {
        let mut data = Vec::with_capacity(spec.client_size * spec.dim);
        let mut tags = Vec::with_capacity(spec.client_size);
        for (i, &d) in spec.client_domains.iter().enumerate() {
            for _ in 0..quota(i) {
                draw(&mut rng, &means[d as usize], spec.blob_std, &mut data);
                tags.push(d);
            }
        }
        FeatureDataset::new(spec.dim, data, None, Some(tags))?
    };
    Ok((cloud, client))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sq_dist;

    #[test]
    fn default_sizes_and_base_rate() {
        let spec = SynthSpec {
            per_domain: 200,
            client_size: 50,
            ..Default::default()
        };
        let (cloud, client) = generate_synthetic(&spec).unwrap();
        assert_eq!(cloud.n(), 1000);
        assert_eq!(client.n(), 50);
        let id = cloud.domains().unwrap().iter().filter(|&&d| d == 0).count();
        assert_eq!(id as f64 / cloud.n() as f64, 0.2);
        assert_eq!(spec.base_id_rate(), 0.2);
        assert!(client.domains().unwrap().iter().all(|&d| d == 0));
    }

    #[test]
    fn means_are_separated() {
        for domains in [3, 12] {
            let spec = SynthSpec {
                domains,
                dim: 4,
                per_domain: 1,
                client_size: 1,
                blob_std: 0.0,
                ..Default::default()
            };
            let (cloud, _) = generate_synthetic(&spec).unwrap();
            for i in 0..domains {
                for j in 0..i {
                    let d = sq_dist(cloud.row(i), cloud.row(j)).sqrt();
                    assert!(d >= 10.0 - 1e-4, "{domains}: {d}");
                }
            }
        }
    }

    #[test]
    fn overlapping_client_is_a_cloud_subset() {
        let spec = SynthSpec {
            domains: 1,
            per_domain: 30,
            client_size: 10,
            client_overlap: true,
            ..Default::default()
        };
        let (cloud, client) = generate_synthetic(&spec).unwrap();
        assert_eq!(spec.base_id_rate(), 1.0);
        for row in client.rows() {
            assert!(cloud.rows().any(|c| c == row));
        }
        let mut seen: Vec<Vec<u32>> = client
            .rows()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn infeasible_specs() {
        let spec = SynthSpec {
            per_domain: 5,
            client_size: 6,
            client_overlap: true,
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SynthSpec {
            client_domains: vec![7],
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
