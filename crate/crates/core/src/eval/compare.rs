use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::diversity::{kcenter_select, random_select};
use crate::error::{Error, Result};
use crate::eval::metrics::{centroid_proximity, diversity_metric, id_tpr, proximity_metric};
use crate::protocol::{run_protocol, ProtocolConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ecos,
    Random,
    KCenter,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ecos, Method::Random, Method::KCenter];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ecos => "ecos",
            Method::Random => "random",
            Method::KCenter => "kcenter",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecos" => Ok(Method::Ecos),
            "random" => Ok(Method::Random),
            "kcenter" | "k-center" => Ok(Method::KCenter),
            other => Err(Error::invalid(format!(
                "unknown method {other:?} (expected ecos, random or kcenter)"
            ))),
        }
    }
}

/// Metrics of one (method, seed, budget) run. Metrics are `None` when the
/// selection is empty or, for `id_tpr`, when domain tags are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub seed: u64,
    pub budget: usize,
    /// Mean squared distance from client rows to the selection.
    pub proximity: Option<f64>,
    /// Covering radius of the selection over the cloud.
    pub diversity: Option<f64>,
    pub id_tpr: Option<f64>,
    pub effective_samples: usize,
    /// Zero for the baselines, which never query the client.
    pub epsilon: Option<f64>,
    pub bytes_down: u64,
    pub bytes_up: u64,
    /// ECOS only: mean over clusters that received budget of the squared
    /// distance from their centroid to the selection.
    pub centroid_proximity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// ECOS parameters; `seed` is replaced by each trial seed and `budget`
    /// applies to every method.
    pub protocol: ProtocolConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Domains counted as in-distribution. Defaults to the client's tags.
    pub client_domains: Option<Vec<u32>>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolConfig::default(),
            seeds: vec![1, 2, 3],
            methods: Method::ALL.to_vec(),
            client_domains: None,
        }
    }
}

fn resolve_domains(cfg: &CompareConfig, client: &FeatureDataset) -> Option<Vec<u32>> {
    cfg.client_domains.clone().or_else(|| {
        client.domains().map(|d| {
            let mut ids = d.to_vec();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
    })
}

fn evaluate(
    method: Method,
    seed: u64,
    cloud: &FeatureDataset,
    client: &FeatureDataset,
    cfg: &CompareConfig,
    domains: Option<&[u32]>,
) -> Result<EvalReport> {
    let budget = cfg.protocol.budget;
    let mut report = EvalReport {
        method,
        seed,
        budget,
        proximity: None,
        diversity: None,
        id_tpr: None,
        effective_samples: 0,
        epsilon: Some(0.0),
        bytes_down: 0,
        bytes_up: 0,
        centroid_proximity: None,
    };
    let indices = match method {
        Method::Ecos => {
            let config = ProtocolConfig {
                seed,
                ..cfg.protocol.clone()
            };
            let run = run_protocol(cloud, client, &config)?;
            let sel = run.selection();
            report.epsilon = sel.ledger.epsilon;
            report.bytes_down = sel.bytes_down;
            report.bytes_up = sel.bytes_up;
            if !sel.indices.is_empty() {
                let used: Vec<usize> = sel.per_cluster.keys().map(|&r| r as usize).collect();
                let centroids = run.codebook.centroids().subset(&used)?;
                let picked = cloud.subset(&sel.indices)?;
                report.centroid_proximity = Some(centroid_proximity(&centroids, &picked)?);
            }
            sel.indices.clone()
        }
        Method::Random => random_select(cloud.n(), budget.min(cloud.n()), seed)?,
        Method::KCenter => {
            if budget == 0 || cloud.is_empty() {
                Vec::new()
            } else {
                kcenter_select(cloud, None, budget.min(cloud.n()), seed)?.indices
            }
        }
    };
    report.effective_samples = indices.len();
    if indices.is_empty() {
        return Ok(report);
    }
    let picked = cloud.subset(&indices)?;
    report.proximity = Some(proximity_metric(&picked, client)?);
    report.diversity = Some(diversity_metric(&picked, cloud)?);
    if let (Some(ids), Some(_)) = (domains, cloud.domains()) {
        report.id_tpr = Some(id_tpr(&indices, cloud, ids)?);
    }
    Ok(report)
}

/// One report per (method, seed), in method-major order. Runs in parallel.
pub fn compare_methods(
    cloud: &FeatureDataset,
    client: &FeatureDataset,
    cfg: &CompareConfig,
) -> Result<Vec<EvalReport>> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(Error::invalid("need at least one seed and one method"));
    }
    if cloud.dim() != client.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            found: client.dim(),
        });
    }
    let domains = resolve_domains(cfg, client);
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    jobs.par_iter()
        .map(|&(m, s)| evaluate(m, s, cloud, client, cfg, domains.as_deref()))
        .collect()
}

/// Runs [`compare_methods`] once per budget.
pub fn sweep(
    cloud: &FeatureDataset,
    client: &FeatureDataset,
    cfg: &CompareConfig,
    budgets: &[usize],
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &budget in budgets {
        let mut c = cfg.clone();
        c.protocol.budget = budget;
        out.extend(compare_methods(cloud, client, &c)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Runs that produced a value.
    pub n: usize,
}

fn stat(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
    let xs: Vec<f64> = values.flatten().collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(Stat {
        mean,
        std: var.sqrt(),
        n: xs.len(),
    })
}

/// Seed-averaged metrics for one (method, budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub budget: usize,
    pub runs: usize,
    pub proximity: Option<Stat>,
    pub diversity: Option<Stat>,
    pub id_tpr: Option<Stat>,
    pub effective_samples: Option<Stat>,
    pub epsilon: Option<Stat>,
}

/// Mean and sample standard deviation per (method, budget), in first-seen order.
pub fn summarize(reports: &[EvalReport]) -> Vec<MethodSummary> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in reports {
        if !keys.contains(&(r.method, r.budget)) {
            keys.push((r.method, r.budget));
        }
    }
    keys.into_iter()
        .map(|(method, budget)| {
            let group: Vec<&EvalReport> = reports
                .iter()
                .filter(|r| r.method == method && r.budget == budget)
                .collect();
            MethodSummary {
                method,
                budget,
                runs: group.len(),
                proximity: stat(group.iter().map(|r| r.proximity)),
                diversity: stat(group.iter().map(|r| r.diversity)),
                id_tpr: stat(group.iter().map(|r| r.id_tpr)),
                effective_samples: stat(group.iter().map(|r| Some(r.effective_samples as f64))),
                epsilon: stat(group.iter().map(|r| r.epsilon)),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow {
    method: Method,
    seed: u64,
    budget: usize,
    proximity: Option<f64>,
    diversity: Option<f64>,
    id_tpr: Option<f64>,
    effective_samples: usize,
    epsilon: Option<f64>,
    bytes_down: u64,
    bytes_up: u64,
}

/// Sweep table, one row per report. Missing metrics are empty cells.
pub fn write_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(CsvRow {
            method: r.method,
            seed: r.seed,
            budget: r.budget,
            proximity: r.proximity,
            diversity: r.diversity,
            id_tpr: r.id_tpr,
            effective_samples: r.effective_samples,
            epsilon: r.epsilon,
            bytes_down: r.bytes_down,
            bytes_up: r.bytes_up,
        })
        .map_err(|e| Error::Message(format!("writing csv: {e}")))?;
    }
    out.flush()
        .map_err(|e| Error::Message(format!("writing csv: {e}")))?;
    Ok(())
}
