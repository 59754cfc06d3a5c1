//! Cloud side of the protocol and end-to-end runs.
//!
//! A run is three stages, each consuming the previous stage's message:
//!
//! 1. cloud: [`cloud_compress`] builds the codebook and the downlink message;
//! 2. client: [`client_respond`] scores its private rows against the centroids;
//! 3. cloud: [`cloud_select`] allocates budgets and decompresses clusters.
//!
//! [`run_protocol`] chains the three in one process, passing every message
//! through its JSON form exactly as the split commands do.

pub mod budget;
pub mod wire;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use budget::{allocate_budgets, BudgetPlan};
pub use wire::{
    wire_stats, DownlinkMessage, QuantBits, Selection, Transcript, UplinkMessage, WireStats,
};

use crate::clustering::{kmeans_compress, Codebook, DEFAULT_MAX_ITERS, DEFAULT_R, DEFAULT_TOL};
use crate::dataset::FeatureDataset;
use crate::diversity::kcenter_select;
use crate::error::{Error, Result, StageExt};
use crate::privacy::{account_scoring_query, PrivacyLedger, DEFAULT_DELTA};
use crate::scoring::{score_client, ScoreReport, ScoringParams};
use crate::seed::{derive_seed, STREAM_CLIENT, STREAM_DECOMPRESS};

/// Every parameter of a run. Embedded in each selection for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub r: usize,
    pub budget: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub quant_bits: QuantBits,
    pub delta: f64,
    #[serde(flatten)]
    pub scoring: ScoringParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            r: DEFAULT_R,
            budget: 1000,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            quant_bits: QuantBits::ThirtyTwo,
            delta: DEFAULT_DELTA,
            scoring: ScoringParams::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::invalid("r must be ≥ 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be ≥ 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol must be ≥ 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        self.scoring.validate()
    }
}

/// Rows chosen by per-cluster k-center decompression.
#[derive(Debug, Clone, PartialEq)]
pub struct Decompressed {
    pub indices: Vec<usize>,
    pub per_cluster: BTreeMap<u32, Vec<usize>>,
}

/// Runs k-center inside every cluster with a positive budget. Cluster `r`
/// draws its first pick from `derive_seed(seed, r)`.
pub fn decompress(
    cloud: &FeatureDataset,
    codebook: &Codebook,
    plan: &BudgetPlan,
    seed: u64,
) -> Result<Decompressed> {
    if codebook.assignment().len() != cloud.n() {
        return Err(Error::invalid(format!(
            "codebook partitions {} rows but the cloud has {}",
            codebook.assignment().len(),
            cloud.n()
        )));
    }
    if plan.budgets.len() != codebook.r() {
        return Err(Error::invalid(format!(
            "plan has {} budgets for {} clusters",
            plan.budgets.len(),
            codebook.r()
        )));
    }
    if let Some(r) = (0..codebook.r()).find(|&r| plan.budgets[r] > codebook.cluster_sizes()[r]) {
        return Err(Error::invalid(format!(
            "budget {} exceeds the {} rows of cluster {r}",
            plan.budgets[r],
            codebook.cluster_sizes()[r]
        )));
    }
    let members = codebook.members();
    let picks: Vec<(u32, Vec<usize>)> = (0..codebook.r())
        .into_par_iter()
        .filter(|&r| plan.budgets[r] > 0)
        .map(|r| {
            let sample = kcenter_select(
                cloud,
                Some(&members[r]),
                plan.budgets[r],
                derive_seed(seed, r as u64),
            )?;
            Ok((r as u32, sample.indices))
        })
        .collect::<Result<_>>()?;
    let mut indices: Vec<usize> = picks.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    indices.sort_unstable();
    Ok(Decompressed {
        indices,
        per_cluster: picks.into_iter().collect(),
    })
}

/// Stage 1: k-means codebook and the downlink message carrying its centroids.
pub fn cloud_compress(
    cloud: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<(Codebook, DownlinkMessage)> {
    let codebook = kmeans_compress(cloud, config.r, config.seed, config.max_iters, config.tol)?;
    let downlink = DownlinkMessage::new(codebook.centroids(), config.quant_bits);
    Ok((codebook, downlink))
}

/// Stage 2: client scoring against the downloaded centroids. `run_seed` is
/// the run's seed; the client stream is derived from it.
pub fn client_respond(
    client: &FeatureDataset,
    downlink: &DownlinkMessage,
    params: &ScoringParams,
    run_seed: u64,
) -> Result<(ScoreReport, UplinkMessage)> {
    let centroids = downlink.decode()?;
    let report = score_client(
        client,
        &centroids,
        params,
        derive_seed(run_seed, STREAM_CLIENT),
    )?;
    let uplink = UplinkMessage::new(report.scores.clone(), &report.params);
    Ok((report, uplink))
}

/// Cloud-side knobs that are not carried by the codebook or the uplink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub budget: usize,
    pub seed: u64,
    pub delta: f64,
    pub quant_bits: QuantBits,
}

/// Stage 3: budgets, decompression, accounting. Deterministic in its inputs,
/// so replaying a recorded uplink reproduces the selection exactly.
pub fn cloud_select(
    cloud: &FeatureDataset,
    codebook: &Codebook,
    uplink: &UplinkMessage,
    opts: SampleOptions,
) -> Result<(Selection, PrivacyLedger)> {
    uplink.validate()?;
    if uplink.r != codebook.r() {
        return Err(Error::Message(format!(
            "uplink has {} scores for {} clusters",
            uplink.r,
            codebook.r()
        )));
    }
    let scoring = uplink.scoring_params();
    let params = ProtocolConfig {
        r: codebook.r(),
        budget: opts.budget,
        seed: opts.seed,
        max_iters: codebook.max_iters(),
        tol: codebook.tol(),
        quant_bits: opts.quant_bits,
        delta: opts.delta,
        scoring,
    };
    params.validate()?;

    let plan = allocate_budgets(codebook.cluster_sizes(), &uplink.scores, opts.budget)?;
    let picked = decompress(
        cloud,
        codebook,
        &plan,
        derive_seed(opts.seed, STREAM_DECOMPRESS),
    )?;
    let ledger = account_scoring_query(
        params.scoring.sigma,
        params.scoring.sensitivity,
        params.scoring.gamma,
        params.scoring.subsample_mode,
    )?;
    let wire = wire_stats(codebook.r() as u64, codebook.dim() as u64, opts.quant_bits);
    let selection = Selection {
        protocol: wire::PROTOCOL.into(),
        stage: wire::STAGE_SELECTION.into(),
        budget: opts.budget,
        indices: picked.indices,
        per_cluster: picked.per_cluster,
        plan,
        bytes_down: wire.bytes_down,
        bytes_up: wire.bytes_up,
        wire,
        wire_8bit: wire_stats(codebook.r() as u64, codebook.dim() as u64, QuantBits::Eight),
        ledger: ledger.report(opts.delta)?,
        params,
    };
    Ok((selection, ledger))
}

/// Everything a single-process run produces.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub codebook: Codebook,
    pub report: ScoreReport,
    pub ledger: PrivacyLedger,
    pub wire: WireStats,
    pub transcript: Transcript,
}

impl ProtocolRun {
    pub fn selection(&self) -> &Selection {
        &self.transcript.selection
    }
}

fn through_json<T: Serialize + serde::de::DeserializeOwned>(msg: &T) -> Result<T> {
    Ok(serde_json::from_str(&wire::to_json(msg)?)?)
}

/// compress → downlink → score → uplink → allocate → decompress.
pub fn run_protocol(
    cloud: &FeatureDataset,
    client: &FeatureDataset,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    config.validate().stage("config")?;
    if cloud.dim() != client.dim() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dim(),
            found: client.dim(),
        })
        .stage("config");
    }
    let (codebook, downlink) = cloud_compress(cloud, config).stage("compress")?;
    let downlink = through_json(&downlink).stage("downlink")?;
    let (report, uplink) =
        client_respond(client, &downlink, &config.scoring, config.seed).stage("score")?;
    let uplink = through_json(&uplink).stage("uplink")?;
    let opts = SampleOptions {
        budget: config.budget,
        seed: config.seed,
        delta: config.delta,
        quant_bits: config.quant_bits,
    };
    let (selection, ledger) = cloud_select(cloud, &codebook, &uplink, opts).stage("sample")?;
    Ok(ProtocolRun {
        wire: selection.wire,
        codebook,
        report,
        ledger,
        transcript: Transcript {
            protocol: wire::PROTOCOL.into(),
            downlink,
            uplink,
            selection,
        },
    })
}
