//! Wire messages exchanged between cloud and client, and byte accounting.
//!
//! Every message is JSON with a fixed field order so that replays serialize
//! identically. The uplink carries nothing about the client beyond the `r`
//! noised scores and the mechanism parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::privacy::{LedgerReport, SubsampleMode};
use crate::protocol::budget::BudgetPlan;
use crate::protocol::ProtocolConfig;
use crate::scoring::ScoringParams;

pub const PROTOCOL: &str = "ecos/1";
pub const STAGE_CENTROIDS: &str = "centroids";
pub const STAGE_SCORES: &str = "scores";
pub const STAGE_SELECTION: &str = "selection";

/// Fixed framing per downlink message: r, dim and quant_bits as u32.
pub const DOWNLINK_HEADER_BYTES: u64 = 12;
/// Fixed framing per uplink message: r as u32, four f32 parameters, one flag byte.
pub const UPLINK_HEADER_BYTES: u64 = 21;

/// Bits per transmitted scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum QuantBits {
    Eight,
    #[default]
    ThirtyTwo,
}

impl QuantBits {
    pub fn bits(self) -> u32 {
        match self {
            QuantBits::Eight => 8,
            QuantBits::ThirtyTwo => 32,
        }
    }

    pub fn bytes(self) -> u64 {
        u64::from(self.bits() / 8)
    }
}

impl TryFrom<u32> for QuantBits {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(QuantBits::Eight),
            32 => Ok(QuantBits::ThirtyTwo),
            other => Err(Error::invalid(format!(
                "quant_bits must be 8 or 32, got {other}"
            ))),
        }
    }
}

impl From<QuantBits> for u32 {
    fn from(q: QuantBits) -> u32 {
        q.bits()
    }
}

/// Payload sizes of one protocol round. Headers are reported apart from the
/// payloads: `bytes_down = r * d_e * bits / 8`, `bytes_up = r * bits / 8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireStats {
    pub quant_bits: QuantBits,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub header_down: u64,
    pub header_up: u64,
}

pub fn wire_stats(r: u64, d_e: u64, quant_bits: QuantBits) -> WireStats {
    let per = quant_bits.bytes();
    let quant_header = match quant_bits {
        // per-dimension min and scale as f32
        QuantBits::Eight => 8 * d_e,
        QuantBits::ThirtyTwo => 0,
    };
    WireStats {
        quant_bits,
        bytes_down: r * d_e * per,
        bytes_up: r * per,
        header_down: DOWNLINK_HEADER_BYTES + quant_header,
        header_up: UPLINK_HEADER_BYTES,
    }
}

/// Per-dimension affine parameters: `x ≈ min + code * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub min: Vec<f32>,
    pub scale: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CentroidPayload {
    Codes(Vec<Vec<u8>>),
    Values(Vec<Vec<f32>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownlinkMessage {
    pub protocol: String,
    pub stage: String,
    pub r: usize,
    pub dim: usize,
    pub quant_bits: QuantBits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant_params: Option<QuantParams>,
    pub centroids: CentroidPayload,
}

fn quantize(centroids: &FeatureDataset) -> (QuantParams, Vec<Vec<u8>>) {
    let dim = centroids.dim();
    let mut min = vec![f32::INFINITY; dim];
    let mut max = vec![f32::NEG_INFINITY; dim];
    for row in centroids.rows() {
        for j in 0..dim {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }
    let scale: Vec<f32> = min
        .iter()
        .zip(&max)
        .map(|(&lo, &hi)| ((f64::from(hi) - f64::from(lo)) / 255.0) as f32)
        .collect();
    let codes = centroids
        .rows()
        .map(|row| {
            (0..dim)
                .map(|j| {
                    if scale[j] > 0.0 {
                        let c = (f64::from(row[j]) - f64::from(min[j])) / f64::from(scale[j]);
                        c.round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    (QuantParams { min, scale }, codes)
}

impl DownlinkMessage {
    pub fn new(centroids: &FeatureDataset, quant_bits: QuantBits) -> Self {
        let (quant_params, payload) = match quant_bits {
            QuantBits::ThirtyTwo => (
                None,
                CentroidPayload::Values(centroids.rows().map(<[f32]>::to_vec).collect()),
            ),
            QuantBits::Eight => {
                let (params, codes) = quantize(centroids);
                (Some(params), CentroidPayload::Codes(codes))
            }
        };
        Self {
            protocol: PROTOCOL.into(),
            stage: STAGE_CENTROIDS.into(),
            r: centroids.n(),
            dim: centroids.dim(),
            quant_bits,
            quant_params,
            centroids: payload,
        }
    }

    /// Centroids as the client sees them, dequantized when needed.
    pub fn decode(&self) -> Result<FeatureDataset> {
        check_header(&self.protocol, &self.stage, STAGE_CENTROIDS)?;
        let rows: Vec<Vec<f32>> = match (&self.centroids, self.quant_bits) {
            (CentroidPayload::Values(v), QuantBits::ThirtyTwo) => v.clone(),
            (CentroidPayload::Codes(c), QuantBits::ThirtyTwo) => c
                .iter()
                .map(|row| row.iter().map(|&x| f32::from(x)).collect())
                .collect(),
            (CentroidPayload::Codes(c), QuantBits::Eight) => {
                let q = self
                    .quant_params
                    .as_ref()
                    .ok_or_else(|| Error::Message("8-bit centroids without quant_params".into()))?;
                if q.min.len() != self.dim || q.scale.len() != self.dim {
                    return Err(Error::Message(
                        "quant_params length differs from dim".into(),
                    ));
                }
                c.iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .map(|(j, &code)| q.min[j] + f32::from(code) * q.scale[j])
                            .collect()
                    })
                    .collect()
            }
            (CentroidPayload::Values(_), QuantBits::Eight) => {
                return Err(Error::Message(
                    "8-bit message carries non-integer codes".into(),
                ))
            }
        };
        if rows.len() != self.r {
            return Err(Error::Message(format!(
                "declared r = {} but {} centroids were sent",
                self.r,
                rows.len()
            )));
        }
        if let Some(row) = rows.iter().find(|row| row.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        FeatureDataset::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UplinkMessage {
    pub protocol: String,
    pub stage: String,
    pub r: usize,
    pub scores: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub scale_s: f64,
    pub sensitivity: f64,
    pub confidence_mode: bool,
    pub subsample_mode: SubsampleMode,
    pub keep_fraction: f64,
}

impl UplinkMessage {
    pub fn new(scores: Vec<f64>, params: &ScoringParams) -> Self {
        Self {
            protocol: PROTOCOL.into(),
            stage: STAGE_SCORES.into(),
            r: scores.len(),
            scores,
            sigma: params.sigma,
            gamma: params.gamma,
            scale_s: params.scale_s,
            sensitivity: params.sensitivity,
            confidence_mode: params.confidence_mode,
            subsample_mode: params.subsample_mode,
            keep_fraction: params.keep_fraction,
        }
    }

    pub fn scoring_params(&self) -> ScoringParams {
        ScoringParams {
            sigma: self.sigma,
            gamma: self.gamma,
            scale_s: self.scale_s,
            sensitivity: self.sensitivity,
            subsample_mode: self.subsample_mode,
            confidence_mode: self.confidence_mode,
            keep_fraction: self.keep_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_header(&self.protocol, &self.stage, STAGE_SCORES)?;
        if self.scores.len() != self.r {
            return Err(Error::Message(format!(
                "declared r = {} but {} scores were sent",
                self.r,
                self.scores.len()
            )));
        }
        self.scoring_params().validate()
    }
}

/// Cloud output: the selected rows with everything needed to audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub protocol: String,
    pub stage: String,
    pub budget: usize,
    /// Selected cloud rows, ascending.
    pub indices: Vec<usize>,
    /// Cluster id to its rows in pick order; clusters with no budget are absent.
    pub per_cluster: BTreeMap<u32, Vec<usize>>,
    pub plan: BudgetPlan,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub wire: WireStats,
    pub wire_8bit: WireStats,
    pub ledger: LedgerReport,
    pub params: ProtocolConfig,
}

/// All three messages of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub protocol: String,
    pub downlink: DownlinkMessage,
    pub uplink: UplinkMessage,
    pub selection: Selection,
}

pub(crate) fn check_header(protocol: &str, stage: &str, want: &str) -> Result<()> {
    if protocol != PROTOCOL {
        return Err(Error::Message(format!("unknown protocol {protocol:?}")));
    }
    if stage != want {
        return Err(Error::Message(format!(
            "expected stage {want:?}, got {stage:?}"
        )));
    }
    Ok(())
}

/// Canonical JSON text for any message; files and replays use this form.
pub fn to_json<T: Serialize>(msg: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(msg)?;
    s.push('\n');
    Ok(s)
}
