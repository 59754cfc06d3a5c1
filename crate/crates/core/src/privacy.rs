//! Rényi-DP accounting for the noised coverage-score query.
//!
//! Curves are evaluated on a grid of orders α. The Poisson-subsampled Gaussian
//! mechanism is computed exactly at integer orders through
//!
//! ```text
//! A_α = Σ_{k=0}^{α} C(α, k) (1 − γ)^{α−k} γ^k exp((k² − k) / (2 z²)),   z = σ / Δ₂
//! ε(α) = ln(A_α) / (α − 1)
//! ```
//!
//! summed in log space. Conversion to (ε, δ)-DP takes the best order of
//! `ε(α) + ln(1/δ) / (α − 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise std used when nothing else is configured.
pub const DEFAULT_SIGMA: f64 = 25.0;
/// L2 sensitivity of the raw count vector: one absent client row moves the
/// scores by 2 in total.
pub const DEFAULT_SENSITIVITY: f64 = 2.0;
pub const DEFAULT_DELTA: f64 = 1e-5;

const FRACTIONAL_ORDERS: [f64; 3] = [1.25, 1.5, 1.75];
/// Orders past 256. Small sampling rates with large noise put the optimum for
/// the (ε, δ) conversion in the thousands.
const TAIL_ORDERS: [u32; 20] = [
    320, 384, 448, 512, 640, 768, 896, 1024, 1280, 1536, 1792, 2048, 2560, 3072, 3584, 4096, 5120,
    6144, 7168, 8192,
];

/// Integer orders 2..=256 followed by the sparse tail up to 8192.
pub fn integer_orders() -> Vec<f64> {
    (2..=256u32).chain(TAIL_ORDERS).map(f64::from).collect()
}

/// Default grid for a mechanism with sampling rate `gamma`. Fractional orders
/// are only available without subsampling, where the curve is closed-form.
pub fn default_orders(gamma: f64) -> Vec<f64> {
    if gamma >= 1.0 {
        FRACTIONAL_ORDERS
            .into_iter()
            .chain(integer_orders())
            .collect()
    } else {
        integer_orders()
    }
}

/// ε(α) on a grid of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub eps_rdp: Vec<f64>,
}

impl RdpCurve {
    /// The curve of a mechanism that reveals nothing.
    pub fn zero(orders: &[f64]) -> Self {
        Self {
            orders: orders.to_vec(),
            eps_rdp: vec![0.0; orders.len()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn at(&self, alpha: f64) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == alpha)
            .map(|i| self.eps_rdp[i])
    }
}

fn check_orders(orders: &[f64]) -> Result<()> {
    if let Some(&bad) = orders.iter().find(|&&a| !(a > 1.0) || !a.is_finite()) {
        return Err(Error::invalid(format!("RDP order {bad} must be > 1")));
    }
    Ok(())
}

fn check_noise(sigma: f64, sensitivity: f64) -> Result<()> {
    if sigma == 0.0 {
        return Err(Error::NonPrivate);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(Error::invalid(format!(
            "sensitivity must be > 0, got {sensitivity}"
        )));
    }
    Ok(())
}

/// Gaussian mechanism: ε(α) = α Δ₂² / (2σ²).
pub fn gaussian_rdp(sigma: f64, sensitivity: f64, orders: &[f64]) -> Result<RdpCurve> {
    check_noise(sigma, sensitivity)?;
    check_orders(orders)?;
    let coef = sensitivity * sensitivity / (2.0 * sigma * sigma);
    Ok(RdpCurve {
        orders: orders.to_vec(),
        eps_rdp: orders.iter().map(|&a| a * coef).collect(),
    })
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// ln A_α for integer α ≥ 2; `z` is the noise multiplier σ/Δ₂.
fn log_a_int(gamma: f64, z: f64, alpha: u64) -> f64 {
    let log_q = gamma.ln();
    let log_1mq = (-gamma).ln_1p();
    let inv_2z2 = 1.0 / (2.0 * z * z);
    let mut log_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((alpha - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let term = log_binom + kf * log_q + (alpha - k) as f64 * log_1mq + (kf * kf - kf) * inv_2z2;
        acc = log_add(acc, term);
    }
    acc
}

/// Poisson-subsampled Gaussian mechanism at integer orders.
///
/// At `gamma == 1` this is exactly [`gaussian_rdp`] and fractional orders are
/// allowed; below 1 every order must be an integer.
pub fn subsampled_gaussian_rdp(
    sigma: f64,
    sensitivity: f64,
    gamma: f64,
    orders: &[f64],
) -> Result<RdpCurve> {
    check_noise(sigma, sensitivity)?;
    check_orders(orders)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return gaussian_rdp(sigma, sensitivity, orders);
    }
    if let Some(&bad) = orders.iter().find(|&&a| a.fract() != 0.0) {
        return Err(Error::invalid(format!(
            "order {bad} is not an integer; the exact subsampled curve needs integer orders"
        )));
    }
    let z = sigma / sensitivity;
    let eps_rdp = orders
        .iter()
        .map(|&a| {
            let eps = log_a_int(gamma, z, a as u64) / (a - 1.0);
            eps.max(0.0)
        })
        .collect();
    Ok(RdpCurve {
        orders: orders.to_vec(),
        eps_rdp,
    })
}

/// Asymptotic ceiling `24 γ² α / σ²` on the subsampled curve.
pub fn asymptotic_rdp_bound(sigma: f64, gamma: f64, alpha: f64) -> f64 {
    24.0 * gamma * gamma * alpha / (sigma * sigma)
}

/// Whether [`asymptotic_rdp_bound`] is claimed to hold at these parameters:
/// `γ ≤ 0.1`, `σ ≥ 2√5` and `α ≤ σ² ln(1/γ) / 2`.
pub fn asymptotic_bound_applies(sigma: f64, gamma: f64, alpha: f64) -> bool {
    gamma > 0.0
        && gamma <= 0.1
        && sigma >= 2.0 * 5f64.sqrt()
        && alpha > 1.0
        && alpha <= sigma * sigma * (1.0 / gamma).ln() / 2.0
}

/// Best (ε, α) for the conversion `ε(α) + ln(1/δ)/(α − 1)`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    if curve.is_empty() {
        return Err(Error::invalid("RDP curve is empty"));
    }
    let log_inv_delta = (1.0 / delta).ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&a, &e) in curve.orders.iter().zip(&curve.eps_rdp) {
        let eps = e + log_inv_delta / (a - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok(best)
}

/// Order at which the closed form below is evaluated:
/// `1 + sqrt(ln(1/δ)) / sqrt(24 γ² / σ²)`.
pub fn closed_form_alpha(sigma: f64, gamma: f64, delta: f64) -> f64 {
    1.0 + (1.0 / delta).ln().sqrt() / (24.0 * gamma * gamma / (sigma * sigma)).sqrt()
}

/// `24 γ²/σ² + 4 (γ/σ) sqrt(6 ln(1/δ))`, valid for
/// `γ ≤ min{0.1, σ sqrt(ln(1/δ)/6)}` and `σ ≥ 2√5`.
pub fn closed_form_bound(sigma: f64, gamma: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    let log_inv_delta = (1.0 / delta).ln();
    if !(sigma >= 2.0 * 5f64.sqrt()) {
        return Err(Error::invalid(format!(
            "closed form out of range: sigma = {sigma} < 2*sqrt(5)"
        )));
    }
    let gamma_max = 0.1f64.min(sigma * (log_inv_delta / 6.0).sqrt());
    if gamma > gamma_max {
        return Err(Error::invalid(format!(
            "closed form out of range: gamma = {gamma} > {gamma_max}"
        )));
    }
    let ratio = gamma / sigma;
    Ok(24.0 * ratio * ratio + 4.0 * ratio * (6.0 * log_inv_delta).sqrt())
}

/// How the client drew the rows it scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleMode {
    /// Each row kept independently with probability γ.
    #[default]
    Poisson,
    /// ⌈γ n⌉ rows drawn uniformly with replacement. Accounted with the
    /// Poisson curve at rate γ, which is an approximation for this mode.
    Replacement,
}

impl std::str::FromStr for SubsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "replacement" => Ok(Self::Replacement),
            other => Err(Error::invalid(format!("unknown subsample mode {other:?}"))),
        }
    }
}

/// What a ledger entry accounts for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kind: String,
    pub sigma: f64,
    pub sensitivity: f64,
    pub gamma: f64,
    pub subsample_mode: SubsampleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: Mechanism,
    pub curve: RdpCurve,
}

/// RDP curves of every query released so far and their per-order sum.
///
/// A ledger holding a zero-noise query is marked non-private and has no
/// finite ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub entries: Vec<LedgerEntry>,
    pub composed: RdpCurve,
    pub non_private: bool,
}

/// Serialized ledger with its (ε, δ) view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub best_alpha: Option<f64>,
    pub non_private: bool,
    pub entries: Vec<LedgerEntry>,
    pub composed: RdpCurve,
}

impl PrivacyLedger {
    pub fn new(orders: &[f64]) -> Self {
        Self {
            entries: Vec::new(),
            composed: RdpCurve::zero(orders),
            non_private: false,
        }
    }

    /// (ε, best α) of the composition, or `None` for a non-private ledger.
    pub fn epsilon(&self, delta: f64) -> Result<Option<(f64, f64)>> {
        if self.non_private {
            return Ok(None);
        }
        rdp_to_dp(&self.composed, delta).map(Some)
    }

    pub fn report(&self, delta: f64) -> Result<LedgerReport> {
        let eps = self.epsilon(delta)?;
        Ok(LedgerReport {
            delta,
            epsilon: eps.map(|e| e.0),
            best_alpha: eps.map(|e| e.1),
            non_private: self.non_private,
            entries: self.entries.clone(),
            composed: self.composed.clone(),
        })
    }
}

/// Adds `curve` to the ledger order by order. Both must share one grid.
pub fn compose(
    ledger: &PrivacyLedger,
    mechanism: Mechanism,
    curve: RdpCurve,
) -> Result<PrivacyLedger> {
    if ledger.composed.orders != curve.orders {
        return Err(Error::invalid("RDP curves use different order grids"));
    }
    let mut out = ledger.clone();
    for (sum, e) in out.composed.eps_rdp.iter_mut().zip(&curve.eps_rdp) {
        *sum += e;
    }
    out.entries.push(LedgerEntry { mechanism, curve });
    Ok(out)
}

/// Ledger for one noised scoring query. The result depends only on the noise,
/// sensitivity and sampling parameters.
pub fn account_scoring_query(
    sigma: f64,
    sensitivity: f64,
    gamma: f64,
    mode: SubsampleMode,
) -> Result<PrivacyLedger> {
    let orders = default_orders(gamma);
    let mechanism = Mechanism {
        kind: "subsampled_gaussian".into(),
        sigma,
        sensitivity,
        gamma,
        subsample_mode: mode,
    };
    let ledger = PrivacyLedger::new(&orders);
    match subsampled_gaussian_rdp(sigma, sensitivity, gamma, &orders) {
        Ok(curve) => compose(&ledger, mechanism, curve),
        Err(Error::NonPrivate) => {
            let mut ledger = ledger;
            ledger.non_private = true;
            ledger.entries.push(LedgerEntry {
                mechanism,
                curve: RdpCurve {
                    orders: Vec::new(),
                    eps_rdp: Vec::new(),
                },
            });
            Ok(ledger)
        }
        Err(e) => Err(e),
    }
}
