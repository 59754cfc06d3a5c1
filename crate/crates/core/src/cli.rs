//! The `ecos` command line.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for usage and
//! validation errors. Failures print one line to stderr, as
//! `error: <kind>: <message>` or, with `--json`, a one-line JSON object.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::clustering::{Codebook, DEFAULT_MAX_ITERS, DEFAULT_R, DEFAULT_TOL};
use crate::dataset::{load_dataset, save_dataset, DataFormat, FeatureDataset};
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, generate_synthetic, summarize, sweep, write_csv, CompareConfig, Method,
    SynthSpec,
};
use crate::privacy::{
    account_scoring_query, closed_form_alpha, closed_form_bound, SubsampleMode, DEFAULT_DELTA,
    DEFAULT_SENSITIVITY, DEFAULT_SIGMA,
};
use crate::protocol::wire::to_json;
use crate::protocol::{
    client_respond, cloud_compress, cloud_select, run_protocol, DownlinkMessage, ProtocolConfig,
    QuantBits, SampleOptions, UplinkMessage,
};
use crate::scoring::{ScoringParams, DEFAULT_KEEP_FRACTION};

#[derive(Debug, Parser)]
#[command(
    name = "ecos",
    version,
    about = "Client/cloud sampling with private coverage scores"
)]
struct Cli {
    /// Machine-readable JSON on stdout and stderr.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster the cloud data and write the codebook and downlink message.
    Compress(CompressArgs),
    /// Score private client rows against downloaded centroids.
    Score(ScoreArgs),
    /// Turn an uplink message into a selection of cloud rows.
    Sample(SampleArgs),
    /// Run all three stages in one process.
    Run(RunArgs),
    /// Privacy cost of one scoring query.
    Account(AccountArgs),
    /// Compare ECOS against the random and k-center baselines.
    Eval(EvalArgs),
    /// Write a synthetic multi-domain cloud and client.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct InputFormat {
    /// For csv inputs: the last column holds an integer class label.
    #[arg(long)]
    trailing_label: bool,
}

impl InputFormat {
    fn load(&self, path: &Path) -> Result<FeatureDataset> {
        load_dataset(path, DataFormat::from_path(path, self.trailing_label))
    }
}

#[derive(Debug, Args)]
struct SeedArg {
    /// Run seed. Falls back to ECOS_SEED, then 0.
    #[arg(long, env = "ECOS_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompressionArgs {
    /// Number of centroids R.
    #[arg(long, default_value_t = DEFAULT_R)]
    r: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Lloyd stops once the largest squared centroid shift is below
    /// tol times the mean squared row norm.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Bits per transmitted centroid coordinate and score: 8 or 32.
    #[arg(long, default_value_t = 32)]
    quant_bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Poisson,
    Replacement,
}

impl From<ModeArg> for SubsampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Poisson => SubsampleMode::Poisson,
            ModeArg::Replacement => SubsampleMode::Replacement,
        }
    }
}

#[derive(Debug, Args)]
struct ScoringArgs {
    /// Noise standard deviation on the raw counts. 0 disables privacy.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Client sampling rate in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Exponent s of the score scale x^s.
    #[arg(long, default_value_t = 1.0)]
    scale_s: f64,
    /// L2 sensitivity of the count vector.
    #[arg(long, default_value_t = DEFAULT_SENSITIVITY)]
    sensitivity: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Poisson)]
    subsample_mode: ModeArg,
    /// Score clusters by class-margin confidence instead of plain coverage.
    /// Needs labelled client rows.
    #[arg(long)]
    confidence_mode: bool,
    /// Confidence mode: fraction of each class kept, most confident first.
    #[arg(long, default_value_t = DEFAULT_KEEP_FRACTION)]
    keep_fraction: f64,
}

impl ScoringArgs {
    fn params(&self) -> ScoringParams {
        ScoringParams {
            sigma: self.sigma,
            gamma: self.gamma,
            scale_s: self.scale_s,
            sensitivity: self.sensitivity,
            subsample_mode: self.subsample_mode.into(),
            confidence_mode: self.confidence_mode,
            keep_fraction: self.keep_fraction,
        }
    }
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[command(flatten)]
    format: InputFormat,
    #[command(flatten)]
    compression: CompressionArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Codebook JSON output.
    #[arg(long)]
    codebook: PathBuf,
    /// Cluster index per cloud row, little-endian i32.
    #[arg(long)]
    assignment: PathBuf,
    /// Downlink message output.
    #[arg(long)]
    downlink: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    client: PathBuf,
    #[command(flatten)]
    format: InputFormat,
    #[arg(long)]
    downlink: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Uplink message output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[command(flatten)]
    format: InputFormat,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    uplink: PathBuf,
    /// Sampling budget B.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Wire width used for the byte accounting: 8 or 32.
    #[arg(long, default_value_t = 32)]
    quant_bits: u32,
    /// Selection output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    #[command(flatten)]
    compression: CompressionArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
}

impl ProtocolArgs {
    fn config(&self, seed: u64) -> Result<ProtocolConfig> {
        Ok(ProtocolConfig {
            r: self.compression.r,
            budget: self.budget,
            seed,
            max_iters: self.compression.max_iters,
            tol: self.compression.tol,
            quant_bits: QuantBits::try_from(self.compression.quant_bits)?,
            delta: self.delta,
            scoring: self.scoring.params(),
        })
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    client: PathBuf,
    #[command(flatten)]
    format: InputFormat,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// Selection output.
    #[arg(long)]
    out: PathBuf,
    /// Also write all three messages to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum AccountMode {
    ClosedForm,
    Exact,
}

#[derive(Debug, Args)]
struct AccountArgs {
    #[arg(long, value_enum, default_value_t = AccountMode::Exact)]
    mode: AccountMode,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Used by the exact accountant only.
    #[arg(long, default_value_t = DEFAULT_SENSITIVITY)]
    sensitivity: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Poisson)]
    subsample_mode: ModeArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Cloud dataset with domain tags. Omit together with --client to use
    /// the default synthetic benchmark.
    #[arg(long, requires = "client")]
    cloud: Option<PathBuf>,
    #[arg(long, requires = "cloud")]
    client: Option<PathBuf>,
    #[command(flatten)]
    format: InputFormat,
    /// Seed of the synthetic benchmark when no files are given.
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Budgets to sweep. Overrides --budget.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values = ["ecos", "random", "kcenter"])]
    methods: Vec<String>,
    /// In-distribution domains. Defaults to the client's domain tags.
    #[arg(long, value_delimiter = ',')]
    client_domains: Vec<u32>,
    /// Report JSON output. Printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    domains: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    per_domain: usize,
    #[arg(long, default_value_t = 500)]
    client_size: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0u32])]
    client_domains: Vec<u32>,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    blob_std: f64,
    /// Draw the client from cloud rows instead of fresh samples.
    #[arg(long)]
    overlap: bool,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    cloud_out: PathBuf,
    #[arg(long)]
    client_out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// What a command prints on success: a human line and its JSON form.
struct Outcome {
    text: String,
    json: serde_json::Value,
}

fn cmd_compress(a: &CompressArgs) -> Result<Outcome> {
    let config = ProtocolConfig {
        r: a.compression.r,
        seed: a.seed.seed,
        max_iters: a.compression.max_iters,
        tol: a.compression.tol,
        quant_bits: QuantBits::try_from(a.compression.quant_bits)?,
        ..Default::default()
    };
    config.validate()?;
    let cloud = a.format.load(&a.cloud)?;
    let (codebook, downlink) = cloud_compress(&cloud, &config)?;
    codebook.save(&a.codebook, &a.assignment)?;
    write_text(&a.downlink, &to_json(&downlink)?)?;
    Ok(Outcome {
        text: format!(
            "compressed {} rows into {} centroids in {} iterations",
            cloud.n(),
            codebook.r(),
            codebook.iters_run()
        ),
        json: json!({
            "rows": cloud.n(),
            "r": codebook.r(),
            "dim": codebook.dim(),
            "iters_run": codebook.iters_run(),
            "cluster_sizes": codebook.cluster_sizes(),
            "seed": codebook.seed(),
        }),
    })
}

fn cmd_score(a: &ScoreArgs) -> Result<Outcome> {
    let params = a.scoring.params();
    params.validate()?;
    let client = a.format.load(&a.client)?;
    let downlink: DownlinkMessage = read_json(&a.downlink)?;
    let (report, uplink) = client_respond(&client, &downlink, &params, a.seed.seed)?;
    write_text(&a.out, &to_json(&uplink)?)?;
    Ok(Outcome {
        text: format!(
            "scored {} client rows against {} centroids",
            client.n(),
            report.r
        ),
        json: json!({ "rows": client.n(), "r": report.r, "seed": a.seed.seed }),
    })
}

fn cmd_sample(a: &SampleArgs) -> Result<Outcome> {
    let opts = SampleOptions {
        budget: a.budget,
        seed: a.seed.seed,
        delta: a.delta,
        quant_bits: QuantBits::try_from(a.quant_bits)?,
    };
    let cloud = a.format.load(&a.cloud)?;
    let codebook = Codebook::load(&a.codebook, &a.assignment)?;
    let uplink: UplinkMessage = read_json(&a.uplink)?;
    let (selection, _) = cloud_select(&cloud, &codebook, &uplink, opts)?;
    write_text(&a.out, &to_json(&selection)?)?;
    Ok(Outcome {
        text: format!(
            "selected {} of {} rows (budget {})",
            selection.indices.len(),
            cloud.n(),
            a.budget
        ),
        json: json!({
            "selected": selection.indices.len(),
            "budget": a.budget,
            "epsilon": selection.ledger.epsilon,
        }),
    })
}

fn cmd_run(a: &RunArgs) -> Result<Outcome> {
    let config = a.protocol.config(a.seed.seed)?;
    config.validate()?;
    let cloud = a.format.load(&a.cloud)?;
    let client = a.format.load(&a.client)?;
    let run = run_protocol(&cloud, &client, &config)?;
    let sel = run.selection();
    write_text(&a.out, &to_json(sel)?)?;
    if let Some(path) = &a.transcript {
        write_text(path, &to_json(&run.transcript)?)?;
    }
    Ok(Outcome {
        text: format!(
            "selected {} of {} rows (budget {}), epsilon {}",
            sel.indices.len(),
            cloud.n(),
            config.budget,
            sel.ledger
                .epsilon
                .map_or_else(|| "unbounded".to_string(), |e| format!("{e:.6}"))
        ),
        json: json!({
            "selected": sel.indices.len(),
            "budget": config.budget,
            "epsilon": sel.ledger.epsilon,
            "bytes_down": sel.bytes_down,
            "bytes_up": sel.bytes_up,
        }),
    })
}

fn cmd_account(a: &AccountArgs) -> Result<Outcome> {
    if !(a.delta > 0.0 && a.delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must be in (0, 1), got {}",
            a.delta
        )));
    }
    let (epsilon, alpha) = match a.mode {
        AccountMode::ClosedForm => (
            Some(closed_form_bound(a.sigma, a.gamma, a.delta)?),
            Some(closed_form_alpha(a.sigma, a.gamma, a.delta)),
        ),
        AccountMode::Exact => {
            let ledger =
                account_scoring_query(a.sigma, a.sensitivity, a.gamma, a.subsample_mode.into())?;
            match ledger.epsilon(a.delta)? {
                Some((e, al)) => (Some(e), Some(al)),
                None => (None, None),
            }
        }
    };
    let text = match epsilon {
        Some(e) => format!("epsilon = {e:.6} at delta = {}", a.delta),
        None => "epsilon = unbounded (sigma = 0)".to_string(),
    };
    Ok(Outcome {
        text,
        json: json!({
            "mode": a.mode,
            "sigma": a.sigma,
            "gamma": a.gamma,
            "delta": a.delta,
            "sensitivity": a.sensitivity,
            "epsilon": epsilon,
            "alpha": alpha,
        }),
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<Outcome> {
    let (cloud, client) = match (&a.cloud, &a.client) {
        (Some(cloud), Some(client)) => (a.format.load(cloud)?, a.format.load(client)?),
        _ => generate_synthetic(&SynthSpec {
            seed: a.synth_seed,
            ..Default::default()
        })?,
    };
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<Method>>>()?;
    let cfg = CompareConfig {
        protocol: a.protocol.config(0)?,
        seeds: a.seeds.clone(),
        methods,
        client_domains: (!a.client_domains.is_empty()).then(|| a.client_domains.clone()),
    };
    cfg.protocol.validate()?;
    let reports = if a.budgets.is_empty() {
        compare_methods(&cloud, &client, &cfg)?
    } else {
        sweep(&cloud, &client, &cfg, &a.budgets)?
    };
    let summary = summarize(&reports);
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_csv(&reports, file)?;
    }
    let report = json!({ "config": cfg, "reports": reports, "summary": summary });
    let mut text = String::new();
    for s in &summary {
        let fmt = |x: Option<crate::eval::Stat>| {
            x.map_or_else(
                || "-".to_string(),
                |s| format!("{:.4}±{:.4}", s.mean, s.std),
            )
        };
        text.push_str(&format!(
            "{:<8} B={:<6} id_tpr {}  proximity {}  diversity {}\n",
            s.method.name(),
            s.budget,
            fmt(s.id_tpr),
            fmt(s.proximity),
            fmt(s.diversity)
        ));
    }
    if let Some(path) = &a.out {
        write_text(path, &to_json(&report)?)?;
    }
    Ok(Outcome {
        text: text.trim_end().to_string(),
        json: report,
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<Outcome> {
    let spec = SynthSpec {
        domains: a.domains,
        dim: a.dim,
        per_domain: a.per_domain,
        client_size: a.client_size,
        client_domains: a.client_domains.clone(),
        separation: a.separation,
        blob_std: a.blob_std,
        seed: a.seed.seed,
        client_overlap: a.overlap,
    };
    let (cloud, client) = generate_synthetic(&spec)?;
    save_dataset(&cloud, &a.cloud_out)?;
    save_dataset(&client, &a.client_out)?;
    Ok(Outcome {
        text: format!(
            "wrote {} cloud rows and {} client rows (base ID rate {})",
            cloud.n(),
            client.n(),
            spec.base_id_rate()
        ),
        json: json!({
            "spec": spec,
            "cloud_rows": cloud.n(),
            "client_rows": client.n(),
            "base_id_rate": spec.base_id_rate(),
        }),
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Score(a) => cmd_score(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Run(a) => cmd_run(a),
        Command::Account(a) => cmd_account(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn report_error(json: bool, kind: &str, message: &str) {
    let message = message.replace('\n', " ");
    if json {
        eprintln!(
            "{}",
            json!({ "error": { "kind": kind, "message": message } })
        );
    } else {
        eprintln!("error: {kind}: {message}");
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let json = args.iter().any(|a| a == "--json");
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            report_error(json, "usage", first);
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.json);
            } else {
                println!("{}", out.text);
            }
            0
        }
        Err(e) => {
            report_error(cli.json, e.kind(), &e.to_string());
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
