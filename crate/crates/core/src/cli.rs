//! Command-line pipelines: city synthesis, ingestion/validation, training,
//! evaluation, prediction, attribution, dependence sweeps, and curve
//! crossing detection.
//!
//! Every subcommand reads its inputs, writes its outputs under `--out`,
//! and drops a `manifest.json` (tool version, resolved configuration,
//! seed, output list) plus a `resolved_config.toml` echo next to them.
//! All randomness flows from a single seed, so identical invocations
//! produce byte-identical output trees. Exit codes: 0 success, 1 domain
//! or validation failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::domain::{assemble_features, feature_index, FeatureRow, ODDataset, FEATURE_NAMES};
use crate::evaluation::{cross_validate, Protocol, SplitGrouping};
use crate::ingest::{
    exclude_origins, load_dataset, validate_dataset, PeriodConfig, PeriodScheme, SoftRanges,
    ValidationReport,
};
use crate::interpret::{
    decay_scenarios, default_drive_grid, find_inflection, pdp_curve, shap_summary, FeatureGroup,
    FeatureGrouping, PdpCurve, PdpMode, ShapMode, PDP_CSV_HEADER,
};
use crate::model::{ModelArtifact, ModelConfig, ModelFamily, ModelParams, RowModel};
use crate::synth::{generate_city, write_city, NoiseMode, SynthConfig};

/// Structured run configuration (TOML). Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub protocol: ProtocolConfig,
    pub interpret: InterpretConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub zones: PathBuf,
    pub hospitals: PathBuf,
    pub flows: PathBuf,
    pub drivetime: PathBuf,
    pub period_scheme: PeriodScheme,
    pub window_start_year: i32,
    pub window_end_year: i32,
    /// Flows from these origins are dropped after aggregation
    /// (medical-tourism style filtering).
    pub exclude_origins: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            zones: PathBuf::from("zones.csv"),
            hospitals: PathBuf::from("hospitals.csv"),
            flows: PathBuf::from("flows.csv"),
            drivetime: PathBuf::from("drivetime.csv"),
            period_scheme: PeriodScheme::Yearly,
            window_start_year: 2020,
            window_end_year: 2023,
            exclude_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: ModelFamily,
    pub ols: OlsSection,
    pub gbt: crate::model::GbtConfig,
    pub mlp: crate::model::MlpConfig,
    pub deep_gravity: crate::model::DeepGravityConfig,
    pub hgnn: crate::model::HgnnConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: ModelFamily::DeepGravity,
            ols: OlsSection::default(),
            gbt: crate::model::GbtConfig::default(),
            mlp: crate::model::MlpConfig::default(),
            deep_gravity: crate::model::DeepGravityConfig::default(),
            hgnn: crate::model::HgnnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsSection {
    pub ridge_eps: f64,
}

impl Default for OlsSection {
    fn default() -> Self {
        Self { ridge_eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: ProtocolMode,
    pub k: usize,
    pub runs: usize,
    pub train_fraction: f64,
    pub grouping: SplitGrouping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    Kfold,
    Holdout,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: ProtocolMode::Kfold,
            k: 10,
            runs: 10,
            train_fraction: 0.9,
            grouping: SplitGrouping::RowLevel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub n_permutations: usize,
    pub shap_mode: ShapModeName,
    /// Maximum number of rows to attribute (the first N assembled rows).
    pub max_rows: usize,
    /// Named multi-feature groups; features not listed become singletons.
    pub groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapModeName {
    Auto,
    Exact,
    Sampling,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub features: Vec<String>,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            n_permutations: crate::interpret::DEFAULT_PERMUTATIONS,
            shap_mode: ShapModeName::Auto,
            max_rows: 200,
            groups: vec![GroupSpec {
                name: "All beds".to_string(),
                features: vec![
                    "staffed_all_beds".to_string(),
                    "licensed_all_beds".to_string(),
                ],
            }],
        }
    }
}

#[derive(Parser)]
#[command(
    name = "odflow",
    version,
    about = "Origin-destination visitation flow prediction and explanation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city with known ground-truth shares.
    Synth(SynthArgs),
    /// Load, aggregate, and validate the input tables.
    Validate(ConfigArgs),
    /// Fit the configured model family on the full dataset.
    Train(ConfigArgs),
    /// Run the evaluation protocol and report NRMSE/SMAPE/CPC.
    Evaluate(ConfigArgs),
    /// Score dataset rows with a trained artifact.
    Predict(ModelArgs),
    /// Grouped Shapley attribution summary for a trained artifact.
    Explain(ModelArgs),
    /// Partial-dependence sweep or distance-decay scenarios.
    Pdp(PdpArgs),
    /// Locate crossings between two dependence curves.
    Inflect(InflectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    zones: usize,
    #[arg(long, default_value_t = 10)]
    hospitals: usize,
    /// Observation noise: `none` or `multinomial:<samples>`.
    #[arg(long, default_value = "none")]
    noise: String,
    #[arg(long, default_value_t = 0.6)]
    theta_size: f64,
    #[arg(long, default_value_t = 0.0)]
    theta_rating: f64,
    #[arg(long, default_value_t = 0.0)]
    theta_occupancy: f64,
    /// Distance threshold (minutes) for the rating effect.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Distance-decay rate per minute.
    #[arg(long, default_value_t = 0.12)]
    beta: f64,
    #[arg(long, default_value_t = 1024.0)]
    outflow: f64,
    #[arg(long, default_value_t = 35.0)]
    extent_km: f64,
    #[arg(long, default_value_t = 40.0)]
    speed_kmh: f64,
    #[arg(long, default_value_t = 0.15)]
    jitter: f64,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    config: PathBuf,
    /// Trained artifact (JSON) produced by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PdpArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Feature to sweep (canonical name), e.g. `drive_time_min`.
    #[arg(long, conflicts_with = "scenario_attr")]
    feature: Option<String>,
    /// Hospital attribute for min/mean/max decay scenarios.
    #[arg(long)]
    scenario_attr: Option<String>,
    /// Sweep mode for --feature.
    #[arg(long, default_value = "at_means")]
    mode: String,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
}

#[derive(Args)]
struct InflectArgs {
    #[arg(long)]
    curve_a: PathBuf,
    #[arg(long)]
    curve_b: PathBuf,
    /// Scenario label to select when a curve file holds several.
    #[arg(long)]
    scenario_a: Option<String>,
    #[arg(long)]
    scenario_b: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Entry point: parses `std::env::args` and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits 0 for --help/--version and 2 for usage errors
            err.exit();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

/// Testable variant of [`run`] taking explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.exit_code() == 0 { 0 } else { 2 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("cannot read config {path}: {message}")]
    Config { path: String, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error("dataset has fatal validation errors; see validation_report.json")]
    FatalValidation,
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Eval(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Interpret(#[from] crate::interpret::InterpretError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Pdp(args) => cmd_pdp(args),
        Command::Inflect(args) => cmd_inflect(args),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut config: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.display().to_string(),
        source,
    })
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_manifest(
    dir: &Path,
    subcommand: &str,
    seed: u64,
    resolved: &serde_json::Value,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = serde_json::json!({
        "tool": "odflow",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "seed": seed,
        "resolved_config": resolved,
        "outputs": outputs,
    });
    write_out(
        dir,
        "manifest.json",
        &serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
    )
}

fn write_resolved_config<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    let text = toml::to_string_pretty(config).expect("config echo serialization");
    write_out(dir, "resolved_config.toml", &text)
}

fn load_configured_dataset(
    config: &RunConfig,
) -> Result<(ODDataset, ValidationReport, usize), CliError> {
    let period = PeriodConfig::new(
        config.data.period_scheme,
        config.data.window_start_year,
        config.data.window_end_year,
    );
    let (dataset, report) = load_dataset(
        &config.data.zones,
        &config.data.hospitals,
        &config.data.flows,
        &config.data.drivetime,
        &period,
    )?;
    if config.data.exclude_origins.is_empty() {
        return Ok((dataset, report, 0));
    }
    let (dataset, exclusion) = exclude_origins(&dataset, &config.data.exclude_origins)?;
    Ok((dataset, report, exclusion.removed_flows))
}

fn model_config(config: &RunConfig) -> ModelConfig {
    match config.model.family {
        ModelFamily::Ols => ModelConfig::Ols {
            ridge_eps: config.model.ols.ridge_eps,
        },
        ModelFamily::Gbt => ModelConfig::Gbt(config.model.gbt.clone()),
        ModelFamily::Mlp => ModelConfig::Mlp(config.model.mlp.clone()),
        ModelFamily::DeepGravity => ModelConfig::DeepGravity(config.model.deep_gravity.clone()),
        ModelFamily::Hgnn => ModelConfig::Hgnn(config.model.hgnn.clone()),
    }
}

fn grouping_from_config(config: &InterpretConfig) -> Result<FeatureGrouping, CliError> {
    if config.groups.is_empty() {
        return Ok(FeatureGrouping::singletons(crate::domain::N_FEATURES));
    }
    let mut groups = Vec::new();
    let mut used = vec![false; crate::domain::N_FEATURES];
    for spec in &config.groups {
        let mut indices = Vec::new();
        for name in &spec.features {
            let idx = feature_index(name).ok_or_else(|| {
                CliError::Input(format!("interpret.groups: unknown feature {name:?}"))
            })?;
            indices.push(idx);
            used[idx] = true;
        }
        groups.push(FeatureGroup {
            name: spec.name.clone(),
            indices,
        });
    }
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        if !used[i] {
            groups.push(FeatureGroup {
                name: (*name).to_string(),
                indices: vec![i],
            });
        }
    }
    Ok(FeatureGrouping::new(groups, crate::domain::N_FEATURES)
        .map_err(CliError::Interpret)?)
}

fn shap_mode(config: &InterpretConfig) -> ShapMode {
    match config.shap_mode {
        ShapModeName::Auto => ShapMode::Auto {
            n_permutations: config.n_permutations,
        },
        ShapModeName::Exact => ShapMode::Exact,
        ShapModeName::Sampling => ShapMode::Sampling {
            n_permutations: config.n_permutations,
        },
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let noise = parse_noise(&args.noise)?;
    let config = SynthConfig {
        n_zones: args.zones,
        n_hospitals: args.hospitals,
        theta_size: args.theta_size,
        theta_rating: args.theta_rating,
        theta_occupancy: args.theta_occupancy,
        tau_min: args.tau,
        beta_per_min: args.beta,
        outflow_per_zone: args.outflow,
        noise,
        extent_km: args.extent_km,
        speed_kmh: args.speed_kmh,
        jitter: args.jitter,
        seed: args.seed,
    };
    ensure_out(&args.out)?;
    let (dataset, truth) = generate_city(&config)?;
    write_city(&args.out, &dataset, &truth)?;
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "synth",
        args.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &[
            "zones.csv",
            "hospitals.csv",
            "flows.csv",
            "drivetime.csv",
            "truth.csv",
            "oracle.json",
            "resolved_config.toml",
        ],
    )?;
    let achievable = truth
        .achievable
        .map_or("undefined".to_string(), |t| format!("{:.4}", t.cpc));
    println!(
        "generated {} zones, {} hospitals, {} flows (achievable cpc {achievable})",
        dataset.zones.len(),
        dataset.hospitals.len(),
        dataset.flows.len(),
    );
    Ok(())
}

fn parse_noise(spec: &str) -> Result<NoiseMode, CliError> {
    if spec == "none" {
        return Ok(NoiseMode::None);
    }
    if let Some(samples) = spec.strip_prefix("multinomial:") {
        let samples: u64 = samples
            .parse()
            .map_err(|_| CliError::Input(format!("bad noise sample count in {spec:?}")))?;
        return Ok(NoiseMode::Multinomial { samples });
    }
    Err(CliError::Input(format!(
        "unknown noise spec {spec:?} (expected none or multinomial:<samples>)"
    )))
}

fn cmd_validate(args: ConfigArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    ensure_out(&args.out)?;
    let period = PeriodConfig::new(
        config.data.period_scheme,
        config.data.window_start_year,
        config.data.window_end_year,
    );
    // loads are reported rather than failed so the report reaches the user
    let outcome = load_dataset(
        &config.data.zones,
        &config.data.hospitals,
        &config.data.flows,
        &config.data.drivetime,
        &period,
    );
    let (report, removed) = match outcome {
        Ok((dataset, mut report)) => {
            let (dataset, removed) = if config.data.exclude_origins.is_empty() {
                (dataset, 0)
            } else {
                let (d, excl) = exclude_origins(&dataset, &config.data.exclude_origins)?;
                (d, excl.removed_flows)
            };
            report.merge(validate_dataset(&dataset, &SoftRanges::default()));
            report
                .row_counts
                .insert("flows_after_exclusion".into(), dataset.flows.len());
            (report, removed)
        }
        Err(crate::ingest::IngestError::FatalValidation(messages)) => {
            let report = ValidationReport {
                errors: messages.lines().map(String::from).collect(),
                warnings: Vec::new(),
                row_counts: BTreeMap::new(),
            };
            (report, 0)
        }
        Err(other) => return Err(other.into()),
    };
    let json = serde_json::json!({
        "errors": report.errors,
        "warnings": report.warnings,
        "row_counts": report.row_counts,
        "removed_flows": removed,
    });
    write_out(
        &args.out,
        "validation_report.json",
        &serde_json::to_string_pretty(&json).expect("report serialization"),
    )?;
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "validate",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &["validation_report.json", "resolved_config.toml"],
    )?;
    println!(
        "validation: {} errors, {} warnings, {} flows removed by exclusion",
        report.errors.len(),
        report.warnings.len(),
        removed
    );
    if report.has_fatal() {
        return Err(CliError::FatalValidation);
    }
    Ok(())
}

fn cmd_train(args: ConfigArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    ensure_out(&args.out)?;
    let (dataset, report, _) = load_configured_dataset(&config)?;
    if report.has_fatal() {
        return Err(CliError::FatalValidation);
    }
    let rows = assemble_features(&dataset)?;
    let all: Vec<usize> = (0..rows.len()).collect();
    let model_cfg = model_config(&config);
    let artifact =
        crate::model::fit_on_dataset(&model_cfg, &dataset, &rows, &all, config.seed)?;
    artifact
        .save(&args.out.join("artifact.json"))
        .map_err(CliError::Model)?;

    let mut outputs = vec!["artifact.json", "resolved_config.toml"];
    if !artifact.meta.loss_curve.is_empty() {
        let mut csv = String::from("epoch,train_loss,val_loss\n");
        for e in &artifact.meta.loss_curve {
            let val = e.val.map_or(String::new(), |v| v.to_string());
            csv.push_str(&format!("{},{},{val}\n", e.epoch, e.train));
        }
        write_out(&args.out, "loss_curve.csv", &csv)?;
        outputs.push("loss_curve.csv");
    }
    if config.model.family == ModelFamily::Hgnn {
        let graph =
            crate::model::build_graph(&dataset, crate::model::CandidateRule::AllPairs)?;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        graph
            .dump_csv(&mut nodes, &mut edges)
            .map_err(|source| CliError::Write {
                path: args.out.join("graph_nodes.csv").display().to_string(),
                source,
            })?;
        write_out(
            &args.out,
            "graph_nodes.csv",
            std::str::from_utf8(&nodes).expect("utf8 dump"),
        )?;
        write_out(
            &args.out,
            "graph_edges.csv",
            std::str::from_utf8(&edges).expect("utf8 dump"),
        )?;
        outputs.push("graph_nodes.csv");
        outputs.push("graph_edges.csv");
    }
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "train",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &outputs,
    )?;
    println!(
        "trained {} on {} rows (final train loss {:?})",
        config.model.family, rows.len(), artifact.meta.final_train_loss
    );
    Ok(())
}

fn cmd_evaluate(args: ConfigArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    ensure_out(&args.out)?;
    let (dataset, report, _) = load_configured_dataset(&config)?;
    if report.has_fatal() {
        return Err(CliError::FatalValidation);
    }
    let protocol = match config.protocol.mode {
        ProtocolMode::Kfold => Protocol::KFold {
            k: config.protocol.k,
            runs: config.protocol.runs,
        },
        ProtocolMode::Holdout => Protocol::Holdout {
            train_fraction: config.protocol.train_fraction,
            runs: config.protocol.runs,
        },
    };
    let eval = cross_validate(
        &model_config(&config),
        &dataset,
        protocol,
        config.protocol.grouping,
        config.seed,
    )?;
    write_out(&args.out, "eval_report.json", &eval.to_json_pretty())?;
    write_out(&args.out, "eval_cells.csv", &eval.cells_csv())?;
    let mut outputs = vec!["eval_report.json", "eval_cells.csv", "resolved_config.toml"];
    if let Some(curves) = &eval.loss_curves {
        let mut csv = String::from("epoch,mean_train_loss,mean_val_loss\n");
        for e in 0..curves.epochs {
            csv.push_str(&format!(
                "{e},{},{}\n",
                curves.mean_train[e], curves.mean_val[e]
            ));
        }
        write_out(&args.out, "loss_curves.csv", &csv)?;
        outputs.push("loss_curves.csv");
    }
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "evaluate",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &outputs,
    )?;
    println!("family: {}", eval.family);
    for line in eval.render_lines() {
        println!("{line}");
    }
    if eval.incomplete {
        println!("note: {} cells failed; aggregates cover successes only", eval.failures.len());
    }
    Ok(())
}

fn load_artifact(path: &Path) -> Result<ModelArtifact, CliError> {
    Ok(ModelArtifact::load(path)?)
}

fn cmd_predict(args: ModelArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    ensure_out(&args.out)?;
    let (dataset, report, _) = load_configured_dataset(&config)?;
    if report.has_fatal() {
        return Err(CliError::FatalValidation);
    }
    let artifact = load_artifact(&args.model)?;
    let rows = assemble_features(&dataset)?;
    let predictions = artifact.predict_rows(&rows)?;
    let mut csv = String::from("origin_zone_id,hospital_id,target_share,predicted_share\n");
    for (row, pred) in rows.iter().zip(&predictions) {
        csv.push_str(&format!(
            "{},{},{},{pred}\n",
            row.origin_zone_id, row.hospital_id, row.target_share
        ));
    }
    write_out(&args.out, "predictions.csv", &csv)?;
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "predict",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &["predictions.csv", "resolved_config.toml"],
    )?;
    println!("scored {} rows with {}", rows.len(), artifact.family);
    Ok(())
}

fn cmd_explain(args: ModelArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    ensure_out(&args.out)?;
    let (dataset, report, _) = load_configured_dataset(&config)?;
    if report.has_fatal() {
        return Err(CliError::FatalValidation);
    }
    let artifact = load_artifact(&args.model)?;
    let rows = assemble_features(&dataset)?;
    let capped: Vec<FeatureRow> = rows
        .into_iter()
        .take(config.interpret.max_rows.max(1))
        .collect();
    let grouping = grouping_from_config(&config.interpret)?;
    let summary = shap_summary(
        &artifact,
        &capped,
        &grouping,
        shap_mode(&config.interpret),
        config.seed,
    )?;
    write_out(&args.out, "shap_summary.csv", &summary.summary_csv())?;
    write_out(&args.out, "shap_rows.csv", &summary.rows_csv())?;
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "explain",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &["shap_summary.csv", "shap_rows.csv", "resolved_config.toml"],
    )?;
    println!(
        "attributed {} rows over {} groups; top group: {}",
        capped.len(),
        grouping.n_groups(),
        summary.importance[0].group
    );
    Ok(())
}

fn cmd_pdp(args: PdpArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, None)?;
    ensure_out(&args.out)?;
    let artifact = load_artifact(&args.model)?;

    let curves: Vec<PdpCurve> = if let Some(attr_name) = &args.scenario_attr {
        let attr = feature_index(attr_name)
            .ok_or_else(|| CliError::Input(format!("unknown feature {attr_name:?}")))?;
        let grid = grid_from_args(&args, &artifact, crate::domain::DRIVE_TIME_INDEX);
        decay_scenarios(&artifact, attr, &grid)?.into()
    } else if let Some(feature_name) = &args.feature {
        let feature = feature_index(feature_name)
            .ok_or_else(|| CliError::Input(format!("unknown feature {feature_name:?}")))?;
        let grid = grid_from_args(&args, &artifact, feature);
        let mode = match args.mode.as_str() {
            "at_means" => PdpMode::AtMeans,
            "averaged" => PdpMode::Averaged,
            other => {
                return Err(CliError::Input(format!(
                    "unknown pdp mode {other:?} (expected at_means or averaged)"
                )))
            }
        };
        let rows = if mode == PdpMode::Averaged {
            let (dataset, report, _) = load_configured_dataset(&config)?;
            if report.has_fatal() {
                return Err(CliError::FatalValidation);
            }
            Some(assemble_features(&dataset)?)
        } else {
            None
        };
        vec![pdp_curve(&artifact, feature, &grid, mode, rows.as_deref())?]
    } else {
        return Err(CliError::Input(
            "pass --feature NAME or --scenario-attr NAME".into(),
        ));
    };

    let mut csv = String::from(PDP_CSV_HEADER);
    for curve in &curves {
        csv.push_str(&curve.csv_rows());
    }
    write_out(&args.out, "pdp.csv", &csv)?;
    write_resolved_config(&args.out, &config)?;
    write_manifest(
        &args.out,
        "pdp",
        config.seed,
        &serde_json::to_value(&config).expect("config echo"),
        &["pdp.csv", "resolved_config.toml"],
    )?;
    println!(
        "wrote {} curve(s) of {} points",
        curves.len(),
        curves[0].grid.len()
    );
    Ok(())
}

fn grid_from_args(args: &PdpArgs, artifact: &ModelArtifact, feature: usize) -> Vec<f64> {
    if feature == crate::domain::DRIVE_TIME_INDEX
        && args.grid_min.is_none()
        && args.grid_max.is_none()
    {
        return default_drive_grid();
    }
    let stats = artifact.feature_stats();
    let lo = args.grid_min.unwrap_or(stats.min[feature]);
    let hi = args.grid_max.unwrap_or(stats.max[feature]);
    let step = args.grid_step.unwrap_or((hi - lo) / 24.0);
    let mut grid = Vec::new();
    let mut v = lo;
    let mut i = 0u32;
    while v <= hi + 1e-12 {
        grid.push(v);
        i += 1;
        v = lo + f64::from(i) * step;
    }
    grid
}

fn read_curve(path: &Path, scenario: Option<&str>) -> Result<PdpCurve, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header.trim() != PDP_CSV_HEADER.trim() {
        return Err(CliError::Input(format!(
            "{}: expected header {:?}",
            path.display(),
            PDP_CSV_HEADER.trim()
        )));
    }
    let mut by_scenario: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(CliError::Input(format!(
                "{} line {}: expected scenario,grid_value,prediction",
                path.display(),
                no + 2
            )));
        }
        let grid: f64 = parts[1].parse().map_err(|_| {
            CliError::Input(format!("{} line {}: bad grid value", path.display(), no + 2))
        })?;
        let pred: f64 = parts[2].parse().map_err(|_| {
            CliError::Input(format!("{} line {}: bad prediction", path.display(), no + 2))
        })?;
        let entry = by_scenario.entry(parts[0].to_string()).or_default();
        entry.0.push(grid);
        entry.1.push(pred);
    }
    let (label, (grid, predictions)) = match scenario {
        Some(label) => {
            let entry = by_scenario.remove(label).ok_or_else(|| {
                CliError::Input(format!(
                    "{}: no scenario {label:?} (available: {})",
                    path.display(),
                    by_scenario.keys().cloned().collect::<Vec<_>>().join(", ")
                ))
            })?;
            (label.to_string(), entry)
        }
        None => {
            if by_scenario.len() != 1 {
                return Err(CliError::Input(format!(
                    "{}: file holds {} scenarios; select one with --scenario-a/--scenario-b",
                    path.display(),
                    by_scenario.len()
                )));
            }
            by_scenario.pop_first().expect("one scenario")
        }
    };
    Ok(PdpCurve {
        feature_index: crate::domain::DRIVE_TIME_INDEX,
        feature_name: "drive_time_min".into(),
        scenario: label,
        background: "file".into(),
        grid,
        predictions,
    })
}

fn cmd_inflect(args: InflectArgs) -> Result<(), CliError> {
    ensure_out(&args.out)?;
    let a = read_curve(&args.curve_a, args.scenario_a.as_deref())?;
    let b = read_curve(&args.curve_b, args.scenario_b.as_deref())?;
    let report = find_inflection(&a, &b)?;
    write_out(
        &args.out,
        "inflections.json",
        &serde_json::to_string_pretty(&report).expect("report serialization"),
    )?;
    if report.degenerate {
        println!("curves coincide over the whole grid");
    } else if report.crossings.is_empty() {
        println!("no crossings");
    } else {
        for c in &report.crossings {
            println!("{}", c.abscissa);
        }
    }
    Ok(())
}

// keep unused-field warnings away while the Hgnn artifact carries params
// that predict() consumes through the enum
#[allow(dead_code)]
fn _assert_artifact_variants(p: &ModelParams) -> &'static str {
    match p {
        ModelParams::Ols(_) => "ols",
        ModelParams::Gbt(_) => "gbt",
        ModelParams::Mlp(_) => "mlp",
        ModelParams::DeepGravity(_) => "deep_gravity",
        ModelParams::Hgnn(_) => "hgnn",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_parse_from_empty_toml() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.seed, 0);
        assert_eq!(config.protocol.k, 10);
        assert_eq!(config.protocol.runs, 10);
        assert_eq!(config.model.family, ModelFamily::DeepGravity);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("unknown_key = 1").unwrap_err();
        assert!(err.to_string().contains("unknown_key"));
        let err =
            toml::from_str::<RunConfig>("[protocol]\nbogus = 2").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn family_specific_sections_parse() {
        let text = r#"
seed = 7
[model]
family = "gbt"
[model.gbt]
n_stages = 50
max_depth = 2
[protocol]
mode = "holdout"
train_fraction = 0.8
runs = 3
"#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.model.family, ModelFamily::Gbt);
        assert_eq!(config.model.gbt.n_stages, 50);
        assert_eq!(config.model.gbt.max_depth, 2);
        assert_eq!(config.protocol.mode, ProtocolMode::Holdout);
    }

    #[test]
    fn grouping_spec_fills_singletons() {
        let config = InterpretConfig::default();
        let grouping = grouping_from_config(&config).unwrap();
        assert_eq!(grouping.n_groups(), 21);
        assert_eq!(grouping.groups[0].name, "All beds");
    }

    #[test]
    fn noise_specs_parse() {
        assert_eq!(parse_noise("none").unwrap(), NoiseMode::None);
        assert_eq!(
            parse_noise("multinomial:500").unwrap(),
            NoiseMode::Multinomial { samples: 500 }
        );
        assert!(parse_noise("gaussian").is_err());
    }

    #[test]
    fn unknown_subcommand_exits_2() {
        assert_eq!(run_from(["odflow", "frobnicate"]), 2);
    }

    #[test]
    fn missing_config_exits_1() {
        let out = tempfile::tempdir().unwrap();
        let code = run_from([
            "odflow",
            "validate",
            "--config",
            "/nonexistent/config.toml",
            "--out",
            out.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }
}
