//! Command-line front end. Every subcommand works directly on the store, so
//! scripts need no running server.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fairlens_core::audit::ThemisConfig;
use fairlens_core::dataset::{load_dataset, DatasetSchema, MaskSpec, SensitiveSpec};
use fairlens_core::explain::PerturbationConfig;
use fairlens_core::models::ModelKind;
use fairlens_core::store::{RecordFilter, Store};
use fairlens_core::synthetic::{proxy_dataset, proxy_spec, ProxyConfig};
use serde::Serialize;

use crate::error::ApiError;
use crate::http::{serve, ServeConfig};
use crate::service::{
    ExplainRequest, RemedyRequest, ReportOptions, RowInput, SweepRequest, Workbench,
};

#[derive(Debug, Parser)]
#[command(name = "fairlens", version, about = "Fairness auditing workbench for tabular classifiers")]
pub struct Cli {
    /// Store directory.
    #[arg(long, env = "FAIRLENS_STORE", default_value = "store", global = true)]
    pub store_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset (CSV + schema) or generate the synthetic proxy dataset.
    Ingest(IngestArgs),
    /// Train and score a population of models.
    Sweep(SweepArgs),
    /// Print the accuracy and fairness table as CSV.
    Report(ReportArgs),
    /// Explain one prediction of a stored model.
    Explain(ExplainArgs),
    /// Mask categories, retrain and compare.
    Remedy(RemedyArgs),
    /// Run the Themis group and causal tests on sampled inputs.
    Themis(ThemisArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Schema JSON of the dataset.
    #[arg(long, requires = "csv", conflicts_with = "synthetic")]
    pub schema: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long, requires = "schema")]
    pub csv: Option<PathBuf>,
    /// Sensitive spec JSON; repeatable. Stored under its feature name.
    #[arg(long)]
    pub sensitive: Vec<PathBuf>,
    /// Generate a synthetic dataset instead (`proxy`).
    #[arg(long, value_parser = ["proxy"])]
    pub synthetic: Option<String>,
    /// Rows of the synthetic dataset.
    #[arg(long, default_value_t = 2000)]
    pub rows: usize,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model kind `{s}` (lr, dt, rf, svm)"))
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: String,
    /// Tag of the sensitive spec (its feature name).
    #[arg(long)]
    pub sensitive: String,
    #[arg(long, value_parser = parse_kind)]
    pub kind: ModelKind,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ModelKind>,
    #[arg(long)]
    pub sensitive: Option<String>,
    /// Only records of this sweep.
    #[arg(long)]
    pub sweep: Option<String>,
    /// One row per selected model (least fair, most accurate, most fair).
    #[arg(long)]
    pub selected: bool,
    /// Report Themis scores from this many samples instead of the dataset
    /// group and causal scores.
    #[arg(long, default_value_t = 0)]
    pub themis_samples: usize,
    /// Seed of the Themis runs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: String,
    /// Dataset row to explain.
    #[arg(long, conflicts_with = "row", required_unless_present = "row")]
    pub row_index: Option<usize>,
    /// Row as JSON: an array in feature order or an object by feature name.
    #[arg(long)]
    pub row: Option<String>,
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RemedyArgs {
    #[arg(long)]
    pub model: String,
    /// Mask as JSON, e.g. `{"relationship": {"categories": ["Husband", "Wife"]}}`,
    /// or `@path` to read it from a file.
    #[arg(long)]
    pub mask: String,
    /// Samples per Themis test in the comparison; 0 skips them.
    #[arg(long, default_value_t = 0)]
    pub themis_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ThemisArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = fairlens_core::sampler::DEFAULT_SAMPLES)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling range override, `feature=lo:hi`; repeatable.
    #[arg(long, value_parser = parse_bound)]
    pub bounds: Vec<(String, [f64; 2])>,
}

fn parse_bound(s: &str) -> Result<(String, [f64; 2]), String> {
    let err = || format!("expected `feature=lo:hi`, got `{s}`");
    let (name, range) = s.split_once('=').ok_or_else(err)?;
    let (lo, hi) = range.split_once(':').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    Ok((name.trim().to_string(), [lo, hi]))
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FAIRLENS_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Allowed CORS origin; repeatable. Defaults to any origin.
    #[arg(long = "cors-origin", env = "FAIRLENS_CORS_ORIGINS", value_delimiter = ',')]
    pub cors_origins: Vec<String>,
    /// Jobs (sweeps, Themis runs) executed concurrently.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Seed for requests that do not specify one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{what}: {reason}")]
    Parse { what: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Parse {
        what: what.to_string(),
        reason: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("responses serialize");
    writeln!(out, "{text}")?;
    Ok(())
}

/// Runs a parsed command, writing its output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Command::Serve(args) = cli.command {
        let cfg = ServeConfig {
            port: args.port,
            store_dir: cli.store_dir,
            cors_origins: args.cors_origins,
            workers: args.workers,
            default_seed: args.seed,
        };
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        return Ok(rt.block_on(serve(cfg))?);
    }

    let store = Store::open(&cli.store_dir).map_err(ApiError::from)?;
    let wb = Workbench::new(store);
    match cli.command {
        Command::Ingest(a) => {
            let mut specs: Vec<SensitiveSpec> = a
                .sensitive
                .iter()
                .map(|p| parse_json(&p.display().to_string(), &read(p)?))
                .collect::<Result<_, _>>()?;
            let ds = match (&a.synthetic, &a.schema, &a.csv) {
                (Some(_), _, _) => {
                    if specs.is_empty() {
                        specs.push(proxy_spec());
                    }
                    proxy_dataset(&ProxyConfig {
                        n_rows: a.rows,
                        seed: a.seed,
                        ..ProxyConfig::default()
                    })
                }
                (None, Some(schema), Some(csv)) => {
                    let schema: DatasetSchema =
                        parse_json(&schema.display().to_string(), &read(schema)?)?;
                    load_dataset(&read(csv)?, schema).map_err(ApiError::from)?
                }
                _ => {
                    return Err(CliError::Parse {
                        what: "ingest".into(),
                        reason: "give --schema and --csv, or --synthetic".into(),
                    })
                }
            };
            print_json(out, &wb.ingest(&ds, &specs)?)
        }
        Command::Sweep(a) => {
            let req = SweepRequest {
                kind: a.kind,
                dataset: a.dataset,
                sensitive: a.sensitive,
                n: a.n,
                seed: Some(a.seed),
            };
            let cfg = wb.sweep_config(&req, a.seed)?;
            print_json(out, &wb.run_sweep(&cfg)?)
        }
        Command::Report(a) => {
            let opts = ReportOptions {
                filter: RecordFilter {
                    dataset: a.dataset,
                    kind: a.kind,
                    sensitive: a.sensitive,
                },
                sweep: a.sweep,
                selected_only: a.selected,
                themis: (a.themis_samples > 0).then(|| ThemisConfig {
                    n: a.themis_samples,
                    seed: a.seed,
                    bounds: BTreeMap::new(),
                }),
            };
            let rows = wb.report(&opts)?;
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                "score",
                "AOD",
                "group_score",
                "causal_score",
                "dataset",
                "model",
                "optimal",
                "record_id",
            ])
            .map_err(std::io::Error::other)?;
            for r in rows {
                w.write_record([
                    r.score.to_string(),
                    r.aod.to_string(),
                    r.group_score.to_string(),
                    r.causal_score.to_string(),
                    r.dataset,
                    r.model,
                    r.optimal,
                    r.record_id,
                ])
                .map_err(std::io::Error::other)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Explain(a) => {
            let row = match &a.row {
                Some(text) => Some(parse_json::<RowInput>("--row", text)?),
                None => None,
            };
            let req = ExplainRequest {
                row,
                row_index: a.row_index,
                config: Some(PerturbationConfig {
                    n_samples: a.samples,
                    kernel_width: a.kernel_width,
                    top_k: a.top_k,
                    seed: a.seed,
                }),
                seed: None,
            };
            print_json(out, &wb.explain(&a.model, &req, a.seed)?)
        }
        Command::Remedy(a) => {
            let text = match a.mask.strip_prefix('@') {
                Some(path) => read(&PathBuf::from(path))?,
                None => a.mask.clone(),
            };
            let mask: MaskSpec = parse_json("--mask", &text)?;
            let req = RemedyRequest {
                model_id: a.model,
                mask,
                seed: Some(a.seed),
                themis_samples: a.themis_samples,
            };
            print_json(out, &wb.remedy(&req, a.seed)?)
        }
        Command::Themis(a) => {
            let cfg = ThemisConfig {
                n: a.n,
                seed: a.seed,
                bounds: a.bounds.into_iter().collect(),
            };
            wb.check_themis(&a.model, &cfg)?;
            print_json(out, &wb.themis(&a.model, &cfg)?)
        }
        Command::Serve(_) => unreachable!("handled above"),
    }
}
