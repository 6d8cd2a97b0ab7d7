//! `pstrat summarize`: posterior summaries from persisted draws — stratum
//! membership, SACE estimates, or dataset descriptives — as JSON or CSV.

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

use pstrat_core::data::{covariate_balance, observed_cell_proportions, survival_summary};
use pstrat_core::estimands::{sace_trajectory, stratum_proportions, SaceMode};

use crate::commands::{load_fit_inputs, write_json};
use crate::csv_io::load_dataset;
use crate::error::CliError;
use crate::manifest::{sha256_file, DatasetRef, RunManifest};
use crate::report::{sace_row, stratum_rows, SaceRowDoc, StratumRowDoc};
use crate::schema::{load_schema_file, SchemaFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimand {
    /// Stratum membership proportions (10 rows for T=3).
    Strata,
    /// SACE_{1:s}(t') for t' = 1..s (or a single t' with --t-prime).
    Sace,
    /// Observed-cell proportions, covariate balance, survival summary.
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum ModeArg {
    #[default]
    Finite,
    Super,
}

impl From<ModeArg> for SaceMode {
    fn from(m: ModeArg) -> SaceMode {
        match m {
            ModeArg::Finite => SaceMode::FiniteSample,
            ModeArg::Super => SaceMode::SuperPopulation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Draws CSV from `fit` (not needed for --estimand data).
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// Panel CSV the draws were fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Standardize covariates (must match the fit).
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, value_enum)]
    pub estimand: Estimand,
    /// Conditioning horizon s (AS through periods 1..s) [default: T].
    #[arg(long)]
    pub s: Option<usize>,
    /// Effect period t' <= s; omitted = full trajectory.
    #[arg(long)]
    pub t_prime: Option<usize>,
    /// finite: per-draw imputation; super: covariate-weighted expectations.
    #[arg(long, value_enum, default_value_t = ModeArg::Finite)]
    pub mode: ModeArg,
    /// Imputation seed [default: 0].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Output file [default: summary.json or summary.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the manifest's dataset checksum verification.
    #[arg(long)]
    pub allow_unverified: bool,
}

#[derive(Serialize)]
struct DataSummaryDoc {
    cells: Vec<CellDoc>,
    balance: Vec<BalanceDoc>,
    survival: Vec<SurvivalDoc>,
}

#[derive(Serialize)]
struct CellDoc {
    arm: usize,
    survival: Vec<u8>,
    count: usize,
    proportion: f64,
}

#[derive(Serialize)]
struct BalanceDoc {
    covariate: String,
    mean_control: f64,
    mean_treated: f64,
    mean_overall: f64,
}

#[derive(Serialize)]
struct SurvivalDoc {
    arm: usize,
    period: usize,
    cumulative_survival: f64,
    closure: f64,
}

#[derive(Serialize)]
#[serde(untagged)]
enum SummaryDoc {
    Strata { estimand: String, rows: Vec<StratumRowDoc> },
    Sace { estimand: String, mode: String, rows: Vec<SaceRowDoc> },
    Data(DataSummaryDoc),
}

fn write_csv_rows(path: &PathBuf, doc: &SummaryDoc) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Other(e.into()))?;
    let io_err = |e: csv::Error| CliError::Other(e.into());
    match doc {
        SummaryDoc::Strata { rows, .. } => {
            w.write_record(["sequence", "mean", "st_dev", "q05", "q95"]).map_err(io_err)?;
            for r in rows {
                w.write_record([
                    r.sequence.clone(),
                    format!("{}", r.mean),
                    format!("{}", r.st_dev),
                    format!("{}", r.q05),
                    format!("{}", r.q95),
                ])
                .map_err(io_err)?;
            }
        }
        SummaryDoc::Sace { rows, .. } => {
            w.write_record(["estimand", "s", "t_prime", "mean", "st_dev", "q05", "q95", "skipped"])
                .map_err(io_err)?;
            for r in rows {
                w.write_record([
                    r.estimand.clone(),
                    r.s.to_string(),
                    r.t_prime.to_string(),
                    format!("{}", r.mean),
                    format!("{}", r.st_dev),
                    format!("{}", r.q05),
                    format!("{}", r.q95),
                    r.skipped_draws.to_string(),
                ])
                .map_err(io_err)?;
            }
        }
        SummaryDoc::Data(d) => {
            w.write_record(["arm", "survival", "count", "proportion"]).map_err(io_err)?;
            for c in &d.cells {
                let pattern: String =
                    c.survival.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
                w.write_record([
                    c.arm.to_string(),
                    pattern,
                    c.count.to_string(),
                    format!("{}", c.proportion),
                ])
                .map_err(io_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(args: &SummarizeArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let doc: SummaryDoc = match args.estimand {
        Estimand::Data => {
            let schema = match &args.schema {
                Some(p) => load_schema_file(p).map_err(CliError::validation)?,
                None => SchemaFile::default(),
            };
            let data = load_dataset(&args.data, &schema, args.standardize)
                .map_err(CliError::validation)?;
            SummaryDoc::Data(DataSummaryDoc {
                cells: observed_cell_proportions(&data)
                    .into_iter()
                    .map(|c| CellDoc {
                        arm: c.arm.index(),
                        survival: c.survival.iter().map(|&b| u8::from(b)).collect(),
                        count: c.count,
                        proportion: c.proportion,
                    })
                    .collect(),
                balance: covariate_balance(&data)
                    .into_iter()
                    .map(|b| BalanceDoc {
                        covariate: b.name,
                        mean_control: b.mean_control,
                        mean_treated: b.mean_treated,
                        mean_overall: b.mean_overall,
                    })
                    .collect(),
                survival: survival_summary(&data)
                    .into_iter()
                    .map(|s| SurvivalDoc {
                        arm: s.arm.index(),
                        period: s.period,
                        cumulative_survival: s.cumulative_survival,
                        closure: s.closure,
                    })
                    .collect(),
            })
        }
        Estimand::Strata | Estimand::Sace => {
            let draws_path = args.draws.as_ref().ok_or_else(|| {
                CliError::validation(anyhow!("--draws is required for this estimand"))
            })?;
            let (data, draws, _manifest) = load_fit_inputs(
                draws_path,
                &args.data,
                args.schema.as_deref(),
                args.standardize,
                args.allow_unverified,
            )?;
            if args.estimand == Estimand::Strata {
                let post =
                    stratum_proportions(&data, &draws).map_err(CliError::validation)?;
                SummaryDoc::Strata { estimand: "strata".into(), rows: stratum_rows(&post) }
            } else {
                let s = args.s.unwrap_or(draws.layout().periods());
                let mode: SaceMode = args.mode.into();
                let estimates = match args.t_prime {
                    Some(t) => vec![pstrat_core::estimands::impute_and_sace(
                        &data, &draws, s, t, mode, args.seed,
                    )
                    .map_err(CliError::validation)?],
                    None => sace_trajectory(&data, &draws, s, mode, args.seed)
                        .map_err(CliError::validation)?,
                };
                for e in &estimates {
                    if e.excess_skip_warning {
                        eprintln!(
                            "warning: SACE_1:{}({}) skipped {} of {} draws",
                            e.s,
                            e.t_prime,
                            e.skipped_draws,
                            e.skipped_draws + e.per_draw.len()
                        );
                    }
                }
                SummaryDoc::Sace {
                    estimand: "sace".into(),
                    mode: format!("{mode}"),
                    rows: estimates.iter().map(sace_row).collect(),
                }
            }
        }
    };

    let default_name = match args.format {
        OutputFormat::Json => "summary.json",
        OutputFormat::Csv => "summary.csv",
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(default_name));
    match args.format {
        OutputFormat::Json => write_json(&out, &doc)?,
        OutputFormat::Csv => write_csv_rows(&out, &doc)?,
    }
    println!("{}", std::fs::read_to_string(&out)?.trim_end());

    let mut manifest = RunManifest::new(
        "summarize",
        serde_json::json!({
            "estimand": format!("{:?}", args.estimand),
            "s": args.s,
            "t_prime": args.t_prime,
            "mode": format!("{:?}", args.mode),
            "format": format!("{:?}", args.format),
        }),
        args.seed,
    );
    manifest.dataset = Some(DatasetRef {
        path: args.data.display().to_string(),
        sha256: sha256_file(&args.data).map_err(CliError::Other)?,
    });
    manifest.artifacts = vec![out.display().to_string()];
    manifest.wall_time_ms = start.elapsed().as_millis();
    manifest.write(&out).map_err(CliError::Other)?;
    Ok(())
}
