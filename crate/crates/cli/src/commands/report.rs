//! `pstrat report`: the full posterior summary document — stratum
//! membership table, SACE tables for every horizon, and sampler diagnostics
//! — as plain text and JSON.

use clap::Args;
use std::path::PathBuf;
use std::time::Instant;

use pstrat_core::diagnostics::diagnostics;
use pstrat_core::estimands::{sace_estimates, stratum_proportions, SaceMode};

use crate::commands::{load_fit_inputs, write_json};
use crate::commands::summarize::ModeArg;
use crate::error::CliError;
use crate::manifest::{sha256_file, DatasetRef, RunManifest};
use crate::report::{
    diagnostics_doc, render_text, sace_row, stratum_rows, ReportDoc, SaceTableDoc,
};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Draws CSV from `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// Panel CSV the draws were fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Standardize covariates (must match the fit).
    #[arg(long)]
    pub standardize: bool,
    /// finite: per-draw imputation; super: covariate-weighted expectations.
    #[arg(long, value_enum, default_value_t = ModeArg::Finite)]
    pub mode: ModeArg,
    /// Imputation seed [default: 0].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output base path; writes <out>.txt and <out>.json.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Skip the manifest's dataset checksum verification.
    #[arg(long)]
    pub allow_unverified: bool,
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (data, draws, _manifest) = load_fit_inputs(
        &args.draws,
        &args.data,
        args.schema.as_deref(),
        args.standardize,
        args.allow_unverified,
    )?;
    let mode: SaceMode = args.mode.into();

    let strata = stratum_proportions(&data, &draws).map_err(CliError::validation)?;
    let periods = draws.layout().periods();
    let mut sace_tables = Vec::with_capacity(periods);
    for s in 1..=periods {
        let pairs: Vec<(usize, usize)> = (1..=s).map(|t| (s, t)).collect();
        let estimates = sace_estimates(&data, &draws, &pairs, mode, args.seed)
            .map_err(CliError::validation)?;
        sace_tables.push(SaceTableDoc { s, rows: estimates.iter().map(sace_row).collect() });
    }
    let diag = diagnostics(&draws).map_err(CliError::validation)?;

    let doc = ReportDoc {
        mode: format!("{mode}"),
        stratum_table: stratum_rows(&strata),
        sace_tables,
        diagnostics: diagnostics_doc(&diag, &draws),
    };

    let json_path = args.out.with_extension("json");
    let text_path = args.out.with_extension("txt");
    write_json(&json_path, &doc)?;
    let text = render_text(&doc);
    std::fs::write(&text_path, &text)?;
    print!("{text}");

    let mut manifest = RunManifest::new(
        "report",
        serde_json::json!({"mode": format!("{mode}")}),
        args.seed,
    );
    manifest.dataset = Some(DatasetRef {
        path: args.data.display().to_string(),
        sha256: sha256_file(&args.data).map_err(CliError::Other)?,
    });
    manifest.artifacts =
        vec![json_path.display().to_string(), text_path.display().to_string()];
    manifest.wall_time_ms = start.elapsed().as_millis();
    manifest.write(&json_path).map_err(CliError::Other)?;
    Ok(())
}
