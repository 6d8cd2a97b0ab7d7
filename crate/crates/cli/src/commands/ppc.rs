//! `pstrat ppc`: posterior predictive checks against the fitted draws.

use clap::Args;
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

use pstrat_core::ppc::posterior_predictive_check;

use crate::commands::{load_fit_inputs, write_json};
use crate::error::CliError;
use crate::manifest::{sha256_file, DatasetRef, RunManifest};

#[derive(Debug, Args)]
pub struct PpcArgs {
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
    /// Replicate at most this many evenly spaced draws [default: 200].
    #[arg(long, default_value_t = 200)]
    pub thin: usize,
    /// Replication seed [default: 0].
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON path.
    #[arg(long, default_value = "ppc.json")]
    pub out: PathBuf,
    /// Skip the manifest's dataset checksum verification.
    #[arg(long)]
    pub allow_unverified: bool,
}

#[derive(Serialize)]
struct PpcStatDoc {
    statistic: String,
    arm: usize,
    period: usize,
    observed: f64,
    replicated_mean: f64,
    p_value: f64,
    valid_draws: usize,
}

#[derive(Serialize)]
struct CorrectDoc {
    arm: usize,
    period: usize,
    hiring: f64,
    non_hiring: f64,
}

#[derive(Serialize)]
struct PpcDoc {
    draws_used: usize,
    statistics: Vec<PpcStatDoc>,
    correct_predictions: Vec<CorrectDoc>,
    p_values_in_05_95: f64,
}

pub fn run(args: &PpcArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (data, draws, _manifest) = load_fit_inputs(
        &args.draws,
        &args.data,
        args.schema.as_deref(),
        args.standardize,
        args.allow_unverified,
    )?;
    let report = posterior_predictive_check(&data, &draws, args.thin, args.seed)
        .map_err(CliError::validation)?;

    let doc = PpcDoc {
        draws_used: report.draws_used,
        statistics: report
            .statistics
            .iter()
            .map(|s| PpcStatDoc {
                statistic: format!("{}", s.kind),
                arm: s.arm.index(),
                period: s.period,
                observed: s.observed,
                replicated_mean: s.replicated_mean,
                p_value: s.p_value,
                valid_draws: s.valid_draws,
            })
            .collect(),
        correct_predictions: report
            .correct_predictions
            .iter()
            .map(|c| CorrectDoc {
                arm: c.arm.index(),
                period: c.period,
                hiring: c.hiring,
                non_hiring: c.non_hiring,
            })
            .collect(),
        p_values_in_05_95: report.p_value_coverage(0.05, 0.95),
    };
    write_json(&args.out, &doc)?;

    println!("posterior predictive checks over {} draws", report.draws_used);
    println!("{:<10} {:>3} {:>6} {:>9} {:>9} {:>8}", "statistic", "arm", "period", "observed", "rep.mean", "p-value");
    for s in &report.statistics {
        println!(
            "{:<10} {:>3} {:>6} {:>9.4} {:>9.4} {:>8.3}",
            format!("{}", s.kind),
            s.arm.index(),
            s.period,
            s.observed,
            s.replicated_mean,
            s.p_value
        );
    }
    println!("correct predictions (hiring / non-hiring):");
    for c in &report.correct_predictions {
        println!(
            "  arm {} period {}: {:.3} / {:.3}",
            c.arm.index(),
            c.period,
            c.hiring,
            c.non_hiring
        );
    }
    println!("p-values in [0.05, 0.95]: {:.1}%", 100.0 * doc.p_values_in_05_95);

    let mut manifest = RunManifest::new(
        "ppc",
        serde_json::json!({"thin": args.thin}),
        args.seed,
    );
    manifest.dataset = Some(DatasetRef {
        path: args.data.display().to_string(),
        sha256: sha256_file(&args.data).map_err(CliError::Other)?,
    });
    manifest.artifacts = vec![args.out.display().to_string()];
    manifest.wall_time_ms = start.elapsed().as_millis();
    manifest.write(&args.out).map_err(CliError::Other)?;
    Ok(())
}
