//! `pstrat simulate`: generate a synthetic panel and its truth file from a
//! generator spec.

use clap::Args;
use std::path::PathBuf;
use std::time::Instant;

use pstrat_core::simulation::simulate_dataset;

use crate::csv_io::{write_dataset, write_truth};
use crate::error::CliError;
use crate::manifest::{sha256_file, DatasetRef, RunManifest};
use crate::spec_io::load_spec;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator spec (JSON; see docs/generator-spec.md).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output CSV for the observed panel.
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
    /// Output CSV for the per-unit truth (latent strata, both-arm outcomes).
    #[arg(long, default_value = "truth.csv")]
    pub truth: PathBuf,
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let spec_file = load_spec(&args.spec).map_err(CliError::validation)?;
    let config_snapshot =
        serde_json::to_value(&spec_file).map_err(|e| CliError::Other(e.into()))?;
    let generator = spec_file.into_generator().map_err(CliError::validation)?;
    let (data, truths) = simulate_dataset(&generator).map_err(CliError::validation)?;
    write_dataset(&args.out, &data).map_err(CliError::Other)?;
    write_truth(&args.truth, &truths).map_err(CliError::Other)?;

    let mut manifest = RunManifest::new("simulate", config_snapshot, generator.seed);
    manifest.dataset = Some(DatasetRef {
        path: args.out.display().to_string(),
        sha256: sha256_file(&args.out).map_err(CliError::Other)?,
    });
    manifest.layout = Some(generator.layout.clone());
    manifest.artifacts =
        vec![args.out.display().to_string(), args.truth.display().to_string()];
    manifest.wall_time_ms = start.elapsed().as_millis();
    manifest.write(&args.out).map_err(CliError::Other)?;

    println!(
        "simulated {} units (T={}, K={}) -> {} (truth: {})",
        data.len(),
        data.periods(),
        data.covariate_count(),
        args.out.display(),
        args.truth.display()
    );
    Ok(())
}
