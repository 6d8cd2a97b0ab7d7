//! Subcommand implementations. Each command resolves its inputs, delegates
//! to `pstrat-core`, writes its artifacts plus a run manifest, and maps
//! failures onto the exit-code scheme.

pub mod fit;
pub mod ppc;
pub mod report;
pub mod simulate;
pub mod summarize;

use anyhow::anyhow;
use std::path::Path;

use pstrat_core::data::Dataset;
use pstrat_core::hmc::PosteriorDraws;

use crate::csv_io::load_dataset;
use crate::draws_io::read_draws;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::schema::SchemaFile;

/// Loads a draws file, its manifest, and the matching dataset, enforcing the
/// manifest's dataset checksum unless explicitly waived.
pub(crate) fn load_fit_inputs(
    draws_path: &Path,
    data_path: &Path,
    schema: Option<&Path>,
    standardize: bool,
    allow_unverified: bool,
) -> Result<(Dataset, PosteriorDraws, RunManifest), CliError> {
    let manifest = RunManifest::read(draws_path).map_err(CliError::validation)?;
    if !allow_unverified {
        manifest.verify_dataset(data_path).map_err(CliError::validation)?;
    }
    let schema = match schema {
        Some(p) => crate::schema::load_schema_file(p).map_err(CliError::validation)?,
        None => SchemaFile::default(),
    };
    let data = load_dataset(data_path, &schema, standardize).map_err(CliError::validation)?;
    let draws = read_draws(draws_path, &manifest).map_err(CliError::validation)?;
    if draws.layout().periods() != data.periods()
        || draws.layout().covariates() != data.covariate_count()
    {
        return Err(CliError::validation(anyhow!(
            "draws layout (T={}, K={}) does not match dataset (T={}, K={})",
            draws.layout().periods(),
            draws.layout().covariates(),
            data.periods(),
            data.covariate_count()
        )));
    }
    Ok((data, draws, manifest))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.into()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
