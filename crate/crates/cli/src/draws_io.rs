//! Columnar draws files: one row per retained draw with `chain`,
//! `iteration`, and one column per parameter named from the block layout.
//! Values print in Rust's shortest round-trip form, so a re-read
//! reconstructs the draws bit for bit.

use anyhow::{anyhow, bail, Context, Result};
use std::path::Path;

use pstrat_core::hmc::{PosteriorDraws, SamplerWarning};
use pstrat_core::model::BlockLayout;

use crate::manifest::RunManifest;

pub fn write_draws(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(draws.layout().names().iter().cloned());
    writer.write_record(&header)?;
    for chain in 0..draws.chains() {
        for iter in 0..draws.retained() {
            let mut row = vec![chain.to_string(), iter.to_string()];
            row.extend(draws.draw(chain, iter).iter().map(|v| format!("{v}")));
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a draws file back against the manifest's layout and chain shape.
pub fn read_draws(path: &Path, manifest: &RunManifest) -> Result<PosteriorDraws> {
    let layout: &BlockLayout = manifest
        .layout
        .as_ref()
        .ok_or_else(|| anyhow!("manifest carries no parameter layout"))?;
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let expected: Vec<String> = ["chain", "iteration"]
        .iter()
        .map(|s| s.to_string())
        .chain(layout.names().iter().cloned())
        .collect();
    if header != expected {
        bail!("draws header does not match the manifest layout");
    }
    let dim = layout.dim();
    let chains = manifest.chains;
    let retained = manifest.retained;
    let mut values = vec![0.0f64; chains * retained * dim];
    let mut seen = 0usize;
    for row in reader.records() {
        let row = row?;
        let chain: usize = row.get(0).unwrap_or("").parse().context("chain index")?;
        let iter: usize = row.get(1).unwrap_or("").parse().context("iteration index")?;
        if chain >= chains || iter >= retained {
            bail!("draw ({chain}, {iter}) outside manifest shape {chains}x{retained}");
        }
        let base = (chain * retained + iter) * dim;
        for j in 0..dim {
            let field = row
                .get(2 + j)
                .ok_or_else(|| anyhow!("row ({chain}, {iter}): missing column {}", 2 + j))?;
            values[base + j] = field.parse().context("parameter value")?;
        }
        seen += 1;
    }
    if seen != chains * retained {
        bail!("draws file has {seen} rows, manifest expects {}", chains * retained);
    }
    let warnings: Vec<SamplerWarning> = Vec::new();
    PosteriorDraws::from_parts(
        layout.clone(),
        chains,
        retained,
        values,
        manifest.accept_rates.clone(),
        manifest.step_sizes.clone(),
        manifest.divergences.clone(),
        warnings,
    )
    .map_err(|e| anyhow!("{e}"))
}
