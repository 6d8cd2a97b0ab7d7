//! `pstrat fit`: run HMC on the marginalized posterior and persist draws,
//! layout, and diagnostics.

use anyhow::anyhow;
use clap::Args;
use std::path::PathBuf;
use std::time::Instant;

use pstrat_core::diagnostics::diagnostics;
use pstrat_core::hmc::{run_hmc_with_layout, SamplerError};
use pstrat_core::model::BlockLayout;

use crate::config::{load_config, FileConfig, FitSettings, SlopeModeArg};
use crate::csv_io::load_dataset;
use crate::draws_io::write_draws;
use crate::error::CliError;
use crate::manifest::{sha256_file, DatasetRef, DiagnosticsSummary, RunManifest};
use crate::schema::{load_schema_file, SchemaFile};

/// Split R-hat threshold enforced under `--strict`.
pub const STRICT_RHAT: f64 = 1.05;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Column mapping JSON (default: infer id/w/s*/y* from the header).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Config file (YAML or JSON) with any of the fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output draws CSV; the manifest lands next to it.
    #[arg(long, default_value = "draws.csv")]
    pub out: PathBuf,
    /// Total iterations per chain, warmup included [default: 2000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Warmup iterations discarded per chain [default: 1000].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Number of chains [default: 4].
    #[arg(long)]
    pub chains: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dual-averaging acceptance target [default: 0.8].
    #[arg(long)]
    pub target_accept: Option<f64>,
    /// Base leapfrog step count [default: 32].
    #[arg(long)]
    pub leapfrog: Option<usize>,
    /// Leapfrog jitter fraction; 0 disables [default: 0.2].
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Prior standard deviation for stratum coefficients [default: 2.5].
    #[arg(long)]
    pub stratum_scale: Option<f64>,
    /// Prior standard deviation for outcome coefficients [default: 2.0].
    #[arg(long)]
    pub outcome_scale: Option<f64>,
    /// Center and scale covariates before fitting [default: off].
    #[arg(long)]
    pub standardize: bool,
    /// Covariate slopes shared across outcome models or per model
    /// [default: shared].
    #[arg(long, value_enum)]
    pub slope_mode: Option<SlopeModeArg>,
    /// Exit with code 3 when R-hat exceeds 1.05 or divergences are high.
    #[arg(long)]
    pub strict: bool,
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file_config = match &args.config {
        Some(p) => load_config(p).map_err(CliError::validation)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        iters: args.iters,
        warmup: args.warmup,
        chains: args.chains,
        seed: args.seed,
        target_accept: args.target_accept,
        leapfrog: args.leapfrog,
        jitter: args.jitter,
        stratum_scale: args.stratum_scale,
        outcome_scale: args.outcome_scale,
        standardize: args.standardize.then_some(true),
        slope_mode: args.slope_mode,
    };
    let settings = FitSettings::merge(flags, file_config);

    let schema = match &args.schema {
        Some(p) => load_schema_file(p).map_err(CliError::validation)?,
        None => SchemaFile::default(),
    };
    let data = load_dataset(&args.data, &schema, settings.standardize)
        .map_err(CliError::validation)?;
    let layout =
        BlockLayout::new(data.periods(), data.covariate_count(), settings.slope_mode.into());
    let cfg = settings.hmc_config();
    cfg.validate().map_err(CliError::validation)?;

    let draws = run_hmc_with_layout(&data, layout.clone(), &settings.prior(), &cfg).map_err(
        |e| match e {
            SamplerError::InvalidConfig(_) | SamplerError::NonFiniteAtInit { .. } => {
                CliError::validation(e)
            }
            other => CliError::Other(anyhow!("{other}")),
        },
    )?;
    let diag = diagnostics(&draws).map_err(CliError::validation)?;
    write_draws(&args.out, &draws).map_err(CliError::Other)?;

    let mut manifest = RunManifest::new(
        "fit",
        serde_json::to_value(&settings).map_err(|e| CliError::Other(e.into()))?,
        settings.seed,
    );
    manifest.dataset = Some(DatasetRef {
        path: args.data.display().to_string(),
        sha256: sha256_file(&args.data).map_err(CliError::Other)?,
    });
    manifest.chains = draws.chains();
    manifest.retained = draws.retained();
    manifest.layout = Some(layout);
    manifest.accept_rates = draws.accept_rates().to_vec();
    manifest.step_sizes = draws.step_sizes().to_vec();
    manifest.divergences = draws.divergences().to_vec();
    manifest.warnings = draws.warnings().iter().map(|w| format!("{w}")).collect();
    manifest.diagnostics = Some(DiagnosticsSummary {
        max_rhat: diag.max_rhat(),
        min_ess: diag.min_ess(),
        total_divergences: draws.divergences().iter().sum(),
    });
    manifest.artifacts = vec![args.out.display().to_string()];
    manifest.wall_time_ms = start.elapsed().as_millis();
    manifest.write(&args.out).map_err(CliError::Other)?;

    let max_rhat = diag.max_rhat();
    println!(
        "fit: {} chains x {} retained draws ({} parameters) -> {}",
        draws.chains(),
        draws.retained(),
        draws.dim(),
        args.out.display()
    );
    match max_rhat {
        Some(r) => println!(
            "diagnostics: max R-hat {:.4}, min ESS {:.1}, divergences {}",
            r,
            diag.min_ess().unwrap_or(f64::NAN),
            manifest.diagnostics.as_ref().map_or(0, |d| d.total_divergences)
        ),
        None => println!("diagnostics: single chain (no R-hat)"),
    }
    for w in draws.warnings() {
        eprintln!("warning: {w}");
    }

    if args.strict {
        if let Some(r) = max_rhat {
            if r > STRICT_RHAT {
                return Err(CliError::Diagnostics(format!(
                    "max split R-hat {r:.4} exceeds {STRICT_RHAT}"
                )));
            }
        }
        if !draws.warnings().is_empty() {
            return Err(CliError::Diagnostics("sampler reported divergence warnings".into()));
        }
    }
    Ok(())
}
