//! End-to-end sampler checks on real posterior targets: prior recovery with
//! an empty dataset and a short synthetic-data fit with clean diagnostics.

use pstrat_core::data::Dataset;
use pstrat_core::diagnostics::diagnostics;
use pstrat_core::estimands::stratum_proportions;
use pstrat_core::hmc::{run_hmc_with_layout, HmcConfig};
use pstrat_core::model::{BlockLayout, ParamVector, PriorSpec, SlopeMode};
use pstrat_core::simulation::{simulate_dataset, AssignmentLaw, CovariateLaw, GeneratorSpec};

fn pooled_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn prior_only_target_reproduces_prior_scales() {
    // With no data the posterior is the prior; pooled draw standard
    // deviations per block family must sit within 10 percent of the prior
    // scales (2.5 stratum, 2.0 outcome).
    let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
    let data = Dataset::empty(vec!["x1".into(), "x2".into()], 3);
    let prior = PriorSpec::default();
    let cfg = HmcConfig {
        iterations: 1750,
        warmup: 750,
        chains: 4,
        seed: 91,
        ..HmcConfig::default()
    };
    let draws = run_hmc_with_layout(&data, layout.clone(), &prior, &cfg).unwrap();

    let mut stratum_values = Vec::new();
    let mut outcome_values = Vec::new();
    for m in 0..draws.total_draws() {
        let d = draws.flat_draw(m);
        for (i, &v) in d.iter().enumerate() {
            if layout.is_transition_coordinate(i) {
                stratum_values.push(v);
            } else {
                outcome_values.push(v);
            }
        }
    }
    let sd_stratum = pooled_sd(&stratum_values);
    let sd_outcome = pooled_sd(&outcome_values);
    assert!((sd_stratum - 2.5).abs() / 2.5 < 0.10, "stratum sd {sd_stratum}");
    assert!((sd_outcome - 2.0).abs() / 2.0 < 0.10, "outcome sd {sd_outcome}");
}

#[test]
fn short_synthetic_fit_mixes_and_recovers_strata() {
    let layout = BlockLayout::new(3, 2, SlopeMode::Shared);
    let mut theta = ParamVector::zeros(&layout);
    for (name, value) in [
        ("g1->AS.icpt", 0.5),
        ("g1->CS.icpt", 1.0),
        ("g2|AS->AS.icpt", 1.2),
        ("g2|CS->CS.icpt", 1.2),
        ("g3|AS.AS->AS.icpt", 1.5),
        ("g3|CS.CS->CS.icpt", 1.5),
        ("y1|w1,AS.icpt", 0.8),
        ("y1|w0,AS.icpt", 0.2),
        ("beta_x.x1", 0.4),
    ] {
        theta.set(&layout, name, value).unwrap();
    }
    let spec = GeneratorSpec {
        theta_true: theta,
        covariate_law: CovariateLaw::Bernoulli(vec![0.5, 0.5]),
        assignment: AssignmentLaw::balanced(2),
        units: 400,
        seed: 7,
        layout: layout.clone(),
    };
    let (data, truths) = simulate_dataset(&spec).unwrap();

    let cfg = HmcConfig {
        iterations: 700,
        warmup: 350,
        chains: 2,
        seed: 12,
        ..HmcConfig::default()
    };
    let draws = run_hmc_with_layout(&data, layout, &PriorSpec::default(), &cfg).unwrap();
    assert!(draws.warnings().is_empty(), "{:?}", draws.warnings());

    let table = diagnostics(&draws).unwrap();
    let max_rhat = table.max_rhat().unwrap();
    assert!(max_rhat < 1.10, "short-run max R-hat {max_rhat}");

    // Posterior stratum proportions should land near the realized truth.
    let post = stratum_proportions(&data, &draws).unwrap();
    assert_eq!(post.rows.len(), 10);
    let n = truths.len() as f64;
    for row in &post.rows {
        let truth = truths
            .iter()
            .filter(|t| t.sequence.labels() == row.sequence.labels())
            .count() as f64
            / n;
        assert!(
            (row.mean - truth).abs() < 0.08,
            "{}: posterior {} vs truth {}",
            row.sequence,
            row.mean,
            truth
        );
    }
}
