//! Report documents: typed JSON structures for stratum-membership and SACE
//! tables plus the plain-text renderer. Text tables use the column labels
//! Mean, st.dev, 0.05, 0.95 and three printed decimals.

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};

use pstrat_core::diagnostics::DiagnosticsTable;
use pstrat_core::estimands::{SaceEstimate, StratumPosterior};
use pstrat_core::hmc::PosteriorDraws;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StratumRowDoc {
    pub sequence: String,
    pub mean: f64,
    pub st_dev: f64,
    pub q05: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaceRowDoc {
    pub estimand: String,
    pub s: usize,
    pub t_prime: usize,
    pub mean: f64,
    pub st_dev: f64,
    pub q05: f64,
    pub q95: f64,
    pub skipped_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaceTableDoc {
    pub s: usize,
    pub rows: Vec<SaceRowDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct DiagnosticsDoc {
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub total_divergences: usize,
    pub accept_rates: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportDoc {
    pub mode: String,
    pub stratum_table: Vec<StratumRowDoc>,
    pub sace_tables: Vec<SaceTableDoc>,
    pub diagnostics: DiagnosticsDoc,
}

pub fn estimand_label(s: usize, t_prime: usize) -> String {
    if s == 1 {
        format!("SACE_1({t_prime})")
    } else {
        format!("SACE_{{1:{s}}}({t_prime})")
    }
}

pub fn stratum_rows(post: &StratumPosterior) -> Vec<StratumRowDoc> {
    post.rows
        .iter()
        .map(|r| StratumRowDoc {
            sequence: format!("{}", r.sequence),
            mean: r.mean,
            st_dev: r.sd,
            q05: r.q05,
            q95: r.q95,
        })
        .collect()
}

pub fn sace_row(est: &SaceEstimate) -> SaceRowDoc {
    SaceRowDoc {
        estimand: estimand_label(est.s, est.t_prime),
        s: est.s,
        t_prime: est.t_prime,
        mean: est.mean,
        st_dev: est.sd,
        q05: est.q05,
        q95: est.q95,
        skipped_draws: est.skipped_draws,
    }
}

pub fn diagnostics_doc(table: &DiagnosticsTable, draws: &PosteriorDraws) -> DiagnosticsDoc {
    DiagnosticsDoc {
        max_rhat: table.max_rhat(),
        min_ess: table.min_ess(),
        total_divergences: draws.divergences().iter().sum(),
        accept_rates: draws.accept_rates().to_vec(),
        step_sizes: draws.step_sizes().to_vec(),
    }
}

const HEADER: &str = "Mean  st.dev    0.05    0.95";

fn table_line(label: &str, width: usize, mean: f64, sd: f64, q05: f64, q95: f64) -> String {
    format!("{label:<width$} {mean:>7.3} {sd:>7.3} {q05:>7.3} {q95:>7.3}")
}

/// Renders the full report as plain text.
pub fn render_text(doc: &ReportDoc) -> String {
    let mut out = String::new();
    let width = doc
        .stratum_table
        .iter()
        .map(|r| r.sequence.len())
        .chain(doc.sace_tables.iter().flat_map(|t| t.rows.iter().map(|r| r.estimand.len())))
        .max()
        .unwrap_or(12)
        .max(12);

    out.push_str("Longitudinal principal stratum membership\n");
    out.push_str(&format!("{:<width$}    {HEADER}\n", "G_i"));
    for r in &doc.stratum_table {
        out.push_str(&table_line(&r.sequence, width, r.mean, r.st_dev, r.q05, r.q95));
        out.push('\n');
    }
    out.push('\n');

    for t in &doc.sace_tables {
        out.push_str(&format!(
            "Survivor average causal effects, AS through period {} ({})\n",
            t.s, doc.mode
        ));
        out.push_str(&format!("{:<width$}    {HEADER}\n", "estimand"));
        for r in &t.rows {
            out.push_str(&table_line(&r.estimand, width, r.mean, r.st_dev, r.q05, r.q95));
            if r.skipped_draws > 0 {
                out.push_str(&format!("  [skipped {} draws]", r.skipped_draws));
            }
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("Diagnostics\n");
    match doc.diagnostics.max_rhat {
        Some(r) => out.push_str(&format!("max split R-hat: {r:.4}\n")),
        None => out.push_str("max split R-hat: n/a (single chain)\n"),
    }
    if let Some(e) = doc.diagnostics.min_ess {
        out.push_str(&format!("min bulk ESS:    {e:.1}\n"));
    }
    out.push_str(&format!("divergences:     {}\n", doc.diagnostics.total_divergences));
    let rates: Vec<String> =
        doc.diagnostics.accept_rates.iter().map(|r| format!("{r:.3}")).collect();
    out.push_str(&format!("accept rates:    [{}]\n", rates.join(", ")));
    out
}

/// Parses every numeric cell from a rendered table body line.
pub fn parse_rendered_line(line: &str) -> Result<(String, Vec<f64>)> {
    let mut parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() < 5 {
        return Err(anyhow!("not a table line: {line:?}"));
    }
    let numbers = parts.split_off(parts.len() - 4);
    let label = parts.join(" ");
    let values = numbers
        .iter()
        .map(|n| n.parse::<f64>().map_err(|e| anyhow!("{e}: {n:?}")))
        .collect::<Result<Vec<f64>>>()?;
    Ok((label, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_doc() -> ReportDoc {
        ReportDoc {
            mode: "finite-sample".into(),
            stratum_table: vec![
                StratumRowDoc {
                    sequence: "NS.NS.NS".into(),
                    mean: 0.0241,
                    st_dev: 0.0019,
                    q05: 0.021,
                    q95: 0.0274,
                },
                StratumRowDoc {
                    sequence: "CS.CS.CS".into(),
                    mean: 0.5868,
                    st_dev: 0.1377,
                    q05: 0.3224,
                    q95: 0.7781,
                },
            ],
            sace_tables: vec![SaceTableDoc {
                s: 1,
                rows: vec![SaceRowDoc {
                    estimand: estimand_label(1, 1),
                    s: 1,
                    t_prime: 1,
                    mean: 0.1024,
                    st_dev: 0.0571,
                    q05: 0.0081,
                    q95: 0.1969,
                    skipped_draws: 0,
                }],
            }],
            diagnostics: DiagnosticsDoc {
                max_rhat: Some(1.003),
                min_ess: Some(512.3),
                total_divergences: 0,
                accept_rates: vec![0.87, 0.91],
                step_sizes: vec![0.05, 0.06],
            },
        }
    }

    #[test]
    fn text_contains_required_columns_and_labels() {
        let text = render_text(&sample_doc());
        assert!(text.contains("Mean  st.dev    0.05    0.95"));
        assert!(text.contains("SACE_1(1)"));
        assert!(text.contains("NS.NS.NS"));
        assert!(text.contains("max split R-hat"));
    }

    #[test]
    fn rendered_values_reparse_at_printed_precision() {
        let doc = sample_doc();
        let text = render_text(&doc);
        let line = text.lines().find(|l| l.starts_with("CS.CS.CS")).unwrap();
        let (label, values) = parse_rendered_line(line).unwrap();
        assert_eq!(label, "CS.CS.CS");
        let expected = [0.5868, 0.1377, 0.3224, 0.7781];
        for (v, e) in values.iter().zip(expected) {
            assert!((v - e).abs() <= 0.0005 + 1e-12, "{v} vs {e}");
        }
        let sace_line = text.lines().find(|l| l.starts_with("SACE_1(1)")).unwrap();
        let (_, values) = parse_rendered_line(sace_line).unwrap();
        assert!((values[0] - 0.102).abs() < 1e-9);
    }

    #[test]
    fn json_roundtrip() {
        let doc = sample_doc();
        let json = serde_json::to_string_pretty(&doc).unwrap();
        let back: ReportDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(doc, back);
    }

    #[test]
    fn estimand_labels() {
        assert_eq!(estimand_label(1, 1), "SACE_1(1)");
        assert_eq!(estimand_label(2, 1), "SACE_{1:2}(1)");
        assert_eq!(estimand_label(3, 3), "SACE_{1:3}(3)");
    }
}
