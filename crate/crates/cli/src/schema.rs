//! Column mapping between CSV headers and the panel layout.
//!
//! The default schema infers roles from header names: `id`, `w`, survival
//! columns `s1..sT`, outcome columns `y1..yT`, everything else a covariate
//! (in header order). An explicit JSON schema overrides any of it.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub id: Option<String>,
    pub arm: Option<String>,
    pub survival: Option<Vec<String>>,
    pub outcome: Option<Vec<String>>,
    pub covariates: Option<Vec<String>>,
}

/// Resolved mapping from CSV column indices to record fields.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub id: usize,
    pub arm: usize,
    pub survival: Vec<usize>,
    pub outcome: Vec<usize>,
    pub covariates: Vec<(String, usize)>,
}

impl ColumnMap {
    pub fn periods(&self) -> usize {
        self.survival.len()
    }
}

pub fn load_schema_file(path: &Path) -> Result<SchemaFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading schema {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing schema {}", path.display()))
}

fn find_column(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("column {name:?} not found in header"))
}

/// Indexed columns named `<prefix>1..<prefix>T` (T from the header).
fn indexed_columns(header: &[String], prefix: &str) -> Vec<(usize, usize)> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .filter(|&t| t >= 1)
                .map(|t| (t, i))
        })
        .collect();
    found.sort_unstable();
    found
}

/// Resolves the schema against a concrete header.
pub fn resolve(header: &[String], schema: &SchemaFile) -> Result<ColumnMap> {
    let id = find_column(header, schema.id.as_deref().unwrap_or("id"))?;
    let arm = find_column(header, schema.arm.as_deref().unwrap_or("w"))?;

    let survival: Vec<usize> = match &schema.survival {
        Some(names) => names
            .iter()
            .map(|n| find_column(header, n))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let found = indexed_columns(header, "s");
            let expected: Vec<usize> = (1..=found.len()).collect();
            if found.is_empty() || found.iter().map(|f| f.0).collect::<Vec<_>>() != expected {
                bail!("survival columns s1..sT not found; provide a schema file");
            }
            found.into_iter().map(|f| f.1).collect()
        }
    };
    let outcome: Vec<usize> = match &schema.outcome {
        Some(names) => names
            .iter()
            .map(|n| find_column(header, n))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let found = indexed_columns(header, "y");
            let expected: Vec<usize> = (1..=found.len()).collect();
            if found.is_empty() || found.iter().map(|f| f.0).collect::<Vec<_>>() != expected {
                bail!("outcome columns y1..yT not found; provide a schema file");
            }
            found.into_iter().map(|f| f.1).collect()
        }
    };
    if survival.len() != outcome.len() {
        bail!("{} survival columns but {} outcome columns", survival.len(), outcome.len());
    }

    let covariates: Vec<(String, usize)> = match &schema.covariates {
        Some(names) => names
            .iter()
            .map(|n| find_column(header, n).map(|i| (n.clone(), i)))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let mut used: Vec<usize> = vec![id, arm];
            used.extend(&survival);
            used.extend(&outcome);
            header
                .iter()
                .enumerate()
                .filter(|(i, _)| !used.contains(i))
                .map(|(i, h)| (h.clone(), i))
                .collect()
        }
    };
    Ok(ColumnMap { id, arm, survival, outcome, covariates })
}
