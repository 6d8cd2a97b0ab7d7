//! CSV ingestion and emission for panel datasets and simulation truth files.
//!
//! Truncated outcomes are encoded as `*` (or an empty field) and map to the
//! truncation sentinel; arms and survival flags are 0/1.

use anyhow::{anyhow, bail, Context, Result};
use std::path::Path;

use pstrat_core::data::{Dataset, FirmRecord, Outcome};
use pstrat_core::simulation::TruthRecord;
use pstrat_core::strata::Arm;

use crate::schema::{resolve, ColumnMap, SchemaFile};

pub const TRUNCATED_TOKEN: &str = "*";

fn parse_binary(field: &str, what: &str, id: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => bail!("record {id}: {what} must be 0 or 1, got {other:?}"),
    }
}

fn parse_outcome(field: &str, id: &str) -> Result<Outcome> {
    let t = field.trim();
    if t.is_empty() || t == TRUNCATED_TOKEN {
        return Ok(None);
    }
    Ok(Some(parse_binary(t, "outcome", id)?))
}

/// Loads and validates a dataset. `standardize` centers and scales each
/// covariate column after the invariant checks.
pub fn load_dataset(path: &Path, schema: &SchemaFile, standardize: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> =
        reader.headers().context("reading header")?.iter().map(String::from).collect();
    let map: ColumnMap = resolve(&header, schema)?;

    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("reading row {}", line + 2))?;
        let get = |i: usize| -> Result<&str> {
            row.get(i).ok_or_else(|| anyhow!("row {}: missing column {i}", line + 2))
        };
        let id = get(map.id)?.to_string();
        let w = match parse_binary(get(map.arm)?, "arm", &id)? {
            false => Arm::Control,
            true => Arm::Treated,
        };
        let s = map
            .survival
            .iter()
            .map(|&i| parse_binary(get(i)?, "survival", &id))
            .collect::<Result<Vec<bool>>>()?;
        let y = map
            .outcome
            .iter()
            .map(|&i| parse_outcome(get(i)?, &id))
            .collect::<Result<Vec<Outcome>>>()?;
        let x = map
            .covariates
            .iter()
            .map(|(name, i)| {
                get(*i)?.parse::<f64>().map_err(|_| {
                    anyhow!("record {id}: covariate {name} is not numeric: {:?}", row.get(*i))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(FirmRecord { id, x, w, s, y });
    }

    let names: Vec<String> = map.covariates.iter().map(|(n, _)| n.clone()).collect();
    let dataset = Dataset::new(records, names).map_err(|e| anyhow!("{e}"))?;
    if standardize {
        dataset.standardized().map_err(|e| anyhow!("{e}"))
    } else {
        Ok(dataset)
    }
}

fn format_outcome(o: &Outcome) -> String {
    match o {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => TRUNCATED_TOKEN.into(),
    }
}

/// Writes a dataset in the canonical column order
/// (id, w, s1..sT, y1..yT, covariates).
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let periods = data.periods();
    let mut header = vec!["id".to_string(), "w".to_string()];
    header.extend((1..=periods).map(|t| format!("s{t}")));
    header.extend((1..=periods).map(|t| format!("y{t}")));
    header.extend(data.covariate_names().iter().cloned());
    writer.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.id.clone(), r.w.index().to_string()];
        row.extend(r.s.iter().map(|&s| usize::from(s).to_string()));
        row.extend(r.y.iter().map(format_outcome));
        row.extend(r.x.iter().map(|v| format!("{v}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes per-unit truth records: latent sequence plus both-arm outcome
/// chains with the truncation sentinel where undefined.
pub fn write_truth(path: &Path, truths: &[TruthRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let periods = truths.first().map_or(0, |t| t.y_control.len());
    let mut header = vec!["id".to_string(), "sequence".to_string()];
    header.extend((1..=periods).map(|t| format!("y0_{t}")));
    header.extend((1..=periods).map(|t| format!("y1_{t}")));
    writer.write_record(&header)?;
    for t in truths {
        let mut row = vec![t.id.clone(), format!("{}", t.sequence)];
        row.extend(t.y_control.iter().map(format_outcome));
        row.extend(t.y_treated.iter().map(format_outcome));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_basic_panel() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "d.csv",
            "id,w,s1,s2,s3,y1,y2,y3,young,female\n\
             1,1,1,1,1,0,1,1,1,0\n\
             2,0,1,0,0,1,*,*,0,1\n\
             3,0,0,0,0,,,,1,1\n",
        );
        let d = load_dataset(&path, &SchemaFile::default(), false).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.periods(), 3);
        assert_eq!(d.covariate_names(), ["young".to_string(), "female".to_string()]);
        assert_eq!(d.records()[1].y, vec![Some(true), None, None]);
        assert_eq!(d.records()[2].y, vec![None, None, None]);
    }

    #[test]
    fn rejects_invariant_violations_with_record_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "bad.csv",
            "id,w,s1,s2,y1,y2,x1\n7,1,0,1,*,1,0\n8,0,1,1,1,1,0\n",
        );
        let err = load_dataset(&path, &SchemaFile::default(), false).unwrap_err();
        assert!(format!("{err}").contains('7'), "{err}");

        let path = write_file(
            &dir,
            "bad2.csv",
            "id,w,s1,s2,y1,y2,x1\n9,1,1,0,1,1,0\n10,0,1,1,1,1,0\n",
        );
        let err = load_dataset(&path, &SchemaFile::default(), false).unwrap_err();
        assert!(format!("{err}").to_lowercase().contains("after death"), "{err}");
    }

    #[test]
    fn roundtrip_is_byte_identical_for_canonical_files() {
        let dir = tempfile::tempdir().unwrap();
        let canonical = "id,w,s1,s2,y1,y2,young\n\
                         a,1,1,1,0,1,1\n\
                         b,0,1,0,1,*,0\n";
        let path = write_file(&dir, "c.csv", canonical);
        let d = load_dataset(&path, &SchemaFile::default(), false).unwrap();
        let out = dir.path().join("out.csv");
        write_dataset(&out, &d).unwrap();
        let rewritten = std::fs::read_to_string(&out).unwrap();
        assert_eq!(rewritten, canonical);
        let d2 = load_dataset(&out, &SchemaFile::default(), false).unwrap();
        assert_eq!(d.records(), d2.records());
    }

    #[test]
    fn standardize_flag_scales_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "d.csv",
            "id,w,s1,y1,x1\n1,1,1,1,2\n2,0,1,0,4\n3,1,1,1,6\n",
        );
        let d = load_dataset(&path, &SchemaFile::default(), true).unwrap();
        let mean: f64 = d.records().iter().map(|r| r.x[0]).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn non_numeric_covariate_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "d.csv", "id,w,s1,y1,x1\n1,1,1,1,abc\n");
        let err = load_dataset(&path, &SchemaFile::default(), false).unwrap_err();
        assert!(format!("{err}").contains("not numeric"));
    }
}
