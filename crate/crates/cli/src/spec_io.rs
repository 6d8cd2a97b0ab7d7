//! Generator specification files for `simulate`: a JSON document naming the
//! panel shape, covariate and assignment laws, and any nonzero true
//! parameters by their layout coordinate names.
//!
//! ```json
//! {
//!   "periods": 3,
//!   "units": 2000,
//!   "seed": 1,
//!   "covariates": { "bernoulli": [0.5, 0.5, 0.5, 0.5] },
//!   "assignment": { "intercept": 0.0, "slopes": [0.0, 0.0, 0.0, 0.0] },
//!   "slope_mode": "shared",
//!   "params": { "g1->AS.icpt": 0.8, "y1|w1,AS.icpt": 0.4 }
//! }
//! ```
//!
//! Unlisted parameters are zero; unknown names are errors.

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use pstrat_core::model::{BlockLayout, ParamVector};
use pstrat_core::simulation::{AssignmentLaw, CovariateLaw, GeneratorSpec};

use crate::config::SlopeModeArg;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLawFile {
    Bernoulli(Vec<f64>),
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub periods: usize,
    pub units: usize,
    pub seed: u64,
    pub covariates: CovariateLawFile,
    pub assignment: AssignmentFile,
    #[serde(default)]
    pub slope_mode: SlopeModeArg,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SpecFile {
    pub fn into_generator(self) -> Result<GeneratorSpec> {
        let covariate_law = match self.covariates {
            CovariateLawFile::Bernoulli(p) => CovariateLaw::Bernoulli(p),
            CovariateLawFile::Fixed(rows) => CovariateLaw::Fixed(rows),
        };
        let k = covariate_law.covariates();
        let layout = BlockLayout::new(self.periods, k, self.slope_mode.into());
        let mut theta = ParamVector::zeros(&layout);
        for (name, value) in &self.params {
            theta
                .set(&layout, name, *value)
                .map_err(|_| anyhow!("unknown parameter name {name:?} for this layout"))?;
        }
        let spec = GeneratorSpec {
            theta_true: theta,
            covariate_law,
            assignment: AssignmentLaw {
                intercept: self.assignment.intercept,
                slopes: self.assignment.slopes,
            },
            units: self.units,
            seed: self.seed,
            layout,
        };
        spec.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(spec)
    }
}

pub fn load_spec(path: &Path) -> Result<SpecFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing spec {}", path.display()))
}
