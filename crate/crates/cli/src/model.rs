//! The JSON model file.

use std::path::Path;

use levy_scale::{Error, LevyModel, PhaseTypeDist};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub sigma: f64,
    pub drift: f64,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    #[serde(default)]
    pub q_list: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("Io", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage("Parse", format!("{}: {e}", path.display())))
    }

    pub fn to_model(&self) -> Result<LevyModel, Error> {
        let n = self.t.len();
        if let Some(row) = self.t.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "T must be square: {n} rows but a row of length {}",
                row.len()
            )));
        }
        let flat: Vec<f64> = self.t.iter().flatten().copied().collect();
        let jumps = PhaseTypeDist::new(self.alpha.clone(), DMatrix::from_row_slice(n, n, &flat))?;
        let model = LevyModel::new(self.sigma, self.drift, self.lambda, jumps)?;
        if let Some(qs) = &self.q_list {
            if let Some(q) = qs.iter().find(|q| !(**q >= 0.0) || !q.is_finite()) {
                return Err(Error::NegativeArgument(*q));
            }
        }
        Ok(model)
    }
}
