//! Inference report structures shared by the analytic, kernel, scenario,
//! and two-sample paths.

use serde::{Deserialize, Serialize};

use crate::entropy::NormTriple;
use crate::error::{Error, Result};
use crate::matrix::MatrixJson;
use crate::measures::MeasureKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    OneSample,
    TwoSample,
    Scenario,
}

/// Role of a cell in a (possibly scenario-restricted) inference run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    /// Ordinary cell of an unrestricted run.
    Free,
    /// Explicitly targeted by a scenario.
    Target,
    /// Not targeted, but structurally required to vary with the targets.
    ForcedExtra,
    /// Held at its mean; excluded from p-value aggregation.
    Frozen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub row: usize,
    pub col: usize,
    pub role: CellRole,
    /// Observed dependence value (or difference summary for two-sample).
    pub observed: f64,
    /// Observed angle (one-sample paths).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    pub cdf: f64,
    pub mcdf: f64,
    pub pvalue_two_sided: f64,
    /// True when the raw p-value fell below the empirical resolution floor
    /// 1/(N+1) and was reported at the floor instead.
    pub floored: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_corr_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_corr_high: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceReport {
    pub kind: ReportKind,
    pub dim: usize,
    pub measure: MeasureKind,
    pub alpha: f64,
    /// Smallest p-value the calibration can resolve: 1/(N+1).
    pub pvalue_floor: f64,
    pub cells: Vec<CellReport>,
    /// Probability at least one (non-frozen) cell is as extreme as observed.
    pub matrix_pvalue: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simultaneous_alpha_low: Option<f64>,
    /// Cell-level CI bound matrices (correlation space).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_ci_low: Option<MatrixJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell_ci_high: Option<MatrixJson>,
    /// Matrix-level (simultaneous) CI bound matrices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_ci_low: Option<MatrixJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_ci_high: Option<MatrixJson>,
    /// Sum of log two-sided p-values over non-frozen cells.
    pub lnp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norms_vs_mean: Option<NormTriple>,
    /// Free-form provenance echo (config, seeds, version).
    pub provenance: serde_json::Value,
}

impl InferenceReport {
    /// The matrix p-value must equal 1 - prod(1 - p_i) over the cells the
    /// report carries (frozen cells excluded). Re-asserted before any
    /// serialization so no emitted report can be internally inconsistent.
    pub fn assert_consistent(&self) -> Result<()> {
        let mut survive = 1.0;
        for c in &self.cells {
            if c.role != CellRole::Frozen {
                survive *= 1.0 - c.pvalue_two_sided;
            }
        }
        let recomputed = 1.0 - survive;
        if (recomputed - self.matrix_pvalue).abs() > 1e-12 {
            return Err(Error::OutOfRange {
                what: format!(
                    "inconsistent report: matrix p-value {} vs recomputed {}",
                    self.matrix_pvalue, recomputed
                ),
            });
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        self.assert_consistent()?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse { reason: e.to_string() })
    }
}
