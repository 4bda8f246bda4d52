//! The full estimation pipeline on one dataset: compress, fit, residual
//! moments, covariance estimate and confidence intervals.

use serde::{Deserialize, Serialize};

use crate::design::{CovariateSet, Design};
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions, FitResult};
use crate::inference::{confidence_intervals, fhat, residual_moments, CiTable, CovarianceEstimate, MomentEstimates};
use crate::ml::residuals;
use crate::stats::{compress, SuffStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub stats: SuffStats,
    pub fit: FitResult,
    pub moments: MomentEstimates,
    /// Absent when a variance component sits at the boundary.
    pub covariance: Option<CovarianceEstimate>,
    pub intervals: Option<CiTable>,
    pub warnings: Vec<String>,
}

impl Analysis {
    /// Intervals, or the boundary error that prevented them.
    pub fn require_intervals(&self) -> Result<&CiTable> {
        self.intervals
            .as_ref()
            .ok_or_else(|| Error::BoundaryInference(self.warnings.join("; ")))
    }
}

/// Runs the pipeline. A fit at the boundary still returns `Ok`, with the
/// covariance and intervals left empty and a warning recorded.
pub fn analyze(
    design: &Design,
    covs: &CovariateSet,
    y: &[f64],
    options: &FitOptions,
    miss_rate: f64,
) -> Result<Analysis> {
    let stats = compress(design, covs, y)?;
    let fit = fit(&stats, options)?;
    let r = residuals(design, covs, y, fit.xi())?;
    let moments = residual_moments(design, &r, &fit.theta())?;
    let mut warnings = Vec::new();
    let (covariance, intervals) = match fhat(&fit, &moments, &stats) {
        Ok(cov) => {
            let table = confidence_intervals(&fit, &cov, &moments, &stats.names, miss_rate)?;
            warnings.extend(table.warnings.iter().cloned());
            (Some(cov), Some(table))
        }
        Err(e @ Error::BoundaryInference(_)) => {
            warnings.push(e.to_string());
            (None, None)
        }
        Err(e) => return Err(e),
    };
    Ok(Analysis {
        stats,
        fit,
        moments,
        covariance,
        intervals,
        warnings,
    })
}
