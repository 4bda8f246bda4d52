//! CSV ingestion and the versioned JSON fit report.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis};
use crate::design::{classify_covariates, validate_design, Declaration, RawTable};
use crate::error::{Error, Result};
use crate::fit::{FitOptions, Method};
use crate::inference::{CiTable, MomentEstimates};
use crate::params::Layout;

pub const SCHEMA_VERSION: u32 = 1;

/// Columns every data file must carry.
pub const INDEX_COLUMNS: [&str; 4] = ["i", "j", "k", "y"];

fn parse_index(field: &str, line: usize, column: &str) -> Result<usize> {
    let detail = || format!("column `{column}` value `{field}`");
    let v: usize = field.trim().parse().map_err(|_| Error::InvalidIndex { line, detail: detail() })?;
    if v == 0 {
        return Err(Error::InvalidIndex { line, detail: detail() });
    }
    Ok(v)
}

fn parse_value(field: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
        line,
        message: format!("column `{column}`: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            line,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(v)
}

/// Reads a headed CSV with columns `i, j, k, y` (1-based indices) plus the
/// named covariate columns. Numbers use a decimal point. Line numbers in
/// errors count the header as line 1.
pub fn read_table<R: Read>(reader: R, covariates: &[String]) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let index_pos: Vec<usize> = INDEX_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let cov_pos: Vec<usize> = covariates
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::UnknownCovariate(c.clone()))
        })
        .collect::<Result<_>>()?;

    let mut table = RawTable::new(covariates.to_vec());
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |pos: usize| record.get(pos).unwrap_or("");
        let i = parse_index(field(index_pos[0]), line, "i")?;
        let j = parse_index(field(index_pos[1]), line, "j")?;
        let k = parse_index(field(index_pos[2]), line, "k")?;
        let y = parse_value(field(index_pos[3]), line, "y")?;
        let covs = cov_pos
            .iter()
            .zip(covariates)
            .map(|(p, name)| parse_value(field(*p), line, name))
            .collect::<Result<Vec<_>>>()?;
        table.push(i, j, k, y, covs);
    }
    if table.rows.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub g: usize,
    pub h: usize,
    pub m: usize,
    pub n: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    pub loglik: f64,
    pub reml_criterion: f64,
    /// `(α, β, γ, e)` components held at the floor.
    pub boundary: [bool; 4],
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub method: Method,
    pub design: DesignSummary,
    /// Slope covariate names in regression order.
    pub covariates: Vec<String>,
    /// Point estimates in `ω` order.
    pub estimates: Vec<Estimate>,
    /// Absent when a variance component is on the boundary.
    pub intervals: Option<CiTable>,
    pub moments: MomentEstimates,
    pub convergence: Convergence,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn from_analysis(a: &Analysis) -> Self {
        let d = a.fit.design;
        let names = Layout::new(a.stats.dims).names(&a.stats.names);
        let estimates = names
            .into_iter()
            .zip(a.fit.params.to_omega())
            .map(|(name, value)| Estimate { name, value })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            method: a.fit.method,
            design: DesignSummary {
                g: d.g,
                h: d.h,
                m: d.m,
                n: d.n,
                eta: d.eta(),
            },
            covariates: a.stats.names.clone(),
            estimates,
            intervals: a.intervals.clone(),
            moments: a.moments,
            convergence: Convergence {
                converged: a.fit.converged,
                iterations: a.fit.iterations,
                score_norm: a.fit.score_norm,
                loglik: a.fit.loglik,
                reml_criterion: a.fit.reml_criterion,
                boundary: a.fit.boundary,
                floor: a.fit.floor,
            },
            warnings: a.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned text table of estimates and intervals.
    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut out = format!(
            "{} fit, g={} h={} m={} n={}, converged={} in {} iterations\n",
            self.method.name(),
            self.design.g,
            self.design.h,
            self.design.m,
            self.design.n,
            self.convergence.converged,
            self.convergence.iterations
        );
        out.push_str(&format!(
            "{:<20} {:>14} {:>12} {:>14} {:>14} {:>5}\n",
            "parameter", "estimate", "se", "lower", "upper", "rate"
        ));
        match &self.intervals {
            Some(t) => {
                for r in &t.rows {
                    out.push_str(&format!(
                        "{:<20} {:>14.6} {:>12} {:>14} {:>14} {:>5}\n",
                        r.name,
                        r.estimate,
                        opt(r.se),
                        opt(r.lower),
                        opt(r.upper),
                        r.rate.tag()
                    ));
                }
            }
            None => {
                for e in &self.estimates {
                    out.push_str(&format!("{:<20} {:>14.6}\n", e.name, e.value));
                }
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Ingests a CSV, classifies the declared covariates and runs the full
/// pipeline.
pub fn fit_csv<R: Read>(
    reader: R,
    declarations: &[Declaration],
    options: &FitOptions,
    level: f64,
) -> Result<FitReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level {level} outside (0, 1)")));
    }
    let names: Vec<String> = declarations.iter().map(|d| d.name.clone()).collect();
    let table = read_table(reader, &names)?;
    let design = validate_design(&table)?;
    let grid = table.to_grid(&design)?;
    let covs = classify_covariates(&grid, &design, declarations)?;
    let analysis = analyze(&design, &covs, &grid.y, options, 1.0 - level)?;
    Ok(FitReport::from_analysis(&analysis))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_tiny_table() {
        let text = "i,j,k,y,x\n1,1,1,0.5,1\n1,2,1,1.5,2\n2,1,1,2.5,3\n2,2,1,3.5,4\n";
        let t = read_table(text.as_bytes(), &["x".to_string()]).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[2].covariates, vec![3.0]);
        let d = validate_design(&t).unwrap();
        assert_eq!((d.g, d.h, d.m), (2, 2, 1));
    }

    #[test]
    fn reports_line_of_bad_value() {
        let text = "i,j,k,y\n1,1,1,0.5\n1,2,1,1,5\n";
        let err = read_table(text.as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err:?}");
        let text = "i,j,k,y\n1,1,1,0.5\n1,2,1,abc\n";
        assert!(matches!(read_table(text.as_bytes(), &[]), Err(Error::Csv { line: 3, .. })));
        let text = "i,j,k,y\n1,1,1,0.5\n0,2,1,1.0\n";
        assert!(matches!(read_table(text.as_bytes(), &[]), Err(Error::InvalidIndex { line: 3, .. })));
    }

    #[test]
    fn decimal_comma_is_rejected() {
        let text = "i;j;k;y\n1;1;1;0,5\n";
        assert!(read_table(text.as_bytes(), &[]).is_err());
    }

    #[test]
    fn missing_columns_are_named() {
        let err = read_table("i,j,y\n1,1,2\n".as_bytes(), &[]).unwrap_err();
        assert!(err.to_string().contains("`k`"));
        let err = read_table("i,j,k,y\n1,1,1,2\n".as_bytes(), &["x".into()]).unwrap_err();
        assert!(matches!(err, Error::UnknownCovariate(_)));
    }
}
