//! Moment-based asymptotic covariance, confidence intervals and the
//! influence function.
//!
//! The covariance of `K^{1/2}(ω̂ − ω̇)` is estimated by plugging residual
//! third and fourth moments into a block-diagonal matrix with three groups:
//! row and column parameters together, interaction parameters, and
//! within-cell parameters. No normality is assumed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{Design, GridMeans, Level};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::kron::VarianceComponents;
use crate::params::{Layout, Rate, Slot, VARIANCE_NAMES};
use crate::stats::SuffStats;

/// Plug-in residual moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub mu3_alpha: f64,
    pub mu4_alpha: f64,
    pub mu3_beta: f64,
    pub mu4_beta: f64,
    pub mu4_gamma: f64,
    pub mu4_e: f64,
    /// `σ̂_α² + η σ̂_β²`.
    pub tau_hat: f64,
}

impl MomentEstimates {
    /// Fourth moments in `(α, β, γ, e)` order.
    pub fn fourth(&self) -> [f64; 4] {
        [self.mu4_alpha, self.mu4_beta, self.mu4_gamma, self.mu4_e]
    }
}

/// Moments of the row, column, double-centred cell and within-cell
/// contrasts of the residuals `r = y − Xξ̂`.
pub fn residual_moments(design: &Design, r: &[f64], theta: &VarianceComponents) -> Result<MomentEstimates> {
    design.check_len(r.len())?;
    let Design { g, h, m, n } = *design;
    let means = GridMeans::of(design, r);
    let mean_pow = |vals: &mut dyn Iterator<Item = f64>, k: i32, count: usize| {
        vals.map(|v| v.powi(k)).sum::<f64>() / count as f64
    };
    let row = |k| mean_pow(&mut (0..g).map(|i| means.row_contrast(i)), k, g);
    let col = |k| mean_pow(&mut (0..h).map(|j| means.col_contrast(j)), k, h);
    let mu4_gamma = mean_pow(
        &mut (0..g).flat_map(|i| (0..h).map(move |j| (i, j))).map(|(i, j)| means.cell_contrast(h, i, j)),
        4,
        g * h,
    );
    let mu4_e = mean_pow(&mut r.iter().enumerate().map(|(t, v)| v - means.cell[t / m]), 4, n);
    Ok(MomentEstimates {
        mu3_alpha: row(3),
        mu4_alpha: row(4),
        mu3_beta: col(3),
        mu4_beta: col(4),
        mu4_gamma,
        mu4_e,
        tau_hat: theta.sigma_alpha2 + design.eta() * theta.sigma_beta2,
    })
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularDesign { condition: f64::INFINITY })
}

/// `F̂`, the normalizer `K` and the implied standard errors, all in `ω` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub fhat: DMatrix<f64>,
    pub k_diag: Vec<f64>,
    /// `sqrt(F̂_rr / K_rr)`; `None` where the diagonal is not positive.
    pub se: Vec<Option<f64>>,
    pub dims: [usize; 4],
}

impl CovarianceEstimate {
    /// `F̂ / K`, the estimated covariance of `ω̂` itself.
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = &self.k_diag;
        DMatrix::from_fn(k.len(), k.len(), |r, c| self.fhat[(r, c)] / (k[r] * k[c]).sqrt())
    }
}

pub fn fhat(fit: &FitResult, moments: &MomentEstimates, ss: &SuffStats) -> Result<CovarianceEstimate> {
    if fit.at_boundary() {
        let names: Vec<&str> = (0..4).filter(|t| fit.boundary[*t]).map(|t| VARIANCE_NAMES[t]).collect();
        return Err(Error::BoundaryInference(names.join(", ")));
    }
    let d = &ss.design;
    let [sa, sb, sg, se] = fit.theta().to_array();
    let eta = d.eta();
    let [pa, pb, pab, pw] = ss.dims;
    let layout = Layout::new(ss.dims);
    let len = layout.len();
    let mut f = DMatrix::zeros(len, len);

    let d1i = inverse(&ss.d_hat(Level::Row))?;
    let d2i = inverse(&ss.d_hat(Level::Column))?;
    let xa = ss.x_mean(Level::Row);
    let xb = ss.x_mean(Level::Column);
    let f2: DVector<f64> = &d1i * &xa;
    let f3: DVector<f64> = &d2i * &xb;

    // row group
    f[(0, 0)] = moments.tau_hat + sa * xa.dot(&f2) + eta * sb * xb.dot(&f3);
    for q in 0..pa {
        f[(0, 1 + q)] = -sa * f2[q];
        f[(1 + q, 0)] = -sa * f2[q];
        for r in 0..pa {
            f[(1 + q, 1 + r)] = sa * d1i[(q, r)];
        }
    }
    let va = pa + 1;
    f[(0, va)] = moments.mu3_alpha;
    f[(va, 0)] = moments.mu3_alpha;
    f[(va, va)] = moments.mu4_alpha - sa * sa;

    // column group and its coupling with the intercept
    let c0 = pa + 2;
    let vb = c0 + pb;
    let root_eta = eta.sqrt();
    for q in 0..pb {
        f[(0, c0 + q)] = -root_eta * sb * f3[q];
        f[(c0 + q, 0)] = -root_eta * sb * f3[q];
        for r in 0..pb {
            f[(c0 + q, c0 + r)] = sb * d2i[(q, r)];
        }
    }
    f[(0, vb)] = root_eta * moments.mu3_beta;
    f[(vb, 0)] = root_eta * moments.mu3_beta;
    f[(vb, vb)] = moments.mu4_beta - sb * sb;

    let mut block = |start: usize, dim: usize, level: Level, sigma2: f64, mu4: f64| -> Result<()> {
        let di = inverse(&ss.d_hat(level))?;
        for q in 0..dim {
            for r in 0..dim {
                f[(start + q, start + r)] = sigma2 * di[(q, r)];
            }
        }
        f[(start + dim, start + dim)] = mu4 - sigma2 * sigma2;
        Ok(())
    };
    let c1 = vb + 1;
    block(c1, pab, Level::Interaction, sg, moments.mu4_gamma)?;
    let c2 = c1 + pab + 1;
    block(c2, pw, Level::Within, se, moments.mu4_e)?;

    let k_diag = layout.k_diag(d);
    let se_vec = (0..len)
        .map(|r| {
            let v = f[(r, r)] / k_diag[r];
            (v > 0.0).then(|| v.sqrt())
        })
        .collect();
    Ok(CovarianceEstimate {
        fhat: f,
        k_diag,
        se: se_vec,
        dims: ss.dims,
    })
}

/// `Φ⁻¹(1 − b/2)`.
pub fn normal_quantile(miss_rate: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - miss_rate / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Intercept,
    Slope,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub name: String,
    pub kind: ParamKind,
    pub estimate: f64,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Interval for the standard deviation (variance rows only).
    pub sd_lower: Option<f64>,
    pub sd_upper: Option<f64>,
    pub level: f64,
    pub rate: Rate,
}

impl CiRow {
    pub fn contains(&self, value: f64) -> Option<bool> {
        Some(self.lower? <= value && value <= self.upper?)
    }

    /// Interval length on the natural scale of the parameter.
    pub fn length(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }

    /// Interval length on the standard-deviation scale (variance rows).
    pub fn sd_length(&self) -> Option<f64> {
        Some(self.sd_upper? - self.sd_lower?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiTable {
    pub rows: Vec<CiRow>,
    pub level: f64,
    pub warnings: Vec<String>,
}

/// Wald intervals for regression coefficients and log-scale intervals for the
/// standard deviations, squared for the variances. `miss_rate` is `b` in a
/// `100(1−b)%` interval.
pub fn confidence_intervals(
    fit: &FitResult,
    cov: &CovarianceEstimate,
    moments: &MomentEstimates,
    slope_names: &[String],
    miss_rate: f64,
) -> Result<CiTable> {
    if !(miss_rate > 0.0 && miss_rate < 1.0) {
        return Err(Error::InvalidConfig(format!("miss rate {miss_rate} outside (0, 1)")));
    }
    let d = &fit.design;
    let z = normal_quantile(miss_rate);
    let layout = Layout::new(fit.params.dims);
    let names = layout.names(slope_names);
    let omega = fit.params.to_omega();
    let theta = fit.theta().to_array();
    let mu4 = moments.fourth();
    let level = 1.0 - miss_rate;
    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(layout.len());
    for (r, slot) in layout.slots.iter().enumerate() {
        let rate = slot.rate();
        let mut row = CiRow {
            name: names[r].clone(),
            kind: ParamKind::Slope,
            estimate: omega[r],
            se: cov.se[r],
            lower: None,
            upper: None,
            sd_lower: None,
            sd_upper: None,
            level,
            rate,
        };
        match slot {
            Slot::Intercept | Slot::Slope(..) => {
                if *slot == Slot::Intercept {
                    row.kind = ParamKind::Intercept;
                }
                if let Some(se) = row.se {
                    row.lower = Some(omega[r] - z * se);
                    row.upper = Some(omega[r] + z * se);
                }
            }
            Slot::Variance(t) => {
                row.kind = ParamKind::Variance;
                let s2 = theta[*t];
                let excess = mu4[*t] - s2 * s2;
                if excess > 0.0 && s2 > 0.0 {
                    let half = z * excess.sqrt() / (2.0 * rate.value(d).sqrt() * s2);
                    let sd = s2.sqrt();
                    let (lo, hi) = (sd * (-half).exp(), sd * half.exp());
                    row.sd_lower = Some(lo);
                    row.sd_upper = Some(hi);
                    row.lower = Some(lo * lo);
                    row.upper = Some(hi * hi);
                } else {
                    warnings.push(
                        Error::DegenerateWidth {
                            param: row.name.clone(),
                            excess,
                        }
                        .to_string(),
                    );
                }
            }
        }
        rows.push(row);
    }
    Ok(CiTable { rows, level, warnings })
}

/// Quantities the influence function depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceInputs {
    pub theta: VarianceComponents,
    pub eta: f64,
    pub d_inv: [DMatrix<f64>; 4],
    pub xbar_a: DVector<f64>,
    pub xbar_b: DVector<f64>,
}

impl InfluenceInputs {
    pub fn new(fit: &FitResult, ss: &SuffStats) -> Result<Self> {
        Ok(Self {
            theta: fit.theta(),
            eta: ss.design.eta(),
            d_inv: [
                inverse(&ss.d_hat(Level::Row))?,
                inverse(&ss.d_hat(Level::Column))?,
                inverse(&ss.d_hat(Level::Interaction))?,
                inverse(&ss.d_hat(Level::Within))?,
            ],
            xbar_a: ss.x_mean(Level::Row),
            xbar_b: ss.x_mean(Level::Column),
        })
    }
}

/// A point at which to evaluate the influence function. Row and column
/// covariates are raw values; interaction and within covariates are the
/// centred contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluencePoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub e: f64,
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub x_ab: Vec<f64>,
    pub x_w: Vec<f64>,
}

/// Influence function in `ω` order for the finite-`η` case.
pub fn influence(inputs: &InfluenceInputs, point: &InfluencePoint) -> Vec<f64> {
    let [sa, sb, sg, se] = inputs.theta.to_array();
    let eta = inputs.eta;
    let tau = sa + eta * sb;
    let [d1, d2, d3, d4] = &inputs.d_inv;
    let (xa_bar, xb_bar) = (&inputs.xbar_a, &inputs.xbar_b);
    let xa = DVector::from_column_slice(&point.x_a);
    let xb = DVector::from_column_slice(&point.x_b);
    let xa_c = &xa - xa_bar;
    let (alpha, beta) = (point.alpha, point.beta);
    let qb = xb_bar.dot(&(d2 * xb_bar));
    let root = eta.sqrt();

    let if_xi0 = (1.0 + sb / tau * (eta - root) * qb) * alpha - xa_bar.dot(&(d1 * &xa_c)) * alpha
        + eta * (1.0 + (sa / (root * tau) + eta * sb / tau) * qb) * beta
        - root * xb_bar.dot(&(d2 * &xb)) * beta;
    let if_xi1 = d1 * &xa_c * alpha;
    let if_xi2 = d2 * &xb * beta
        + d2 * xb_bar * (sb / tau * (1.0 - root) * alpha - (sa / tau + eta.powf(1.5) * sb / tau) * beta);
    let if_xi3 = d3 * DVector::from_column_slice(&point.x_ab) * point.gamma;
    let if_xi4 = d4 * DVector::from_column_slice(&point.x_w) * point.e;

    let mut out = vec![if_xi0];
    out.extend(if_xi1.iter());
    out.push(alpha * alpha - sa);
    out.extend(if_xi2.iter());
    out.push(beta * beta - sb);
    out.extend(if_xi3.iter());
    out.push(point.gamma * point.gamma - sg);
    out.extend(if_xi4.iter());
    out.push(point.e * point.e - se);
    out
}
