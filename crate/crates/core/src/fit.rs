//! ML and REML fitting.
//!
//! Each iteration profiles out `ξ` by GLS and takes a damped Newton step in
//! `θ` on the profiled criterion. The Hessian is a central finite difference
//! of the four-dimensional variance score; when its negative is not positive
//! definite the expected information is used instead. Components pinned at
//! the floor with a non-positive gradient are held fixed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::kron::{lambdas_from, Lambdas, Stratum, VarianceComponents};
use crate::ml::{self, NormalEquations, ScoreVector};
use crate::params::ParamVector;
use crate::reml;
use crate::stats::SuffStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ml,
    Reml,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Reml => "reml",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Method::Ml),
            "reml" => Ok(Method::Reml),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Bound on `max |K^{-1/2} ψ|`.
    pub score_tol: f64,
    /// Bound on the relative change of `θ` in the last step.
    pub step_tol: f64,
    /// Variance floor as a multiple of the sample variance of `y`.
    pub floor_scale: f64,
    pub max_halvings: usize,
    /// Relative step for the finite-difference Hessian.
    pub fd_rel_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::Reml,
            max_iter: 100,
            score_tol: 1e-8,
            step_tol: 1e-10,
            floor_scale: 1e-10,
            max_halvings: 30,
            fd_rel_step: 1e-6,
        }
    }
}

impl FitOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub design: Design,
    pub params: ParamVector,
    pub loglik: f64,
    /// `l_R(θ̂)`, reported for both methods.
    pub reml_criterion: f64,
    /// Score of the optimized criterion at the estimate (ML score or
    /// adjusted score).
    pub score: ScoreVector,
    /// `max |K^{-1/2} ψ|` over components not held at the floor.
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Variance components at the floor, `(α, β, γ, e)`.
    pub boundary: [bool; 4],
    pub floor: f64,
    /// Criterion value after each iteration.
    pub history: Vec<f64>,
}

impl FitResult {
    pub fn theta(&self) -> VarianceComponents {
        self.params.theta
    }

    pub fn xi(&self) -> &[f64] {
        &self.params.xi
    }

    pub fn at_boundary(&self) -> bool {
        self.boundary.iter().any(|b| *b)
    }
}

pub fn fit_ml(ss: &SuffStats, options: &FitOptions) -> Result<FitResult> {
    fit(ss, &FitOptions { method: Method::Ml, ..*options })
}

pub fn fit_reml(ss: &SuffStats, options: &FitOptions) -> Result<FitResult> {
    fit(ss, &FitOptions { method: Method::Reml, ..*options })
}

/// Sample variance of the response, from the stratum sums.
pub fn response_variance(ss: &SuffStats) -> f64 {
    let d = &ss.design;
    let total: f64 = Stratum::ALL[..4]
        .iter()
        .map(|s| s.replication(d) * ss.y_quadratic(*s))
        .sum();
    total / d.n as f64
}

struct Profile {
    theta: [f64; 4],
    xi: Vec<f64>,
    criterion: f64,
    loglik: f64,
    reml: f64,
    /// Gradient of the criterion in `θ`.
    grad: [f64; 4],
    score: ScoreVector,
}

fn profile(ss: &SuffStats, method: Method, theta: [f64; 4]) -> Result<Profile> {
    let vc = VarianceComponents::from_array(theta);
    let lambdas = lambdas_from(&vc, &ss.design)?;
    let normal = NormalEquations::assemble(&lambdas, ss)?;
    let p = ParamVector {
        xi: normal.solve(),
        theta: vc,
        dims: ss.dims,
    };
    let loglik = ml::loglik(&p, ss)?;
    let reml_value = loglik - 0.5 * normal.logdet();
    let mut score = ml::score(&p, ss)?;
    if method == Method::Reml {
        let t = reml::traces_with(&lambdas, &normal, ss).to_array();
        let layout = score.layout();
        for (k, tk) in t.iter().enumerate() {
            score.values[layout.variance_position(k)] += tk;
        }
    }
    let grad = score.variance_block();
    Ok(Profile {
        theta,
        xi: p.xi,
        criterion: match method {
            Method::Ml => loglik,
            Method::Reml => reml_value,
        },
        loglik,
        reml: reml_value,
        grad,
        score,
    })
}

fn criterion_gradient(ss: &SuffStats, method: Method, theta: [f64; 4]) -> Result<[f64; 4]> {
    Ok(profile(ss, method, theta)?.grad)
}

fn fd_hessian(ss: &SuffStats, method: Method, at: &Profile, steps: [f64; 4]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(4, 4);
    for c in 0..4 {
        let mut up = at.theta;
        up[c] += steps[c];
        let mut down = at.theta;
        down[c] -= steps[c];
        let gu = criterion_gradient(ss, method, up);
        let col: Option<[f64; 4]> = match (gu, criterion_gradient(ss, method, down)) {
            (Ok(u), Ok(d)) => Some(std::array::from_fn(|r| (u[r] - d[r]) / (2.0 * steps[c]))),
            (Ok(u), Err(_)) => Some(std::array::from_fn(|r| (u[r] - at.grad[r]) / steps[c])),
            _ => None,
        };
        if let Some(col) = col {
            for r in 0..4 {
                h[(r, c)] = col[r];
            }
        } else {
            h[(c, c)] = f64::NAN;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// `½ Σₛ multₛ (∂λₛ/∂θ)(∂λₛ/∂θ)ᵀ / λₛ²`.
pub fn variance_information(lambdas: &Lambdas, d: &Design) -> DMatrix<f64> {
    let mut info = DMatrix::zeros(4, 4);
    for s in Stratum::ALL {
        let dl = s.lambda_gradient(d);
        let w = 0.5 * s.multiplicity(d) as f64 / lambdas.get(s).powi(2);
        for r in 0..4 {
            for c in 0..4 {
                info[(r, c)] += w * dl[r] * dl[c];
            }
        }
    }
    info
}

/// ANOVA moment estimates at the OLS fit, clamped to the floor.
pub fn starting_values(ss: &SuffStats, floor: f64) -> Result<[f64; 4]> {
    let d = &ss.design;
    let xi = ml::gls_solve(&VarianceComponents::iid(1.0), ss)?;
    let p = ParamVector {
        xi,
        theta: VarianceComponents::iid(1.0),
        dims: ss.dims,
    };
    let sums = ml::contrast_sums(&p, ss);
    let lam: Vec<f64> = Stratum::ALL[..4]
        .iter()
        .map(|s| {
            let mult = s.multiplicity(d);
            if mult == 0 {
                f64::NAN
            } else {
                s.replication(d) * sums.get(*s) / mult as f64
            }
        })
        .collect();
    let (m, hm, gm) = (d.m as f64, (d.h * d.m) as f64, (d.g * d.m) as f64);
    let l1 = lam[1];
    let l0 = if lam[0].is_finite() { lam[0] } else { 0.5 * l1 };
    let raw = [(lam[2] - l1) / hm, (lam[3] - l1) / gm, (l1 - l0) / m, l0];
    Ok(raw.map(|v| if v.is_finite() { v.max(floor) } else { floor }))
}

pub fn fit(ss: &SuffStats, options: &FitOptions) -> Result<FitResult> {
    let d = ss.design;
    let method = options.method;
    let var_y = response_variance(ss);
    let scale = if var_y > 0.0 { var_y } else { 1.0 };
    let floor = options.floor_scale * scale;
    let k_theta = [d.g as f64, d.h as f64, d.cells() as f64, d.n as f64];

    let mut current = profile(ss, method, starting_values(ss, floor)?)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let at_floor = |theta: &[f64; 4], t: usize| theta[t] <= floor * (1.0 + 1e-9);
    let projected_norm = |p: &Profile| {
        let free_norm = (0..4)
            .filter(|t| !(at_floor(&p.theta, *t) && p.grad[*t] <= 0.0))
            .map(|t| (p.grad[t] / k_theta[t].sqrt()).abs())
            .fold(0.0, f64::max);
        let xi_norm = p
            .score
            .normalized(&d)
            .iter()
            .zip(&p.score.layout().slots)
            .filter(|(_, s)| !matches!(s, crate::params::Slot::Variance(_)))
            .fold(0.0, |m: f64, (v, _)| m.max(v.abs()));
        free_norm.max(xi_norm)
    };

    while iterations < options.max_iter {
        iterations += 1;
        let free: Vec<usize> = (0..4)
            .filter(|t| !(at_floor(&current.theta, *t) && current.grad[*t] <= 0.0))
            .collect();
        if free.is_empty() {
            converged = true;
            history.push(current.criterion);
            break;
        }

        let steps = current
            .theta
            .map(|v| options.fd_rel_step * v.abs().max(1e-3 * scale));
        let hess = fd_hessian(ss, method, &current, steps);
        let k = free.len();
        let neg_h = DMatrix::from_fn(k, k, |r, c| -hess[(free[r], free[c])]);
        let g = DVector::from_fn(k, |r, _| current.grad[free[r]]);
        let newton = if neg_h.iter().all(|v| v.is_finite()) {
            neg_h.clone().cholesky().map(|c| c.solve(&g))
        } else {
            None
        };
        let delta = match newton {
            Some(step) => step,
            None => {
                let lambdas = lambdas_from(&VarianceComponents::from_array(current.theta), &d)?;
                let info = variance_information(&lambdas, &d);
                let sub = DMatrix::from_fn(k, k, |r, c| info[(free[r], free[c])]);
                match sub.cholesky() {
                    Some(c) => c.solve(&g),
                    None => g.clone(),
                }
            }
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let mut trial = current.theta;
            for (r, t) in free.iter().enumerate() {
                trial[*t] = (current.theta[*t] + alpha * delta[r]).max(floor);
            }
            if let Ok(p) = profile(ss, method, trial) {
                if p.criterion >= current.criterion - 1e-14 * current.criterion.abs() {
                    accepted = Some(p);
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some(next) = accepted else {
            // no ascent possible from here
            history.push(current.criterion);
            converged = projected_norm(&current) < options.score_tol;
            break;
        };
        let rel_step = (0..4)
            .map(|t| (next.theta[t] - current.theta[t]).abs() / current.theta[t].abs().max(floor))
            .fold(0.0, f64::max);
        current = next;
        history.push(current.criterion);
        if projected_norm(&current) < options.score_tol && rel_step < options.step_tol {
            converged = true;
            break;
        }
    }

    let result = FitResult {
        method,
        design: d,
        params: ParamVector {
            xi: current.xi.clone(),
            theta: VarianceComponents::from_array(current.theta),
            dims: ss.dims,
        },
        loglik: current.loglik,
        reml_criterion: current.reml,
        score_norm: projected_norm(&current),
        score: current.score.clone(),
        iterations,
        converged,
        boundary: std::array::from_fn(|t| at_floor(&current.theta, t)),
        floor,
        history,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::NoConvergence {
            iterations,
            score_norm: result.score_norm,
            best: Box::new(result),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::CovariateSet;
    use crate::stats::compress;

    fn balanced_y(d: &Design) -> Vec<f64> {
        // deterministic pseudo-random effects at every level
        let f = |t: usize, a: f64| ((t as f64 + a) * 12.9898).sin() * 43758.5453 % 1.0;
        let mut y = Vec::with_capacity(d.n);
        for i in 0..d.g {
            for j in 0..d.h {
                for k in 0..d.m {
                    y.push(3.0 * f(i, 0.1) + 2.0 * f(j, 7.3) + 1.5 * f(d.cell(i, j), 3.3) + f(d.index(i, j, k), 9.1));
                }
            }
        }
        y
    }

    #[test]
    fn variance_only_fit_is_stationary() {
        let d = Design::new(6, 5, 3).unwrap();
        let ss = compress(&d, &CovariateSet::default(), &balanced_y(&d)).unwrap();
        for method in [Method::Ml, Method::Reml] {
            let fit = fit(&ss, &FitOptions::with_method(method)).unwrap();
            assert!(fit.converged);
            assert!(fit.score_norm < 1e-8, "{}", fit.score_norm);
            let again = match method {
                Method::Ml => ml::score(&fit.params, &ss).unwrap(),
                Method::Reml => reml::reml_score(&fit.params, &ss).unwrap(),
            };
            for (t, v) in again.variance_block().iter().enumerate() {
                assert!(fit.boundary[t] || v.abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn history_is_monotone() {
        let d = Design::new(5, 4, 2).unwrap();
        let ss = compress(&d, &CovariateSet::default(), &balanced_y(&d)).unwrap();
        let fit = fit_ml(&ss, &FitOptions::default()).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
    }

    #[test]
    fn method_parsing() {
        assert_eq!("REML".parse::<Method>().unwrap(), Method::Reml);
        assert!("lsq".parse::<Method>().is_err());
    }
}
