//! Restricted likelihood: the trace adjustments and the adjusted score.
//!
//! `XᵀV⁻¹ZₜZₜᵀV⁻¹X = Σₛ (∂λₛ/∂θₜ) λₛ⁻² XᵀPₛX` and `XᵀPₛX = cₛ · stratum_xx(s)`,
//! so every trace is a weighted combination of the stored Gram blocks.
//!
//! The adjusted criterion is `l_A = l − ½ log|XᵀV⁻¹X|`. Since
//! `∂(XᵀV⁻¹X)/∂θₜ = −XᵀV⁻¹ZₜZₜᵀV⁻¹X`, its gradient in `θₜ` is `l_θₜ + tₜ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kron::{lambdas_from, Lambdas, Stratum, VarianceComponents};
use crate::ml::{self, stratum_xx, NormalEquations, ScoreVector};
use crate::params::ParamVector;
use crate::stats::SuffStats;

/// `tₜ = ½ tr{(XᵀV⁻¹X)⁻¹ XᵀV⁻¹ZₜZₜᵀV⁻¹X}` for `t = α, β, γ, e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentTraces {
    pub t_alpha: f64,
    pub t_beta: f64,
    pub t_gamma: f64,
    pub t_e: f64,
}

impl AdjustmentTraces {
    pub fn to_array(&self) -> [f64; 4] {
        [self.t_alpha, self.t_beta, self.t_gamma, self.t_e]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            t_alpha: a[0],
            t_beta: a[1],
            t_gamma: a[2],
            t_e: a[3],
        }
    }
}

/// Traces from an existing factorization of the normal equations.
pub fn traces_with(lambdas: &Lambdas, normal: &NormalEquations, ss: &SuffStats) -> AdjustmentTraces {
    let d = &ss.design;
    let q = ss.p() + 1;
    let blocks: Vec<DMatrix<f64>> = Stratum::ALL.iter().map(|s| stratum_xx(ss, *s)).collect();
    let mut out = [0.0; 4];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = DMatrix::zeros(q, q);
        for s in Stratum::ALL {
            let dl = s.lambda_gradient(d)[t];
            if dl != 0.0 {
                let l = lambdas.get(s);
                acc += &blocks[s as usize] * (dl * s.replication(d) / (l * l));
            }
        }
        *o = 0.5 * normal.solve_matrix(&acc).trace();
    }
    AdjustmentTraces::from_array(out)
}

pub fn adjustment_traces(theta: &VarianceComponents, ss: &SuffStats) -> Result<AdjustmentTraces> {
    let lambdas = lambdas_from(theta, &ss.design)?;
    let normal = NormalEquations::assemble(&lambdas, ss)?;
    Ok(traces_with(&lambdas, &normal, ss))
}

/// Score of the adjusted log-likelihood: ξ entries as in the ML score, each
/// variance entry plus its trace.
pub fn reml_score(p: &ParamVector, ss: &SuffStats) -> Result<ScoreVector> {
    let mut s = ml::score(p, ss)?;
    let t = adjustment_traces(&p.theta, ss)?.to_array();
    let layout = s.layout();
    for (k, tk) in t.iter().enumerate() {
        s.values[layout.variance_position(k)] += tk;
    }
    Ok(s)
}

/// `l_R(θ) = l(ξ̂(θ), θ) − ½ log|XᵀV⁻¹X|`.
pub fn reml_criterion(theta: &VarianceComponents, ss: &SuffStats) -> Result<f64> {
    let lambdas = lambdas_from(theta, &ss.design)?;
    let normal = NormalEquations::assemble(&lambdas, ss)?;
    let p = ParamVector {
        xi: normal.solve(),
        theta: *theta,
        dims: ss.dims,
    };
    Ok(ml::loglik(&p, ss)? - 0.5 * normal.logdet())
}

/// `l_A(ξ, θ) = l(ξ, θ) − ½ log|XᵀV⁻¹X|`.
pub fn adjusted_loglik(p: &ParamVector, ss: &SuffStats) -> Result<f64> {
    let lambdas = lambdas_from(&p.theta, &ss.design)?;
    let normal = NormalEquations::assemble(&lambdas, ss)?;
    Ok(ml::loglik(p, ss)? - 0.5 * normal.logdet())
}
