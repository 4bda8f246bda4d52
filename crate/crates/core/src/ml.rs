//! Log-likelihood, score system, GLS normal equations and the expected
//! information, all evaluated from [`SuffStats`].
//!
//! With residual `r = y − Xξ`, the five stratum contrast sums `Sₛ` of `r` are
//! quadratic in the slopes: `Sₛ = bᵀ Gₛ b` with `b = (−ξ_slopes, 1)` and `Gₛ`
//! the stored Gram matrix of the stratum. The grand sum is `R̄²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{CovariateSet, Design, Level};
use crate::error::{Error, Result};
use crate::kron::{lambdas_from, ContrastSums, Lambdas, Stratum, VarianceComponents};
use crate::numdiff;
use crate::params::{Layout, ParamVector, Slot};
use crate::stats::SuffStats;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Condition number of the equilibrated normal-equation matrix above which
/// the design counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

fn residual_direction(p: &ParamVector, ss: &SuffStats) -> DVector<f64> {
    let q = ss.p() + 1;
    DVector::from_fn(q, |a, _| if a + 1 == q { 1.0 } else { -p.xi[a + 1] })
}

/// `R̄ = ȳ − ξ0 − x̄ᵀξ`.
pub fn residual_mean(p: &ParamVector, ss: &SuffStats) -> f64 {
    let slopes = &p.xi[1..];
    ss.y_mean() - p.xi0() - slopes.iter().enumerate().map(|(a, s)| ss.means[a] * s).sum::<f64>()
}

/// The five residual contrast sums at `ξ`.
pub fn contrast_sums(p: &ParamVector, ss: &SuffStats) -> ContrastSums {
    let b = residual_direction(p, ss);
    let mut sums = [0.0; 5];
    for s in &Stratum::ALL[..4] {
        sums[*s as usize] = b.dot(&(ss.gram(*s) * &b));
    }
    sums[4] = residual_mean(p, ss).powi(2);
    ContrastSums { sums }
}

pub fn loglik_from(lambdas: &Lambdas, sums: &ContrastSums, d: &Design) -> Result<f64> {
    let logdet = crate::kron::logdet_v(lambdas, d)?;
    Ok(-0.5 * d.n as f64 * LN_2PI - 0.5 * logdet - 0.5 * sums.quad_form(lambdas, d))
}

pub fn loglik(p: &ParamVector, ss: &SuffStats) -> Result<f64> {
    let lambdas = lambdas_from(&p.theta, &ss.design)?;
    loglik_from(&lambdas, &contrast_sums(p, ss), &ss.design)
}

/// `∂l/∂θ` for `θ = (σ_α², σ_β², σ_γ², σ_e²)` given the contrast sums:
/// `½ Σₛ (∂λₛ/∂θ) (cₛSₛ/λₛ² − multₛ/λₛ)`.
pub fn variance_score_from(lambdas: &Lambdas, sums: &ContrastSums, d: &Design) -> [f64; 4] {
    let mut out = [0.0; 4];
    for s in Stratum::ALL {
        let l = lambdas.get(s);
        let term = s.replication(d) * sums.get(s) / (l * l) - s.multiplicity(d) as f64 / l;
        for (o, dl) in out.iter_mut().zip(s.lambda_gradient(d)) {
            *o += 0.5 * dl * term;
        }
    }
    out
}

/// `XᵀV⁻¹r` in regression order.
pub fn xi_score_from(p: &ParamVector, ss: &SuffStats, lambdas: &Lambdas) -> Vec<f64> {
    let d = &ss.design;
    let slopes = ss.p();
    let b = residual_direction(p, ss);
    let w = lambdas.weights(d);
    let mut out = vec![0.0; slopes + 1];
    for s in &Stratum::ALL[..4] {
        let cross = ss.gram(*s) * &b;
        for a in 0..slopes {
            out[a + 1] += w[*s as usize] * cross[a];
        }
    }
    let grand = w[4] * residual_mean(p, ss);
    out[0] += grand;
    for a in 0..slopes {
        out[a + 1] += grand * ss.means[a];
    }
    out
}

/// Score entries in `ω` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    pub dims: [usize; 4],
}

impl ScoreVector {
    pub fn from_parts(xi: &[f64], theta: [f64; 4], dims: [usize; 4]) -> Self {
        let p = ParamVector {
            xi: xi.to_vec(),
            theta: VarianceComponents::from_array(theta),
            dims,
        };
        Self {
            values: p.to_omega(),
            dims,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    /// Regression-coefficient entries in regression order.
    pub fn xi_block(&self) -> Vec<f64> {
        self.layout()
            .slots
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| !matches!(s, Slot::Variance(_)))
            .map(|(_, v)| *v)
            .collect()
    }

    pub fn variance_block(&self) -> [f64; 4] {
        let layout = self.layout();
        std::array::from_fn(|t| self.values[layout.variance_position(t)])
    }

    /// `ψ^(a)`, `ψ^(b)`, `ψ^(ab)`, `ψ^(w)`: the row group `(ξ0, ξ1, σ_α²)`,
    /// then `(ξ2, σ_β²)`, `(ξ3, σ_γ²)` and `(ξ4, σ_e²)`.
    pub fn partition(&self) -> [Vec<f64>; 4] {
        let [pa, pb, pab, _] = self.dims;
        let cuts = [0, pa + 2, pa + pb + 3, pa + pb + pab + 4, self.values.len()];
        std::array::from_fn(|t| self.values[cuts[t]..cuts[t + 1]].to_vec())
    }

    /// `K^{-1/2} ψ`.
    pub fn normalized(&self, d: &Design) -> Vec<f64> {
        self.layout()
            .k_diag(d)
            .iter()
            .zip(&self.values)
            .map(|(k, v)| v / k.sqrt())
            .collect()
    }

    pub fn max_normalized(&self, d: &Design) -> f64 {
        self.normalized(d).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn score(p: &ParamVector, ss: &SuffStats) -> Result<ScoreVector> {
    let lambdas = lambdas_from(&p.theta, &ss.design)?;
    let sums = contrast_sums(p, ss);
    Ok(ScoreVector::from_parts(
        &xi_score_from(p, ss, &lambdas),
        variance_score_from(&lambdas, &sums, &ss.design),
        p.dims,
    ))
}

/// Unweighted `XᵀPₛX / cₛ` for a stratum, including the intercept column.
/// The grand stratum gives `a aᵀ` with `a = (1, x̄)`.
pub fn stratum_xx(ss: &SuffStats, s: Stratum) -> DMatrix<f64> {
    let p = ss.p();
    let mut out = DMatrix::zeros(p + 1, p + 1);
    match s {
        Stratum::Grand => {
            let a = DVector::from_fn(p + 1, |r, _| if r == 0 { 1.0 } else { ss.means[r - 1] });
            out = &a * a.transpose();
        }
        _ => out
            .view_mut((1, 1), (p, p))
            .copy_from(&ss.gram(s).view((0, 0), (p, p))),
    }
    out
}

/// Unweighted `XᵀPₛy / cₛ`, including the intercept entry.
pub fn stratum_xy(ss: &SuffStats, s: Stratum) -> DVector<f64> {
    let p = ss.p();
    match s {
        Stratum::Grand => {
            let y = ss.y_mean();
            DVector::from_fn(p + 1, |r, _| y * if r == 0 { 1.0 } else { ss.means[r - 1] })
        }
        _ => DVector::from_fn(p + 1, |r, _| if r == 0 { 0.0 } else { ss.gram(s)[(r - 1, p)] }),
    }
}

/// Weighted normal equations `XᵀV⁻¹X ξ = XᵀV⁻¹y` with their factorization.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub condition: f64,
    chol: Cholesky<f64, Dyn>,
}

impl NormalEquations {
    pub fn assemble(lambdas: &Lambdas, ss: &SuffStats) -> Result<Self> {
        lambdas.check_positive()?;
        let d = &ss.design;
        let w = lambdas.weights(d);
        let q = ss.p() + 1;
        let mut matrix = DMatrix::zeros(q, q);
        let mut rhs = DVector::zeros(q);
        for s in Stratum::ALL {
            matrix += stratum_xx(ss, s) * w[s as usize];
            rhs += stratum_xy(ss, s) * w[s as usize];
        }
        let condition = equilibrated_condition(&matrix);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularDesign { condition });
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::SingularDesign { condition })?;
        Ok(Self {
            matrix,
            rhs,
            condition,
            chol,
        })
    }

    pub fn solve(&self) -> Vec<f64> {
        self.chol.solve(&self.rhs).iter().copied().collect()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Solves `XᵀV⁻¹X u = v` for an arbitrary right-hand side.
    pub fn solve_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(v)
    }

    /// `log |XᵀV⁻¹X|`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

fn equilibrated_condition(m: &DMatrix<f64>) -> f64 {
    let diag = m.diagonal();
    if diag.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let scale = diag.map(|v| 1.0 / v.sqrt());
    let eq = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * scale[r] * scale[c]);
    let eig = SymmetricEigen::new(eq).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `ξ̂(θ) = (XᵀV⁻¹X)⁻¹XᵀV⁻¹y` in regression order.
pub fn gls_solve(theta: &VarianceComponents, ss: &SuffStats) -> Result<Vec<f64>> {
    let lambdas = lambdas_from(theta, &ss.design)?;
    Ok(NormalEquations::assemble(&lambdas, ss)?.solve())
}

/// Residual level contrasts computed directly from the data grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualContrasts {
    pub design: Design,
    /// `R̄`.
    pub grand: f64,
    /// `R̄_i^(a)`, one per row.
    pub row: Vec<f64>,
    /// `R̄_j^(b)`, one per column.
    pub col: Vec<f64>,
    /// `R̄_ij^(ab)`, one per cell.
    pub cell: Vec<f64>,
    /// `R_ijk^(w)`, one per observation.
    pub within: Vec<f64>,
}

impl ResidualContrasts {
    pub fn of_residuals(design: &Design, r: &[f64]) -> Result<Self> {
        let parts = crate::design::decompose_covariate(design, r)?;
        Ok(Self {
            design: *design,
            grand: parts.mean,
            row: parts.row,
            col: parts.col,
            cell: parts.inter,
            within: parts.within,
        })
    }

    pub fn from_data(design: &Design, covs: &CovariateSet, y: &[f64], xi: &[f64]) -> Result<Self> {
        design.check_len(y.len())?;
        let fitted = covs.linear_predictor(design, xi);
        let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        Self::of_residuals(design, &r)
    }

    pub fn within_quadratic(&self) -> f64 {
        self.within.iter().map(|v| v * v).sum()
    }
}

/// The score evaluated term by term from the raw data grid, without
/// sufficient statistics.
pub fn score_direct(design: &Design, covs: &CovariateSet, y: &[f64], p: &ParamVector) -> Result<ScoreVector> {
    let l = lambdas_from(&p.theta, design)?.values;
    let rc = ResidualContrasts::from_data(design, covs, y, &p.xi)?;
    let Design { g, h, m, n } = *design;
    let (gf, hf, mf, nf) = (g as f64, h as f64, m as f64, n as f64);

    let mut xi = vec![nf / l[4] * rc.grand];
    for col in covs.grid_columns(design) {
        let x = crate::design::decompose_covariate(design, &col)?;
        let row: f64 = x.row.iter().zip(&rc.row).map(|(a, b)| a * b).sum();
        let colsum: f64 = x.col.iter().zip(&rc.col).map(|(a, b)| a * b).sum();
        let cell: f64 = x.inter.iter().zip(&rc.cell).map(|(a, b)| a * b).sum();
        let within: f64 = x.within.iter().zip(&rc.within).map(|(a, b)| a * b).sum();
        xi.push(
            within / l[0] + mf / l[1] * cell + hf * mf / l[2] * row + gf * mf / l[3] * colsum
                + nf / l[4] * x.mean * rc.grand,
        );
    }

    let sq = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>();
    let (ra, rb, rab, rw) = (sq(&rc.row), sq(&rc.col), sq(&rc.cell), rc.within_quadratic());
    let r2 = rc.grand * rc.grand;
    let alpha = hf * hf * mf * mf / (2.0 * l[2] * l[2]) * ra - (gf - 1.0) * hf * mf / (2.0 * l[2])
        + gf * hf * hf * mf * mf / (2.0 * l[4] * l[4]) * r2
        - hf * mf / (2.0 * l[4]);
    let beta = gf * gf * mf * mf / (2.0 * l[3] * l[3]) * rb - (hf - 1.0) * gf * mf / (2.0 * l[3])
        + gf * gf * hf * mf * mf / (2.0 * l[4] * l[4]) * r2
        - gf * mf / (2.0 * l[4]);
    let gamma = mf * mf / (2.0 * l[1] * l[1]) * rab - (gf - 1.0) * (hf - 1.0) * mf / (2.0 * l[1])
        + hf * mf * mf / (2.0 * l[2] * l[2]) * ra
        - (gf - 1.0) * mf / (2.0 * l[2])
        + gf * mf * mf / (2.0 * l[3] * l[3]) * rb
        - (hf - 1.0) * mf / (2.0 * l[3])
        + gf * hf * mf * mf / (2.0 * l[4] * l[4]) * r2
        - mf / (2.0 * l[4]);
    let e = rw / (2.0 * l[0] * l[0]) - gf * hf * (mf - 1.0) / (2.0 * l[0]) + mf / (2.0 * l[1] * l[1]) * rab
        - (gf - 1.0) * (hf - 1.0) / (2.0 * l[1])
        + hf * mf / (2.0 * l[2] * l[2]) * ra
        - (gf - 1.0) / (2.0 * l[2])
        + gf * mf / (2.0 * l[3] * l[3]) * rb
        - (hf - 1.0) / (2.0 * l[3])
        + nf / (2.0 * l[4] * l[4]) * r2
        - 1.0 / (2.0 * l[4]);
    Ok(ScoreVector::from_parts(&xi, [alpha, beta, gamma, e], p.dims))
}

/// Expected score `E_{ω̇} ψ(ω)` under the working normal model: the linear
/// residual terms vanish and each residual quadratic is replaced by its
/// expectation.
pub fn expected_score(at: &ParamVector, truth: &ParamVector, ss: &SuffStats) -> Result<ScoreVector> {
    let d = &ss.design;
    let noiseless = ss.with_linear_response(&truth.xi);
    let lambdas = lambdas_from(&at.theta, d)?;
    let true_lambdas = lambdas_from(&truth.theta, d)?;
    let mut sums = contrast_sums(at, &noiseless);
    for s in Stratum::ALL {
        sums.sums[s as usize] += s.multiplicity(d) as f64 * true_lambdas.get(s) / s.replication(d);
    }
    Ok(ScoreVector::from_parts(
        &xi_score_from(at, &noiseless, &lambdas),
        variance_score_from(&lambdas, &sums, d),
        at.dims,
    ))
}

/// Normalized expected information `B̂_n = −K^{-1/2} E∇ψ(ω̇) K^{-1/2}` next
/// to its limit `B`.
#[derive(Debug, Clone)]
pub struct InformationEstimate {
    pub bn: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Frobenius norm of `B̂_n − B`.
    pub distance: f64,
}

pub fn expected_info_bn(truth: &ParamVector, ss: &SuffStats) -> Result<InformationEstimate> {
    let d = &ss.design;
    let omega = truth.to_omega();
    let dims = truth.dims;
    let layout = Layout::new(dims);
    let steps: Vec<f64> = layout
        .slots
        .iter()
        .zip(&omega)
        .map(|(s, w)| match s {
            Slot::Variance(_) => 1e-5 * w.abs().max(1e-8),
            _ => numdiff::step_for(*w, 1e-5),
        })
        .collect();
    let jac = numdiff::jacobian(
        |w| {
            let at = ParamVector::from_omega(w, dims)?;
            Ok(expected_score(&at, truth, ss)?.values)
        },
        &omega,
        &steps,
    )?;
    let k: Vec<f64> = layout.k_diag(d).iter().map(|v| 1.0 / v.sqrt()).collect();
    let bn = DMatrix::from_fn(jac.nrows(), jac.ncols(), |r, c| -k[r] * jac[(r, c)] * k[c]);
    let b = limit_b(truth, ss)?;
    let distance = (&bn - &b).norm();
    Ok(InformationEstimate { bn, b, distance })
}

/// The limit matrix `B` with `D` blocks, `x̄^(a)`, `x̄^(b)` taken from the data.
pub fn limit_b(truth: &ParamVector, ss: &SuffStats) -> Result<DMatrix<f64>> {
    let d = &ss.design;
    let [sa, sb, sg, se] = truth.theta.to_array();
    let eta = d.eta();
    let tau = sa + eta * sb;
    let [pa, pb, pab, pw] = truth.dims;
    let len = pa + pb + pab + pw + 5;
    let mut b = DMatrix::zeros(len, len);
    let xa = ss.x_mean(Level::Row);
    let xb = ss.x_mean(Level::Column);

    // row group: ξ0 at 0, ξ1 at 1..=pa, σ_α² at pa+1
    b[(0, 0)] = 1.0 / tau;
    let d1 = ss.d_hat(Level::Row);
    for q in 0..pa {
        b[(0, 1 + q)] = xa[q] / tau;
        b[(1 + q, 0)] = xa[q] / tau;
        for r in 0..pa {
            b[(1 + q, 1 + r)] = d1[(q, r)] / sa + xa[q] * xa[r] / tau;
        }
    }
    b[(pa + 1, pa + 1)] = 1.0 / (2.0 * sa * sa);

    // column group: ξ2 at pa+2.., σ_β² after
    let c0 = pa + 2;
    let d2 = ss.d_hat(Level::Column);
    let se2 = eta.sqrt() / tau;
    for q in 0..pb {
        b[(0, c0 + q)] = se2 * xb[q];
        b[(c0 + q, 0)] = se2 * xb[q];
        for r in 0..pa {
            b[(1 + r, c0 + q)] = se2 * xa[r] * xb[q];
            b[(c0 + q, 1 + r)] = se2 * xa[r] * xb[q];
        }
        for r in 0..pb {
            b[(c0 + q, c0 + r)] = d2[(q, r)] / sb + eta * xb[q] * xb[r] / tau;
        }
    }
    b[(c0 + pb, c0 + pb)] = 1.0 / (2.0 * sb * sb);

    let mut fill = |start: usize, dim: usize, dm: DMatrix<f64>, sigma2: f64| {
        for q in 0..dim {
            for r in 0..dim {
                b[(start + q, start + r)] = dm[(q, r)] / sigma2;
            }
        }
        b[(start + dim, start + dim)] = 1.0 / (2.0 * sigma2 * sigma2);
    };
    let c1 = c0 + pb + 1;
    fill(c1, pab, ss.d_hat(Level::Interaction), sg);
    let c2 = c1 + pab + 1;
    fill(c2, pw, ss.d_hat(Level::Within), se);
    Ok(b)
}

/// Residuals `y − Xξ` on the grid.
pub fn residuals(design: &Design, covs: &CovariateSet, y: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    design.check_len(y.len())?;
    let fitted = covs.linear_predictor(design, xi);
    Ok(y.iter().zip(&fitted).map(|(a, b)| a - b).collect())
}
