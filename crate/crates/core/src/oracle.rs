//! Dense brute-force reference implementations.
//!
//! Everything here forms `V` explicitly and factorizes it, so cost is cubic in
//! `n`. These functions exist to certify the structured code paths and refuse
//! designs with more than [`DENSE_LIMIT`] observations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::design::{CovariateSet, Design, Level};
use crate::error::{Error, Result};
use crate::kron::{dense_v, dense_zzt, Stratum, VarianceComponents, DENSE_LIMIT};
use crate::ml::{ScoreVector, LN_2PI};
use crate::stats::SuffStats;

pub use crate::numdiff::gradient as fd_gradient;

fn check_size(d: &Design) -> Result<()> {
    if d.n > DENSE_LIMIT {
        return Err(Error::TooLargeForDenseOracle {
            n: d.n,
            limit: DENSE_LIMIT,
        });
    }
    Ok(())
}

fn cholesky(v: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let smallest = v.diagonal().min();
    Cholesky::new(v.clone()).ok_or(Error::NonPositiveLambda(smallest))
}

/// `[1, x_1, …, x_p]` on the grid, columns in regression order.
pub fn design_matrix(design: &Design, covs: &CovariateSet) -> DMatrix<f64> {
    let cols = covs.grid_columns(design);
    DMatrix::from_fn(design.n, cols.len() + 1, |t, c| if c == 0 { 1.0 } else { cols[c - 1][t] })
}

/// Explicit `X`, `V` and `y` at a fixed `θ`.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub design: Design,
    pub theta: VarianceComponents,
    pub x: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub y: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseModel {
    pub fn new(design: &Design, covs: &CovariateSet, y: &[f64], theta: &VarianceComponents) -> Result<Self> {
        check_size(design)?;
        design.check_len(y.len())?;
        covs.check(design)?;
        let v = dense_v(theta, design)?;
        Ok(Self {
            design: *design,
            theta: *theta,
            x: design_matrix(design, covs),
            chol: cholesky(&v)?,
            v,
            y: DVector::from_column_slice(y),
        })
    }

    /// Same data at a different `θ`.
    pub fn at(&self, theta: &VarianceComponents) -> Result<Self> {
        let v = dense_v(theta, &self.design)?;
        Ok(Self {
            theta: *theta,
            chol: cholesky(&v)?,
            v,
            ..self.clone()
        })
    }

    pub fn residual(&self, xi: &[f64]) -> DVector<f64> {
        &self.y - &self.x * DVector::from_column_slice(xi)
    }

    pub fn vinv(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    pub fn logdet_v(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `XᵀV⁻¹X`.
    pub fn information(&self) -> DMatrix<f64> {
        self.x.transpose() * self.chol.solve(&self.x)
    }
}

/// Gaussian log-likelihood from the dense factorization of `V`.
pub fn dense_loglik(model: &DenseModel, xi: &[f64]) -> Result<f64> {
    let r = model.residual(xi);
    let n = model.design.n as f64;
    Ok(-0.5 * n * LN_2PI - 0.5 * model.logdet_v() - 0.5 * r.dot(&model.vinv(&r)))
}

/// GLS estimate by dense solves.
pub fn dense_gls(model: &DenseModel) -> Result<Vec<f64>> {
    let info = model.information();
    let rhs = model.x.transpose() * model.vinv(&model.y);
    let chol = Cholesky::new(info).ok_or(Error::SingularDesign { condition: f64::INFINITY })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// `½ tr{(XᵀV⁻¹X)⁻¹ XᵀV⁻¹ZₜZₜᵀV⁻¹X}` for each variance component.
pub fn dense_traces(model: &DenseModel) -> Result<[f64; 4]> {
    let zzt = dense_zzt(&model.design)?;
    let vx = model.chol.solve(&model.x);
    let info = model.x.transpose() * &vx;
    let chol = Cholesky::new(info).ok_or(Error::SingularDesign { condition: f64::INFINITY })?;
    let mut out = [0.0; 4];
    for (t, z) in zzt.iter().enumerate() {
        let inner = vx.transpose() * z * &vx;
        out[t] = 0.5 * chol.solve(&inner).trace();
    }
    Ok(out)
}

/// Score in `ω` order from the dense matrices:
/// `XᵀV⁻¹r` and `½ rᵀV⁻¹ZZᵀV⁻¹r − ½ tr(V⁻¹ZZᵀ)`.
pub fn dense_score(model: &DenseModel, xi: &[f64], dims: [usize; 4]) -> Result<ScoreVector> {
    let r = model.residual(xi);
    let vr = model.vinv(&r);
    let xi_part: Vec<f64> = (model.x.transpose() * &vr).iter().copied().collect();
    let zzt = dense_zzt(&model.design)?;
    let mut theta = [0.0; 4];
    for (t, z) in zzt.iter().enumerate() {
        let trace = model.chol.solve(z).trace();
        theta[t] = 0.5 * vr.dot(&(z * &vr)) - 0.5 * trace;
    }
    Ok(ScoreVector::from_parts(&xi_part, theta, dims))
}

/// `l(ξ̂(θ), θ) − ½ log|XᵀV⁻¹X|` by dense algebra.
pub fn dense_reml_criterion(model: &DenseModel) -> Result<f64> {
    let xi = dense_gls(model)?;
    let logdet_info = cholesky(&model.information())?
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| 2.0 * v.ln())
        .sum::<f64>();
    Ok(dense_loglik(model, &xi)? - 0.5 * logdet_info)
}

pub fn dense_vinv_apply(theta: &VarianceComponents, d: &Design, v: &[f64]) -> Result<Vec<f64>> {
    check_size(d)?;
    let chol = cholesky(&dense_v(theta, d)?)?;
    Ok(chol.solve(&DVector::from_column_slice(v)).iter().copied().collect())
}

pub fn dense_logdet_v(theta: &VarianceComponents, d: &Design) -> Result<f64> {
    check_size(d)?;
    let chol = cholesky(&dense_v(theta, d)?)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn dense_quad_form(theta: &VarianceComponents, d: &Design, r: &[f64]) -> Result<f64> {
    let r = DVector::from_column_slice(r);
    let vr = DVector::from_vec(dense_vinv_apply(theta, d, r.as_slice())?);
    Ok(r.dot(&vr))
}

/// Eigenvalues of the dense `V`, ascending.
pub fn dense_spectrum(theta: &VarianceComponents, d: &Design) -> Result<Vec<f64>> {
    check_size(d)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(dense_v(theta, d)?).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Sufficient statistics from their definitions: every variable is expanded
/// onto the grid, its level means are taken by explicit loops, and each
/// stratum Gram matrix is the sum over all observations of contrast products
/// divided by the stratum replication.
pub fn naive_suffstats(design: &Design, covs: &CovariateSet, y: &[f64]) -> Result<SuffStats> {
    design.check_len(y.len())?;
    covs.check(design)?;
    let Design { g, h, m, n } = *design;
    let mut vars = covs.grid_columns(design);
    vars.push(y.to_vec());
    let q = vars.len();

    let mut grand = vec![0.0; q];
    let mut row = vec![vec![0.0; g]; q];
    let mut col = vec![vec![0.0; h]; q];
    let mut cell = vec![vec![0.0; g * h]; q];
    for (v, x) in vars.iter().enumerate() {
        for i in 0..g {
            for j in 0..h {
                for k in 0..m {
                    let val = x[design.index(i, j, k)];
                    grand[v] += val / n as f64;
                    row[v][i] += val / (h * m) as f64;
                    col[v][j] += val / (g * m) as f64;
                    cell[v][design.cell(i, j)] += val / m as f64;
                }
            }
        }
    }

    let mut gram: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(q, q));
    let mut contrast = vec![[0.0; 4]; q];
    for i in 0..g {
        for j in 0..h {
            let c = design.cell(i, j);
            for k in 0..m {
                for v in 0..q {
                    let x = vars[v][design.index(i, j, k)];
                    contrast[v] = [
                        x - cell[v][c],
                        cell[v][c] - row[v][i] - col[v][j] + grand[v],
                        row[v][i] - grand[v],
                        col[v][j] - grand[v],
                    ];
                }
                for s in 0..4 {
                    for a in 0..q {
                        for b in 0..q {
                            gram[s][(a, b)] += contrast[a][s] * contrast[b][s];
                        }
                    }
                }
            }
        }
    }
    for s in [Stratum::Within, Stratum::Cell, Stratum::Row, Stratum::Column] {
        gram[s as usize] /= s.replication(design);
    }

    Ok(SuffStats {
        design: *design,
        dims: covs.dims(),
        names: covs.names(),
        means: DVector::from_vec(grand),
        y_row_means: row[q - 1].clone(),
        y_col_means: col[q - 1].clone(),
        y_cell_means: cell[q - 1].clone(),
        gram,
    })
}

/// Largest absolute entry of the difference between two statistic sets,
/// covering means and every Gram matrix.
pub fn suffstats_distance(a: &SuffStats, b: &SuffStats) -> f64 {
    let mut worst = (&a.means - &b.means).amax();
    for s in 0..4 {
        worst = worst.max((&a.gram[s] - &b.gram[s]).amax());
    }
    for (x, y) in [
        (&a.y_row_means, &b.y_row_means),
        (&a.y_col_means, &b.y_col_means),
        (&a.y_cell_means, &b.y_cell_means),
    ] {
        for (u, v) in x.iter().zip(y) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

/// Covariate block lengths implied by a design, for building random inputs.
pub fn block_lengths(design: &Design) -> [usize; 4] {
    Level::ALL.map(|l| l.units(design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::CovariateBlock;
    use crate::kron::{lambdas_from, logdet_v, vinv_apply};
    use crate::stats::compress;

    fn covs(d: &Design) -> CovariateSet {
        let f = |len: usize, a: f64| (0..len).map(|t| ((t as f64 + a) * 0.91).cos()).collect::<Vec<_>>();
        CovariateSet {
            row: CovariateBlock { names: vec!["a".into()], columns: vec![f(d.g, 0.2)] },
            col: CovariateBlock { names: vec!["b".into()], columns: vec![f(d.h, 1.3)] },
            inter: CovariateBlock { names: vec!["ab".into()], columns: vec![f(d.cells(), 2.1)] },
            within: CovariateBlock { names: vec!["w".into()], columns: vec![f(d.n, 0.4)] },
        }
    }

    #[test]
    fn identity_covariance_loglik() {
        let d = Design::new(2, 2, 2).unwrap();
        let y: Vec<f64> = (0..8).map(|t| t as f64 * 0.5 - 1.0).collect();
        let model = DenseModel::new(&d, &CovariateSet::default(), &y, &VarianceComponents::iid(1.0)).unwrap();
        let l = dense_loglik(&model, &[0.0]).unwrap();
        let expected = -4.0 * LN_2PI - 0.5 * y.iter().map(|v| v * v).sum::<f64>();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_maximizes_over_xi() {
        let d = Design::new(3, 2, 2).unwrap();
        let c = covs(&d);
        let xi = [0.3, 1.0, -2.0, 0.5, 1.5];
        let y = c.linear_predictor(&d, &xi);
        let model = DenseModel::new(&d, &c, &y, &VarianceComponents::new(0.4, 0.3, 0.2, 0.6)).unwrap();
        let best = dense_loglik(&model, &xi).unwrap();
        for shift in [1e-3, -1e-2, 0.5] {
            let mut other = xi;
            other[2] += shift;
            assert!(dense_loglik(&model, &other).unwrap() < best);
        }
    }

    #[test]
    fn quadratic_gradient() {
        let grad = fd_gradient(|x: &[f64]| Ok(x[0] * x[0] + x[1] * x[1]), &[1.0, 2.0], 1e-6).unwrap();
        assert!((grad[0] - 2.0).abs() < 1e-8 && (grad[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn refuses_large_designs() {
        let d = Design::new(20, 20, 11).unwrap();
        assert!(matches!(
            dense_logdet_v(&VarianceComponents::iid(1.0), &d),
            Err(Error::TooLargeForDenseOracle { .. })
        ));
    }

    #[test]
    fn naive_statistics_match_one_pass() {
        let d = Design::new(3, 4, 2).unwrap();
        let c = covs(&d);
        let y: Vec<f64> = (0..d.n).map(|t| (t as f64 * 0.77).sin() * 3.0).collect();
        let fast = compress(&d, &c, &y).unwrap();
        let slow = naive_suffstats(&d, &c, &y).unwrap();
        assert!(suffstats_distance(&fast, &slow) < 1e-12);
    }

    #[test]
    fn structured_inverse_and_logdet_agree() {
        let d = Design::new(3, 2, 3).unwrap();
        let theta = VarianceComponents::new(0.7, 1.1, 0.3, 0.9);
        let l = lambdas_from(&theta, &d).unwrap();
        let v: Vec<f64> = (0..d.n).map(|t| (t as f64).sqrt()).collect();
        let a = vinv_apply(&l, &d, &v).unwrap();
        let b = dense_vinv_apply(&theta, &d, &v).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!((logdet_v(&l, &d).unwrap() - dense_logdet_v(&theta, &d).unwrap()).abs() < 1e-10);
    }
}
