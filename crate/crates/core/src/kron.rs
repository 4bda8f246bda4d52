//! Closed-form algebra for the dispersion matrix
//! `V = σ_α² I⊗J⊗J + σ_β² J⊗I⊗J + σ_γ² I⊗I⊗J + σ_e² I⊗I⊗I`.
//!
//! `V` has five distinct eigenvalues, one per orthogonal projector
//!
//! | stratum | projector          | eigenvalue                      | rank          |
//! |---------|--------------------|---------------------------------|---------------|
//! | within  | `I ⊗ I ⊗ C_m`      | `σ_e²`                          | `gh(m−1)`     |
//! | cell    | `C_g ⊗ C_h ⊗ J̄_m`  | `σ_e² + mσ_γ²`                  | `(g−1)(h−1)`  |
//! | row     | `C_g ⊗ J̄_h ⊗ J̄_m`  | `λ1 + hmσ_α²`                   | `g−1`         |
//! | column  | `J̄_g ⊗ C_h ⊗ J̄_m`  | `λ1 + gmσ_β²`                   | `h−1`         |
//! | grand   | `J̄_g ⊗ J̄_h ⊗ J̄_m`  | `λ1 + hmσ_α² + gmσ_β²`          | `1`           |
//!
//! so inverse action, log-determinant and quadratic forms are all O(n)
//! contrasts of grid means.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{Design, GridMeans};
use crate::error::{Error, Result};

/// Index of a projector stratum, ordered like the eigenvalues `λ0..λ4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Within = 0,
    Cell = 1,
    Row = 2,
    Column = 3,
    Grand = 4,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [
        Stratum::Within,
        Stratum::Cell,
        Stratum::Row,
        Stratum::Column,
        Stratum::Grand,
    ];

    /// Projector rank.
    pub fn multiplicity(self, d: &Design) -> usize {
        let Design { g, h, m, .. } = *d;
        match self {
            Stratum::Within => g * h * (m - 1),
            Stratum::Cell => (g - 1) * (h - 1),
            Stratum::Row => g - 1,
            Stratum::Column => h - 1,
            Stratum::Grand => 1,
        }
    }

    /// Number of observations averaged into one contrast unit of the stratum
    /// (`1, m, hm, gm, n`). `Pₛ = cₛ⁻¹ × (sum over units of contrast outer products)`.
    pub fn replication(self, d: &Design) -> f64 {
        let Design { g, h, m, n } = *d;
        (match self {
            Stratum::Within => 1,
            Stratum::Cell => m,
            Stratum::Row => h * m,
            Stratum::Column => g * m,
            Stratum::Grand => n,
        }) as f64
    }

    /// `∂λₛ/∂θ` for `θ = (σ_α², σ_β², σ_γ², σ_e²)`.
    pub fn lambda_gradient(self, d: &Design) -> [f64; 4] {
        let (g, h, m) = (d.g as f64, d.h as f64, d.m as f64);
        match self {
            Stratum::Within => [0.0, 0.0, 0.0, 1.0],
            Stratum::Cell => [0.0, 0.0, m, 1.0],
            Stratum::Row => [h * m, 0.0, m, 1.0],
            Stratum::Column => [0.0, g * m, m, 1.0],
            Stratum::Grand => [h * m, g * m, m, 1.0],
        }
    }
}

/// `(σ_α², σ_β², σ_γ², σ_e²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma_alpha2: f64,
    pub sigma_beta2: f64,
    pub sigma_gamma2: f64,
    pub sigma_e2: f64,
}

impl VarianceComponents {
    pub fn new(sigma_alpha2: f64, sigma_beta2: f64, sigma_gamma2: f64, sigma_e2: f64) -> Self {
        Self {
            sigma_alpha2,
            sigma_beta2,
            sigma_gamma2,
            sigma_e2,
        }
    }

    pub fn iid(sigma_e2: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, sigma_e2)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.sigma_alpha2,
            self.sigma_beta2,
            self.sigma_gamma2,
            self.sigma_e2,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }
}

/// The five distinct eigenvalues of `V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub values: [f64; 5],
}

impl Lambdas {
    /// Unchecked construction, used by tests that impose a spectrum directly.
    pub fn from_values(values: [f64; 5]) -> Self {
        Self { values }
    }

    #[inline]
    pub fn get(&self, s: Stratum) -> f64 {
        self.values[s as usize]
    }

    pub fn multiplicities(d: &Design) -> [usize; 5] {
        Stratum::ALL.map(|s| s.multiplicity(d))
    }

    /// Quadratic-form weights `cₛ/λₛ` applied to unweighted contrast sums.
    pub fn weights(&self, d: &Design) -> [f64; 5] {
        Stratum::ALL.map(|s| s.replication(d) / self.get(s))
    }

    pub fn check_positive(&self) -> Result<()> {
        match self.values.iter().find(|v| !(**v > 0.0)) {
            Some(v) => Err(Error::NonPositiveLambda(*v)),
            None => Ok(()),
        }
    }
}

pub fn lambdas_from(theta: &VarianceComponents, d: &Design) -> Result<Lambdas> {
    if !(theta.sigma_e2 > 0.0) {
        return Err(Error::NonPositiveLambda(theta.sigma_e2));
    }
    let (g, h, m) = (d.g as f64, d.h as f64, d.m as f64);
    let l0 = theta.sigma_e2;
    let l1 = l0 + m * theta.sigma_gamma2;
    let l2 = l1 + h * m * theta.sigma_alpha2;
    let l3 = l1 + g * m * theta.sigma_beta2;
    let l4 = l1 + h * m * theta.sigma_alpha2 + g * m * theta.sigma_beta2;
    let lambdas = Lambdas {
        values: [l0, l1, l2, l3, l4],
    };
    lambdas.check_positive()?;
    Ok(lambdas)
}

/// `V⁻¹ v` through the five projector terms.
pub fn vinv_apply(lambdas: &Lambdas, d: &Design, v: &[f64]) -> Result<Vec<f64>> {
    d.check_len(v.len())?;
    lambdas.check_positive()?;
    let means = GridMeans::of(d, v);
    let inv = lambdas.values.map(|l| 1.0 / l);
    let mut out = Vec::with_capacity(d.n);
    for i in 0..d.g {
        let row = means.row_contrast(i);
        for j in 0..d.h {
            let col = means.col_contrast(j);
            let cell_mean = means.cell[d.cell(i, j)];
            let cell = means.cell_contrast(d.h, i, j);
            let between = inv[1] * cell + inv[2] * row + inv[3] * col + inv[4] * means.grand;
            for k in 0..d.m {
                out.push(inv[0] * (v[d.index(i, j, k)] - cell_mean) + between);
            }
        }
    }
    Ok(out)
}

pub fn logdet_v(lambdas: &Lambdas, d: &Design) -> Result<f64> {
    lambdas.check_positive()?;
    Ok(Stratum::ALL
        .iter()
        .map(|s| s.multiplicity(d) as f64 * lambdas.get(*s).ln())
        .sum())
}

/// Unweighted stratum sums of squares of a grid variable:
/// `Σ(r−r̄_ij)²`, `Σ_ij(r̄_ij−r̄_i.−r̄_.j+r̄)²`, `Σ_i(r̄_i.−r̄)²`, `Σ_j(r̄_.j−r̄)²`, `r̄²`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContrastSums {
    pub sums: [f64; 5],
}

impl ContrastSums {
    pub fn of(d: &Design, r: &[f64]) -> Result<Self> {
        d.check_len(r.len())?;
        let means = GridMeans::of(d, r);
        let mut sums = [0.0; 5];
        for (t, v) in r.iter().enumerate() {
            sums[0] += (v - means.cell[t / d.m]).powi(2);
        }
        for i in 0..d.g {
            for j in 0..d.h {
                sums[1] += means.cell_contrast(d.h, i, j).powi(2);
            }
            sums[2] += means.row_contrast(i).powi(2);
        }
        for j in 0..d.h {
            sums[3] += means.col_contrast(j).powi(2);
        }
        sums[4] = means.grand * means.grand;
        Ok(Self { sums })
    }

    #[inline]
    pub fn get(&self, s: Stratum) -> f64 {
        self.sums[s as usize]
    }

    /// `rᵀV⁻¹r`.
    pub fn quad_form(&self, lambdas: &Lambdas, d: &Design) -> f64 {
        lambdas
            .weights(d)
            .iter()
            .zip(&self.sums)
            .map(|(w, s)| w * s)
            .sum()
    }

    /// `Σ cₛ Sₛ`, which equals `Σ r²`.
    pub fn total(&self, d: &Design) -> f64 {
        Stratum::ALL
            .iter()
            .map(|s| s.replication(d) * self.get(*s))
            .sum()
    }
}

/// `rᵀV⁻¹r` together with its five stratum sums.
pub fn quad_form(lambdas: &Lambdas, d: &Design, r: &[f64]) -> Result<(f64, ContrastSums)> {
    lambdas.check_positive()?;
    let sums = ContrastSums::of(d, r)?;
    Ok((sums.quad_form(lambdas, d), sums))
}

pub const DENSE_LIMIT: usize = 4096;

/// Explicit `V` from its Kronecker terms. Test oracle only.
pub fn dense_v(theta: &VarianceComponents, d: &Design) -> Result<DMatrix<f64>> {
    if d.n > DENSE_LIMIT {
        return Err(Error::TooLargeForDenseOracle {
            n: d.n,
            limit: DENSE_LIMIT,
        });
    }
    let i = DMatrix::<f64>::identity;
    let j = |a: usize| DMatrix::<f64>::from_element(a, a, 1.0);
    let (g, h, m) = (d.g, d.h, d.m);
    let z1 = i(g, g).kronecker(&j(h)).kronecker(&j(m));
    let z2 = j(g).kronecker(&i(h, h)).kronecker(&j(m));
    let z3 = i(g, g).kronecker(&i(h, h)).kronecker(&j(m));
    let z0 = DMatrix::<f64>::identity(d.n, d.n);
    Ok(z1 * theta.sigma_alpha2 + z2 * theta.sigma_beta2 + z3 * theta.sigma_gamma2 + z0 * theta.sigma_e2)
}

/// `Z_s Z_sᵀ` for s = 1 (row), 2 (column), 3 (cell), 0 (identity), in θ order
/// `(α, β, γ, e)`. Test oracle only.
pub fn dense_zzt(d: &Design) -> Result<[DMatrix<f64>; 4]> {
    let unit = |idx: usize| {
        let mut a = [0.0; 4];
        a[idx] = 1.0;
        VarianceComponents::from_array(a)
    };
    Ok([
        dense_v(&unit(0), d)?,
        dense_v(&unit(1), d)?,
        dense_v(&unit(2), d)?,
        dense_v(&unit(3), d)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iid_lambdas_are_all_sigma_e2() {
        let d = Design::new(3, 4, 2).unwrap();
        let l = lambdas_from(&VarianceComponents::iid(1.0), &d).unwrap();
        assert_eq!(l.values, [1.0; 5]);
    }

    #[test]
    fn lambdas_by_substitution() {
        let d = Design::new(2, 3, 4).unwrap();
        let l = lambdas_from(&VarianceComponents::new(3.0, 4.0, 2.0, 1.0), &d).unwrap();
        assert_eq!(l.values, [1.0, 9.0, 45.0, 41.0, 77.0]);
        assert_eq!(l.values[2] + l.values[3] - l.values[1] - l.values[4], 0.0);
    }

    #[test]
    fn non_positive_error_variance() {
        let d = Design::new(2, 2, 2).unwrap();
        assert!(matches!(
            lambdas_from(&VarianceComponents::new(1.0, 1.0, 1.0, 0.0), &d),
            Err(Error::NonPositiveLambda(_))
        ));
    }

    #[test]
    fn identity_spectrum_leaves_vector_unchanged() {
        let d = Design::new(2, 3, 2).unwrap();
        let v: Vec<f64> = (0..d.n).map(|t| (t as f64).sin()).collect();
        let out = vinv_apply(&Lambdas::from_values([1.0; 5]), &d, &v).unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ones_is_the_grand_eigenvector() {
        let d = Design::new(3, 2, 3).unwrap();
        let l = lambdas_from(&VarianceComponents::new(2.0, 0.5, 1.5, 0.7), &d).unwrap();
        let out = vinv_apply(&l, &d, &vec![1.0; d.n]).unwrap();
        for v in out {
            assert!((v - 1.0 / l.values[4]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let d = Design::new(2, 2, 2).unwrap();
        assert!(matches!(
            vinv_apply(&Lambdas::from_values([1.0; 5]), &d, &[1.0; 7]),
            Err(Error::DimensionMismatch { expected: 8, got: 7 })
        ));
    }

    #[test]
    fn logdet_multiplicities() {
        let d = Design::new(3, 2, 2).unwrap();
        let l = Lambdas::from_values([1.0, 2.0, 3.0, 4.0, 5.0]);
        let expect = 6.0 * 1f64.ln() + 2.0 * 2f64.ln() + 2.0 * 3f64.ln() + 4f64.ln() + 5f64.ln();
        assert!((logdet_v(&l, &d).unwrap() - expect).abs() < 1e-14);
        assert_eq!(logdet_v(&Lambdas::from_values([1.0; 5]), &d).unwrap(), 0.0);
    }

    #[test]
    fn quad_form_tiles_total_sum_of_squares() {
        let d = Design::new(3, 4, 2).unwrap();
        let r: Vec<f64> = (0..d.n).map(|t| ((t * 37 % 11) as f64) - 4.0).collect();
        let (q, sums) = quad_form(&Lambdas::from_values([1.0; 5]), &d, &r).unwrap();
        let ss: f64 = r.iter().map(|v| v * v).sum();
        assert!((q - ss).abs() < 1e-10 * ss);
        assert!((sums.total(&d) - ss).abs() < 1e-10 * ss);
        let (zero, _) = quad_form(&Lambdas::from_values([1.0; 5]), &d, &vec![0.0; d.n]).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn dense_v_entries() {
        let d = Design::new(2, 2, 2).unwrap();
        let theta = VarianceComponents::new(1.0, 2.0, 3.0, 4.0);
        let v = dense_v(&theta, &d).unwrap();
        for t in 0..d.n {
            assert_eq!(v[(t, t)], 10.0);
        }
        // same cell, different replicate
        assert_eq!(v[(d.index(1, 0, 0), d.index(1, 0, 1))], 6.0);
        // same row, different column
        assert_eq!(v[(d.index(1, 0, 0), d.index(1, 1, 1))], 1.0);
        assert_eq!(dense_v(&VarianceComponents::iid(1.0), &d).unwrap(), DMatrix::identity(8, 8));
    }

    #[test]
    fn dense_guard() {
        let d = Design::new(20, 20, 11).unwrap();
        assert!(matches!(
            dense_v(&VarianceComponents::iid(1.0), &d),
            Err(Error::TooLargeForDenseOracle { .. })
        ));
    }
}
