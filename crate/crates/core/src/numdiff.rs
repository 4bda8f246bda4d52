//! Central finite differences.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-coordinate step `max(|x|, 1) · rel_step`.
pub fn step_for(x: f64, rel_step: f64) -> f64 {
    x.abs().max(1.0) * rel_step
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(f: F, x: &[f64], rel_step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut point = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for c in 0..x.len() {
        let h = step_for(x[c], rel_step);
        point[c] = x[c] + h;
        let up = f(&point)?;
        point[c] = x[c] - h;
        let down = f(&point)?;
        point[c] = x[c];
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: c });
        }
        out.push(d);
    }
    Ok(out)
}

/// Central-difference Jacobian `J[r, c] = ∂f_r/∂x_c` of a vector function.
pub fn jacobian<F>(f: F, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut point = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for c in 0..x.len() {
        let h = steps[c];
        point[c] = x[c] + h;
        let up = f(&point)?;
        point[c] = x[c] - h;
        let down = f(&point)?;
        point[c] = x[c];
        let col: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { coordinate: c });
        }
        cols.push(col);
    }
    let rows = cols.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows, x.len(), |r, c| cols[c][r]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_squared_norm() {
        let g = gradient(|x| Ok(x.iter().map(|v| v * v).sum()), &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_is_reported() {
        let r = gradient(|x| Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 }), &[0.0], 1e-6);
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { coordinate: 0 })));
    }

    #[test]
    fn jacobian_of_linear_map() {
        let j = jacobian(|x| Ok(vec![2.0 * x[0] + x[1], -x[1]]), &[0.3, 0.4], &[1e-6, 1e-6]).unwrap();
        assert!((j[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-8);
        assert!((j[(1, 1)] + 1.0).abs() < 1e-8);
    }
}
