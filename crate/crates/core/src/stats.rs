//! One-pass sufficient statistics.
//!
//! Every covariate and the response are projected onto the four contrast
//! strata (within-cell, double-centred cell, row, column) and the grand mean.
//! For each stratum we keep the Gram matrix of the stacked contrast vectors
//! `(x_1, …, x_p, y)`. The sums-of-squares blocks `SA`, `SB`, `SAB` and `SW`
//! (and their `xy` cross-products and the `y` quadratics) are sub-blocks of
//! these matrices, so the likelihood, score, GLS normal equations and REML
//! traces never need the raw data again.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{CovariateSet, Design, GridMeans, Level};
use crate::error::Result;
use crate::kron::Stratum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub design: Design,
    /// `(p_a, p_b, p_ab, p_w)`.
    pub dims: [usize; 4],
    pub names: Vec<String>,
    /// Grand means of `(x_1, …, x_p, y)`.
    pub means: DVector<f64>,
    /// Contrast Gram matrices for the within, cell, row and column strata,
    /// each `(p+1) × (p+1)` with the response last.
    pub gram: [DMatrix<f64>; 4],
    pub y_row_means: Vec<f64>,
    pub y_col_means: Vec<f64>,
    pub y_cell_means: Vec<f64>,
}

fn active(level: Option<Level>, stratum: Stratum) -> bool {
    // `None` is the response, which varies at every level.
    match (level, stratum) {
        (None, _) => true,
        (Some(Level::Within), _) => true,
        (Some(Level::Interaction), s) => s != Stratum::Within,
        (Some(Level::Row), s) => s == Stratum::Row,
        (Some(Level::Column), s) => s == Stratum::Column,
    }
}

fn accumulate(gram: &mut DMatrix<f64>, idx: &[usize], v: &[f64]) {
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate().skip(a) {
            gram[(ia, ib)] += v[a] * v[b];
        }
    }
}

fn symmetrize(gram: &mut DMatrix<f64>) {
    let q = gram.nrows();
    for a in 0..q {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
}

/// Compresses a balanced dataset into its sufficient statistics.
///
/// The raw observations are visited once, cell by cell; each cell's within
/// deviations are accumulated as soon as its mean is known.
pub fn compress(design: &Design, covs: &CovariateSet, y: &[f64]) -> Result<SuffStats> {
    design.check_len(y.len())?;
    covs.check(design)?;
    let Design { g, h, m, .. } = *design;
    let p = covs.p();
    let q = p + 1;

    // variable layout: covariates in regression order, then the response
    let mut levels: Vec<Option<Level>> = Vec::with_capacity(q);
    let mut columns: Vec<&[f64]> = Vec::with_capacity(q);
    for level in Level::ALL {
        for col in &covs.block(level).columns {
            levels.push(Some(level));
            columns.push(col);
        }
    }
    levels.push(None);
    columns.push(y);

    let by_stratum = |s: Stratum| -> Vec<usize> {
        (0..q).filter(|&v| active(levels[v], s)).collect()
    };
    let within_vars = by_stratum(Stratum::Within);

    let mut gram: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(q, q));
    let mut cell_values = vec![vec![0.0; g * h]; q];
    let mut dev = vec![0.0; within_vars.len()];
    let mut cell_mean = vec![0.0; within_vars.len()];

    for i in 0..g {
        for j in 0..h {
            let c = design.cell(i, j);
            let start = design.index(i, j, 0);
            for (a, &v) in within_vars.iter().enumerate() {
                let col = columns[v];
                cell_mean[a] = col[start..start + m].iter().sum::<f64>() / m as f64;
            }
            for k in 0..m {
                for (a, &v) in within_vars.iter().enumerate() {
                    dev[a] = columns[v][start + k] - cell_mean[a];
                }
                accumulate(&mut gram[Stratum::Within as usize], &within_vars, &dev);
            }
            for v in 0..q {
                cell_values[v][c] = match levels[v] {
                    Some(Level::Row) => columns[v][i],
                    Some(Level::Column) => columns[v][j],
                    Some(Level::Interaction) => columns[v][c],
                    _ => cell_mean[within_vars.iter().position(|w| *w == v).unwrap()],
                };
            }
        }
    }

    let means: Vec<GridMeans> = cell_values
        .into_iter()
        .map(|cells| GridMeans::of_cells(design, cells))
        .collect();

    let cell_vars = by_stratum(Stratum::Cell);
    let mut buf = vec![0.0; q];
    for i in 0..g {
        for j in 0..h {
            for (a, &v) in cell_vars.iter().enumerate() {
                buf[a] = means[v].cell_contrast(h, i, j);
            }
            accumulate(&mut gram[Stratum::Cell as usize], &cell_vars, &buf[..cell_vars.len()]);
        }
    }
    let row_vars = by_stratum(Stratum::Row);
    for i in 0..g {
        for (a, &v) in row_vars.iter().enumerate() {
            buf[a] = means[v].row_contrast(i);
        }
        accumulate(&mut gram[Stratum::Row as usize], &row_vars, &buf[..row_vars.len()]);
    }
    let col_vars = by_stratum(Stratum::Column);
    for j in 0..h {
        for (a, &v) in col_vars.iter().enumerate() {
            buf[a] = means[v].col_contrast(j);
        }
        accumulate(&mut gram[Stratum::Column as usize], &col_vars, &buf[..col_vars.len()]);
    }
    gram.iter_mut().for_each(symmetrize);

    let ym = &means[p];
    Ok(SuffStats {
        design: *design,
        dims: covs.dims(),
        names: covs.names(),
        means: DVector::from_iterator(q, means.iter().map(|gm| gm.grand)),
        y_row_means: ym.row.clone(),
        y_col_means: ym.col.clone(),
        y_cell_means: ym.cell.clone(),
        gram,
    })
}

impl SuffStats {
    pub fn p(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Column offset of a covariate block inside the `p` slopes.
    pub fn offset(&self, level: Level) -> usize {
        self.dims[..level.position()].iter().sum()
    }

    pub fn gram(&self, s: Stratum) -> &DMatrix<f64> {
        assert!(s != Stratum::Grand, "the grand stratum has no Gram matrix");
        &self.gram[s as usize]
    }

    /// Sub-block of a stratum Gram matrix between two covariate levels,
    /// e.g. `SA_{(a),(ab)} = block(Row, Level::Row, Level::Interaction)`.
    pub fn block(&self, s: Stratum, r: Level, c: Level) -> DMatrix<f64> {
        let (ro, co) = (self.offset(r), self.offset(c));
        self.gram(s)
            .view((ro, co), (self.dims[r.position()], self.dims[c.position()]))
            .into_owned()
    }

    /// Covariate–response cross products for one level, e.g. `SA^{xy}_{(ab)}`.
    pub fn block_xy(&self, s: Stratum, r: Level) -> DVector<f64> {
        let p = self.p();
        let ro = self.offset(r);
        self.gram(s)
            .view((ro, p), (self.dims[r.position()], 1))
            .column(0)
            .into_owned()
    }

    /// `Σ_i ȳ_{i(c)}²`-type response quadratic; the grand stratum returns `ȳ²`.
    pub fn y_quadratic(&self, s: Stratum) -> f64 {
        let p = self.p();
        match s {
            Stratum::Grand => self.means[p] * self.means[p],
            _ => self.gram(s)[(p, p)],
        }
    }

    pub fn y_mean(&self) -> f64 {
        self.means[self.p()]
    }

    /// Grand means of one covariate block (`x̄^(a)`, `x̄^(b)`, …).
    pub fn x_mean(&self, level: Level) -> DVector<f64> {
        self.means
            .rows(self.offset(level), self.dims[level.position()])
            .into_owned()
    }

    /// `SA_(a)/g`, `SB_(b)/h`, `SAB_(ab)/(gh)` or `SW_(w)/n`.
    pub fn d_hat(&self, level: Level) -> DMatrix<f64> {
        let d = &self.design;
        let (s, units) = match level {
            Level::Row => (Stratum::Row, d.g),
            Level::Column => (Stratum::Column, d.h),
            Level::Interaction => (Stratum::Cell, d.cells()),
            Level::Within => (Stratum::Within, d.n),
        };
        self.block(s, level, level) / units as f64
    }

    /// Statistics of the noiseless response `y = X ξ` (regression order,
    /// intercept first) on the same covariates.
    pub fn with_linear_response(&self, xi: &[f64]) -> Self {
        let p = self.p();
        let slopes = DVector::from_column_slice(&xi[1..]);
        let mut out = self.clone();
        for gram in out.gram.iter_mut() {
            let xx = gram.view((0, 0), (p, p)).into_owned();
            let xy = &xx * &slopes;
            let yy = slopes.dot(&xy);
            for a in 0..p {
                gram[(a, p)] = xy[a];
                gram[(p, a)] = xy[a];
            }
            gram[(p, p)] = yy;
        }
        out.means[p] = xi[0] + self.means.rows(0, p).dot(&slopes);
        // level means of y are not reconstructible from the Gram blocks
        out.y_row_means.clear();
        out.y_col_means.clear();
        out.y_cell_means.clear();
        out
    }
}
