//! Balanced (g, h, m) designs, covariate levels and the orthogonal level
//! decomposition of a grid covariate.
//!
//! Grid data is stored densely with `k` fastest, then `j`, then `i`, so the
//! flat offset of the zero-based triple `(i, j, k)` is `(i * h + j) * m + k`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub g: usize,
    pub h: usize,
    pub m: usize,
    pub n: usize,
}

impl Design {
    pub fn new(g: usize, h: usize, m: usize) -> Result<Self> {
        if g < 2 || h < 2 || m < 1 {
            return Err(Error::DesignTooSmall { g, h, m });
        }
        Ok(Self { g, h, m, n: g * h * m })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.h + j) * self.m + k
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i * self.h + j
    }

    /// Row-to-column ratio used by the asymptotic covariance.
    pub fn eta(&self) -> f64 {
        self.g as f64 / self.h as f64
    }

    pub fn cells(&self) -> usize {
        self.g * self.h
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

/// Cell, row, column and grand means of a grid variable.
#[derive(Debug, Clone)]
pub struct GridMeans {
    pub cell: Vec<f64>,
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub grand: f64,
}

impl GridMeans {
    pub fn of(design: &Design, x: &[f64]) -> Self {
        let Design { g, h, m, n } = *design;
        debug_assert_eq!(x.len(), n);
        let mut cell = vec![0.0; g * h];
        for (c, chunk) in x.chunks_exact(m).enumerate() {
            cell[c] = chunk.iter().sum::<f64>() / m as f64;
        }
        Self::from_cell_means(g, h, cell)
    }

    /// Means of an interaction-level variable (one value per cell).
    pub fn of_cells(design: &Design, cell: Vec<f64>) -> Self {
        Self::from_cell_means(design.g, design.h, cell)
    }

    fn from_cell_means(g: usize, h: usize, cell: Vec<f64>) -> Self {
        let mut row = vec![0.0; g];
        let mut col = vec![0.0; h];
        for i in 0..g {
            for j in 0..h {
                let v = cell[i * h + j];
                row[i] += v;
                col[j] += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= h as f64);
        col.iter_mut().for_each(|v| *v /= g as f64);
        let grand = row.iter().sum::<f64>() / g as f64;
        Self {
            cell,
            row,
            col,
            grand,
        }
    }

    pub fn row_contrast(&self, i: usize) -> f64 {
        self.row[i] - self.grand
    }

    pub fn col_contrast(&self, j: usize) -> f64 {
        self.col[j] - self.grand
    }

    /// Double-centred cell contrast.
    pub fn cell_contrast(&self, h: usize, i: usize, j: usize) -> f64 {
        self.cell[i * h + j] - self.row[i] - self.col[j] + self.grand
    }
}

/// Statistical level of a covariate: the finest index it may vary with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Row,
    Column,
    Interaction,
    Within,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Row, Level::Column, Level::Interaction, Level::Within];

    pub fn units(&self, design: &Design) -> usize {
        match self {
            Level::Row => design.g,
            Level::Column => design.h,
            Level::Interaction => design.cells(),
            Level::Within => design.n,
        }
    }

    /// Unit index of grid position `(i, j, k)` at this level.
    #[inline]
    pub fn unit(&self, design: &Design, i: usize, j: usize, k: usize) -> usize {
        match self {
            Level::Row => i,
            Level::Column => j,
            Level::Interaction => design.cell(i, j),
            Level::Within => design.index(i, j, k),
        }
    }

    pub fn position(&self) -> usize {
        match self {
            Level::Row => 0,
            Level::Column => 1,
            Level::Interaction => 2,
            Level::Within => 3,
        }
    }
}

/// One indexed observation as read from a table. Indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub y: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub covariate_names: Vec<String>,
    pub rows: Vec<RawRow>,
}

impl RawTable {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self {
            covariate_names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, k: usize, y: f64, covariates: Vec<f64>) {
        self.rows.push(RawRow {
            i,
            j,
            k,
            y,
            covariates,
        });
    }

    /// Rearranges the rows into dense grid order. The design must come from
    /// [`validate_design`] on this table.
    pub fn to_grid(&self, design: &Design) -> Result<GridData> {
        design.check_len(self.rows.len())?;
        let p = self.covariate_names.len();
        let mut y = vec![0.0; design.n];
        let mut columns = vec![vec![0.0; design.n]; p];
        for row in &self.rows {
            if row.covariates.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.covariates.len(),
                });
            }
            let t = design.index(row.i - 1, row.j - 1, row.k - 1);
            y[t] = row.y;
            for (c, v) in row.covariates.iter().enumerate() {
                columns[c][t] = *v;
            }
        }
        Ok(GridData {
            names: self.covariate_names.clone(),
            y,
            columns,
        })
    }
}

/// Response and raw covariate columns in grid order.
#[derive(Debug, Clone)]
pub struct GridData {
    pub names: Vec<String>,
    pub y: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
}

impl GridData {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|c| self.columns[c].as_slice())
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }
}

/// Checks that every `(i, j, k)` of the implied grid occurs exactly once.
pub fn validate_design(table: &RawTable) -> Result<Design> {
    if table.rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let (mut g, mut h, mut m) = (0, 0, 0);
    for (line, row) in table.rows.iter().enumerate() {
        if row.i == 0 || row.j == 0 || row.k == 0 {
            return Err(Error::InvalidIndex {
                line: line + 1,
                detail: format!("({}, {}, {})", row.i, row.j, row.k),
            });
        }
        g = g.max(row.i);
        h = h.max(row.j);
        m = m.max(row.k);
    }
    let design = Design::new(g, h, m)?;
    let mut seen = vec![false; design.n];
    for row in &table.rows {
        let t = design.index(row.i - 1, row.j - 1, row.k - 1);
        if std::mem::replace(&mut seen[t], true) {
            return Err(Error::DuplicateCell {
                i: row.i,
                j: row.j,
                k: row.k,
            });
        }
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        let k = t % m;
        let j = (t / m) % h;
        let i = t / (m * h);
        return Err(Error::MissingCell {
            i: i + 1,
            j: j + 1,
            k: k + 1,
        });
    }
    Ok(design)
}

/// Covariates of one level, one column per covariate, each column holding one
/// value per unit of the level (g, h, gh or n values).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateBlock {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CovariateBlock {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, column: Vec<f64>) {
        self.names.push(name.into());
        self.columns.push(column);
    }
}

/// Row, column, interaction and within-cell covariates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSet {
    pub row: CovariateBlock,
    pub col: CovariateBlock,
    pub inter: CovariateBlock,
    pub within: CovariateBlock,
}

impl CovariateSet {
    pub fn block(&self, level: Level) -> &CovariateBlock {
        match level {
            Level::Row => &self.row,
            Level::Column => &self.col,
            Level::Interaction => &self.inter,
            Level::Within => &self.within,
        }
    }

    pub fn block_mut(&mut self, level: Level) -> &mut CovariateBlock {
        match level {
            Level::Row => &mut self.row,
            Level::Column => &mut self.col,
            Level::Interaction => &mut self.inter,
            Level::Within => &mut self.within,
        }
    }

    /// `(p_a, p_b, p_ab, p_w)`.
    pub fn dims(&self) -> [usize; 4] {
        [
            self.row.len(),
            self.col.len(),
            self.inter.len(),
            self.within.len(),
        ]
    }

    pub fn p(&self) -> usize {
        self.dims().iter().sum()
    }

    /// Slope names in regression order (row, column, interaction, within).
    pub fn names(&self) -> Vec<String> {
        Level::ALL
            .iter()
            .flat_map(|l| self.block(*l).names.iter().cloned())
            .collect()
    }

    pub fn check(&self, design: &Design) -> Result<()> {
        for level in Level::ALL {
            let units = level.units(design);
            for col in &self.block(level).columns {
                if col.len() != units {
                    return Err(Error::DimensionMismatch {
                        expected: units,
                        got: col.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Slope covariates expanded onto the grid, in regression order.
    pub fn grid_columns(&self, design: &Design) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.p());
        for level in Level::ALL {
            for col in &self.block(level).columns {
                out.push(expand_to_grid(design, level, col));
            }
        }
        out
    }

    /// Fitted values `X xi` on the grid for regression coefficients in
    /// regression order (intercept first).
    pub fn linear_predictor(&self, design: &Design, xi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xi.len(), self.p() + 1);
        let mut fitted = vec![xi[0]; design.n];
        let mut c = 1;
        for level in Level::ALL {
            for col in &self.block(level).columns {
                let b = xi[c];
                for i in 0..design.g {
                    for j in 0..design.h {
                        for k in 0..design.m {
                            fitted[design.index(i, j, k)] += b * col[level.unit(design, i, j, k)];
                        }
                    }
                }
                c += 1;
            }
        }
        fitted
    }
}

pub fn expand_to_grid(design: &Design, level: Level, values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(design.n);
    for i in 0..design.g {
        for j in 0..design.h {
            for k in 0..design.m {
                out.push(values[level.unit(design, i, j, k)]);
            }
        }
    }
    out
}

/// How a raw covariate column enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Declared at a level; constancy below that level is verified.
    Level(Level),
    /// Split into its row, column, interaction and within parts.
    Decompose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub name: String,
    pub role: Role,
}

impl Declaration {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// Absolute tolerance for declared constancy, applied to covariates rescaled
/// by their standard deviation.
pub const CONSTANCY_TOLERANCE: f64 = 1e-9;

/// Builds a [`CovariateSet`] from declared covariate roles, verifying that
/// each covariate is constant below its declared level.
pub fn classify_covariates(
    data: &GridData,
    design: &Design,
    declarations: &[Declaration],
) -> Result<CovariateSet> {
    let mut seen = HashMap::new();
    let mut set = CovariateSet::default();
    for decl in declarations {
        if seen.insert(decl.name.clone(), ()).is_some() {
            return Err(Error::InvalidConfig(format!(
                "covariate `{}` declared twice",
                decl.name
            )));
        }
        let x = data.column(&decl.name)?;
        match decl.role {
            Role::Level(level) => {
                let values = collapse_to_level(design, level, x, &decl.name)?;
                set.block_mut(level).push(decl.name.clone(), values);
            }
            Role::Decompose => {
                let parts = decompose_covariate(design, x)?;
                set.row.push(format!("{}_row", decl.name), parts.row);
                set.col.push(format!("{}_col", decl.name), parts.col);
                set.inter.push(format!("{}_inter", decl.name), parts.inter);
                set.within.push(format!("{}_within", decl.name), parts.within);
            }
        }
    }
    Ok(set)
}

fn collapse_to_level(design: &Design, level: Level, x: &[f64], name: &str) -> Result<Vec<f64>> {
    design.check_len(x.len())?;
    if level == Level::Within {
        return Ok(x.to_vec());
    }
    let units = level.units(design);
    let mut sum = vec![0.0; units];
    let mut count = vec![0usize; units];
    for i in 0..design.g {
        for j in 0..design.h {
            for k in 0..design.m {
                let u = level.unit(design, i, j, k);
                sum[u] += x[design.index(i, j, k)];
                count[u] += 1;
            }
        }
    }
    let means: Vec<f64> = sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect();

    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let mut worst: f64 = 0.0;
    for i in 0..design.g {
        for j in 0..design.h {
            for k in 0..design.m {
                let u = level.unit(design, i, j, k);
                worst = worst.max((x[design.index(i, j, k)] - means[u]).abs() / scale);
            }
        }
    }
    if worst > CONSTANCY_TOLERANCE {
        return Err(Error::LevelViolation {
            name: name.to_string(),
            deviation: worst * scale,
        });
    }
    Ok(means)
}

/// Orthogonal split `x = mean + row + col + inter + within` of a grid covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub mean: f64,
    /// `x̄_i. − x̄`, one value per row.
    pub row: Vec<f64>,
    /// `x̄_.j − x̄`, one value per column.
    pub col: Vec<f64>,
    /// `x̄_ij − x̄_i. − x̄_.j + x̄`, one value per cell.
    pub inter: Vec<f64>,
    /// `x_ijk − x̄_ij`, one value per observation.
    pub within: Vec<f64>,
}

impl Decomposition {
    /// The four non-constant parts expanded onto the grid.
    pub fn grid_parts(&self, design: &Design) -> [Vec<f64>; 4] {
        [
            expand_to_grid(design, Level::Row, &self.row),
            expand_to_grid(design, Level::Column, &self.col),
            expand_to_grid(design, Level::Interaction, &self.inter),
            self.within.clone(),
        ]
    }

    pub fn reconstruct(&self, design: &Design) -> Vec<f64> {
        let parts = self.grid_parts(design);
        (0..design.n)
            .map(|t| self.mean + parts.iter().map(|p| p[t]).sum::<f64>())
            .collect()
    }
}

pub fn decompose_covariate(design: &Design, x: &[f64]) -> Result<Decomposition> {
    design.check_len(x.len())?;
    let means = GridMeans::of(design, x);
    let Design { g, h, m, .. } = *design;
    let row = (0..g).map(|i| means.row_contrast(i)).collect();
    let col = (0..h).map(|j| means.col_contrast(j)).collect();
    let mut inter = Vec::with_capacity(g * h);
    for i in 0..g {
        for j in 0..h {
            inter.push(means.cell_contrast(h, i, j));
        }
    }
    let within = x
        .iter()
        .enumerate()
        .map(|(t, v)| v - means.cell[t / m])
        .collect();
    Ok(Decomposition {
        mean: means.grand,
        row,
        col,
        inter,
        within,
    })
}
