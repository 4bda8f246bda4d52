//! The parameter vector `ω = [ξ0, ξ1ᵀ, σ_α², ξ2ᵀ, σ_β², ξ3ᵀ, σ_γ², ξ4ᵀ, σ_e²]ᵀ`
//! and its rate normalizer `K`.

use serde::{Deserialize, Serialize};

use crate::design::{Design, Level};
use crate::error::{Error, Result};
use crate::kron::VarianceComponents;

/// Which averaging rate governs a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rate {
    G,
    H,
    Gh,
    N,
}

impl Rate {
    pub fn value(self, d: &Design) -> f64 {
        (match self {
            Rate::G => d.g,
            Rate::H => d.h,
            Rate::Gh => d.cells(),
            Rate::N => d.n,
        }) as f64
    }

    pub fn of_level(level: Level) -> Self {
        match level {
            Level::Row => Rate::G,
            Level::Column => Rate::H,
            Level::Interaction => Rate::Gh,
            Level::Within => Rate::N,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Rate::G => "g",
            Rate::H => "h",
            Rate::Gh => "gh",
            Rate::N => "n",
        }
    }
}

/// What one entry of `ω` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Intercept,
    /// The `q`-th slope of a covariate level.
    Slope(Level, usize),
    /// Variance component `0..4` in `(α, β, γ, e)` order.
    Variance(usize),
}

impl Slot {
    pub fn rate(self) -> Rate {
        match self {
            Slot::Intercept => Rate::G,
            Slot::Slope(level, _) => Rate::of_level(level),
            Slot::Variance(t) => [Rate::G, Rate::H, Rate::Gh, Rate::N][t],
        }
    }
}

pub const VARIANCE_NAMES: [&str; 4] = ["sigma_alpha2", "sigma_beta2", "sigma_gamma2", "sigma_e2"];

/// Layout of `ω` for given covariate dimensions `(p_a, p_b, p_ab, p_w)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub dims: [usize; 4],
    pub slots: Vec<Slot>,
}

impl Layout {
    pub fn new(dims: [usize; 4]) -> Self {
        let mut slots = vec![Slot::Intercept];
        for (t, level) in Level::ALL.iter().enumerate() {
            slots.extend((0..dims[t]).map(|q| Slot::Slope(*level, q)));
            slots.push(Slot::Variance(t));
        }
        Self { dims, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Position in `ω` of regression coefficient `c` (intercept = 0, then
    /// slopes in regression order).
    pub fn xi_position(&self, c: usize) -> usize {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| !matches!(s, Slot::Variance(_)))
            .nth(c)
            .map(|(w, _)| w)
            .expect("coefficient index in range")
    }

    pub fn variance_position(&self, t: usize) -> usize {
        self.slots
            .iter()
            .position(|s| *s == Slot::Variance(t))
            .expect("variance index in range")
    }

    /// Diagonal of `K`.
    pub fn k_diag(&self, d: &Design) -> Vec<f64> {
        self.slots.iter().map(|s| s.rate().value(d)).collect()
    }

    /// Human-readable parameter names given slope names in regression order.
    pub fn names(&self, slope_names: &[String]) -> Vec<String> {
        let mut slope = slope_names.iter();
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Intercept => "xi0".to_string(),
                Slot::Slope(..) => slope.next().cloned().unwrap_or_default(),
                Slot::Variance(t) => VARIANCE_NAMES[*t].to_string(),
            })
            .collect()
    }
}

/// Regression coefficients and variance components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// `[ξ0, ξ1ᵀ, ξ2ᵀ, ξ3ᵀ, ξ4ᵀ]` in regression order.
    pub xi: Vec<f64>,
    pub theta: VarianceComponents,
    pub dims: [usize; 4],
}

impl ParamVector {
    pub fn new(xi: Vec<f64>, theta: VarianceComponents, dims: [usize; 4]) -> Result<Self> {
        let expected = 1 + dims.iter().sum::<usize>();
        if xi.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: xi.len(),
            });
        }
        Ok(Self { xi, theta, dims })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    pub fn xi0(&self) -> f64 {
        self.xi[0]
    }

    /// Slopes of one covariate level (`ξ1`, `ξ2`, `ξ3` or `ξ4`).
    pub fn slopes(&self, level: Level) -> &[f64] {
        let start = 1 + self.dims[..level.position()].iter().sum::<usize>();
        &self.xi[start..start + self.dims[level.position()]]
    }

    /// `ω` in the interleaved order.
    pub fn to_omega(&self) -> Vec<f64> {
        let theta = self.theta.to_array();
        let layout = self.layout();
        let mut c = 0;
        layout
            .slots
            .iter()
            .map(|s| match s {
                Slot::Variance(t) => theta[*t],
                _ => {
                    c += 1;
                    self.xi[c - 1]
                }
            })
            .collect()
    }

    pub fn from_omega(omega: &[f64], dims: [usize; 4]) -> Result<Self> {
        let layout = Layout::new(dims);
        if omega.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: omega.len(),
            });
        }
        let mut xi = Vec::with_capacity(layout.len() - 4);
        let mut theta = [0.0; 4];
        for (s, v) in layout.slots.iter().zip(omega) {
            match s {
                Slot::Variance(t) => theta[*t] = *v,
                _ => xi.push(*v),
            }
        }
        Ok(Self {
            xi,
            theta: VarianceComponents::from_array(theta),
            dims,
        })
    }
}
