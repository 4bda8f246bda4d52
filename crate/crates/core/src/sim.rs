//! Monte Carlo coverage studies.
//!
//! Each replicate draws a crossed covariate `x = 4 + t_i + 1.5u_j + 2v_ij +
//! 3w_ijk`, splits it into its row, column, interaction and within parts,
//! builds the response from those parts plus random effects, fits the model
//! and records whether each interval covers the true value.
//!
//! Replicate `r` draws from ChaCha8 stream `r` of the configured seed, so the
//! report does not depend on scheduling or thread count.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis};
use crate::design::{decompose_covariate, CovariateBlock, CovariateSet, Decomposition, Design};
use crate::error::{Error, Result};
use crate::fit::{FitOptions, Method};
use crate::kron::VarianceComponents;
use crate::params::{Layout, ParamVector, Slot};

/// Environment variable capping replicate parallelism.
pub const THREADS_ENV: &str = "CROSSFIT_THREADS";

/// Weight and mean of the first mixture component.
const MIX_WEIGHT: f64 = 0.3;
const MIX_SHIFT: f64 = 0.5;

/// Mean of the second mixture component, chosen so the mixture has mean zero.
pub fn mixture_mean() -> f64 {
    -MIX_WEIGHT * MIX_SHIFT / (1.0 - MIX_WEIGHT)
}

/// `0.3 N(0.5, 1) + 0.7 N(μ, s²)` with `s²` set so the total variance is
/// the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture {
    pub mean: f64,
    pub variance: f64,
}

impl Mixture {
    pub fn for_variance(target: f64) -> Result<Self> {
        let mu = mixture_mean();
        let first_second_moment = MIX_WEIGHT * (1.0 + MIX_SHIFT * MIX_SHIFT);
        let remainder = target - first_second_moment - (1.0 - MIX_WEIGHT) * mu * mu;
        if !(remainder > 0.0) {
            return Err(Error::InvalidMixture { variance: target });
        }
        Ok(Self {
            mean: mu,
            variance: remainder / (1.0 - MIX_WEIGHT),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectLaw {
    #[default]
    Normal,
    Mixture,
}

/// Law of each random-effect source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectLaws {
    pub alpha: EffectLaw,
    pub beta: EffectLaw,
    pub gamma: EffectLaw,
    pub e: EffectLaw,
}

impl EffectLaws {
    fn to_array(self) -> [EffectLaw; 4] {
        [self.alpha, self.beta, self.gamma, self.e]
    }
}

enum Sampler {
    Normal(Normal<f64>),
    Mixture(Normal<f64>, Normal<f64>),
}

impl Sampler {
    fn new(law: EffectLaw, variance: f64) -> Result<Self> {
        let normal = |mean: f64, var: f64| {
            Normal::new(mean, var.sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))
        };
        Ok(match law {
            EffectLaw::Normal => Sampler::Normal(normal(0.0, variance)?),
            EffectLaw::Mixture => {
                let mix = Mixture::for_variance(variance)?;
                Sampler::Mixture(normal(MIX_SHIFT, 1.0)?, normal(mix.mean, mix.variance)?)
            }
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Sampler::Normal(n) => n.sample(rng),
            Sampler::Mixture(first, second) => {
                if rng.random::<f64>() < MIX_WEIGHT {
                    first.sample(rng)
                } else {
                    second.sample(rng)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub g: usize,
    pub h: usize,
    pub m: usize,
    pub replicates: usize,
    pub seed: u64,
    /// True `[ξ0, ξ1, ξ2, ξ3, ξ4]`; `ξ0` multiplies the covariate mean.
    pub xi: Vec<f64>,
    pub variances: VarianceComponents,
    pub effects: EffectLaws,
    pub method: Method,
    /// Nominal interval coverage.
    pub level: f64,
    /// Failure share above which a study aborts.
    pub max_failure_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            g: 10,
            h: 10,
            m: 10,
            replicates: 1000,
            seed: 0,
            xi: vec![0.0, 5.0, 7.0, 3.0, 4.0],
            variances: VarianceComponents::new(9.0, 49.0, 36.0, 81.0),
            effects: EffectLaws::default(),
            method: Method::Reml,
            level: 0.95,
            max_failure_rate: 0.05,
        }
    }
}

/// Ready-made study settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Normal effects throughout.
    Table1Cell,
    /// Mixture laws for the column effects and the errors.
    Table2Cell,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1-cell" => Ok(Preset::Table1Cell),
            "table2-cell" => Ok(Preset::Table2Cell),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

/// The eight `(g, h, m)` cells of the coverage tables.
pub const TABLE_CELLS: [(usize, usize, usize); 8] = [
    (10, 10, 10),
    (10, 50, 10),
    (50, 10, 10),
    (50, 50, 10),
    (10, 10, 30),
    (10, 50, 30),
    (50, 10, 30),
    (50, 50, 30),
];

impl SimConfig {
    pub fn preset(preset: Preset, g: usize, h: usize, m: usize) -> Self {
        let effects = match preset {
            Preset::Table1Cell => EffectLaws::default(),
            Preset::Table2Cell => EffectLaws {
                beta: EffectLaw::Mixture,
                e: EffectLaw::Mixture,
                ..EffectLaws::default()
            },
        };
        Self {
            g,
            h,
            m,
            effects,
            ..Self::default()
        }
    }

    pub fn design(&self) -> Result<Design> {
        Design::new(self.g, self.h, self.m)
    }

    pub fn validate(&self) -> Result<()> {
        self.design()?;
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.xi.len() != 5 {
            return Err(Error::InvalidConfig(format!(
                "xi needs 5 entries (intercept and four slopes), got {}",
                self.xi.len()
            )));
        }
        let v = self.variances.to_array();
        if v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("variances must be non-negative".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level {} outside (0, 1)", self.level)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::InvalidConfig("max_failure_rate outside [0, 1]".into()));
        }
        for (law, s2) in self.effects.to_array().iter().zip(v) {
            Sampler::new(*law, s2)?;
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions::with_method(self.method)
    }
}

/// The composite covariate and its orthogonal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCovariate {
    pub raw: Vec<f64>,
    pub parts: Decomposition,
}

/// Draws `t`, `u`, `v`, `w` in that order and forms the composite.
pub fn gen_covariate(design: &Design, rng: &mut impl Rng) -> Result<SimCovariate> {
    let mut normals = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
    let t = normals(design.g);
    let u = normals(design.h);
    let v = normals(design.cells());
    let w = normals(design.n);
    let mut raw = Vec::with_capacity(design.n);
    for i in 0..design.g {
        for j in 0..design.h {
            for k in 0..design.m {
                raw.push(4.0 + t[i] + 1.5 * u[j] + 2.0 * v[design.cell(i, j)] + 3.0 * w[design.index(i, j, k)]);
            }
        }
    }
    let parts = decompose_covariate(design, &raw)?;
    Ok(SimCovariate { raw, parts })
}

/// Random effects `α` (g), `β` (h), `γ` (gh) and `e` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Effects {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn gen_effects(
    design: &Design,
    variances: &VarianceComponents,
    laws: &EffectLaws,
    rng: &mut impl Rng,
) -> Result<Effects> {
    let v = variances.to_array();
    let l = laws.to_array();
    let lens = [design.g, design.h, design.cells(), design.n];
    let mut out: [Vec<f64>; 4] = Default::default();
    for t in 0..4 {
        let sampler = Sampler::new(l[t], v[t])?;
        out[t] = (0..lens[t]).map(|_| sampler.draw(rng)).collect();
    }
    let [alpha, beta, gamma, e] = out;
    Ok(Effects { alpha, beta, gamma, e })
}

/// One generated dataset with its true parameter vector.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub design: Design,
    pub covariate: SimCovariate,
    pub covs: CovariateSet,
    pub y: Vec<f64>,
    /// Truth on the fitted parameterization: intercept `x̄ ξ̇0`.
    pub truth: ParamVector,
}

/// Names of the four model covariates built from the composite.
pub const COVARIATE_NAMES: [&str; 4] = ["x_row", "x_col", "x_inter", "x_within"];

pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

pub fn generate(config: &SimConfig, r: u64) -> Result<Replicate> {
    let design = config.design()?;
    let mut rng = replicate_rng(config.seed, r);
    let covariate = gen_covariate(&design, &mut rng)?;
    let fx = gen_effects(&design, &config.variances, &config.effects, &mut rng)?;
    let parts = &covariate.parts;
    let block = |name: &str, column: &[f64]| CovariateBlock {
        names: vec![name.to_string()],
        columns: vec![column.to_vec()],
    };
    let covs = CovariateSet {
        row: block(COVARIATE_NAMES[0], &parts.row),
        col: block(COVARIATE_NAMES[1], &parts.col),
        inter: block(COVARIATE_NAMES[2], &parts.inter),
        within: block(COVARIATE_NAMES[3], &parts.within),
    };
    let xi = &config.xi;
    let mut y = Vec::with_capacity(design.n);
    for i in 0..design.g {
        for j in 0..design.h {
            let c = design.cell(i, j);
            for k in 0..design.m {
                let t = design.index(i, j, k);
                y.push(
                    parts.mean * xi[0]
                        + parts.row[i] * xi[1]
                        + parts.col[j] * xi[2]
                        + parts.inter[c] * xi[3]
                        + parts.within[t] * xi[4]
                        + fx.alpha[i]
                        + fx.beta[j]
                        + fx.gamma[c]
                        + fx.e[t],
                );
            }
        }
    }
    let mut true_xi = xi.clone();
    true_xi[0] = parts.mean * xi[0];
    let truth = ParamVector::new(true_xi, config.variances, covs.dims())?;
    Ok(Replicate {
        design,
        covariate,
        covs,
        y,
        truth,
    })
}

impl Replicate {
    /// Writes the dataset as a CSV with columns `i, j, k, y, x` (1-based
    /// indices, `x` the composite covariate), the format `fit` ingests.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = &self.design;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Csv {
            line: 0,
            message: e.to_string(),
        };
        w.write_record(["i", "j", "k", "y", "x"]).map_err(csv_err)?;
        for i in 0..d.g {
            for j in 0..d.h {
                for k in 0..d.m {
                    let t = d.index(i, j, k);
                    w.write_record(&[
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        (k + 1).to_string(),
                        self.y[t].to_string(),
                        self.covariate.raw[t].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn analyze_replicate(config: &SimConfig, rep: &Replicate) -> Result<Analysis> {
    analyze(&rep.design, &rep.covs, &rep.y, &config.fit_options(), 1.0 - config.level)
}

/// Label of an `ω` entry in the coverage tables; variances are reported on
/// the standard-deviation scale.
pub fn table_label(slot: Slot) -> String {
    match slot {
        Slot::Intercept => "xi0".into(),
        Slot::Slope(level, q) => {
            let base = format!("xi{}", level.position() + 1);
            if q == 0 {
                base
            } else {
                format!("{base}_{}", q + 1)
            }
        }
        Slot::Variance(t) => ["sigma_alpha", "sigma_beta", "sigma_gamma", "sigma_e"][t].into(),
    }
}

/// Per-parameter outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
struct Outcome {
    covered: Vec<bool>,
    lengths: Vec<Option<f64>>,
}

/// Replicates left out of the coverage tallies. A boundary estimate is a
/// successful fit without valid intervals; it is excluded but does not count
/// towards the abort threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub boundary: usize,
    pub non_convergence: usize,
    pub other: usize,
}

impl FailureCounts {
    pub fn fit_failures(&self) -> usize {
        self.non_convergence + self.other
    }

    pub fn excluded(&self) -> usize {
        self.boundary + self.fit_failures()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub coverage: f64,
    /// Mean interval length; standard-deviation scale for variances.
    pub mean_length: Option<f64>,
    /// Median interval length, same scale. Robust to the very wide log-scale
    /// intervals produced by variance estimates near zero.
    pub median_length: Option<f64>,
    pub mc_se: f64,
    /// Replicates in which the interval was defined.
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub rows: Vec<ParamSummary>,
    pub replicates_used: usize,
    pub failures: FailureCounts,
    /// Fit failures (boundary estimates excluded) over replicates.
    pub failure_rate: f64,
    pub threads: usize,
    pub wall_time_secs: f64,
}

impl SimReport {
    pub fn row(&self, name: &str) -> Option<&ParamSummary> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// `sqrt(c(1 − c)/R)`.
pub fn coverage_se(coverage: f64, replicates: usize) -> f64 {
    (coverage * (1.0 - coverage) / replicates as f64).sqrt()
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Thread cap from the environment, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

fn run_one(config: &SimConfig, r: u64) -> std::result::Result<Outcome, Error> {
    let rep = generate(config, r)?;
    let analysis = analyze_replicate(config, &rep)?;
    let table = analysis.require_intervals()?;
    let truth = rep.truth.to_omega();
    let covered = table
        .rows
        .iter()
        .zip(&truth)
        .map(|(row, t)| row.contains(*t).unwrap_or(false))
        .collect();
    let lengths = table
        .rows
        .iter()
        .map(|row| match row.kind {
            crate::inference::ParamKind::Variance => row.sd_length(),
            _ => row.length(),
        })
        .collect();
    Ok(Outcome { covered, lengths })
}

pub fn run_study(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let threads = pool.current_num_threads();
    let outcomes: Vec<std::result::Result<Outcome, Error>> = pool.install(|| {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|r| run_one(config, r))
            .collect()
    });

    let mut failures = FailureCounts::default();
    let mut used = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(out) => used.push(out),
            Err(Error::BoundaryInference(_)) => failures.boundary += 1,
            Err(Error::NoConvergence { .. }) => failures.non_convergence += 1,
            Err(Error::InvalidMixture { variance }) => return Err(Error::InvalidMixture { variance }),
            Err(_) => failures.other += 1,
        }
    }
    let failure_rate = failures.fit_failures() as f64 / config.replicates as f64;
    if failure_rate > config.max_failure_rate || used.is_empty() {
        return Err(Error::ExcessiveFailures {
            failed: failures.excluded(),
            total: config.replicates,
            rate: failure_rate,
            limit: config.max_failure_rate,
        });
    }

    let layout = Layout::new([1, 1, 1, 1]);
    let truth = ParamVector::new(config.xi.clone(), config.variances, layout.dims)?.to_omega();
    let rows = layout
        .slots
        .iter()
        .enumerate()
        .map(|(p, slot)| {
            let hits = used.iter().filter(|o| o.covered[p]).count();
            let coverage = hits as f64 / used.len() as f64;
            let mut lengths: Vec<f64> = used.iter().filter_map(|o| o.lengths[p]).collect();
            lengths.sort_by(f64::total_cmp);
            ParamSummary {
                name: table_label(*slot),
                truth: match slot {
                    Slot::Variance(_) => truth[p].sqrt(),
                    _ => truth[p],
                },
                coverage,
                mean_length: (!lengths.is_empty()).then(|| lengths.iter().sum::<f64>() / lengths.len() as f64),
                median_length: median(&lengths),
                mc_se: coverage_se(coverage, used.len()),
                defined: lengths.len(),
            }
        })
        .collect();
    Ok(SimReport {
        config: config.clone(),
        rows,
        replicates_used: used.len(),
        failures,
        failure_rate,
        threads,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs one study per design cell, all other settings taken from `base`.
pub fn run_grid(base: &SimConfig, cells: &[(usize, usize, usize)]) -> Result<Vec<SimReport>> {
    cells
        .iter()
        .map(|&(g, h, m)| {
            run_study(&SimConfig {
                g,
                h,
                m,
                ..base.clone()
            })
        })
        .collect()
}

/// Flat coverage table with columns `Estimate, g, h, m, Cvge, Len`.
pub fn write_csv<W: Write>(reports: &[SimReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(["Estimate", "g", "h", "m", "Cvge", "Len"]).map_err(csv_err)?;
    for rep in reports {
        let c = &rep.config;
        for row in &rep.rows {
            w.write_record([
                row.name.clone(),
                c.g.to_string(),
                c.h.to_string(),
                c.m.to_string(),
                format!("{:.4}", row.coverage),
                row.mean_length.map_or_else(|| "NA".to_string(), |l| format!("{l:.4}")),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_has_zero_mean_and_target_variance() {
        assert!((MIX_WEIGHT * MIX_SHIFT + (1.0 - MIX_WEIGHT) * mixture_mean()).abs() < 1e-15);
        let mix = Mixture::for_variance(81.0).unwrap();
        let mu = -0.3 * 0.5 / 0.7;
        assert!((mix.variance - (81.0 - 0.375 - 0.7 * mu * mu) / 0.7).abs() < 1e-12);
        let total = 0.3 * (1.0 + 0.25) + 0.7 * (mix.variance + mu * mu);
        assert!((total - 81.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_rejects_small_variance() {
        assert!(matches!(Mixture::for_variance(0.3), Err(Error::InvalidMixture { .. })));
    }

    #[test]
    fn covariate_parts_are_orthogonal() {
        let d = Design::new(4, 3, 5).unwrap();
        let cov = gen_covariate(&d, &mut replicate_rng(11, 0)).unwrap();
        let parts = cov.parts.grid_parts(&d);
        for a in 0..4 {
            for b in a + 1..4 {
                let dot: f64 = parts[a].iter().zip(&parts[b]).map(|(x, y)| x * y).sum();
                assert!(dot.abs() < 1e-10, "{a} {b} {dot}");
            }
        }
        let again = gen_covariate(&d, &mut replicate_rng(11, 0)).unwrap();
        assert_eq!(cov.raw, again.raw);
    }

    #[test]
    fn single_replicate_is_degenerate() {
        let cfg = SimConfig {
            replicates: 1,
            seed: 5,
            ..SimConfig::default()
        };
        let rep = run_study(&cfg).unwrap();
        for row in &rep.rows {
            assert!(row.coverage == 0.0 || row.coverage == 1.0);
            assert_eq!(row.mc_se, 0.0);
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = SimConfig::preset(Preset::Table2Cell, 10, 50, 30);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), cfg);
        let partial: SimConfig = serde_json::from_str(r#"{"g": 12, "effects": {"e": "mixture"}}"#).unwrap();
        assert_eq!(partial.g, 12);
        assert_eq!(partial.effects.e, EffectLaw::Mixture);
        assert_eq!(partial.replicates, 1000);
        assert!(serde_json::from_str::<SimConfig>(r#"{"reps": 3}"#).is_err());
    }
}
