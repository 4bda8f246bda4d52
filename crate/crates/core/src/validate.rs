//! Self-certification: every structured computation is compared against the
//! dense oracle on seeded random tiny instances.
//!
//! The eigenvalue map is injectable so a deliberately wrong spectrum can be
//! shown to fail the suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::{CovariateBlock, CovariateSet, Design};
use crate::error::Result;
use crate::kron::{self, lambdas_from, Lambdas, Stratum, VarianceComponents};
use crate::ml::{contrast_sums, loglik_from, variance_score_from, xi_score_from, NormalEquations, ScoreVector};
use crate::oracle::{self, DenseModel};
use crate::params::ParamVector;
use crate::reml::traces_with;
use crate::stats::compress;

/// Maps `θ` and a design to the spectrum of `V`.
pub type LambdaFn = dyn Fn(&VarianceComponents, &Design) -> Result<Lambdas> + Sync;

/// Designs with `g, h, m ∈ {2, 3}`.
pub const TINY_DESIGNS: [(usize, usize, usize); 8] = [
    (2, 2, 2),
    (2, 2, 3),
    (2, 3, 2),
    (2, 3, 3),
    (3, 2, 2),
    (3, 2, 3),
    (3, 3, 2),
    (3, 3, 3),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub seed: u64,
    /// Random draws per design.
    pub instances: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { seed: 0, instances: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub evaluations: usize,
    /// Evaluations where the structured path returned an error.
    pub failures: usize,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            max_error: 0.0,
            tolerance,
            evaluations: 0,
            failures: 0,
        }
    }

    fn record(&mut self, error: Result<f64>) {
        self.evaluations += 1;
        match error {
            Ok(e) if e.is_finite() => self.max_error = self.max_error.max(e),
            _ => {
                self.failures += 1;
                self.max_error = f64::INFINITY;
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: ValidationConfig,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<18} max_error={:.3e} tolerance={:.0e} evaluations={}{}\n",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance,
                c.evaluations,
                if c.failures > 0 { format!(" errors={}", c.failures) } else { String::new() },
            ));
        }
        out
    }
}

/// A random tiny problem with one covariate at every level.
///
/// Covariates are a centred trend in the unit index plus a small jitter, so
/// the normal equations stay well conditioned; with `g = 2` two free row
/// values can otherwise nearly coincide with the intercept. The variance
/// components, slopes and response are unrestricted draws.
#[derive(Debug, Clone)]
pub struct Instance {
    pub design: Design,
    pub covs: CovariateSet,
    pub y: Vec<f64>,
    pub params: ParamVector,
}

const JITTER: f64 = 0.1;

fn centred(index: usize, count: usize) -> f64 {
    index as f64 - 0.5 * (count as f64 - 1.0)
}

impl Instance {
    pub fn random(design: Design, rng: &mut impl Rng) -> Self {
        let Design { g, h, m, n } = design;
        let mut jittered = |trend: Vec<f64>| -> Vec<f64> {
            trend.into_iter().map(|t| t + JITTER * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let row = jittered((0..g).map(|i| centred(i, g)).collect());
        let col = jittered((0..h).map(|j| centred(j, h)).collect());
        // the product of centred indices has a non-zero interaction contrast
        let inter = jittered(
            (0..g)
                .flat_map(|i| (0..h).map(move |j| 4.0 * centred(i, g) * centred(j, h)))
                .collect(),
        );
        let within = jittered((0..n).map(|t| centred(t % m, m)).collect());
        let block = |name: &str, column: Vec<f64>| CovariateBlock {
            names: vec![name.to_string()],
            columns: vec![column],
        };
        let covs = CovariateSet {
            row: block("x_row", row),
            col: block("x_col", col),
            inter: block("x_inter", inter),
            within: block("x_within", within),
        };
        let mut normals = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
        let y = normals(n);
        let xi = normals(5);
        let theta = VarianceComponents::from_array(std::array::from_fn(|_| rng.random_range(0.2..2.0)));
        Self {
            params: ParamVector {
                xi,
                theta,
                dims: covs.dims(),
            },
            design,
            covs,
            y,
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scaled_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Spectrum with multiplicities, ascending.
fn expanded_spectrum(lambdas: &Lambdas, d: &Design) -> Vec<f64> {
    let mut out: Vec<f64> = Stratum::ALL
        .iter()
        .flat_map(|s| std::iter::repeat_n(lambdas.get(*s), s.multiplicity(d)))
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

pub fn run(config: &ValidationConfig) -> Result<ValidationReport> {
    run_with(config, &lambdas_from)
}

pub fn run_with(config: &ValidationConfig, lambda: &LambdaFn) -> Result<ValidationReport> {
    const TOL: f64 = 1e-8;
    let mut checks = [
        CheckResult::new("vinv_apply", TOL),
        CheckResult::new("logdet_v", TOL),
        CheckResult::new("quad_form", TOL),
        CheckResult::new("gls_solve", TOL),
        CheckResult::new("adjustment_traces", TOL),
        CheckResult::new("loglik", TOL),
        CheckResult::new("score", TOL),
        CheckResult::new("spectrum", TOL),
        CheckResult::new("suffstats", 1e-10),
    ];
    for (di, &(g, h, m)) in TINY_DESIGNS.iter().enumerate() {
        let design = Design::new(g, h, m)?;
        for r in 0..config.instances {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((di * config.instances + r) as u64);
            let inst = Instance::random(design, &mut rng);
            let theta = inst.params.theta;
            let dense = DenseModel::new(&design, &inst.covs, &inst.y, &theta)?;
            let ss = compress(&design, &inst.covs, &inst.y)?;
            let lambdas = lambda(&theta, &design);

            checks[0].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                let a = kron::vinv_apply(l, &design, &inst.y)?;
                let b = oracle::dense_vinv_apply(&theta, &design, &inst.y)?;
                Ok(max_abs_diff(&a, &b))
            }));
            checks[1].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                Ok((kron::logdet_v(l, &design)? - dense.logdet_v()).abs())
            }));
            checks[2].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                let (a, _) = kron::quad_form(l, &design, &inst.y)?;
                Ok((a - oracle::dense_quad_form(&theta, &design, &inst.y)?).abs())
            }));
            let normal = lambdas
                .as_ref()
                .map_err(clone_err)
                .and_then(|l| NormalEquations::assemble(l, &ss));
            checks[3].record(normal.as_ref().map_err(clone_err).and_then(|ne| {
                Ok(max_abs_diff(&ne.solve(), &oracle::dense_gls(&dense)?))
            }));
            checks[4].record(normal.as_ref().map_err(clone_err).and_then(|ne| {
                let l = lambdas.as_ref().map_err(clone_err)?;
                let a = traces_with(l, ne, &ss).to_array();
                Ok(max_abs_diff(&a, &oracle::dense_traces(&dense)?))
            }));
            checks[5].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                let a = loglik_from(l, &contrast_sums(&inst.params, &ss), &design)?;
                let b = oracle::dense_loglik(&dense, &inst.params.xi)?;
                Ok((a - b).abs() / b.abs().max(1.0))
            }));
            checks[6].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                let theta_part = variance_score_from(l, &contrast_sums(&inst.params, &ss), &design);
                let xi_part = xi_score_from(&inst.params, &ss, l);
                let a = ScoreVector::from_parts(&xi_part, theta_part, ss.dims);
                let b = oracle::dense_score(&dense, &inst.params.xi, ss.dims)?;
                Ok(scaled_diff(&a.values, &b.values))
            }));
            checks[7].record(lambdas.as_ref().map_err(clone_err).and_then(|l| {
                let a = expanded_spectrum(l, &design);
                Ok(max_abs_diff(&a, &oracle::dense_spectrum(&theta, &design)?))
            }));
            checks[8].record(
                oracle::naive_suffstats(&design, &inst.covs, &inst.y)
                    .map(|naive| oracle::suffstats_distance(&ss, &naive)),
            );
        }
    }
    Ok(ValidationReport {
        config: *config,
        checks: checks.to_vec(),
    })
}

fn clone_err(e: &crate::Error) -> crate::Error {
    crate::Error::InvalidConfig(e.to_string())
}
