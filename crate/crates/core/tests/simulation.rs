//! Data generation and the coverage study driver.

use crossfit::design::{decompose_covariate, Design};
use crossfit::error::Error;
use crossfit::kron::VarianceComponents;
use crossfit::sim::{
    coverage_se, gen_covariate, gen_effects, generate, mixture_mean, replicate_rng, run_study, EffectLaw,
    EffectLaws, Mixture, SimConfig,
};

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn mixture_is_centred_with_the_declared_variance() {
    assert_eq!(0.3 * 0.5 + 0.7 * mixture_mean(), 0.0);
    let mu = mixture_mean();
    assert!((mu + 0.2142857142857143).abs() < 1e-15);
    let mix = Mixture::for_variance(81.0).unwrap();
    assert!((mix.variance - (81.0 - 0.375 - 0.7 * mu * mu) / 0.7).abs() < 1e-12);
    assert!(matches!(Mixture::for_variance(0.3), Err(Error::InvalidMixture { .. })));
}

#[test]
fn large_draws_match_the_declared_variances() {
    // 10⁶ within-unit draws
    let d = Design::new(2, 2, 250_000).unwrap();
    let v = VarianceComponents::new(9.0, 1.0, 1.0, 81.0);
    let laws = EffectLaws {
        e: EffectLaw::Mixture,
        ..EffectLaws::default()
    };
    let mut rng = replicate_rng(17, 0);
    let mixed = gen_effects(&d, &v, &laws, &mut rng).unwrap().e;
    let var = sample_variance(&mixed);
    assert!((var / 81.0 - 1.0).abs() < 0.01, "mixture variance {var}");

    // 10⁶ row draws
    let d = Design::new(1_000_000, 2, 1).unwrap();
    let normal = gen_effects(&d, &v, &EffectLaws::default(), &mut rng).unwrap().alpha;
    let var = sample_variance(&normal);
    assert!((var / 9.0 - 1.0).abs() < 0.01, "normal variance {var}");
}

#[test]
fn row_part_variance_approaches_one() {
    // row means carry t_i plus averaged cell and unit noise of variance
    // 4/h + 9/(hm), so h must also be large for the limit to show
    let d = Design::new(2000, 200, 5).unwrap();
    let c = gen_covariate(&d, &mut replicate_rng(3, 0)).unwrap();
    let var = sample_variance(&c.parts.row);
    assert!((var - 1.0).abs() < 0.1, "row part variance {var}");
}

#[test]
fn covariates_are_reproducible_bit_for_bit() {
    let d = Design::new(7, 5, 3).unwrap();
    let a = gen_covariate(&d, &mut replicate_rng(99, 4)).unwrap();
    let b = gen_covariate(&d, &mut replicate_rng(99, 4)).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.raw), bits(&b.raw));
    assert_eq!(a.parts, b.parts);
    let other = gen_covariate(&d, &mut replicate_rng(99, 5)).unwrap();
    assert_ne!(bits(&a.raw), bits(&other.raw));
}

#[test]
fn decomposition_matches_direct_averaging() {
    let d = Design::new(4, 6, 3).unwrap();
    let c = gen_covariate(&d, &mut replicate_rng(5, 1)).unwrap();
    let x = &c.raw;
    let (g, h, m) = (d.g, d.h, d.m);
    let at = |i: usize, j: usize, k: usize| x[(i * h + j) * m + k];
    let grand = x.iter().sum::<f64>() / x.len() as f64;
    let cell = |i: usize, j: usize| (0..m).map(|k| at(i, j, k)).sum::<f64>() / m as f64;
    let row = |i: usize| (0..h).map(|j| cell(i, j)).sum::<f64>() / h as f64;
    let col = |j: usize| (0..g).map(|i| cell(i, j)).sum::<f64>() / g as f64;
    let p = &c.parts;
    assert!((p.mean - grand).abs() < 1e-12);
    for i in 0..g {
        assert!((p.row[i] - (row(i) - grand)).abs() < 1e-12);
        for j in 0..h {
            let inter = cell(i, j) - row(i) - col(j) + grand;
            assert!((p.inter[i * h + j] - inter).abs() < 1e-12);
            for k in 0..m {
                assert!((p.within[(i * h + j) * m + k] - (at(i, j, k) - cell(i, j))).abs() < 1e-12);
            }
        }
    }
    for j in 0..h {
        assert!((p.col[j] - (col(j) - grand)).abs() < 1e-12);
    }
    assert_eq!(decompose_covariate(&d, x).unwrap(), *p);
}

#[test]
fn parts_are_orthogonal_on_the_grid() {
    let d = Design::new(5, 4, 6).unwrap();
    let c = gen_covariate(&d, &mut replicate_rng(8, 0)).unwrap();
    let parts = c.parts.grid_parts(&d);
    for a in 0..4 {
        for b in a + 1..4 {
            let dot: f64 = parts[a].iter().zip(&parts[b]).map(|(u, v)| u * v).sum();
            assert!(dot.abs() < 1e-10, "parts {a} and {b}: {dot}");
        }
    }
    let back = c.parts.reconstruct(&d);
    assert!(back.iter().zip(&c.raw).all(|(u, v)| (u - v).abs() < 1e-12));
}

#[test]
fn responses_follow_the_generating_equation() {
    let config = SimConfig {
        g: 4,
        h: 3,
        m: 2,
        seed: 9,
        variances: VarianceComponents::new(0.0, 0.0, 0.0, 0.0),
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    // zero variances leave only the linear predictor
    let xi = &config.xi;
    let p = &rep.covariate.parts;
    let fitted = rep.covs.linear_predictor(&rep.design, &rep.truth.xi);
    for (t, (y, f)) in rep.y.iter().zip(&fitted).enumerate() {
        assert!((y - f).abs() < 1e-12, "unit {t}");
    }
    assert_eq!(rep.truth.xi[0], p.mean * xi[0]);
}

#[test]
fn study_is_reproducible_and_reports_consistent_errors() {
    let config = SimConfig {
        g: 8,
        h: 8,
        m: 4,
        replicates: 40,
        seed: 3,
        ..SimConfig::default()
    };
    let a = run_study(&config).unwrap();
    let b = run_study(&config).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.replicates_used + a.failures.excluded(), 40);
    for row in &a.rows {
        assert!((0.0..=1.0).contains(&row.coverage));
        assert_eq!(row.mc_se, coverage_se(row.coverage, a.replicates_used));
    }
}

#[test]
fn interval_length_scales_with_the_design() {
    // ξ4 length ∝ 1/√n, so five times as many rows shrink it by √5
    let run = |g: usize| {
        let config = SimConfig {
            g,
            h: 10,
            m: 10,
            replicates: 100,
            seed: 11,
            ..SimConfig::default()
        };
        run_study(&config).unwrap().row("xi4").unwrap().mean_length.unwrap()
    };
    let ratio = run(10) / run(50);
    assert!((ratio / 5f64.sqrt() - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = SimConfig {
        replicates: 0,
        ..SimConfig::default()
    };
    assert!(matches!(run_study(&bad), Err(Error::InvalidConfig(_))));
    let mixture = SimConfig {
        replicates: 2,
        variances: VarianceComponents::new(0.2, 49.0, 36.0, 81.0),
        effects: EffectLaws {
            alpha: EffectLaw::Mixture,
            ..EffectLaws::default()
        },
        ..SimConfig::default()
    };
    assert!(matches!(run_study(&mixture), Err(Error::InvalidMixture { .. })));
}
