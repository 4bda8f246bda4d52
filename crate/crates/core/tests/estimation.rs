//! ML and REML estimation: fixed points, recovery of the truth, boundary
//! handling and the adjusted criterion.

use crossfit::design::{CovariateSet, Design};
use crossfit::fit::{fit, fit_ml, fit_reml, FitOptions, Method};
use crossfit::kron::VarianceComponents;
use crossfit::ml::{expected_info_bn, limit_b, score};
use crossfit::numdiff::gradient;
use crossfit::oracle::{dense_reml_criterion, DenseModel};
use crossfit::params::{Layout, ParamVector, Rate};
use crossfit::reml::{adjusted_loglik, adjustment_traces, reml_criterion, reml_score};
use crossfit::sim::{analyze_replicate, generate, SimConfig};
use crossfit::stats::compress;
use crossfit::validate::{Instance, TINY_DESIGNS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(design_index: usize, stream: u64) -> Instance {
    let (g, h, m) = TINY_DESIGNS[design_index];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    rng.set_stream(stream);
    Instance::random(Design::new(g, h, m).unwrap(), &mut rng)
}

#[test]
fn ml_recovers_truth_within_four_standard_errors() {
    let config = SimConfig {
        g: 50,
        h: 50,
        m: 10,
        seed: 21,
        method: Method::Ml,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    let a = analyze_replicate(&config, &rep).unwrap();
    let table = a.require_intervals().unwrap();
    for (row, truth) in table.rows.iter().zip(rep.truth.to_omega()) {
        let se = row.se.unwrap();
        assert!(
            (row.estimate - truth).abs() <= 4.0 * se,
            "{}: estimate {} truth {} se {}",
            row.name,
            row.estimate,
            truth,
            se
        );
    }
}

#[test]
fn zero_interaction_variance_lands_on_the_floor() {
    let config = SimConfig {
        g: 8,
        h: 8,
        m: 4,
        seed: 4,
        variances: VarianceComponents::new(9.0, 49.0, 0.0, 81.0),
        ..SimConfig::default()
    };
    let mut at_floor = 0;
    for r in 0..40 {
        let rep = generate(&config, r).unwrap();
        let ss = compress(&rep.design, &rep.covs, &rep.y).unwrap();
        let f = fit_ml(&ss, &FitOptions::default()).unwrap();
        if f.boundary[2] {
            at_floor += 1;
            assert_eq!(f.theta().sigma_gamma2, f.floor);
            let a = analyze_replicate(&config, &rep).unwrap();
            assert!(a.intervals.is_none());
            assert!(a.warnings.iter().any(|w| w.contains("sigma_gamma2")));
        }
    }
    // with no interaction variance the ML estimate is zero in about half the samples
    assert!(at_floor >= 10, "only {at_floor} boundary fits");
}

#[test]
fn reml_solution_zeroes_the_adjusted_score() {
    for r in 0..5 {
        let config = SimConfig {
            g: 12,
            h: 9,
            m: 4,
            seed: 8,
            ..SimConfig::default()
        };
        let rep = generate(&config, r).unwrap();
        let ss = compress(&rep.design, &rep.covs, &rep.y).unwrap();
        let f = fit_reml(&ss, &FitOptions::default()).unwrap();
        if f.at_boundary() {
            continue;
        }
        assert!(f.converged);
        let s = reml_score(&f.params, &ss).unwrap();
        assert!(s.max_normalized(&ss.design) <= 1e-8, "{:?}", s.normalized(&ss.design));
        let ml = fit_ml(&ss, &FitOptions::default()).unwrap();
        if !ml.at_boundary() {
            assert!(score(&ml.params, &ss).unwrap().max_normalized(&ss.design) <= 1e-8);
        }
    }
}

#[test]
fn reml_criterion_matches_dense_and_its_gradient() {
    for r in 0..8 {
        let inst = instance(r % TINY_DESIGNS.len(), r as u64);
        let d = inst.design;
        let ss = compress(&d, &inst.covs, &inst.y).unwrap();
        let theta = inst.params.theta;
        let dense = DenseModel::new(&d, &inst.covs, &inst.y, &theta).unwrap();
        let a = reml_criterion(&theta, &ss).unwrap();
        let b = dense_reml_criterion(&dense).unwrap();
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");

        // adjusted log-likelihood gradient equals the adjusted score
        let dims = inst.params.dims;
        let numeric = gradient(
            |omega| adjusted_loglik(&ParamVector::from_omega(omega, dims)?, &ss),
            &inst.params.to_omega(),
            1e-5,
        )
        .unwrap();
        let analytic = reml_score(&inst.params, &ss).unwrap();
        for (x, y) in analytic.values.iter().zip(&numeric) {
            assert!((x - y).abs() <= 1e-5 * y.abs().max(1e-2), "{x} vs {y}");
        }
    }
}

#[test]
fn adjustment_differs_from_ml_only_in_variances() {
    let inst = instance(7, 3);
    let ss = compress(&inst.design, &inst.covs, &inst.y).unwrap();
    let ml = score(&inst.params, &ss).unwrap();
    let reml = reml_score(&inst.params, &ss).unwrap();
    let t = adjustment_traces(&inst.params.theta, &ss).unwrap().to_array();
    let layout = Layout::new(inst.params.dims);
    for (c, slot) in layout.slots.iter().enumerate() {
        let diff = reml.values[c] - ml.values[c];
        match slot {
            crossfit::params::Slot::Variance(k) => assert!((diff - t[*k]).abs() < 1e-12),
            _ => assert_eq!(diff, 0.0),
        }
    }
}

#[test]
fn traces_stay_finite_as_random_effect_variances_grow() {
    let inst = instance(7, 5);
    let ss = compress(&inst.design, &inst.covs, &inst.y).unwrap();
    let mut previous: Option<[f64; 3]> = None;
    let mut changes = Vec::new();
    for s in [1e1, 1e2, 1e3, 1e4, 1e5] {
        let t = adjustment_traces(&VarianceComponents::new(s, s, s, 1.0), &ss).unwrap().to_array();
        let scaled = [t[0] * s, t[1] * s, t[2] * s];
        assert!(scaled.iter().all(|v| v.is_finite() && *v > 0.0));
        if let Some(p) = previous {
            changes.push((0..3).map(|k| (scaled[k] - p[k]).abs() / p[k]).fold(0.0, f64::max));
        }
        previous = Some(scaled);
    }
    // σ²·t converges: successive relative changes shrink
    assert!(changes.windows(2).all(|w| w[1] < w[0]), "{changes:?}");
    assert!(*changes.last().unwrap() < 1e-3);
}

#[test]
fn reml_increases_error_variance_relative_to_ml() {
    let config = SimConfig {
        g: 6,
        h: 6,
        m: 3,
        seed: 12,
        variances: VarianceComponents::new(9.0, 0.0, 0.0, 81.0),
        ..SimConfig::default()
    };
    let mut larger = 0;
    let mut total = 0;
    let (mut ml_sum, mut reml_sum) = (0.0, 0.0);
    for r in 0..200 {
        let rep = generate(&config, r).unwrap();
        let ss = compress(&rep.design, &rep.covs, &rep.y).unwrap();
        let (Ok(ml), Ok(reml)) = (fit_ml(&ss, &FitOptions::default()), fit_reml(&ss, &FitOptions::default()))
        else {
            continue;
        };
        total += 1;
        ml_sum += ml.theta().sigma_e2;
        reml_sum += reml.theta().sigma_e2;
        if reml.theta().sigma_e2 > ml.theta().sigma_e2 {
            larger += 1;
        }
    }
    assert!(total >= 190);
    assert!(reml_sum > ml_sum);
    assert!(larger as f64 >= 0.9 * total as f64, "{larger} of {total}");
    // REML is close to unbiased for the error variance
    assert!((reml_sum / total as f64 - 81.0).abs() < (ml_sum / total as f64 - 81.0).abs());
}

fn normalized_adjustment(g: usize, h: usize, m: usize) -> f64 {
    let config = SimConfig {
        g,
        h,
        m,
        seed: 15,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    let ss = compress(&rep.design, &rep.covs, &rep.y).unwrap();
    let t = adjustment_traces(&config.variances, &ss).unwrap().to_array();
    let d = rep.design;
    let rates = [Rate::G, Rate::H, Rate::Gh, Rate::N].map(|r| r.value(&d));
    (0..4).map(|k| t[k] / rates[k].sqrt()).fold(0.0, f64::max)
}

#[test]
fn normalized_adjustment_vanishes_with_design_size() {
    let a = normalized_adjustment(10, 10, 5);
    let b = normalized_adjustment(20, 20, 5);
    let c = normalized_adjustment(40, 40, 5);
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn reml_gap_shrinks_on_larger_designs() {
    let gap = |g: usize, h: usize| {
        let config = SimConfig {
            g,
            h,
            m: 5,
            seed: 31,
            ..SimConfig::default()
        };
        let mut v: Vec<f64> = (0..30)
            .filter_map(|r| {
                let rep = generate(&config, r).ok()?;
                let ss = compress(&rep.design, &rep.covs, &rep.y).ok()?;
                let ml = fit_ml(&ss, &FitOptions::default()).ok()?.theta().to_array();
                let reml = fit_reml(&ss, &FitOptions::default()).ok()?.theta().to_array();
                let k = [g as f64, h as f64, (g * h) as f64, (g * h * 5) as f64];
                Some((0..4).map(|t| k[t] * (reml[t] - ml[t]).powi(2)).sum::<f64>().sqrt())
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(gap(40, 40) < gap(10, 10));
}

#[test]
fn variance_only_model_is_a_fixed_point() {
    let d = Design::new(4, 5, 3).unwrap();
    let y: Vec<f64> = (0..d.n).map(|t| ((t * 37 % 23) as f64).sin() * 3.0 + (t / 15) as f64).collect();
    let ss = compress(&d, &CovariateSet::default(), &y).unwrap();
    for method in [Method::Ml, Method::Reml] {
        let f = fit(&ss, &FitOptions::with_method(method)).unwrap();
        if f.at_boundary() {
            continue;
        }
        let s = match method {
            Method::Ml => score(&f.params, &ss).unwrap(),
            Method::Reml => reml_score(&f.params, &ss).unwrap(),
        };
        assert!(s.max_normalized(&d) < 1e-7, "{method:?}: {:?}", s.values);
    }
}

#[test]
fn information_limit_has_closed_form_corner_entries() {
    let config = SimConfig {
        g: 6,
        h: 5,
        m: 3,
        seed: 2,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0).unwrap();
    let ss = compress(&rep.design, &rep.covs, &rep.y).unwrap();
    let b = limit_b(&rep.truth, &ss).unwrap();
    let n = b.nrows();
    let se = config.variances.sigma_e2;
    assert!((b[(n - 1, n - 1)] - 1.0 / (2.0 * se * se)).abs() < 1e-15);
    let d3 = ss.d_hat(crossfit::design::Level::Interaction);
    assert!((b[(5, 5)] - d3[(0, 0)] / config.variances.sigma_gamma2).abs() < 1e-12);
    let est = expected_info_bn(&rep.truth, &ss).unwrap();
    assert_eq!(est.bn.shape(), b.shape());
    assert!(est.distance.is_finite());
}
