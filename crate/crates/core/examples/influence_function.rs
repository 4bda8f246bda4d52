//! The influence function of the estimators evaluated at random draws of the
//! effects and covariates: its components average to roughly zero, and the
//! variance entries react to a single outlying error.

use rand::Rng;
use rand_distr::StandardNormal;

use crossfit::analysis::analyze;
use crossfit::fit::FitOptions;
use crossfit::inference::{influence, InfluenceInputs, InfluencePoint};
use crossfit::sim::{generate, replicate_rng, table_label, SimConfig};

fn main() -> crossfit::Result<()> {
    let config = SimConfig {
        g: 40,
        h: 40,
        m: 5,
        seed: 9,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0)?;
    let a = analyze(&rep.design, &rep.covs, &rep.y, &FitOptions::default(), 0.05)?;
    let inputs = InfluenceInputs::new(&a.fit, &a.stats)?;
    let sd = a.fit.theta().to_array().map(f64::sqrt);
    let parts = &rep.covariate.parts;

    let mut rng = replicate_rng(99, 0);
    let draws = 20_000;
    let len = rep.truth.layout().len();
    let mut sum = vec![0.0; len];
    let mut sum_sq = vec![0.0; len];
    for _ in 0..draws {
        let mut z = || rng.sample::<f64, _>(StandardNormal);
        let point = InfluencePoint {
            alpha: sd[0] * z(),
            beta: sd[1] * z(),
            gamma: sd[2] * z(),
            e: sd[3] * z(),
            x_a: vec![parts.row[rng.random_range(0..parts.row.len())]],
            x_b: vec![parts.col[rng.random_range(0..parts.col.len())]],
            x_ab: vec![parts.inter[rng.random_range(0..parts.inter.len())]],
            x_w: vec![parts.within[rng.random_range(0..parts.within.len())]],
        };
        for (c, v) in influence(&inputs, &point).into_iter().enumerate() {
            sum[c] += v;
            sum_sq[c] += v * v;
        }
    }
    println!("{:<12} {:>12} {:>12}", "param", "mean", "sd");
    for (c, slot) in rep.truth.layout().slots.iter().enumerate() {
        let mean = sum[c] / draws as f64;
        let var = sum_sq[c] / draws as f64 - mean * mean;
        println!("{:<12} {:>12.4} {:>12.4}", table_label(*slot), mean, var.sqrt());
    }

    let outlier = InfluencePoint {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        e: 10.0 * sd[3],
        x_a: vec![0.0],
        x_b: vec![0.0],
        x_ab: vec![0.0],
        x_w: vec![1.0],
    };
    let v = influence(&inputs, &outlier);
    println!(
        "error of 10 sd: influence on xi4 {:.3}, on sigma_e^2 {:.1}",
        v[len - 2],
        v[len - 1]
    );
    Ok(())
}
