//! ML and REML fits on the same data. The REML correction matters at small
//! designs and fades as the design grows: the rate-normalized gap between the
//! two variance estimates shrinks.

use crossfit::fit::{fit_ml, fit_reml, FitOptions};
use crossfit::params::Rate;
use crossfit::sim::{generate, SimConfig};
use crossfit::stats::compress;

const REPLICATES: u64 = 40;

/// Largest rate-normalized difference between the two variance estimates.
fn gap(config: &SimConfig, r: u64) -> crossfit::Result<(f64, [f64; 4], [f64; 4])> {
    let options = FitOptions::default();
    let rep = generate(config, r)?;
    let ss = compress(&rep.design, &rep.covs, &rep.y)?;
    let ml = fit_ml(&ss, &options)?.theta().to_array();
    let reml = fit_reml(&ss, &options)?.theta().to_array();
    let rates = [Rate::G, Rate::H, Rate::Gh, Rate::N].map(|r| r.value(&rep.design));
    let gap = (0..4).map(|t| rates[t].sqrt() * (reml[t] - ml[t]).abs()).fold(0.0, f64::max);
    Ok((gap, ml, reml))
}

fn main() -> crossfit::Result<()> {
    println!("{:>10} {:>36} {:>36} {:>12}", "design", "mean ml variances", "mean reml variances", "median gap");
    for (g, h, m) in [(10, 10, 5), (20, 20, 5), (40, 40, 5)] {
        let config = SimConfig {
            g,
            h,
            m,
            seed: 5,
            ..SimConfig::default()
        };
        let mut gaps = Vec::new();
        let (mut ml_sum, mut reml_sum) = ([0.0; 4], [0.0; 4]);
        for r in 0..REPLICATES {
            let (d, ml, reml) = gap(&config, r)?;
            gaps.push(d);
            for t in 0..4 {
                ml_sum[t] += ml[t] / REPLICATES as f64;
                reml_sum[t] += reml[t] / REPLICATES as f64;
            }
        }
        gaps.sort_by(f64::total_cmp);
        let median = 0.5 * (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2]);
        let fmt = |v: [f64; 4]| format!("{:>8.2} {:>8.2} {:>8.2} {:>8.2}", v[0], v[1], v[2], v[3]);
        println!("{:>10} {} {} {:>12.3}", format!("{g}x{h}x{m}"), fmt(ml_sum), fmt(reml_sum), median);
    }
    println!("truth {:?}", SimConfig::default().variances.to_array());
    Ok(())
}
