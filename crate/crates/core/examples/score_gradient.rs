//! The closed-form score against central differences of the log-likelihood,
//! component by component, at a point away from the optimum.

use crossfit::ml::{loglik, score};
use crossfit::numdiff::gradient;
use crossfit::params::{Layout, ParamVector};
use crossfit::sim::{generate, SimConfig};
use crossfit::stats::compress;

fn main() -> crossfit::Result<()> {
    let config = SimConfig {
        g: 5,
        h: 4,
        m: 3,
        seed: 2,
        ..SimConfig::default()
    };
    let rep = generate(&config, 0)?;
    let ss = compress(&rep.design, &rep.covs, &rep.y)?;
    let mut at = rep.truth.clone();
    at.theta = at.theta.scaled(1.3);
    at.xi.iter_mut().for_each(|x| *x += 0.2);

    let analytic = score(&at, &ss)?;
    let dims = at.dims;
    let numeric = gradient(
        |omega| loglik(&ParamVector::from_omega(omega, dims)?, &ss),
        &at.to_omega(),
        1e-5,
    )?;
    let names = Layout::new(dims).names(&ss.names);
    println!("{:<16} {:>16} {:>16} {:>10}", "parameter", "closed form", "central diff", "rel err");
    for ((name, a), b) in names.iter().zip(&analytic.values).zip(&numeric) {
        let rel = (a - b).abs() / b.abs().max(1e-8);
        println!("{name:<16} {a:>16.8} {b:>16.8} {rel:>10.2e}");
    }
    Ok(())
}
