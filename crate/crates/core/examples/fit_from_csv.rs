//! Writes a simulated dataset to CSV, reads it back with the composite
//! covariate split into its four parts, and prints the fit report.
//!
//! Usage: `cargo run --example fit_from_csv -- [ml|reml]`

use std::fs::File;

use crossfit::design::{Declaration, Role};
use crossfit::fit::{FitOptions, Method};
use crossfit::report::fit_csv;
use crossfit::sim::{generate, SimConfig};

fn main() -> crossfit::Result<()> {
    let method: Method = std::env::args().nth(1).map_or(Ok(Method::Reml), |s| s.parse())?;
    let config = SimConfig {
        g: 15,
        h: 12,
        m: 4,
        seed: 11,
        ..SimConfig::default()
    };
    let replicate = generate(&config, 0)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("data.csv");
    replicate.write_csv(File::create(&path)?)?;

    let declarations = [Declaration::new("x", Role::Decompose)];
    let report = fit_csv(File::open(&path)?, &declarations, &FitOptions::with_method(method), 0.95)?;
    print!("{}", report.render_table());
    println!();
    println!("true slopes {:?}", &config.xi[1..]);
    println!("true variances {:?}", config.variances.to_array());
    Ok(())
}
