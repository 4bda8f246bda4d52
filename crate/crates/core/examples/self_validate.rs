//! Runs the dense-oracle comparison suite and prints one line per check.

use crossfit::validate::{run, ValidationConfig};

fn main() -> crossfit::Result<()> {
    let report = run(&ValidationConfig::default())?;
    print!("{}", report.render());
    println!("{}", if report.passed() { "all checks passed" } else { "some checks failed" });
    Ok(())
}
