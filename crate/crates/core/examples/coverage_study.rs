//! Coverage and mean interval length for one design cell.
//!
//! Usage: `cargo run --release --example coverage_study -- [g h m reps preset]`
//! where preset is `table1-cell` (normal effects) or `table2-cell` (mixture
//! column effects and errors).

use crossfit::sim::{run_study, write_csv, Preset, SimConfig};

fn main() -> crossfit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let preset: Preset = args.get(4).map_or(Ok(Preset::Table1Cell), |s| s.parse())?;
    let config = SimConfig {
        replicates: num(3, 200),
        seed: 7,
        ..SimConfig::preset(preset, num(0, 10), num(1, 10), num(2, 10))
    };
    let report = run_study(&config)?;
    println!(
        "{} replicates used, {} boundary, {} failed fits, {:.1}s on {} threads",
        report.replicates_used,
        report.failures.boundary,
        report.failures.fit_failures(),
        report.wall_time_secs,
        report.threads
    );
    for row in &report.rows {
        println!(
            "{:<12} cvge {:.3} (se {:.3})  mean len {:<10} median len {}",
            row.name,
            row.coverage,
            row.mc_se,
            row.mean_length.map_or("NA".into(), |l| format!("{l:.3}")),
            row.median_length.map_or("NA".into(), |l| format!("{l:.3}"))
        );
    }
    write_csv(&[report], std::io::stdout())
}
