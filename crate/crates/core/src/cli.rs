//! Command-line front end: `fit`, `simulate` and `validate`.
//!
//! Exit codes: 0 success (boundary fits included, with warnings), 1 failed
//! validation or unexpected error, 2 data error, 3 non-convergence, 4 bad
//! simulation config, 5 too many failed replicates.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::design::{Declaration, Level, Role};
use crate::error::{Error, Result};
use crate::fit::{FitOptions, Method};
use crate::report::fit_csv;
use crate::sim::{run_grid, run_study, write_csv, Preset, SimConfig, SimReport, TABLE_CELLS};
use crate::validate::{run as run_validation, ValidationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_EXCESSIVE_FAILURES: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "crossfit", version, about = "Fit and study balanced two-way crossed mixed models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV with columns i, j, k, y and covariates.
    Fit(FitArgs),
    /// Run a Monte Carlo coverage study.
    Simulate(SimulateArgs),
    /// Compare structured computations against the dense oracle.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "reml")]
    pub method: Method,
    /// Covariates constant within rows.
    #[arg(long, value_delimiter = ',')]
    pub row_cols: Vec<String>,
    /// Covariates constant within columns.
    #[arg(long, value_delimiter = ',')]
    pub col_cols: Vec<String>,
    /// Covariates constant within cells.
    #[arg(long, value_delimiter = ',')]
    pub inter_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub within_cols: Vec<String>,
    /// Covariates split into row, column, interaction and within parts.
    #[arg(long, value_delimiter = ',')]
    pub decompose: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also print an aligned table (stdout with `--out`, otherwise stderr).
    #[arg(long)]
    pub table: bool,
}

impl FitArgs {
    pub fn declarations(&self) -> Vec<Declaration> {
        let groups = [
            (&self.row_cols, Role::Level(Level::Row)),
            (&self.col_cols, Role::Level(Level::Column)),
            (&self.inter_cols, Role::Level(Level::Interaction)),
            (&self.within_cols, Role::Level(Level::Within)),
            (&self.decompose, Role::Decompose),
        ];
        groups
            .into_iter()
            .flat_map(|(names, role)| names.iter().map(move |n| Declaration::new(n.clone(), role)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with `SimConfig` fields; missing fields take defaults.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Run all eight design cells with normal effects.
    #[arg(long, conflicts_with_all = ["table2", "g", "h", "m"])]
    pub table1: bool,
    /// Run all eight design cells with mixture effects.
    #[arg(long, conflicts_with_all = ["g", "h", "m"])]
    pub table2: bool,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coverage CSV path; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

impl SimulateArgs {
    /// Base configuration with flag overrides applied.
    pub fn config(&self) -> Result<SimConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text)?
            }
            (None, Some(p)) => SimConfig::preset(p, 10, 10, 10),
            (None, None) if self.table2 => SimConfig::preset(Preset::Table2Cell, 10, 10, 10),
            (None, None) => SimConfig::default(),
        };
        if let Some(g) = self.g {
            cfg.g = g;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(r) = self.reps {
            cfg.replicates = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(method) = self.method {
            cfg.method = method;
        }
        if self.table2 {
            cfg.effects = SimConfig::preset(Preset::Table2Cell, cfg.g, cfg.h, cfg.m).effects;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random draws per tiny design.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_DATA } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Validate(a) => cmd_validate(&a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_fit(args: &FitArgs) -> i32 {
    let result = (|| -> Result<_> {
        let file = File::open(&args.data)?;
        let report = fit_csv(
            BufReader::new(file),
            &args.declarations(),
            &FitOptions::with_method(args.method),
            args.level,
        )?;
        let json = report.to_json()?;
        match &args.out {
            Some(path) => {
                let mut w = create(path)?;
                writeln!(w, "{json}")?;
                w.flush()?;
                if args.table {
                    print!("{}", report.render_table());
                }
            }
            None => {
                println!("{json}");
                if args.table {
                    eprint!("{}", report.render_table());
                }
            }
        }
        Ok(report)
    })();
    match result {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            EXIT_OK
        }
        Err(e @ Error::NoConvergence { .. }) => {
            eprintln!("error: {e}");
            EXIT_NO_CONVERGENCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn summarize(report: &SimReport) {
    let c = &report.config;
    eprintln!(
        "g={} h={} m={}: {} replicates used, {} boundary, {} failed, {:.2}s on {} threads",
        c.g,
        c.h,
        c.m,
        report.replicates_used,
        report.failures.boundary,
        report.failures.fit_failures(),
        report.wall_time_secs,
        report.threads
    );
}

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = (|| -> Result<()> {
        let reports = if args.table1 || args.table2 {
            run_grid(&cfg, &TABLE_CELLS)?
        } else {
            vec![run_study(&cfg)?]
        };
        reports.iter().for_each(summarize);
        if let Some(path) = &args.out {
            let mut w = create(path)?;
            serde_json::to_writer_pretty(&mut w, &reports)?;
            writeln!(w)?;
            w.flush()?;
        }
        match &args.csv {
            Some(path) => write_csv(&reports, create(path)?),
            None => write_csv(&reports, io::stdout().lock()),
        }
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ExcessiveFailures { .. } => EXIT_EXCESSIVE_FAILURES,
                Error::InvalidConfig(_) | Error::InvalidMixture { .. } | Error::DesignTooSmall { .. } => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            }
        }
    }
}

pub fn cmd_validate(args: &ValidateArgs) -> i32 {
    let cfg = ValidationConfig {
        seed: args.seed,
        instances: args.instances,
    };
    match run_validation(&cfg) {
        Ok(report) => {
            print!("{}", report.render());
            if report.passed() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
