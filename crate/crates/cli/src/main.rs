use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use xxzbell_core::checks::{CheckRunner, Suite};
use xxzbell_core::sweep::{
    classify_hierarchy, detect_features, read_csv, records_to_csv, run_sweep_with_progress, uniform_grid,
    FeatureReport, HierarchyLabels, SweepConfig,
};
use xxzbell_core::Objective;

/// Bell nonlocality of XXZ ground-state subchains.
#[derive(Parser)]
#[command(name = "xxzbell", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Δ sweep and write the records as CSV.
    Sweep(SweepArgs),
    /// Detect valleys, plane crossings and violation onsets in a sweep CSV.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON report; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check against exact diagonalization and brute-force operators.
    Oracle {
        /// mk-bruteforce, contraction, ghz, partial-trace, energy, itebd-rdm or all.
        #[arg(long, default_value = "all")]
        check: String,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["delta_max", "delta_step"])]
    delta_min: Option<f64>,
    #[arg(long, requires_all = ["delta_min", "delta_step"])]
    delta_max: Option<f64>,
    #[arg(long, requires_all = ["delta_min", "delta_max"])]
    delta_step: Option<f64>,
    /// Block sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// mermin, svetlichny or both; comma separated.
    #[arg(long, value_delimiter = ',')]
    objective: Option<Vec<String>>,
    /// Bond dimension.
    #[arg(long = "D")]
    bond_dim: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start each ground state from the previous Δ (true/false).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    warm_start: Option<bool>,
    /// CSV output; stdout if neither this nor the config names one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-Δ ground-state checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Suppress per-point progress on stderr.
    #[arg(long)]
    quiet: bool,
}

fn parse_objectives(values: &[String]) -> Result<Vec<Objective>> {
    let mut out = Vec::new();
    for v in values {
        let parsed = match v.as_str() {
            "both" => Objective::ALL.to_vec(),
            other => vec![other.parse::<Objective>().map_err(anyhow::Error::msg)?],
        };
        for o in parsed {
            if !out.contains(&o) {
                out.push(o);
            }
        }
    }
    Ok(out)
}

fn resolve_config(args: &SweepArgs) -> Result<SweepConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SweepConfig::default(),
    };
    if let (Some(min), Some(max), Some(step)) = (args.delta_min, args.delta_max, args.delta_step) {
        config.delta_grid = uniform_grid(min, max, step)?;
    }
    if let Some(n) = &args.n {
        config.n_list = n.clone();
    }
    if let Some(objectives) = &args.objective {
        config.objectives = parse_objectives(objectives)?;
    }
    if let Some(d) = args.bond_dim {
        config.bond_dim = d;
    }
    if args.restarts.is_some() {
        config.restarts = args.restarts;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(warm) = args.warm_start {
        config.warm_start = warm;
    }
    if args.out.is_some() {
        config.output_path = args.out.clone();
    }
    if args.checkpoint_dir.is_some() {
        config.checkpoint_dir = args.checkpoint_dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let config = resolve_config(&args)?;
    let odd = config.nonstandard_n();
    if !odd.is_empty() {
        eprintln!("warning: odd block sizes {odd:?} are nonstandard; the analysis is built around even n");
    }
    let quiet = args.quiet;
    let records = run_sweep_with_progress(&config, |p| {
        if quiet {
            return;
        }
        let status = match p.report {
            Some(r) => {
                format!("e = {:.10}{}", r.final_energy_per_site, if r.converged { "" } else { " (not converged)" })
            }
            None => "ground state failed".into(),
        };
        let failed = p.records.iter().filter(|r| !r.converged).count();
        eprintln!("[{}/{}] Δ = {}  {status}  unconverged rows: {failed}", p.index + 1, p.total, p.delta);
    })?;
    write_output(&records_to_csv(&records, &config.metadata_lines()), config.output_path.as_deref())?;
    let unconverged = records.iter().filter(|r| !r.converged).count();
    if unconverged > 0 {
        eprintln!("{unconverged} of {} rows did not converge", records.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ClassifiedRow {
    delta: f64,
    n: usize,
    objective: Objective,
    value_best: f64,
    #[serde(flatten)]
    labels: HierarchyLabels,
}

#[derive(Serialize)]
struct Report {
    features: FeatureReport,
    hierarchy: Vec<ClassifiedRow>,
}

fn features(input: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let records = read_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let features = detect_features(&records)?;
    let hierarchy = records
        .iter()
        .map(|r| ClassifiedRow {
            delta: r.delta,
            n: r.n,
            objective: r.objective,
            value_best: r.value_best,
            labels: classify_hierarchy(r),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&Report { features, hierarchy })?;
    text.push('\n');
    write_output(&text, out)?;
    Ok(ExitCode::SUCCESS)
}

fn oracle(check: &str) -> Result<ExitCode> {
    let suites = if check == "all" { Suite::ALL.to_vec() } else { vec![check.parse().map_err(anyhow::Error::msg)?] };
    let mut runner = CheckRunner::new();
    let mut failures = 0;
    for suite in suites {
        for outcome in runner.run(suite)? {
            if !outcome.passed {
                failures += 1;
            }
            println!("{outcome}");
        }
    }
    if failures > 0 {
        bail!("{failures} oracle comparisons failed");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => sweep(args),
        Command::Features { input, out } => features(&input, out.as_deref()),
        Command::Oracle { check } => oracle(&check),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
