use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rirtrack::config::{DatasetScenario, Scenario, ScenarioConfig};
use rirtrack::dataset::write_dataset;
use rirtrack::kalman::Variant;
use rirtrack::pipeline::{estimate, evaluate_runs, prepare};
use rirtrack::report::{build_bundle, estimates_bundle, plot_tables, read_estimates, summarize, ReportBundle, SUMMARY_TXT};
use rirtrack::{Error, Exec, Result};

/// Track early room impulse responses along a moving-microphone trajectory.
#[derive(Debug, Parser)]
#[command(name = "rirtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scenario and write it in dataset layout.
    Simulate(ScenarioArgs),
    /// Run the selected filter variants and store their estimates.
    Estimate(ScenarioArgs),
    /// Score stored estimates against the ground-truth RIRs.
    Evaluate(ScenarioArgs),
    /// Turn evaluation output into plot-ready tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Variants to run (kf-alpha, kf-a, li-a); repeat for several.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Resample dataset audio whose rate differs from the configured one.
    #[arg(long)]
    resample: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory written by `evaluate`.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(args: &ScenarioArgs) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if !args.variants.is_empty() {
        cfg.variants = args.variants.clone();
    }
    if args.resample {
        match &mut cfg.scenario {
            Scenario::Dataset(d) => d.resample = true,
            Scenario::Synthetic(_) => log::warn!("--resample has no effect on synthetic scenarios"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    bundle.write(dir)?;
    for name in bundle.files.keys() {
        log::info!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn simulate(args: &ScenarioArgs) -> Result<()> {
    let cfg = load_config(args)?;
    if !matches!(cfg.scenario, Scenario::Synthetic(_)) {
        return Err(Error::config("simulate needs a synthetic scenario"));
    }
    let prep = prepare(&cfg, Exec::default())?;
    write_dataset(&args.out_dir, &prep.to_dataset())?;
    let dataset_cfg = ScenarioConfig {
        scenario: Scenario::Dataset(DatasetScenario {
            root: ".".into(),
            boundaries: prep.boundary_points(),
            resample: false,
        }),
        ..cfg
    };
    let path = args.out_dir.join("scenario.toml");
    std::fs::write(&path, dataset_cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    println!(
        "{} locations, {} grid RIRs written to {}",
        prep.locations(),
        prep.grid.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_estimate(args: &ScenarioArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let exec = Exec::default();
    let prep = prepare(&cfg, exec)?;
    let est = estimate(&cfg, &prep, &cfg.variants, exec)?;
    write(&estimates_bundle(&est.runs, prep.sample_offset)?, &args.out_dir)?;
    let variants: Vec<String> = est.runs.iter().map(|r| r.variant.to_string()).collect();
    println!(
        "{} over {} locations with {} transition matrices; estimates in {}",
        variants.join(", "),
        prep.locations(),
        est.segments.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_evaluate(args: &ScenarioArgs) -> Result<()> {
    let mut cfg = load_config(args)?;
    let exec = Exec::default();
    let (meta, runs) = read_estimates(&args.out_dir)?;
    cfg.variants = meta.variants.clone();
    let prep = prepare(&cfg, exec)?;
    if meta.sample_offset != prep.sample_offset {
        return Err(Error::config(format!(
            "estimates start at sample {}, scenario at {}",
            meta.sample_offset, prep.sample_offset
        )));
    }
    let out = evaluate_runs(&cfg, prep, runs, exec)?;
    write(&build_bundle(&cfg, &out)?, &args.out_dir)?;
    print!("{}", rirtrack::report::summary_text(&summarize(&cfg, &out)));
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let bundle = plot_tables(&args.out_dir)?;
    write(&bundle, &args.out_dir)?;
    if let Some(text) = bundle.get(SUMMARY_TXT) {
        print!("{}", String::from_utf8_lossy(text));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
