use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use localcontrol::cluster::LinkageMethod;
use localcontrol::pipeline::{run_stages, Stage};
use localcontrol::{LcError, RunConfig};

#[derive(Parser)]
#[command(name = "localcontrol", version, about = "Local control analysis of observational data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Embed confounders, build the dendrogram and cut it at K.
    Aggregate,
    /// Local rank correlations, null ensemble and permutation p-value.
    Confirm,
    /// Compare LRC distributions across a grid of cluster counts.
    Explore,
    /// Forest importance, partial dependence and the partitioning tree.
    Reveal,
    /// All four stages in order.
    RunAll,
    /// Print the resolved configuration as JSON.
    ShowConfig,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    k: Option<usize>,
    /// Seed applied to every stage.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Linkage method, e.g. ward.D, ward.D2, complete, average.
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<LinkageMethod>,
    /// Comma-separated cluster counts for explore.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long, global = true, value_name = "INT")]
    threads: Option<usize>,
}

fn resolve(o: Overrides) -> Result<RunConfig, LcError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = o.input {
        cfg.input = v;
    }
    if let Some(v) = o.out {
        cfg.output_dir = v;
    }
    if let Some(v) = o.k {
        cfg.k = v;
    }
    if let Some(v) = o.seed {
        cfg.set_seed(v);
    }
    if let Some(v) = o.method {
        cfg.method = v;
    }
    if let Some(v) = o.grid {
        cfg.k_grid = v;
    }
    if o.threads.is_some() {
        cfg.threads = o.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), LcError> {
    let cfg = resolve(cli.overrides)?;
    let stages: &[Stage] = match cli.command {
        Command::Aggregate => &[Stage::Aggregate],
        Command::Confirm => &[Stage::Confirm],
        Command::Explore => &[Stage::Explore],
        Command::Reveal => &[Stage::Reveal],
        Command::RunAll => &Stage::ALL,
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            return Ok(());
        }
    };
    let out = run_stages(&cfg, stages)?;
    if let Some(a) = &out.aggregate {
        println!(
            "aggregate: {} units ({} dropped), K = {}, method {}",
            a.n_units, a.n_dropped, a.k, a.method
        );
    }
    if let Some(c) = &out.confirm {
        println!(
            "confirm: D = {:.4} at {:.4}, p = {:.6} (R = {}, B = {}), max null D = {:.4}",
            c.d_observed, c.d_location, c.p_value, c.replicates, c.permutations, c.max_null_d
        );
    }
    if let Some(e) = &out.explore {
        for r in &e.rows {
            println!(
                "explore: K = {:>4}  median {:+.3}  IQR {:.3}  negative {:.1}%",
                r.k,
                r.median,
                r.iqr(),
                100.0 * r.fraction_negative
            );
        }
        if let Some(k) = e.advisory_k {
            println!("explore: IQR growth jumps at K = {k} (advisory only)");
        }
    }
    if let Some(r) = &out.reveal {
        let top: Vec<&str> = r.importance.variables.iter().take(4).map(|v| v.variable.as_str()).collect();
        println!("reveal: top predictors {}", top.join(", "));
        if r.degenerate_response {
            println!("reveal: LRC response is constant; forest outputs are flat");
        }
    }
    println!("bundle written to {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
