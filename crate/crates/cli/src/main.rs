use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use creadraw_cli::analyze::{analyze, read_report, render_text, write_report, REPORT_JSON};
use creadraw_cli::config::{Config, Overrides};
use creadraw_cli::figures::emit_figures;
use creadraw_cli::manifest::{ingest_manifest, Group};
use creadraw_cli::pipeline::{
    compute_metrics, load_stimuli, preprocess, read_clustering, read_metrics, write_metrics, write_preprocessed,
    CLUSTERING_FILE, METRICS_FILE,
};
use creadraw_cli::CliError;
use creadraw_providers::{Cache, Providers};

#[derive(Parser)]
#[command(name = "creadraw", version, about = "Style, content and creativity-score analysis of drawing corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, default_value = "creadraw.toml")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Fail on any provider cache miss instead of calling the network.
    #[arg(long)]
    offline: bool,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the manifest and print corpus counts.
    Ingest(Common),
    /// Normalize every drawing and write the canvases as PNG.
    Preprocess(Common),
    /// Compute the metrics table.
    Metrics(Common),
    /// Run the analyses on an existing metrics table.
    Analyze(Common),
    /// Render figures from an existing report.
    Figures(Common),
    /// Every stage in order.
    All(Common),
}

fn load(c: &Common) -> Result<Config, CliError> {
    let cfg = Config::load(
        &c.config,
        &Overrides {
            seed: c.seed,
            cache_dir: c.cache_dir.clone(),
            out_dir: c.out.clone(),
            offline: c.offline,
        },
    )?;
    if cfg.workers > 0 {
        // only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    Ok(cfg)
}

fn ingest(cfg: &Config) -> Result<Vec<creadraw_cli::manifest::DrawingRecord>, CliError> {
    let records = ingest_manifest(&cfg.manifest)?;
    let counts: Vec<String> = Group::ALL
        .iter()
        .map(|g| format!("{g}={}", records.iter().filter(|r| r.group == *g).count()))
        .collect();
    eprintln!("ingested {} drawings ({})", records.len(), counts.join(", "));
    Ok(records)
}

fn run_metrics(cfg: &Config, write_pngs: bool) -> Result<(), CliError> {
    let records = ingest(cfg)?;
    let prep = preprocess(&records, cfg);
    if write_pngs {
        write_preprocessed(&records, &prep, &cfg.out_dir)?;
    }
    let stimuli = load_stimuli(cfg)?;
    let providers = Providers::new(Cache::open(&cfg.cache_dir)?, cfg.offline);
    let out = compute_metrics(&records, &prep, &stimuli, &providers, cfg)?;
    write_metrics(&out, &cfg.out_dir)?;
    eprintln!(
        "wrote {} ({} drawings, {} failed, {} provider requests)",
        cfg.out_dir.join(METRICS_FILE).display(),
        out.table.len(),
        out.metadata.n_failed,
        providers.request_count()
    );
    Ok(())
}

fn run_analyze(cfg: &Config) -> Result<(), CliError> {
    let table = read_metrics(&cfg.out_dir.join(METRICS_FILE))?;
    let cpath = cfg.out_dir.join(CLUSTERING_FILE);
    let clustering = if cpath.exists() { read_clustering(&cpath)? } else { Vec::new() };
    let bundle = analyze(&table, clustering, cfg)?;
    write_report(&bundle, &cfg.out_dir)?;
    print!("{}", render_text(&bundle));
    Ok(())
}

fn run_figures(cfg: &Config) -> Result<(), CliError> {
    let bundle = read_report(&cfg.out_dir.join(REPORT_JSON))?;
    let notices = emit_figures(&bundle, &cfg.out_dir)?;
    for n in notices {
        eprintln!("notice: {n}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(c) => ingest(&load(&c)?).map(|_| ()),
        Command::Preprocess(c) => {
            let cfg = load(&c)?;
            let records = ingest(&cfg)?;
            let prep = preprocess(&records, &cfg);
            write_preprocessed(&records, &prep, &cfg.out_dir)
        }
        Command::Metrics(c) => run_metrics(&load(&c)?, false),
        Command::Analyze(c) => run_analyze(&load(&c)?),
        Command::Figures(c) => run_figures(&load(&c)?),
        Command::All(c) => {
            let cfg = load(&c)?;
            run_metrics(&cfg, true)?;
            run_analyze(&cfg)?;
            run_figures(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
