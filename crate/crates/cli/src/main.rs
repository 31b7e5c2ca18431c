use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qclt_core::catalog;
use qclt_core::report::{run, Analysis, ChainSource, RunManifest, RunOptions};

#[derive(Parser)]
#[command(
    name = "qclt",
    version,
    about = "Quenched CLT laboratory for finite Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a chain and print its stationary law and ergodicity flags.
    Validate(Common),
    /// Projective quantities and σ².
    Analyze(Common),
    /// Projective criteria verdicts.
    Criteria(Common),
    /// Exact martingale decomposition checks.
    Martingale(Common),
    /// Monte Carlo quenched CLT checks.
    Quench(Common),
    /// Maximal inequalities.
    Bounds(Common),
    /// Run a manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// List built-in chains.
    Catalog,
}

#[derive(Args)]
struct Common {
    /// Chain-spec JSON file.
    #[arg(long, conflicts_with = "catalog", required_unless_present = "catalog")]
    chain: Option<PathBuf>,
    /// Built-in chain name.
    #[arg(long)]
    catalog: Option<String>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Block sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Monte Carlo horizon.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "QCLT_OUT", default_value = "qclt-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn manifest(&self, analysis: Analysis) -> RunManifest {
        let source = match (&self.chain, &self.catalog) {
            (Some(path), _) => ChainSource::File(path.clone()),
            (None, Some(name)) => ChainSource::Catalog(name.clone()),
            (None, None) => unreachable!("clap requires one chain source"),
        };
        let mut m = RunManifest::new(source, self.out.clone());
        m.analyses = vec![analysis];
        m.seed = self.seed;
        if let Some(n) = self.n_max {
            m.grids.n_max = n;
        }
        if let Some(k) = self.k_max {
            m.grids.k_max = k;
        }
        if let Some(ms) = &self.m {
            m.grids.m = ms.clone();
            if let Some(first) = ms.first() {
                m.monte_carlo.martingale_m = *first;
            }
        }
        if let Some(r) = self.replicas {
            m.monte_carlo.replicas = r;
        }
        if let Some(n) = self.n {
            m.monte_carlo.n = n;
        }
        m
    }
}

fn execute(manifest: &RunManifest, workers: usize) -> Result<ExitCode> {
    let bundle = run(manifest, &RunOptions { workers })?;
    for (name, block) in &bundle.blocks {
        println!("{name}:");
        println!("{}", serde_json::to_string_pretty(&block.result)?);
    }
    println!("{}", serde_json::to_string_pretty(&bundle.analyses)?);
    println!("reports written to {}", manifest.out_dir.display());
    Ok(if bundle.failed() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let (manifest, workers) = match cli.command {
        Command::Catalog => {
            for e in catalog() {
                println!("{:<16} d={}  {}", e.name, e.dim, e.illustrates);
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Report {
            manifest,
            out,
            workers,
        } => {
            let mut m = RunManifest::from_file(&manifest)
                .with_context(|| format!("reading manifest {}", manifest.display()))?;
            if let Some(dir) = out {
                m.out_dir = dir;
            }
            (m, workers)
        }
        Command::Validate(c) => (c.manifest(Analysis::Validate), c.workers),
        Command::Analyze(c) => (c.manifest(Analysis::Analyze), c.workers),
        Command::Criteria(c) => (c.manifest(Analysis::Criteria), c.workers),
        Command::Martingale(c) => (c.manifest(Analysis::Martingale), c.workers),
        Command::Quench(c) => (c.manifest(Analysis::Quench), c.workers),
        Command::Bounds(c) => (c.manifest(Analysis::Bounds), c.workers),
    };
    execute(&manifest, workers)
}
