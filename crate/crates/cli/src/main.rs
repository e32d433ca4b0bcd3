use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use graphmerge_core::experiment::{
    cmd_eval, cmd_gen_data, cmd_invert, cmd_merge, cmd_pipeline, cmd_pretrain, ExperimentConfig,
    RunPaths,
};

/// Thread count for data-parallel work; defaults to one.
const THREADS_VAR: &str = "GRAPHMERGE_THREADS";

#[derive(Parser)]
#[command(name = "graphmerge", version, about = "Source-free merging of graph classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the domain datasets
    GenData(Common),
    /// Train one expert per roster entry on its own domain
    Pretrain(Common),
    /// Invert every expert into a synthetic set
    Invert(Common),
    /// Train masks and gate on the pooled synthetic sets
    Merge(Common),
    /// Score experts, baselines and the merged model on the target domain
    Eval(Common),
    /// Run every stage in order
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print nothing on success
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
            anyhow::ensure!(n > 0, "{THREADS_VAR} must be positive");
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads()?)
        .build_global()
        .context("starting thread pool")?;

    let (common, name) = match &cli.command {
        Command::GenData(c) => (c, "gen-data"),
        Command::Pretrain(c) => (c, "pretrain"),
        Command::Invert(c) => (c, "invert"),
        Command::Merge(c) => (c, "merge"),
        Command::Eval(c) => (c, "eval"),
        Command::Pipeline(c) => (c, "pipeline"),
    };
    let cfg = common.load()?;
    let quiet = common.quiet;
    let say = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    let paths = RunPaths::new(&cfg.out_dir);

    match cli.command {
        Command::GenData(_) => {
            let d = cmd_gen_data(&cfg)?;
            for s in &d.sets {
                say(&format!("domain {}: {} graphs", s.name, s.len()));
            }
        }
        Command::Pretrain(_) => {
            for e in cmd_pretrain(&cfg)? {
                say(&format!("wrote {}", paths.expert(&e.id).display()));
            }
        }
        Command::Invert(_) => {
            for s in cmd_invert(&cfg)? {
                say(&format!("{}: {} synthetic graphs", s.provenance.expert, s.dataset.len()));
            }
        }
        Command::Merge(_) => {
            cmd_merge(&cfg)?;
            say(&format!("wrote {}", paths.merged().display()));
        }
        Command::Eval(_) => {
            let report = cmd_eval(&cfg)?;
            if !quiet {
                print!("{}", report.to_text()?);
            }
        }
        Command::Pipeline(_) => {
            let report = cmd_pipeline(&cfg, |stage| say(&format!("== {stage}")))?;
            if !quiet {
                print!("{}", report.to_text()?);
            }
        }
    }
    say(&format!("{name} done"));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
