//! drift-forge: data generation, training, closed-loop comparison runs and
//! metrics for the physics and learned front tire models.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use drift_forge::harness::{
    cmd_export, cmd_gen_data, cmd_metrics, cmd_run, cmd_train, ExperimentConfig, Manifest, Variant,
};

#[derive(Debug, Parser)]
#[command(name = "drift-forge", version, about = "Closed-loop drifting lab: Fiala vs learned front tire in NMPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario mix and write the labeled dataset.
    GenData(Common),
    /// Train the front tire network on the dataset.
    Train(Common),
    /// Closed-loop run along the reference; both variants when none is given.
    Run {
        #[command(flatten)]
        common: Common,
        /// physics or neural
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Region-decomposed error metrics over the run logs.
    Metrics(Common),
    /// Plot-ready traces and error histograms.
    Export(Common),
}

struct Job {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Job> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", common.config.display()))?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    Ok(Job { cfg, seed, out })
}

fn report(m: &Manifest, started: Instant) {
    for f in &m.outputs {
        println!("  wrote {} ({} bytes)", f.name, f.bytes);
    }
    println!("{} done in {:.1} s, config {}", m.command, started.elapsed().as_secs_f64(), &m.config_hash[..12]);
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let started = Instant::now();
    match cli.command {
        Command::GenData(c) => {
            let ctx = load(&c)?;
            report(&cmd_gen_data(&ctx.cfg, ctx.seed, &ctx.out)?, started);
        }
        Command::Train(c) => {
            let ctx = load(&c)?;
            report(&cmd_train(&ctx.cfg, ctx.seed, &ctx.out)?, started);
        }
        Command::Run { common, variant } => {
            let ctx = load(&common)?;
            let variants = variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
            for v in variants {
                let m = cmd_run(&ctx.cfg, ctx.seed, v, &ctx.out).with_context(|| format!("{v} run"))?;
                report(&m, started);
            }
        }
        Command::Metrics(c) => {
            let ctx = load(&c)?;
            let (m, metrics) = cmd_metrics(&ctx.cfg, ctx.seed, &ctx.out)?;
            for vm in &metrics.variants {
                println!("{} ({}, s = {:.1} m)", vm.variant, vm.termination, vm.s_final);
                for (region, st) in &vm.regions {
                    println!(
                        "  {region:14} mean |e| {:.3} m  |beta err| {:.2} deg  |v err| {:.3} m/s  |delta err| {:.2} deg",
                        st.mean.lateral, st.mean.sideslip, st.mean.velocity, st.mean.steering
                    );
                }
                for w in &vm.warnings {
                    println!("  warning: {w}");
                }
            }
            report(&m, started);
        }
        Command::Export(c) => {
            let ctx = load(&c)?;
            report(&cmd_export(&ctx.cfg, ctx.seed, &ctx.out)?, started);
        }
    }
    Ok(())
}
