use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dgama::analysis::consensus_check;
use dgama::consensus::probe_frozen;
use dgama::error::{Error, Result};
use dgama::harness::{self, write_matrix, write_sweep, write_sweep_summary};
use dgama::model::{compute_gamma_star, gen_er_precision, GAMMA_STAR_TOL};
use dgama::network::consensus_rate;
use dgama::Topology;

/// Distributed online graphical lasso simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `outputs` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a (K, W) grid over consecutive seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid axes such as `K=1,2 W=1,2`.
        #[arg(long, num_args = 1.., value_parser = parse_axis)]
        grid: Vec<(char, Vec<usize>)>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frozen-data consensus probe on a topology file.
    ProbeConsensus {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long, default_value_t = 50)]
        w_max: usize,
        /// Seed of the ground-truth covariance used as frozen data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the dual fixed point of a generated ground truth as CSV.
    GammaStar {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.4)]
        edge_prob: f64,
    },
}

fn parse_axis(s: &str) -> std::result::Result<(char, Vec<usize>), String> {
    let (name, values) = s.split_once('=').ok_or_else(|| format!("expected NAME=v1,v2 but got {s:?}"))?;
    let name = match name.trim() {
        "K" | "k" => 'K',
        "W" | "w" => 'W',
        other => return Err(format!("unknown grid axis {other:?}; use K or W")),
    };
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((name, values))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DGAMA_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.outputs.clone());
            let outcome = harness::run_experiment(&cfg, &out)?;
            info!("wrote outputs to {}", out.display());
            for (k, v) in &outcome.summary {
                println!("{k} = {v}");
            }
            Ok(())
        }
        Command::Sweep {
            config,
            grid,
            seeds,
            out,
        } => {
            let cfg = harness::load_config(&config)?;
            let axis = |name: char, default: usize| {
                grid.iter()
                    .rev()
                    .find(|(n, _)| *n == name)
                    .map_or(vec![default], |(_, v)| v.clone())
            };
            let rows = harness::sweep(&cfg, &axis('K', cfg.k), &axis('W', cfg.w), seeds)?;
            let out = out.unwrap_or_else(|| cfg.outputs.clone());
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let create = |name: &str| {
                let path = out.join(name);
                fs::File::create(&path).map_err(|e| Error::Io { path, source: e })
            };
            write_sweep(&rows, create("sweep.csv")?)?;
            write_sweep_summary(&rows, create("sweep_summary.csv")?)?;
            write_sweep_summary(&rows, io::stdout().lock())
        }
        Command::ProbeConsensus { topology, w_max, seed } => {
            let topo = Topology::load(&topology)?;
            let rate = consensus_rate(&topo)?;
            let (c, sigma) = (rate.c.unwrap_or(1.0), rate.sigma.unwrap_or(0.0));
            let gt = gen_er_precision(topo.p(), 0.4, seed)?;
            let errors = probe_frozen(&topo, &gt.covariance_true, w_max)?;
            let rows = consensus_check(&errors, c, sigma)?;
            println!("sigma = {sigma}");
            println!("c = {c}");
            let ok = rows.iter().filter(|r| r.satisfied).count();
            println!("bound satisfied in {ok} of {} (round, agent) pairs", rows.len());
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.write_record(["w", "agent", "error", "bound"])?;
            for r in &rows {
                w.write_record([
                    r.t.to_string(),
                    r.agent.map_or(String::new(), |a| (a + 1).to_string()),
                    r.lhs.to_string(),
                    r.rhs.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::Io {
                path: "stdout".into(),
                source: e,
            })
        }
        Command::GammaStar { p, lambda, seed, edge_prob } => {
            let gt = gen_er_precision(p, edge_prob, seed)?;
            let gamma = compute_gamma_star(&gt.covariance_true, lambda, GAMMA_STAR_TOL)?;
            write_matrix(&gamma, io::stdout().lock())
        }
    }
}
