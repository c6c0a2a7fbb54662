use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use mglab_core::game::MarkovGame;
use mglab_core::harness::{
    emit_outputs, hard_lb_run, run_experiment, run_sweep, summary, ExperimentConfig, LearnerSpec, OutputSpec,
};
use mglab_core::matrix::{solve_zero_sum, MatrixGame, ORACLE_TOL};
use mglab_core::oracle::minimax_values;

#[derive(Parser)]
#[command(name = "mglab", version, about = "Online learning in episodic zero-sum Markov games")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write ledger.csv, summary.json and regret.svg.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output folder; without it the config's own output paths are used.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of seeds x G x opponent-action duplication in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Seeds, as a list `1,2,5` or a half-open range `0..20`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        /// Fixed G values for the vol learner; omitted keeps the config's.
        #[arg(long, value_delimiter = ',')]
        g: Vec<f64>,
        /// Duplication factors for the min player's actions.
        #[arg(long = "dup", value_delimiter = ',')]
        dup: Vec<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print V*, the max player's and the min player's Nash policies for a game file.
    Oracle {
        game: PathBuf,
    },
    /// Solve a zero-sum matrix game given as JSON rows or CSV.
    SolveMatrix {
        matrix: PathBuf,
    },
    /// Strong regret on the hard lock game, one CSV row per seed.
    HardLb {
        /// Lock length.
        #[arg(long = "H")]
        lock: usize,
        #[arg(long = "K")]
        episodes: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_enum, default_value_t = HardLearner::Vol)]
        learner: HardLearner,
        /// Defaults to min(sqrt(2^H / K), 1/4).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HardLearner {
    Vol,
    Uniform,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {text}");
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_matrix(path: &Path) -> Result<MatrixGame> {
    let text = read(path)?;
    let trimmed = text.trim_start();
    let rows: Vec<Vec<f64>> = if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text)?;
        // Accept bare rows or {"rows": [...]}.
        let rows = v.get("rows").cloned().unwrap_or(v);
        serde_json::from_value(rows).context("expected an array of numeric rows")?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|x| x.trim().parse::<f64>().with_context(|| format!("bad entry {x:?}")))
                    .collect()
            })
            .collect::<Result<_>>()?
    };
    Ok(MatrixGame::from_rows(&rows)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ledger = run_experiment(&cfg)?;
            let outputs = out.as_deref().map(OutputSpec::in_dir).unwrap_or_else(|| cfg.output.clone());
            emit_outputs(&ledger, &cfg, &outputs)?;
            println!("{}", serde_json::to_string_pretty(&summary(&ledger, &cfg))?);
        }
        Cmd::Sweep { config, seeds, g, dup, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = parse_seeds(&seeds)?;
            let gs: Vec<Option<f64>> = if g.is_empty() { vec![None] } else { g.into_iter().map(Some).collect() };
            let dups: Vec<Option<usize>> = if dup.is_empty() { vec![None] } else { dup.into_iter().map(Some).collect() };
            let cells = run_sweep(&cfg, &seeds, &gs, &dups)?;
            let mut csv = String::from("seed,g,duplicate_min_actions,weak_regret,loglog_slope,strong_regret\n");
            for c in &cells {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    c.seed,
                    opt(c.g),
                    opt(c.duplicate_min_actions),
                    c.weak_regret,
                    opt(c.loglog_slope),
                    opt(c.strong_regret)
                )?;
            }
            emit(out.as_deref(), &csv)?;
        }
        Cmd::Oracle { game } => {
            let g = MarkovGame::load(&game)?;
            let sol = minimax_values(&g, ORACLE_TOL)?;
            println!("{}", serde_json::to_string_pretty(&sol)?);
        }
        Cmd::SolveMatrix { matrix } => {
            let m = parse_matrix(&matrix)?;
            let cert = solve_zero_sum(&m, ORACLE_TOL)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            if !cert.converged {
                bail!("solver did not certify a gap within {ORACLE_TOL}");
            }
        }
        Cmd::HardLb {
            lock,
            episodes,
            seeds,
            learner,
            epsilon,
            out,
        } => {
            let spec = match learner {
                HardLearner::Vol => LearnerSpec::vol(),
                HardLearner::Uniform => LearnerSpec::Uniform,
            };
            let rows = (0..seeds)
                .into_par_iter()
                .map(|seed| hard_lb_run(lock, episodes, epsilon, spec.clone(), seed))
                .collect::<Result<Vec<_>, _>>()?;
            let mut csv = String::from("seed,epsilon,strong_regret,upper_bound,exact,threshold,linear\n");
            for r in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.seed, r.epsilon, r.strong_regret, r.upper_bound, r.exact, r.threshold, r.linear
                )?;
            }
            emit(out.as_deref(), &csv)?;
        }
    }
    Ok(())
}
