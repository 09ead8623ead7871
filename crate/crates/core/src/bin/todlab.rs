//! Command-line front end. Flags override the config file; among flags the
//! later one wins, and specific flags (`--seeds`, `--noise.p`, ...) are
//! applied after every `--set`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use todlab::active::Sampler;
use todlab::experiment::{self, bounds, config, BoundsOptions, LoadedConfig};
use todlab::selection::SelectionMethod;
use todlab::Error;

#[derive(Parser)]
#[command(name = "todlab", version, about = "Temporal output discrepancy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Active-learning experiments.
    #[command(subcommand)]
    Al(AlCommand),
    /// Numerical checks of the discrepancy bounds.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Model-selection studies.
    #[command(subcommand)]
    Select(SelectCommand),
    /// Plot-ready tables from a stored `al run` directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<input>/report`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AlCommand {
    /// Run the configured loop for every seed.
    Run(Common),
    /// Paired comparison of samplers over shared seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sampler names.
        #[arg(long, value_delimiter = ',', required = true)]
        samplers: Vec<String>,
    },
    /// Full-factorial grid over config keys, e.g. `--grid lambda=0,0.05 alpha=0.9,0.99`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        grid: Vec<String>,
    },
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Randomized trials of every bound check.
    Bounds {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
        eta: Vec<f64>,
        #[arg(long = "T", value_delimiter = ',', default_value = "1,10,50")]
        t: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        slack: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SelectCommand {
    /// Build candidate pools and score every selector.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        gap_epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// `key.path=value` override; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long = "noise.p")]
    noise_p: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Concurrent jobs; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self, extra: Vec<(String, Value)>) -> todlab::Result<LoadedConfig> {
        let mut sets = self
            .sets
            .iter()
            .map(|s| config::parse_set(s))
            .collect::<todlab::Result<Vec<_>>>()?;
        if let Some(p) = self.noise_p {
            sets.push(("noise.p".into(), json!(p)));
        }
        if let Some(s) = &self.seeds {
            sets.push(("seeds".into(), json!(s)));
        }
        if let Some(d) = &self.output_dir {
            sets.push(("output_dir".into(), json!(d)));
        }
        sets.extend(extra);
        experiment::load_config(&self.config, &sets)
    }
}

enum Failure {
    Lib(Error),
    Threshold(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn announce(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Al(AlCommand::Run(c)) => {
            let lc = c.load(vec![])?;
            let out = experiment::al_run(&lc, c.jobs)?;
            announce(&out.files);
        }
        Command::Al(AlCommand::Compare { common, samplers }) => {
            let samplers = samplers
                .iter()
                .map(|s| s.trim().parse::<Sampler>())
                .collect::<todlab::Result<Vec<_>>>()?;
            let lc = common.load(vec![])?;
            let out = experiment::al_compare(&lc, &samplers, common.jobs)?;
            println!("{:<16} {:>10} {:>22}", "sampler", "final_acc", "win/tie/loss vs random");
            for (i, l) in out.labels.iter().enumerate() {
                let w = out.win_rate(i);
                println!("{l:<16} {:>10.4} {:>14}/{}/{}", out.mean_final(i), w.wins, w.ties, w.losses);
            }
            println!("outputs in {}", lc.config.output_dir.display());
        }
        Command::Al(AlCommand::Sweep { common, grid }) => {
            let grid = grid
                .iter()
                .map(|g| experiment::parse_grid_axis(g))
                .collect::<todlab::Result<Vec<_>>>()?;
            let lc = common.load(vec![])?;
            let out = experiment::al_sweep(&lc, &grid, common.jobs)?;
            let best = &out.cells[out.best];
            println!("{} cells; best {} with mean final accuracy {:.4}", out.cells.len(), json!(best.settings), best.mean());
            println!("outputs in {}", lc.config.output_dir.display());
        }
        Command::Verify(VerifyCommand::Bounds {
            trials,
            eta,
            t,
            slack,
            seed,
            output_dir,
        }) => {
            let opts = BoundsOptions {
                trials,
                etas: eta,
                ts: t,
                slack,
                seed,
            };
            let out_dir = output_dir.unwrap_or_else(default_output_dir);
            let res = experiment::run_bounds(&opts)?;
            experiment::write_bounds(&out_dir, &res)?;
            let table = bounds::summary_table(&res);
            println!("{:<22} {:>8} {:>5} {:>7} {:>12} {:>8}", "check", "eta", "T", "trials", "max_ratio", "failures");
            for r in &table.rows {
                println!("{:<22} {:>8} {:>5} {:>7} {:>12.6} {:>8}", r[0], r[1], r[2], r[3], r[4].parse::<f64>().unwrap_or(f64::NAN), r[5]);
            }
            println!("outputs in {}", out_dir.display());
            let bad = res.threshold_failures();
            if !bad.is_empty() {
                return Err(Failure::Threshold(format!(
                    "{} checks exceed their threshold (first: {} trial {})",
                    bad.len(),
                    bad[0].check,
                    bad[0].trial
                )));
            }
        }
        Command::Select(SelectCommand::Run {
            common,
            pool_size,
            gap_epochs,
            methods,
            draws,
            k,
        }) => {
            let mut extra = Vec::new();
            if let Some(n) = pool_size {
                experiment::select::check_pool_size(n)?;
                extra.push(("selection.pool_size".to_string(), json!(n)));
            }
            if let Some(g) = gap_epochs {
                extra.push(("selection.gap_epochs".to_string(), json!(g)));
            }
            if let Some(m) = methods {
                let m = m
                    .iter()
                    .map(|s| s.trim().parse::<SelectionMethod>())
                    .collect::<todlab::Result<Vec<_>>>()?;
                extra.push(("selection.methods".to_string(), json!(m)));
            }
            if let Some(d) = draws {
                extra.push(("selection.draws".to_string(), json!(d)));
            }
            if let Some(k) = k {
                extra.push(("selection.ks".to_string(), json!(k)));
            }
            let lc = common.load(extra)?;
            let out = experiment::select_run(&lc, common.jobs)?;
            let hits = out.hit_table();
            println!("{:<12} {:>3} {:>9}", "method", "k", "hit_rate");
            for r in &hits.rows {
                println!("{:<12} {:>3} {:>9}", r[0], r[1], r[4]);
            }
            println!("outputs in {}", lc.config.output_dir.display());
        }
        Command::Report { input, output_dir } => {
            let out_dir = output_dir.unwrap_or_else(|| input.join("report"));
            let res = experiment::report(&input, &out_dir)?;
            print!("{}", res.summary);
            announce(&res.files);
        }
    }
    Ok(())
}

fn default_output_dir() -> PathBuf {
    match std::env::var(experiment::OUTPUT_DIR_ENV) {
        Ok(d) if !d.is_empty() => PathBuf::from(d),
        _ => Path::new("todlab-out").to_path_buf(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
        Err(Failure::Threshold(msg)) => {
            eprintln!("threshold failure: {msg}");
            ExitCode::from(3)
        }
    }
}
