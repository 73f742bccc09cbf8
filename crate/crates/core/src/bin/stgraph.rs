use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stgraph::bench::{bench_stga, bench_suppress, loglog_slope, stga_csv, suppress_csv, BenchMode, StgaBenchOptions};
use stgraph::config::Config;
use stgraph::gradcheck::run_all;
use stgraph::params::ParamStore;
use stgraph::pipeline::{init_params, run_sequence, MetricsReport};
use stgraph::sim::{simulate, SceneSequence};
use stgraph::train::{collect_samples, train_on_samples};
use stgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "stgraph", version, about = "Streaming query-graph detection on simulated scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a simulated scene as JSON lines.
    Simulate,
    /// Stream a scene through the pipeline and write metrics JSON.
    Run {
        /// Scene JSON lines; simulated from the seed when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Parameters saved by `train-toy`.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train on simulated frames, printing one JSON line per step.
    TrainToy {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Number of training scenes.
        #[arg(long, default_value_t = 1)]
        scenes: usize,
        #[arg(long)]
        save_params: Option<PathBuf>,
    },
    /// Run every finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Timing benchmarks as CSV.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    Suppress {
        #[arg(long, value_delimiter = ',', default_values_t = [250usize, 500, 1000, 2000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    Stga {
        #[arg(long, value_enum, default_value_t = Mode::Stga)]
        mode: Mode,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Stga,
    Dense,
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let cfg = match &g.config {
        Some(p) => Config::from_json(&read_input(p)?)?,
        None => Config::default(),
    };
    match cli.cmd {
        Cmd::Simulate => emit(&g.out, &simulate(&cfg.sim, g.seed)?.to_jsonl())?,
        Cmd::Run { scene, params } => {
            let scene = match scene {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                    SceneSequence::read_jsonl(BufReader::new(f), cfg.sim.dt)?
                }
                None => simulate(&cfg.sim, g.seed)?,
            };
            let params = match params {
                Some(p) => ParamStore::from_json(&read_input(&p)?)?,
                None => init_params(&cfg, g.seed),
            };
            let out = run_sequence(&scene, &params, &cfg, g.seed)?;
            emit(&g.out, &(MetricsReport::new(&cfg, out.metrics).to_json() + "\n"))?;
        }
        Cmd::TrainToy {
            steps,
            lr,
            scenes,
            save_params,
        } => {
            let scenes = (0..scenes as u64)
                .map(|k| simulate(&cfg.sim, g.seed + k))
                .collect::<Result<Vec<_>>>()?;
            let mut params = init_params(&cfg, g.seed);
            let samples = collect_samples(&scenes, cfg.train.frames, &params, &cfg, g.seed)?;
            let mut sink: Box<dyn Write> = match &g.out {
                Some(p) => Box::new(File::create(p)?),
                None => Box::new(std::io::stdout().lock()),
            };
            let mut io = Ok(());
            let steps = steps.unwrap_or(cfg.train.steps);
            let lr = lr.unwrap_or(cfg.train.lr);
            train_on_samples(&mut params, &samples, steps, lr, &cfg, |r| {
                if io.is_ok() {
                    io = serde_json::to_writer(&mut sink, r)
                        .map_err(Error::from)
                        .and_then(|_| sink.write_all(b"\n").map_err(Error::from));
                }
            })?;
            io?;
            sink.flush()?;
            if let Some(p) = save_params {
                std::fs::write(p, params.to_json()?)?;
            }
        }
        Cmd::Gradcheck { cases } => {
            let results = run_all(cases, g.seed)?;
            emit(&g.out, &(serde_json::to_string_pretty(&results)? + "\n"))?;
            return Ok(results.iter().all(|r| r.passed));
        }
        Cmd::Bench { which } => match which {
            BenchCmd::Suppress { sizes, workers, repeats } => {
                let rows = bench_suppress(&sizes, workers, cfg.theta, repeats, g.seed);
                emit(&g.out, &suppress_csv(&rows))?;
            }
            BenchCmd::Stga { mode, sizes, repeats } => {
                let mode = match mode {
                    Mode::Stga => BenchMode::Stga,
                    Mode::Dense => BenchMode::Dense,
                };
                let opts = StgaBenchOptions {
                    repeats,
                    ..Default::default()
                };
                let rows = bench_stga(&sizes, mode, &opts, g.seed)?;
                emit(&g.out, &stga_csv(&rows))?;
                if rows.len() > 1 {
                    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
                    let ys: Vec<f64> = rows.iter().map(|r| r.measured_ms).collect();
                    eprintln!("log-log slope {:.3}", loglog_slope(&xs, &ys));
                }
            }
        },
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
