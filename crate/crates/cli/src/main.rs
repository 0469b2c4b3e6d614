//! Command line front end: train, evaluate, sweep, export embeddings,
//! benchmark Top-m selection and write splits.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use tangnn::experiment::{
    format_bench, read_config_file, run_bench, run_embed, run_eval, run_split, run_sweep, run_train,
    BenchOptions, MetricRow, RunConfig, Sweep, CHECKPOINT_FILE,
};
use tangnn::Error;

const EXIT_INVALID: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "tangnn", version, about = "Graph representation learning with Top-m attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, then write its checkpoint, loss log and test metrics.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per value of m or of the train fraction.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', num_args = 0.., conflicts_with = "sweep_train_frac")]
        sweep_m: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sweep_train_frac: Option<Vec<f64>>,
    },
    /// Export one embedding row per node as TSV.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time Top-m index construction at growing graph sizes.
    BenchTopm {
        #[arg(long, value_delimiter = ',', default_values_t = [10_000, 20_000, 40_000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 30)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Time the quadratic reference selection instead.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the train/test split as JSON.
    Split(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with flat keys; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// tangnn, lc, flc, nai or tai
    #[arg(long)]
    variant: Option<String>,
    /// node, link, sentiment or regression
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    fanouts: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// batch or full
    #[arg(long)]
    pool: Option<String>,
}

impl RunArgs {
    fn config(&self) -> tangnn::Result<RunConfig> {
        let (mut map, base) = match &self.config {
            Some(p) => (read_config_file(p)?, p.parent().unwrap_or(Path::new(".")).to_path_buf()),
            None => (Map::new(), PathBuf::from(".")),
        };
        let mut set = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(k.into(), v);
            }
        };
        set("variant", self.variant.clone().map(Value::from));
        set("task", self.task.clone().map(Value::from));
        set("train_frac", self.train_frac.map(Value::from));
        set("m", self.m.map(Value::from));
        set("fanouts", self.fanouts.clone().map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("out", self.out.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
        set("pool", self.pool.as_ref().map(|p| Value::from(p.to_ascii_lowercase())));
        RunConfig::from_map(map, &base)
    }
}

fn print_rows(rows: &[MetricRow]) {
    for r in rows {
        println!("{} {} {} train_frac={} seed={} {}={:.6}", r.task, r.dataset, r.variant, r.train_frac, r.seed, r.metric, r.value);
    }
}

fn run(cli: Cli) -> tangnn::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let outcome = run_train(&cfg)?;
            println!(
                "trained {} epochs (best {}, {:?}); outputs in {}",
                outcome.fit.reports.len(),
                outcome.fit.best_epoch,
                outcome.fit.stop,
                cfg.out.display()
            );
            print_rows(&outcome.rows);
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.config()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
            print_rows(&run_eval(&cfg, &ckpt)?);
        }
        Command::Sweep { run, sweep_m, sweep_train_frac } => {
            let cfg = run.config()?;
            let sweep = match (sweep_m, sweep_train_frac) {
                (Some(ms), None) => Sweep::M(ms),
                (None, Some(fs)) => Sweep::TrainFrac(fs),
                _ => return Err(Error::Config("give exactly one of --sweep-m or --sweep-train-frac".into())),
            };
            for r in run_sweep(&cfg, &sweep)? {
                println!("m={} train_frac={} {}={:.6}", r.m, r.row.train_frac, r.row.metric, r.row.value);
            }
        }
        Command::Embed { run, checkpoint } => {
            let cfg = run.config()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
            println!("wrote {}", run_embed(&cfg, &ckpt)?.display());
        }
        Command::BenchTopm { sizes, dim, m, reps, oracle, seed } => {
            let opts = BenchOptions { sizes, dim, m, repetitions: reps, oracle, seed };
            print!("{}", format_bench(&run_bench(&opts)?));
        }
        Command::Split(args) => {
            let cfg = args.config()?;
            let split = run_split(&cfg)?;
            println!("train {} test {}; written to {}", split.train.len(), split.test.len(), cfg.out.display());
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("TANGNN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("TANGNN_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_INVALID);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_INVALID } else { EXIT_ABORT })
        }
    }
}
