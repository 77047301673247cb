use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use na_snn::harness::{self, Experiment, Overrides, RunConfig};
use na_snn::Method;

#[derive(Parser)]
#[command(name = "na-snn", version, about = "Train and benchmark spiking networks with neighborhood aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Teach one neuron random target spike trains, round after round.
    SingleNeuron(RunArgs),
    /// Record spike-train changes during single-neuron training and rank them by MP-dist.
    MpdistEval(RunArgs),
    /// Time forward, backward and optimizer phases across window lengths.
    Bench(RunArgs),
    /// Train a classifier on IDX digit files.
    Train(RunArgs),
    /// Summarize a finished run from its manifest.
    Report {
        /// Run directory or its manifest.json.
        manifest: PathBuf,
        /// Where to write the plot-ready tables; defaults to `<run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Na,
    Surrogate,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Na => Method::Na,
            MethodArg::Surrogate => Method::Surrogate,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with configuration values; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Number of simulation steps N_t.
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory for the manifest and tables.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Directory holding the four standard IDX files.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self, experiment: Experiment) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(experiment, self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            method: self.method.map(Method::from),
            steps: self.steps,
            rounds: self.rounds,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mnist_dir: self.mnist_dir.clone(),
            train_images: self.train_images.clone(),
            train_labels: self.train_labels.clone(),
            test_images: self.test_images.clone(),
            test_labels: self.test_labels.clone(),
        });
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SingleNeuron(args) => {
            let cfg = args.config(Experiment::SingleNeuron)?;
            let run = harness::run_single_neuron(&cfg)?;
            for w in &run.warnings {
                eprintln!("warning: {w}");
            }
            let path = run.write(&args.out)?;
            println!(
                "{} rounds, converged {:.1}%, median convergence iteration {}",
                run.rounds.len(),
                100.0 * run.converged_fraction(),
                run.median_convergence()
            );
            println!("wrote {}", path.display());
        }
        Command::MpdistEval(args) => {
            let cfg = args.config(Experiment::MpdistEval)?;
            let run = harness::run_mpdist_eval(&cfg)?;
            let path = run.write(&args.out)?;
            println!(
                "{} changed transitions, rank-1 fraction {:.3}",
                run.cdf.total(),
                run.cdf.top1_fraction()
            );
            println!("wrote {}", path.display());
        }
        Command::Bench(args) => {
            let cfg = args.config(Experiment::Bench)?;
            let run = harness::run_bench(&cfg)?;
            println!("method     N_t  forward_s    backward_s   optimizer_s");
            for r in run.rows() {
                println!(
                    "{:<10} {:>3}  {:.6e} {:.6e} {:.6e}",
                    r.method.as_str(),
                    r.n_steps,
                    r.forward_s,
                    r.backward_s,
                    r.optimizer_s
                );
            }
            println!("wrote {}", run.write(&args.out)?.display());
        }
        Command::Train(args) => {
            let cfg = args.config(Experiment::Train)?;
            let run = harness::run_train(&cfg)?;
            for e in &run.epochs {
                println!("epoch {:>3}  loss {:.5}  test accuracy {:.4}", e.epoch, e.mean_loss, e.test_accuracy);
            }
            println!("wrote {}", run.write(&args.out)?.display());
        }
        Command::Report { manifest, out } => {
            let report = harness::report(&manifest)?;
            print!("{}", report.summary);
            let dir = match out {
                Some(d) => d,
                None => {
                    let base = if manifest.is_dir() { manifest.clone() } else { manifest.parent().map(PathBuf::from).unwrap_or_default() };
                    base.join("report")
                }
            };
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, table) in &report.tables {
                table.write(&dir.join(name))?;
            }
            println!("tables in {}", dir.display());
        }
    }
    Ok(())
}
