//! Command-line harness: dataset generation, ensemble training, evaluation
//! over clean and corrupted splits, ensemble enumeration, attribution-method
//! comparison, reliability-model simulation, and report emission.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use divlab::attribution::AttribMethod;
use divlab::data::{gen_shapes, save_idx};
use divlab::lm::{joint_failure_exact, joint_failure_mc};

use divlab_cli::combos::combinations;
use divlab_cli::config::{parse_corrupt_flag, ExperimentConfig};
use divlab_cli::eval::{attrib_compare, dataset_suite, evaluate_ensemble};
use divlab_cli::lmworld::WorldFile;
use divlab_cli::report::{
    parse_rows_csv, prediction_csv, rows_csv, trend_summary_csv, write_gnuplot_data,
};
use divlab_cli::train::{load_members, train_ensemble, write_outcome};

#[derive(Parser)]
#[command(name = "divlab", about = "ensemble diversity laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset and write it as IDX files
    GenData {
        #[arg(long, default_value_t = 800)]
        samples: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_images: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Train the configured ensemble; writes checkpoints and the epoch log
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate trained members over the clean and corrupted validation sets
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding member checkpoints (defaults to the config's
        /// output directory)
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Which checkpoint set to load: final or best
        #[arg(long, default_value = "final")]
        which: String,
        /// Extra corruption, e.g. kind=lines,strength=1.6,seed=3 (repeatable)
        #[arg(long)]
        corrupt: Vec<String>,
    },
    /// List all k-member subsets of an n-model pool
    Enumerate {
        #[arg(long)]
        pool: usize,
        #[arg(long)]
        members: usize,
        /// Print only the count
        #[arg(long, default_value_t = false)]
        count_only: bool,
    },
    /// Compare attribution methods across a trained model pool
    AttribCompare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value = "final")]
        which: String,
        /// Samples used per attribution map batch
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
    /// Simulate a design-diversity world exactly or by Monte Carlo
    LmSim {
        #[arg(long)]
        world: PathBuf,
        /// Exact enumeration (default)
        #[arg(long, default_value_t = false)]
        exact: bool,
        /// Monte Carlo with this many trials
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build trend summaries and plot data from a rows CSV
    Report {
        /// rows.csv produced by eval
        #[arg(long)]
        rows: PathBuf,
        /// Output directory for trend_summary.csv and .dat files
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            samples,
            classes,
            channels,
            height,
            width,
            seed,
            out_images,
            out_labels,
        } => {
            let ds = gen_shapes(samples, classes, (channels, height, width), seed)?;
            save_idx(&ds, &out_images, &out_labels)?;
            println!(
                "wrote {} images ({channels}x{height}x{width}, {classes} classes) to {} / {}",
                ds.len(),
                out_images.display(),
                out_labels.display()
            );
        }
        Command::Train { config } => {
            let cfg = config.load()?;
            let outcome = train_ensemble(&cfg)?;
            let dir = PathBuf::from(&cfg.output_dir);
            write_outcome(&outcome, &dir)?;
            let last = outcome.logs.last().context("no epochs ran")?;
            println!(
                "trained {} members for {} epochs; final ensemble val acc {:.4} (best {:.4} at epoch {}); artifacts in {}",
                outcome.final_models.len(),
                cfg.epochs,
                last.ensemble_val_acc,
                outcome
                    .logs
                    .iter()
                    .map(|l| l.ensemble_val_acc)
                    .fold(f64::NEG_INFINITY, f64::max),
                outcome.best_epoch,
                dir.display()
            );
        }
        Command::Eval { config, checkpoints, which, corrupt } => {
            let cfg = config.load()?;
            let dir = checkpoints.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let models = load_members(&dir, &which)?;
            let d = &cfg.dataset;
            let full =
                gen_shapes(d.samples, d.classes, (d.channels, d.height, d.width), d.seed)?;
            let (_, val) = full.split_train_val(d.val_fraction)?;
            let mut specs = cfg.corruption_specs()?;
            for flag in &corrupt {
                specs.push(parse_corrupt_flag(flag)?);
            }
            let suite = dataset_suite(&val, &specs)?;
            let kinds = cfg.consensus_kinds()?;
            let ids: Vec<usize> = (0..models.len()).collect();
            let (log, rows) = evaluate_ensemble(&models, &ids, &suite, &kinds, cfg.seed)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("predictions.csv"), prediction_csv(&log))?;
            std::fs::write(dir.join("rows.csv"), rows_csv(&rows)?)?;
            for r in &rows {
                println!(
                    "{} {} {}: ensemble {:.4} top {:.4} Y {:+.4}",
                    r.dataset, r.consensus, r.members, r.ensemble_acc, r.top_member_acc,
                    r.improvement
                );
            }
            println!("wrote {} and {}", dir.join("predictions.csv").display(), dir.join("rows.csv").display());
        }
        Command::Enumerate { pool, members, count_only } => {
            let combos = combinations(pool, members)?;
            println!("C({pool},{members}) = {}", combos.len());
            if !count_only {
                for c in &combos {
                    println!(
                        "{}",
                        c.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
                    );
                }
            }
        }
        Command::AttribCompare { config, checkpoints, which, samples } => {
            let cfg = config.load()?;
            let dir = checkpoints.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let pool = load_members(&dir, &which)?;
            let d = &cfg.dataset;
            let full =
                gen_shapes(d.samples, d.classes, (d.channels, d.height, d.width), d.seed)?;
            let (_, val) = full.split_train_val(d.val_fraction)?;
            let methods = [
                AttribMethod::Saliency,
                AttribMethod::IntegratedGradients { steps: 2 },
                AttribMethod::IntegratedGradients { steps: 10 },
                AttribMethod::IntegratedGradients { steps: 50 },
            ];
            let cmp = attrib_compare(&pool, &val, &methods, samples)?;
            let mut csv = String::from("pair");
            for m in &cmp.methods {
                csv.push_str(&format!(",{m}"));
            }
            csv.push('\n');
            for (p, pair) in cmp.pairs.iter().enumerate() {
                csv.push_str(pair);
                for s in &cmp.scores {
                    csv.push_str(&format!(",{:.10}", s[p]));
                }
                csv.push('\n');
            }
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("attrib_scores.csv"), csv)?;
            println!("method correlation matrix:");
            for (a, name) in cmp.methods.iter().enumerate() {
                let row = cmp.correlation[a]
                    .iter()
                    .map(|v| format!("{v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                println!("  {name:>10} {row}");
            }
            println!("mean pairwise correlation: {:.4}", cmp.mean_pairwise_correlation);
        }
        Command::LmSim { world, exact, mc, seed } => {
            let (w, sa, sb) = WorldFile::load(&world)?;
            if exact && mc.is_some() {
                bail!("choose either --exact or --mc, not both");
            }
            match mc {
                Some(trials) => {
                    let est = joint_failure_mc(&w, &sa, &sb, trials, seed)?;
                    println!(
                        "P(both fail) estimate {:.6} (standard error {:.6}, {} trials, seed {seed})",
                        est.mean, est.std_error, est.trials
                    );
                }
                None => {
                    let jf = joint_failure_exact(&w, &sa, &sb)?;
                    println!("P(both fail)      = {:.6}", jf.p_both);
                    println!("E[theta_A]        = {:.6}", jf.mean_a);
                    println!("E[theta_B]        = {:.6}", jf.mean_b);
                    println!("product           = {:.6}", jf.mean_a * jf.mean_b);
                    println!("covariance        = {:+.6}", jf.covariance);
                }
            }
        }
        Command::Report { rows, out } => {
            let text = std::fs::read_to_string(&rows)
                .with_context(|| format!("reading {}", rows.display()))?;
            let parsed = parse_rows_csv(&text)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("trend_summary.csv"), trend_summary_csv(&parsed)?)?;
            write_gnuplot_data(&parsed, &out)?;
            println!("wrote trend summary and plot data for {} rows to {}", parsed.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let category = err
            .downcast_ref::<divlab::Error>()
            .map(|e| e.category())
            .unwrap_or("cli");
        eprintln!(
            "{}",
            serde_json::json!({ "error": { "category": category, "message": err.to_string() } })
        );
        std::process::exit(1);
    }
}
