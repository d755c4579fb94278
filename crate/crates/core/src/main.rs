use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use gcl_core::config::RunConfig;
use gcl_core::coreset::k_center_greedy;
use gcl_core::dataset::{
    generate_synthetic, group_deviation, import_embeddings, read_dataset_dir, write_dataset_dir,
    DatasetIndex, Grouping,
};
use gcl_core::encoder::{
    embed_all, history_csv, read_checkpoint, train, write_checkpoint, CheckpointHeader,
};
use gcl_core::error::io_err;
use gcl_core::gcle::write_gcle;
use gcl_core::pipeline::{ablate, ablation_csv, run_experiment};
use gcl_core::sampler::{build_epoch, default_batch_size};
use gcl_core::{seed, verify, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gcl", version, about = "Group-contrastive coreset active learning")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set train.epochs=20
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory (default: synthetic data from the synth.* keys)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the fully resolved configuration and exit
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into --out
    GenData,
    /// Train an encoder with the loss.* weights; writes encoder.ckpt and history.csv
    TrainEncoder {
        /// Also write the sampler plan of this epoch (0-based) as JSON
        #[arg(long)]
        dump_epoch: Option<usize>,
    },
    /// Embed every slice with a trained encoder; writes embeddings.gcle
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// K-Center Greedy on a GCLE file; prints a JSONL trace
    Select {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        budget: usize,
        /// `empty` or comma-separated slice ids
        #[arg(long, default_value = "empty")]
        initial: String,
    },
    /// Run every strategy over the budget schedule; writes report.json, summary.csv, timings.json
    RunRounds,
    /// Mean pairwise deviation per grouping, as JSON
    Stats {
        /// Read features from a GCLE file instead of the dataset
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Loss-combination sweep; writes ablation.csv
    Ablate,
    /// Run the oracle suites; exits 1 if any fails
    Verify,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if cfg.threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> Result<(DatasetIndex, Vec<u32>)> {
    match &cfg.data {
        Some(dir) => read_dataset_dir(dir),
        None => generate_synthetic(&cfg.synth_spec()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    Ok(&cfg.out)
}

fn parse_initial(spec: &str, ds: &DatasetIndex) -> Result<Vec<usize>> {
    if spec.trim() == "empty" || spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|t| {
            let id: u32 = t
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("initial: `{t}` is not a slice id")))?;
            ds.slices()
                .iter()
                .position(|s| s.slice_id == id)
                .ok_or_else(|| Error::Config(format!("initial: unknown slice id {id}")))
        })
        .collect()
}

fn run(cmd: &Command, cfg: &RunConfig) -> Result<bool> {
    match cmd {
        Command::GenData => {
            let spec = cfg.synth_spec();
            let (ds, labels) = generate_synthetic(&spec)?;
            write_dataset_dir(out_dir(cfg)?, &ds, &labels, Some(&spec))?;
            eprintln!("wrote {} slices to {}", ds.len(), cfg.out.display());
        }
        Command::TrainEncoder { dump_epoch } => {
            let (ds, _) = load_data(cfg)?;
            let out = out_dir(cfg)?;
            let train_cfg = cfg.train_config();
            let groups = cfg.loss.groups();
            if let Some(e) = dump_epoch {
                let m = train_cfg.batch_size.unwrap_or_else(|| default_batch_size(groups));
                let epoch_seed = seed::derive(train_cfg.seed, seed::tag::EPOCH);
                let plan = build_epoch(&ds, groups, m, seed::derive(epoch_seed, *e as u64))?;
                let path = out.join(format!("epoch_{e}.json"));
                write(&path, serde_json::to_vec_pretty(&plan.to_json(&ds))?)?;
            }
            let outcome = train(&ds, groups, &cfg.loss, &train_cfg)?;
            let header = CheckpointHeader {
                architecture: outcome.params.architecture().clone(),
                train_config: train_cfg.clone(),
                loss_config: cfg.loss,
                groups,
                seed: train_cfg.seed,
            };
            write_checkpoint(&out.join("encoder.ckpt"), &header, &outcome.params)?;
            write(&out.join("history.csv"), history_csv(&outcome.history))?;
            if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
                eprintln!("epoch 1 loss {first}, epoch {} loss {last}", outcome.history.len());
            }
        }
        Command::Embed { checkpoint } => {
            let (ds, _) = load_data(cfg)?;
            let (_, params) = read_checkpoint(checkpoint)?;
            let emb = embed_all(&params, &ds)?;
            write_gcle(&out_dir(cfg)?.join("embeddings.gcle"), &emb, &ds.metas())?;
        }
        Command::Select {
            embeddings,
            budget,
            initial,
        } => {
            let (ds, emb) = import_embeddings(embeddings)?;
            let init = parse_initial(initial, &ds)?;
            let cold = seed::derive(cfg.seed, seed::tag::COLD_START);
            let state = k_center_greedy(&emb, &init, *budget, cold)?;
            for (rank, p) in state.trace().iter().enumerate() {
                let line = json!({
                    "round": 0,
                    "rank": rank,
                    "slice_id": ds.slice(p.index).slice_id,
                    "min_dist": p.min_dist.is_finite().then_some(p.min_dist),
                });
                println!("{line}");
            }
        }
        Command::RunRounds => {
            let (ds, labels) = load_data(cfg)?;
            let (report, timings) = run_experiment(
                &ds,
                &labels,
                &cfg.strategy_specs(),
                &cfg.round_plan(),
                &cfg.train_config(),
            )?;
            let out = out_dir(cfg)?;
            write(&out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
            write(&out.join("summary.csv"), report.summary_csv())?;
            write(&out.join("timings.json"), serde_json::to_vec_pretty(&timings)?)?;
            print!("{}", report.summary_csv());
        }
        Command::Stats { embeddings } => {
            let ds = match embeddings {
                Some(p) => import_embeddings(p)?.0,
                None => load_data(cfg)?.0,
            };
            let mut stats = serde_json::Map::new();
            for g in Grouping::ALL {
                let v = match group_deviation(&ds, g) {
                    Ok(v) => json!(v),
                    Err(Error::UndefinedStatistic(_)) => serde_json::Value::Null,
                    Err(e) => return Err(e),
                };
                stats.insert(g.name().into(), v);
            }
            println!("{}", serde_json::Value::Object(stats));
        }
        Command::Ablate => {
            let (ds, labels) = load_data(cfg)?;
            let rows = ablate(
                &ds,
                &labels,
                cfg.ablate_terms,
                &cfg.round_plan(),
                &cfg.train_config(),
                cfg.ablate_low_budget_max,
            )?;
            let csv = ablation_csv(&rows);
            write(&out_dir(cfg)?.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Verify => {
            let results = verify::run_all(cfg.seed);
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{} {} ({}/{} cases failed; {})",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.failures,
                    r.cases,
                    r.detail
                );
            }
            return Ok(ok);
        }
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
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_text());
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = &cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(2);
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cmd, &cfg)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
