//! Command-line surface over `sef-core`: dataset generation, training,
//! evaluation, gradient checking, correlation/activation exports, table
//! scoring, the ablation runner, and parameter accounting.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
//! stderr; results go to stdout or to the requested output files.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use sef_core::analysis::{
    export_activation_maps, export_correlation, format_score, run_ablation, score_table,
    MethodTable,
};
use sef_core::data::{generate, read_dataset, split_validation, write_dataset, Dataset, SynthSpec};
use sef_core::loss::{sef_objective, LossWeights};
use sef_core::nn::{count_extra_params, GroupPartition, SefModel};
use sef_core::tensor::{finite_diff_check, Tensor};
use sef_core::train::{
    evaluate, load_checkpoint, save_checkpoint, train, SgdOptimizer, TrainConfig,
};
use sef_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sef",
    about = "Semantic channel grouping and feature enhancement on a small CNN",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Training configuration file (`key=value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic part-composition dataset as SEFD files.
    GenData {
        /// Directory receiving train.sefd / val.sefd / test.sefd.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        parts: usize,
        #[arg(long, default_value_t = 4)]
        alphabet: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 2)]
        jitter: usize,
        #[arg(long, default_value_t = 8.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 128)]
        train_per_class: usize,
        #[arg(long, default_value_t = 64)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
    },
    /// Train a model; prints per-epoch history as CSV.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a dataset; prints accuracy.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// SEFD dataset to evaluate on.
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference check of the full objective on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export the averaged channel-correlation matrix as CSV + PGM.
    Correlations {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_pgm: PathBuf,
    },
    /// Export per-group activation maps (PGM) and overlays (PPM).
    Activations {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of leading dataset images to render.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Dense-rank scores for a method/dataset accuracy table.
    Score {
        /// CSV with header `method,<dataset>,...`; empty cells are missing.
        table: PathBuf,
        /// Optional full-precision CSV (scores and per-dataset ranks).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the five standard weight configurations and tabulate results.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count the parameters added by the group heads.
    Params {
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        groups: usize,
    },
}

/// Parses argv and runs the selected command. Returns the process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out_dir,
            seed,
            classes,
            parts,
            alphabet,
            image_size,
            jitter,
            noise_sigma,
            train_per_class,
            test_per_class,
            val_fraction,
        } => {
            let spec = SynthSpec {
                class_count: classes,
                parts_per_image: parts,
                glyph_alphabet_size: alphabet,
                image_size,
                jitter_radius: jitter,
                noise_sigma,
                train_per_class,
                test_per_class,
                val_fraction,
                seed,
            };
            let bundle = generate(&spec)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for (name, ds) in [
                ("train.sefd", &bundle.train),
                ("val.sefd", &bundle.val),
                ("test.sefd", &bundle.test),
            ] {
                let path = out_dir.join(name);
                write_dataset(ds, &path)?;
                println!("{} ({} samples)", path.display(), ds.len());
            }
            Ok(())
        }
        Command::Train { config } => cmd_train(config.load()?),
        Command::Eval {
            config,
            checkpoint,
            data,
        } => {
            let cfg = config.load()?;
            let mut model = model_from_config(&cfg)?;
            let mut optimizer = SgdOptimizer::new(cfg.momentum);
            load_checkpoint(&mut model, &mut optimizer, &checkpoint)?;
            let ds = read_dataset(&data)?;
            let accuracy = evaluate(&model, &ds)?;
            println!("accuracy,{accuracy}");
            Ok(())
        }
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Correlations {
            config,
            checkpoint,
            data,
            samples,
            out_csv,
            out_pgm,
        } => {
            let cfg = config.load()?;
            let mut model = model_from_config(&cfg)?;
            let mut optimizer = SgdOptimizer::new(cfg.momentum);
            load_checkpoint(&mut model, &mut optimizer, &checkpoint)?;
            let ds = read_dataset(&data)?;
            let summary = export_correlation(&model, &ds, samples, cfg.seed, &out_csv, &out_pgm)?;
            eprintln!(
                "correlation matrix over {} samples (seed {}) -> {}, {}",
                summary.samples,
                summary.seed,
                out_csv.display(),
                out_pgm.display()
            );
            Ok(())
        }
        Command::Activations {
            config,
            checkpoint,
            data,
            out_dir,
            count,
        } => {
            let cfg = config.load()?;
            let mut model = model_from_config(&cfg)?;
            let mut optimizer = SgdOptimizer::new(cfg.momentum);
            load_checkpoint(&mut model, &mut optimizer, &checkpoint)?;
            let ds = read_dataset(&data)?;
            let indices: Vec<usize> = (0..count.min(ds.len())).collect();
            let written = export_activation_maps(&model, &ds, &indices, &out_dir)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Score { table, out } => {
            let table = MethodTable::from_csv_path(&table)?;
            let result = score_table(&table)?;
            for m in &result.methods {
                println!("{},{}", m.name, format_score(m.score));
            }
            if let Some(path) = out {
                std::fs::write(&path, result.to_csv())
                    .map_err(|e| Error::Io { path, source: e })?;
            }
            Ok(())
        }
        Command::Ablate { config, out } => {
            let cfg = config.load()?;
            let spec = synth_spec_from_config(&cfg);
            let rows = run_ablation(&cfg, &spec, &out)?;
            println!("name,lambda,gamma,phi,test_accuracy");
            for r in &rows {
                println!(
                    "{},{},{},{},{}",
                    r.name, r.lambda, r.gamma, r.phi, r.test_accuracy
                );
            }
            eprintln!("full table -> {}", out.display());
            Ok(())
        }
        Command::Params {
            channels,
            classes,
            groups,
        } => {
            let partition = GroupPartition::equal(channels, groups)?;
            println!("{}", count_extra_params(channels, classes, &partition));
            Ok(())
        }
    }
}

fn model_from_config(cfg: &TrainConfig) -> Result<SefModel> {
    SefModel::with_default_backbone(cfg.channels, cfg.weights.groups, cfg.classes, cfg.seed)
}

fn synth_spec_from_config(cfg: &TrainConfig) -> SynthSpec {
    SynthSpec {
        class_count: cfg.classes,
        val_fraction: cfg.val_fraction,
        seed: cfg.seed,
        ..SynthSpec::default()
    }
}

/// Loads the datasets a training run needs: from SEFD files when paths are
/// configured (carving validation out of the training file), otherwise the
/// default synthetic bundle.
fn datasets_from_config(cfg: &TrainConfig) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    match &cfg.train_path {
        Some(path) => {
            let full = read_dataset(path)?;
            let (train_ds, val_ds) = split_validation(&full, cfg.val_fraction)?;
            let test_ds = cfg.test_path.as_deref().map(read_dataset).transpose()?;
            Ok((train_ds, val_ds, test_ds))
        }
        None => {
            let bundle = generate(&synth_spec_from_config(cfg))?;
            Ok((bundle.train, bundle.val, Some(bundle.test)))
        }
    }
}

fn cmd_train(cfg: TrainConfig) -> Result<()> {
    let (train_ds, val_ds, test_ds) = datasets_from_config(&cfg)?;
    if train_ds.class_count != cfg.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, config says {}",
            train_ds.class_count, cfg.classes
        )));
    }
    let mut model = model_from_config(&cfg)?;
    eprintln!(
        "training: {} samples, {} epochs, batch {}, lr {}, λ={} γ={} φ={} G={}",
        train_ds.len(),
        cfg.epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.weights.lambda,
        cfg.weights.gamma,
        cfg.weights.phi,
        cfg.weights.groups
    );
    let history = train(&mut model, &train_ds, &val_ds, &cfg)?;

    let mut header = String::from(
        "epoch,lr,cross_entropy,entropy,distill,grouping,total,val_accuracy",
    );
    for g in 0..cfg.weights.groups {
        let _ = write!(header, ",group{g}_val_accuracy");
    }
    println!("{header}");
    for r in &history {
        let mut line = format!(
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.loss.cross_entropy,
            r.loss.entropy_global,
            r.loss.distill_mean,
            r.loss.grouping,
            r.loss.total,
            r.val_accuracy
        );
        for acc in &r.group_val_accuracy {
            let _ = write!(line, ",{acc}");
        }
        println!("{line}");
    }
    if let Some(test_ds) = test_ds {
        let accuracy = evaluate(&model, &test_ds)?;
        println!("test_accuracy,{accuracy}");
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        let optimizer = SgdOptimizer::new(cfg.momentum);
        let path = dir.join("final.sefw");
        save_checkpoint(&model, &optimizer, cfg.epochs, &path)?;
        eprintln!("final checkpoint -> {}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let model = SefModel::with_default_backbone(8, 2, 3, seed)?;
    // a two-image batch of noisy 8×8 synthetic inputs
    let spec = SynthSpec {
        class_count: 3,
        parts_per_image: 1,
        glyph_alphabet_size: 3,
        image_size: 8,
        jitter_radius: 1,
        noise_sigma: 20.0,
        train_per_class: 1,
        test_per_class: 1,
        val_fraction: 0.0,
        seed,
    };
    let bundle = generate(&spec)?;
    let ds = &bundle.train;
    let image_data: Vec<f64> = ds.image(0)
        .iter()
        .chain(ds.image(1))
        .map(|&b| b as f64 / 255.0)
        .collect();
    let images = Tensor::new(vec![2, 3, 8, 8], image_data)?;
    let labels = vec![ds.label(0), ds.label(1)];
    let weights = LossWeights::new(1.0, 0.05, 1.0, 2)?;
    let params: Vec<(String, Tensor)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let report = finite_diff_check(&params, 1e-5, 1e-4, |g, ids| {
        let fwd = model.forward_from_ids(g, &images, ids)?;
        let (total, _) = sef_objective(
            g,
            fwd.logits_global,
            &fwd.logits_groups,
            fwd.features,
            &labels,
            model.partition(),
            &weights,
            false,
        )?;
        Ok(total)
    })?;
    println!("parameter,max_rel_error");
    for entry in &report.entries {
        println!("{},{:e}", entry.name, entry.max_rel_error);
    }
    println!(
        "overall,{:e} ({})",
        report.max_rel_error(),
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if !report.passed() {
        return Err(Error::NonFinite(format!(
            "gradient check failed: max relative error {:e} ≥ {:e}",
            report.max_rel_error(),
            report.tolerance
        )));
    }
    Ok(())
}
