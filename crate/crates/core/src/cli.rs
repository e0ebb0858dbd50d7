//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input-file
//! errors, 3 when a run aborts on a degenerate class or geometry.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{inject_ambiguity_noise, inject_factual_noise, BlobParams, NoiseType, NoisyDataset};
use crate::error::{Error, Result};
use crate::pipeline::{run_ablation, sample_unconfident, write_embeddings, Variant};
use crate::select::{correction_stats, write_stats_table, CorrectionLog, StatsRow};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_ABORT: u8 = 3;

/// Unconfident samples written by `--export-embeddings`.
const EXPORT_SAMPLES: usize = 200;

#[derive(Debug, Parser)]
#[command(name = "protosemi", version, about = "Noisy-label learning with prototype repartitioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Factual,
    Ambiguity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    #[value(name = "no_repar")]
    NoRepar,
    #[value(name = "no_semi")]
    NoSemi,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoRepar => Variant::NoRepar,
            VariantArg::NoSemi => Variant::NoSemi,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate Gaussian blobs and corrupt their labels.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 6.0)]
        sep: f64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, value_enum, default_value = "factual")]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a clean held-out set drawn from the same blobs.
        #[arg(long, requires = "heldout_per_class")]
        heldout_out: Option<PathBuf>,
        #[arg(long, requires = "heldout_out")]
        heldout_per_class: Option<usize>,
    },
    /// Run the pipeline or one of its ablations.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Clean evaluation set; required unless the config sets `eval_split`.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        #[arg(long)]
        report: PathBuf,
        /// Embeddings of sampled unconfident points and prototypes after warm-up.
        #[arg(long)]
        export_embeddings: Option<PathBuf>,
        /// Directory for one correction log CSV per repartitioning epoch.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Correction statistics table, one column per repartitioning epoch.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Final network checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize a correction log against its dataset.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData {
            classes,
            per_class,
            dim,
            sep,
            spread,
            noise,
            rate,
            seed,
            out: path,
            heldout_out,
            heldout_per_class,
        } => gen_data(
            BlobParams {
                num_classes: classes,
                per_class,
                dim,
                separation: sep,
                spread,
                seed,
            },
            noise,
            rate,
            path,
            heldout_out.zip(heldout_per_class),
            out,
        ),
        Command::Train {
            config,
            data,
            heldout,
            variant,
            report,
            export_embeddings,
            log_dir,
            stats,
            checkpoint,
        } => train(
            TrainArgs {
                config,
                data,
                heldout,
                variant: variant.into(),
                report,
                export_embeddings,
                log_dir,
                stats,
                checkpoint,
            },
            out,
        ),
        Command::Stats { log, data } => stats(log, data, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, Error::Aborted { .. }) {
                EXIT_ABORT
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn gen_data(
    params: BlobParams,
    noise: NoiseArg,
    rate: f64,
    path: PathBuf,
    heldout: Option<(PathBuf, usize)>,
    out: &mut dyn Write,
) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param(format!("--rate {rate} outside [0, 1]")));
    }
    let per_heldout = heldout.as_ref().map_or(0, |(_, n)| *n);
    let (clean, held) = params.generate_with_heldout(per_heldout)?;
    let noise_seed = params.seed.wrapping_add(1);
    let ds = match noise {
        NoiseArg::Factual => inject_factual_noise(&clean, rate, noise_seed)?,
        NoiseArg::Ambiguity => inject_ambiguity_noise(&clean, rate, noise_seed)?,
    };
    ds.save(&path)?;
    writeln!(
        out,
        "wrote {}: n={} k={} d={} noise={} rate={:.3}",
        path.display(),
        ds.len(),
        ds.num_classes(),
        ds.dim(),
        ds.noise_spec().noise_type,
        ds.noise_rate()
    )?;
    if let Some((held_path, _)) = heldout {
        held.save(&held_path)?;
        writeln!(out, "wrote {}: n={} (clean)", held_path.display(), held.len())?;
    }
    Ok(())
}

struct TrainArgs {
    config: PathBuf,
    data: PathBuf,
    heldout: Option<PathBuf>,
    variant: Variant,
    report: PathBuf,
    export_embeddings: Option<PathBuf>,
    log_dir: Option<PathBuf>,
    stats: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let run_config = RunConfig::load(&args.config)?;
    let config = run_config.pipeline;
    let mut data = NoisyDataset::load(&args.data)?;
    if let Some(noise) = run_config.noise {
        data = match noise.noise_type {
            NoiseType::Factual => inject_factual_noise(&data, noise.rate, noise.seed)?,
            NoiseType::Ambiguity => inject_ambiguity_noise(&data, noise.rate, noise.seed)?,
            NoiseType::None => data,
        };
    }
    let (train_set, heldout) = match &args.heldout {
        Some(path) => (data, NoisyDataset::load(path)?),
        None if config.eval_split > 0.0 => data.split_holdout(config.eval_split, config.seed)?,
        None => {
            return Err(Error::param(
                "--heldout is required when the config has no eval_split",
            ))
        }
    };

    let run = run_ablation(&train_set, &heldout, &config, args.variant)?;
    run.report.save(&args.report)?;

    let stats_columns: Vec<(String, StatsRow)> = run
        .report
        .stats_rows()
        .into_iter()
        .map(|(epoch, row)| (format!("epoch {epoch}"), row))
        .collect();
    if let Some(dir) = &args.log_dir {
        fs::create_dir_all(dir)?;
        for (epoch, log) in &run.correction_logs {
            let mut f = File::create(dir.join(format!("correction_log_epoch_{epoch}.csv")))?;
            log.write_csv(&run.dataset, &mut f)?;
        }
    }
    if let Some(path) = &args.stats {
        let mut f = File::create(path)?;
        write_stats_table(&stats_columns, &mut f)?;
    }
    if let Some(path) = &args.checkpoint {
        run.network.save(path)?;
    }
    if let Some(path) = &args.export_embeddings {
        let snap = &run.after_warmup;
        let prototypes = snap.prototypes.as_ref().ok_or_else(|| Error::Aborted {
            epoch: config.warmup_epochs,
            source: Box::new(Error::DegenerateGeometry(
                "prototypes unavailable after warm-up".into(),
            )),
        })?;
        let selected = sample_unconfident(&snap.partition, EXPORT_SAMPLES, config.seed);
        let mut f = File::create(path)?;
        write_embeddings(
            &snap.network,
            &train_set,
            &snap.partition,
            prototypes,
            &selected,
            &mut f,
        )?;
    }

    let report = &run.report;
    writeln!(out, "variant: {}", report.variant)?;
    writeln!(out, "epochs: {}", report.epochs.len())?;
    writeln!(
        out,
        "best accuracy: {:.2}% (epoch {})",
        100.0 * report.best_accuracy(),
        report.best_epoch().map_or(0, |e| e.epoch)
    )?;
    writeln!(out, "last accuracy: {:.2}%", 100.0 * report.last_accuracy())?;
    if !stats_columns.is_empty() {
        writeln!(out, "correction statistics (small circle):")?;
        write_stats_table(&stats_columns, out)?;
    }
    Ok(())
}

fn stats(log_path: PathBuf, data_path: PathBuf, out: &mut dyn Write) -> Result<()> {
    let ds = NoisyDataset::load(&data_path)?;
    let (log, truths) = CorrectionLog::read_csv(BufReader::new(File::open(&log_path)?))?;
    for (r, &t) in log.records.iter().zip(&truths) {
        if r.index >= ds.len() {
            return Err(Error::format(
                log_path.display().to_string(),
                format!("log references sample {} but the dataset has {}", r.index, ds.len()),
            ));
        }
        if ds.sample(r.index).true_label() != t {
            return Err(Error::format(
                log_path.display().to_string(),
                format!("true label of sample {} disagrees with the dataset", r.index),
            ));
        }
    }
    let row = correction_stats(&log, &ds)?;
    writeln!(out, "{row}")?;
    Ok(())
}
