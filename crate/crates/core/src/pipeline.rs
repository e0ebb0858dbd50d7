//! End-to-end runs: warm-up, per-epoch agreement split, prototype
//! repartitioning during the first main epochs, semi-supervised training,
//! held-out evaluation, and the ablation variants.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;

use crate::config::{self, KeyValues};
use crate::data::{fmt_float, NoisyDataset};
use crate::error::{Error, Result};
use crate::mixmatch::{semi_train_epoch, SemiConfig};
use crate::net::{train_epoch, Activation, Network, TrainConfig};
use crate::rng;
use crate::select::{
    build_prototypes, correction_stats, repartition_with, split_by_agreement, CorrectionLog,
    Partition, PrototypeMatrix, StatsRow, Thresholds,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub warmup_epochs: usize,
    /// Main-loop epochs `1..=proto_split_epochs` repartition before training.
    pub proto_split_epochs: usize,
    pub main_epochs: usize,
    pub thresholds: Thresholds,
    pub hidden_dims: Vec<usize>,
    pub base_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub semi: SemiConfig,
    /// Fraction of a single data file held out for evaluation when no
    /// separate held-out file is given. Zero means a file is required.
    pub eval_split: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 1,
            proto_split_epochs: 3,
            main_epochs: 40,
            thresholds: Thresholds::default(),
            hidden_dims: vec![64, 32],
            base_lr: 0.02,
            batch_size: 64,
            weight_decay: 5e-4,
            semi: SemiConfig::default(),
            eval_split: 0.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs < 1 {
            return Err(Error::param("warmup_epochs must be at least 1"));
        }
        if self.proto_split_epochs > self.main_epochs {
            return Err(Error::param("proto_split_epochs cannot exceed main_epochs"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::param("hidden layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return Err(Error::param("eval_split must lie in [0, 1)"));
        }
        Thresholds::new(self.thresholds.alpha(), self.thresholds.beta())?;
        self.train_config().validate()?;
        self.semi.validate()
    }

    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.main_epochs
    }

    /// Optimizer settings; the cosine schedule spans warm-up and main epochs.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            total_epochs: self.total_epochs(),
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn layer_dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(num_classes);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Agreement split only; prototypes never repartition.
    NoRepar,
    /// Warm-up only.
    NoSemi,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoRepar => "no_repar",
            Variant::NoSemi => "no_semi",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_repar" => Ok(Variant::NoRepar),
            "no_semi" => Ok(Variant::NoSemi),
            other => Err(Error::param(format!(
                "unknown variant `{other}` (expected full, no_repar or no_semi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Main,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Main => "main",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based over warm-up and main epochs together.
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss_labeled: f64,
    pub loss_unlabeled: f64,
    /// Partition sizes: after the epoch for warm-up, as trained on for main epochs.
    pub confident: usize,
    pub unconfident: usize,
    /// Small-circle correction counts when this epoch repartitioned.
    pub stats: Option<StatsRow>,
    /// Samples moved from unconfident to confident by repartitioning.
    pub moved: Option<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub variant: Variant,
    pub config: PipelineConfig,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub n_train: usize,
    pub n_heldout: usize,
    pub epochs: Vec<EpochRecord>,
}

impl RunReport {
    pub fn last_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best_epoch().map_or(0.0, |e| e.accuracy)
    }

    /// First epoch reaching the highest held-out accuracy.
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, e| match best {
                Some(b) if b.accuracy >= e.accuracy => Some(b),
                _ => Some(e),
            })
    }

    /// `(epoch, stats)` for every repartitioning epoch.
    pub fn stats_rows(&self) -> Vec<(usize, StatsRow)> {
        self.epochs
            .iter()
            .filter_map(|e| e.stats.map(|s| (e.epoch, s)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// `key=value` header (the full configuration plus run summary), a blank
    /// line, then a CSV block with one row per epoch.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{REPORT_MAGIC}")?;
        writeln!(w, "variant={}", self.variant)?;
        for (k, v) in config::pipeline_to_pairs(&self.config) {
            writeln!(w, "{k}={v}")?;
        }
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "layer_dims={}", dims.join(","))?;
        writeln!(w, "activation={}", self.activation)?;
        writeln!(w, "n_train={}", self.n_train)?;
        writeln!(w, "n_heldout={}", self.n_heldout)?;
        writeln!(w, "epochs_recorded={}", self.epochs.len())?;
        writeln!(w, "best_epoch={}", self.best_epoch().map_or(0, |e| e.epoch))?;
        writeln!(w, "best_accuracy={}", fmt_float(self.best_accuracy()))?;
        writeln!(w, "last_accuracy={}", fmt_float(self.last_accuracy()))?;
        writeln!(w)?;
        writeln!(w, "{EPOCH_HEADER}")?;
        for e in &self.epochs {
            let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.phase,
                fmt_float(e.lr),
                fmt_float(e.loss_labeled),
                fmt_float(e.loss_unlabeled),
                e.confident,
                e.unconfident,
                opt(e.moved),
                opt(e.stats.map(|s| s.unconfident)),
                opt(e.stats.map(|s| s.small_circle)),
                opt(e.stats.map(|s| s.corrected)),
                opt(e.stats.map(|s| s.right)),
                fmt_float(e.accuracy),
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        match lines.next().map(|(_, l)| l).transpose()? {
            Some(l) if l.trim() == REPORT_MAGIC => {}
            _ => return Err(Error::format("line 1", "not a protosemi report")),
        }
        let mut header = KeyValues::default();
        let mut csv_start = None;
        for (i, line) in lines.by_ref() {
            let line = line?;
            if line.trim().is_empty() {
                csv_start = Some(i + 2);
                break;
            }
            header.push_line(&line, i + 1)?;
        }
        let csv_start = csv_start.ok_or_else(|| Error::format("report", "missing epoch table"))?;

        let variant: Variant = header.take_parsed("variant")?;
        let layer_dims = header.take_list("layer_dims")?;
        let activation: Activation = header.take_parsed("activation")?;
        let n_train = header.take_parsed("n_train")?;
        let n_heldout = header.take_parsed("n_heldout")?;
        let recorded: usize = header.take_parsed("epochs_recorded")?;
        for derived in ["best_epoch", "best_accuracy", "last_accuracy"] {
            header.take(derived)?;
        }
        let config = config::pipeline_from_pairs(&mut header)?;
        header.finish()?;

        match lines.next().map(|(_, l)| l).transpose()? {
            Some(l) if l.trim() == EPOCH_HEADER => {}
            _ => return Err(Error::format(format!("line {csv_start}"), "missing epoch header")),
        }
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            epochs.push(parse_epoch_row(&line, i + 1)?);
        }
        if epochs.len() != recorded {
            return Err(Error::format(
                "report",
                format!("header declares {recorded} epochs, table has {}", epochs.len()),
            ));
        }
        Ok(Self {
            variant,
            config,
            layer_dims,
            activation,
            n_train,
            n_heldout,
            epochs,
        })
    }
}

const REPORT_MAGIC: &str = "protosemi-report v1";
const EPOCH_HEADER: &str = "epoch,phase,lr,loss_labeled,loss_unlabeled,confident,unconfident,moved,\
stats_unconfident,stats_small_circle,stats_corrected,stats_right,accuracy";

fn parse_epoch_row(line: &str, lineno: usize) -> Result<EpochRecord> {
    let loc = || format!("line {lineno}");
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 13 {
        return Err(Error::format(loc(), format!("expected 13 fields, found {}", f.len())));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(loc(), format!("`{s}` is not an integer")))
    };
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { int(s).map(Some) };
    let float = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::format(loc(), format!("`{s}` is not a number")))
    };
    let phase = match f[1] {
        "warmup" => Phase::Warmup,
        "main" => Phase::Main,
        other => return Err(Error::format(loc(), format!("unknown phase `{other}`"))),
    };
    let stats = match (opt(f[8])?, opt(f[9])?, opt(f[10])?, opt(f[11])?) {
        (Some(unconfident), Some(small_circle), Some(corrected), Some(right)) => Some(StatsRow {
            unconfident,
            small_circle,
            corrected,
            right,
        }),
        (None, None, None, None) => None,
        _ => return Err(Error::format(loc(), "incomplete stats columns")),
    };
    Ok(EpochRecord {
        epoch: int(f[0])?,
        phase,
        lr: float(f[2])?,
        loss_labeled: float(f[3])?,
        loss_unlabeled: float(f[4])?,
        confident: int(f[5])?,
        unconfident: int(f[6])?,
        moved: opt(f[7])?,
        stats,
        accuracy: float(f[12])?,
    })
}

/// Network, partition and prototypes right after warm-up.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub network: Network,
    pub partition: Partition,
    /// `None` when some class had no confident sample.
    pub prototypes: Option<PrototypeMatrix>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// `(epoch, log)` for every repartitioning epoch.
    pub correction_logs: Vec<(usize, CorrectionLog)>,
    pub network: Network,
    /// Training set with the working labels as they stand after the run.
    pub dataset: NoisyDataset,
    pub after_warmup: Snapshot,
}

/// Fraction of held-out samples whose predicted class equals the true label.
pub fn evaluate(net: &Network, heldout: &NoisyDataset) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::param("held-out set is empty"));
    }
    let mut right = 0usize;
    for s in heldout.samples() {
        if net.predict(s.features())? == s.true_label() {
            right += 1;
        }
    }
    Ok(right as f64 / heldout.len() as f64)
}

pub fn run_protosemi(
    dataset: &NoisyDataset,
    heldout: &NoisyDataset,
    config: &PipelineConfig,
) -> Result<RunOutput> {
    run_ablation(dataset, heldout, config, Variant::Full)
}

pub fn run_ablation(
    dataset: &NoisyDataset,
    heldout: &NoisyDataset,
    config: &PipelineConfig,
    variant: Variant,
) -> Result<RunOutput> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if heldout.is_empty() {
        return Err(Error::param("held-out set is empty"));
    }
    if heldout.dim() != dataset.dim() || heldout.num_classes() != dataset.num_classes() {
        return Err(Error::param(
            "held-out set differs from the training set in dimension or class count",
        ));
    }

    let mut ds = dataset.clone();
    let layer_dims = config.layer_dims(ds.dim(), ds.num_classes());
    let mut net = Network::new(&layer_dims, Activation::Tanh, config.seed)?;
    let train = config.train_config();
    let mut epochs = Vec::with_capacity(config.total_epochs());

    for e in 0..config.warmup_epochs {
        let loss = train_epoch(&mut net, &ds.training_view(), &train, e)?;
        let partition = split_by_agreement(&net, &ds)?;
        epochs.push(EpochRecord {
            epoch: e + 1,
            phase: Phase::Warmup,
            lr: train.lr_at(e),
            loss_labeled: loss,
            loss_unlabeled: 0.0,
            confident: partition.confident().len(),
            unconfident: partition.unconfident().len(),
            stats: None,
            moved: None,
            accuracy: evaluate(&net, heldout)?,
        });
    }

    let partition = split_by_agreement(&net, &ds)?;
    let after_warmup = Snapshot {
        network: net.clone(),
        prototypes: build_prototypes(&net, &ds, &partition).ok(),
        partition,
    };

    let mut correction_logs = Vec::new();
    if variant != Variant::NoSemi {
        let proto_epochs = match variant {
            Variant::Full => config.proto_split_epochs,
            _ => 0,
        };
        for i in 1..=config.main_epochs {
            let e = config.warmup_epochs + i - 1;
            let record = main_epoch(
                &mut net,
                &mut ds,
                heldout,
                config,
                &train,
                i,
                i <= proto_epochs,
            )
            .map_err(|source| Error::Aborted {
                epoch: e + 1,
                source: Box::new(source),
            })?;
            if let Some(log) = record.1 {
                correction_logs.push((e + 1, log));
            }
            epochs.push(record.0);
        }
    }

    Ok(RunOutput {
        report: RunReport {
            variant,
            config: config.clone(),
            layer_dims,
            activation: net.activation(),
            n_train: ds.len(),
            n_heldout: heldout.len(),
            epochs,
        },
        correction_logs,
        network: net,
        dataset: ds,
        after_warmup,
    })
}

fn main_epoch(
    net: &mut Network,
    ds: &mut NoisyDataset,
    heldout: &NoisyDataset,
    config: &PipelineConfig,
    train: &TrainConfig,
    i: usize,
    repartition: bool,
) -> Result<(EpochRecord, Option<CorrectionLog>)> {
    let e = config.warmup_epochs + i - 1;
    let mut partition = split_by_agreement(net, ds)?;
    let mut log = None;
    let mut stats = None;
    if repartition {
        let prototypes = build_prototypes(net, ds, &partition)?;
        let mut rng = rng::stream(config.seed, rng::STREAM_REPARTITION, i as u64);
        let (next, l) =
            repartition_with(net, ds, &partition, &prototypes, &config.thresholds, &mut rng)?;
        partition = next;
        stats = Some(correction_stats(&l, ds)?);
        log = Some(l);
    }
    let losses = semi_train_epoch(
        net,
        &partition.confident_view(ds),
        &partition.unconfident_features(ds),
        &config.semi,
        train,
        e,
    )?;
    let record = EpochRecord {
        epoch: e + 1,
        phase: Phase::Main,
        lr: train.lr_at(e),
        loss_labeled: losses.labeled,
        loss_unlabeled: losses.unlabeled,
        confident: partition.confident().len(),
        unconfident: partition.unconfident().len(),
        moved: log.as_ref().map(CorrectionLog::moved_count),
        stats,
        accuracy: evaluate(net, heldout)?,
    };
    Ok((record, log))
}

/// Up to `count` unconfident indices drawn without replacement, sorted.
pub fn sample_unconfident(partition: &Partition, count: usize, seed: u64) -> Vec<usize> {
    let pool = partition.unconfident();
    if pool.len() <= count {
        return pool.to_vec();
    }
    let mut rng = rng::stream(seed, rng::STREAM_SPLIT, 1);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    picked.sort_unstable();
    picked
}

pub const EMBEDDING_HEADER_PREFIX: &str = "is_prototype,index,prior_label,true_label";

/// Writes embeddings of the `selected` unconfident samples and every
/// prototype row as CSV: `is_prototype,index,prior_label,true_label,e0,...`.
/// Prototype rows carry their class in the index and label columns.
pub fn export_embeddings(
    net: &Network,
    ds: &NoisyDataset,
    partition: &Partition,
    prototypes: &PrototypeMatrix,
    selected: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(net, ds, partition, prototypes, selected, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_embeddings<W: Write>(
    net: &Network,
    ds: &NoisyDataset,
    partition: &Partition,
    prototypes: &PrototypeMatrix,
    selected: &[usize],
    w: &mut W,
) -> Result<()> {
    if prototypes.dim() != net.embedding_dim() {
        return Err(Error::param("prototype width differs from the embedding width"));
    }
    let coords: Vec<String> = (0..net.embedding_dim()).map(|j| format!("e{j}")).collect();
    writeln!(w, "{EMBEDDING_HEADER_PREFIX},{}", coords.join(","))?;
    let row = |v: &[f64]| v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(",");
    for &i in selected {
        if partition.unconfident().binary_search(&i).is_err() {
            return Err(Error::param(format!("sample {i} is not in the unconfident set")));
        }
        let s = ds.sample(i);
        writeln!(
            w,
            "0,{i},{},{},{}",
            s.working_label(),
            s.true_label(),
            row(&net.embed(s.features())?)
        )?;
    }
    for (k, proto) in prototypes.rows().iter().enumerate() {
        writeln!(w, "1,{k},{k},{k},{}", row(proto))?;
    }
    Ok(())
}
