//! Sample selection: the agreement split into confident and unconfident
//! sets, class prototypes in embedding space, and prototype-based
//! repartitioning of the unconfident set.
//!
//! Similarities are cosine similarities, so "inside the small circle" means
//! `d_max >= alpha` and "inside the big circle" means `d_max >= beta`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::data::{fmt_float, LabeledView, NoisyDataset};
use crate::error::{Error, Result};
use crate::net::{argmax, Network};

/// Confident samples keep a label; unconfident samples are treated as unlabeled.
/// Both lists are sorted by sample index and together cover `0..n` once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    confident: Vec<(usize, usize)>,
    unconfident: Vec<usize>,
}

impl Partition {
    pub fn new(
        mut confident: Vec<(usize, usize)>,
        mut unconfident: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        confident.sort_unstable();
        unconfident.sort_unstable();
        let mut seen = vec![false; n];
        for i in confident.iter().map(|&(i, _)| i).chain(unconfident.iter().copied()) {
            if i >= n {
                return Err(Error::param(format!("partition index {i} out of range for n={n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::param(format!("sample {i} appears twice in the partition")));
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::param(format!("sample {i} missing from the partition")));
        }
        Ok(Self {
            confident,
            unconfident,
        })
    }

    /// `(sample index, assigned label)` pairs.
    pub fn confident(&self) -> &[(usize, usize)] {
        &self.confident
    }

    pub fn unconfident(&self) -> &[usize] {
        &self.unconfident
    }

    pub fn len(&self) -> usize {
        self.confident.len() + self.unconfident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the two sides are disjoint and cover `0..n`.
    pub fn is_exact(&self, n: usize) -> bool {
        Partition::new(self.confident.clone(), self.unconfident.clone(), n).is_ok()
    }

    pub fn confident_view<'a>(&self, ds: &'a NoisyDataset) -> LabeledView<'a> {
        LabeledView {
            features: self.confident.iter().map(|&(i, _)| ds.features(i)).collect(),
            labels: self.confident.iter().map(|&(_, l)| l).collect(),
        }
    }

    pub fn unconfident_features<'a>(&self, ds: &'a NoisyDataset) -> Vec<&'a [f64]> {
        self.unconfident.iter().map(|&i| ds.features(i)).collect()
    }
}

/// Confident iff the network's predicted class equals the working label.
pub fn split_by_agreement(net: &Network, ds: &NoisyDataset) -> Result<Partition> {
    let mut confident = Vec::new();
    let mut unconfident = Vec::new();
    for i in 0..ds.len() {
        let label = ds.working_label(i);
        if net.predict(ds.features(i))? == label {
            confident.push((i, label));
        } else {
            unconfident.push(i);
        }
    }
    Ok(Partition {
        confident,
        unconfident,
    })
}

/// One mean embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeMatrix {
    rows: Vec<Vec<f64>>,
    support_counts: Vec<usize>,
}

impl PrototypeMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, support_counts: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || rows.len() != support_counts.len() {
            return Err(Error::param("prototype rows and support counts must match"));
        }
        let m = rows[0].len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::param("prototype rows differ in length"));
        }
        Ok(Self {
            rows,
            support_counts,
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn support_counts(&self) -> &[usize] {
        &self.support_counts
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }
}

/// Row `k` is the mean embedding of the confident samples assigned to `k`.
pub fn build_prototypes(
    net: &Network,
    ds: &NoisyDataset,
    partition: &Partition,
) -> Result<PrototypeMatrix> {
    let k = ds.num_classes();
    let m = net.embedding_dim();
    let mut sums = vec![vec![0.0; m]; k];
    let mut counts = vec![0usize; k];
    for &(i, label) in partition.confident() {
        if label >= k {
            return Err(Error::param(format!("assigned label {label} out of range")));
        }
        let e = net.embed(ds.features(i))?;
        sums[label].iter_mut().zip(&e).for_each(|(s, v)| *s += v);
        counts[label] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateClass { class });
    }
    for (row, &c) in sums.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|v| *v /= c as f64);
    }
    PrototypeMatrix::from_rows(sums, counts)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateGeometry(
            "cosine similarity with a zero vector".into(),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn similarities(embedding: &[f64], prototypes: &PrototypeMatrix) -> Result<Vec<f64>> {
    if embedding.len() != prototypes.dim() {
        return Err(Error::param("embedding and prototype dimensions differ"));
    }
    prototypes
        .rows()
        .iter()
        .enumerate()
        .map(|(k, row)| {
            cosine_similarity(embedding, row).map_err(|_| {
                if norm(row) == 0.0 {
                    Error::DegenerateGeometry(format!("prototype {k} is the zero vector"))
                } else {
                    Error::DegenerateGeometry("sample embedding is the zero vector".into())
                }
            })
        })
        .collect()
}

/// Cosine similarity between `f'(x)` and every prototype row.
pub fn similarity_to_prototypes(
    net: &Network,
    x: &[f64],
    prototypes: &PrototypeMatrix,
) -> Result<Vec<f64>> {
    similarities(&net.embed(x)?, prototypes)
}

/// Small- and big-circle thresholds in similarity units, `1 >= alpha > beta >= -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    alpha: f64,
    beta: f64,
}

impl Thresholds {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha <= 1.0 && alpha > beta && beta >= -1.0) {
            return Err(Error::param(format!(
                "thresholds need 1 >= alpha > beta >= -1, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn zone(&self, d_max: f64) -> Zone {
        if d_max >= self.alpha {
            Zone::Small
        } else if d_max >= self.beta {
            Zone::Ring
        } else {
            Zone::Outside
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            beta: 0.90,
        }
    }
}

/// Chance of switching to the proto label inside the ring: a linear ramp
/// from 0 at `beta` to 1 at `alpha`.
pub fn correction_probability(d_max: f64, thresholds: &Thresholds) -> Result<f64> {
    let (alpha, beta) = (thresholds.alpha, thresholds.beta);
    if !(beta..=alpha).contains(&d_max) {
        return Err(Error::Precondition(format!(
            "d_max {d_max} outside the ring [{beta}, {alpha}]"
        )));
    }
    Ok(((d_max - beta) / (alpha - beta)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Zone {
    Small,
    Ring,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Corrected,
    Retained,
    Unmoved,
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Zone::Small => "small",
            Zone::Ring => "ring",
            Zone::Outside => "outside",
        })
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Zone::Small),
            "ring" => Ok(Zone::Ring),
            "outside" => Ok(Zone::Outside),
            other => Err(Error::param(format!("unknown zone `{other}`"))),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Corrected => "corrected",
            Action::Retained => "retained",
            Action::Unmoved => "unmoved",
        })
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(Action::Corrected),
            "retained" => Ok(Action::Retained),
            "unmoved" => Ok(Action::Unmoved),
            other => Err(Error::param(format!("unknown action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionRecord {
    pub index: usize,
    pub d_max: f64,
    pub proto_label: usize,
    pub prior_label: usize,
    pub zone: Zone,
    pub action: Action,
    pub p_correct: f64,
}

impl CorrectionRecord {
    /// Working label after the decision.
    pub fn new_label(&self) -> usize {
        match self.action {
            Action::Corrected => self.proto_label,
            Action::Retained | Action::Unmoved => self.prior_label,
        }
    }

    pub fn moved(&self) -> bool {
        self.action != Action::Unmoved
    }
}

pub const CORRECTION_LOG_HEADER: &str =
    "index,d_max,proto_label,prior_label,zone,action,p_correct,true_label";

/// Every repartition decision, in ascending sample order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionLog {
    pub records: Vec<CorrectionRecord>,
}

impl CorrectionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn moved_count(&self) -> usize {
        self.records.iter().filter(|r| r.moved()).count()
    }

    /// CSV with one row per record; `true_label` is looked up in `ds`.
    pub fn write_csv<W: Write>(&self, ds: &NoisyDataset, w: &mut W) -> Result<()> {
        writeln!(w, "{CORRECTION_LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.index,
                fmt_float(r.d_max),
                r.proto_label,
                r.prior_label,
                r.zone,
                r.action,
                fmt_float(r.p_correct),
                ds.sample(r.index).true_label()
            )?;
        }
        Ok(())
    }

    /// Parses a log CSV, returning the records and the `true_label` column.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<(Self, Vec<usize>)> {
        let mut lines = reader.lines();
        match lines.next().transpose()? {
            Some(h) if h.trim() == CORRECTION_LOG_HEADER => {}
            _ => return Err(Error::format("line 1", "missing correction log header")),
        }
        let mut records = Vec::new();
        let mut truths = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("line {}", i + 2);
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != 8 {
                return Err(Error::format(loc, format!("expected 8 fields, found {}", fields.len())));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::format(loc.clone(), format!("`{s}` is not an index")))
            };
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::format(loc.clone(), format!("`{s}` is not a number")))
            };
            let record = CorrectionRecord {
                index: int(fields[0])?,
                d_max: float(fields[1])?,
                proto_label: int(fields[2])?,
                prior_label: int(fields[3])?,
                zone: fields[4]
                    .parse()
                    .map_err(|e: Error| Error::format(loc.clone(), e.to_string()))?,
                action: fields[5]
                    .parse()
                    .map_err(|e: Error| Error::format(loc.clone(), e.to_string()))?,
                p_correct: float(fields[6])?,
            };
            truths.push(int(fields[7])?);
            records.push(record);
        }
        Ok((Self { records }, truths))
    }
}

/// Decides one unconfident sample. `draw` is called only for ring-zone
/// samples whose proto label disagrees with their current label.
pub fn decide(
    index: usize,
    sims: &[f64],
    prior_label: usize,
    thresholds: &Thresholds,
    mut draw: impl FnMut() -> f64,
) -> Result<CorrectionRecord> {
    let proto_label = argmax(sims);
    let d_max = sims[proto_label];
    let zone = thresholds.zone(d_max);
    let (action, p_correct) = match zone {
        Zone::Small if proto_label == prior_label => (Action::Retained, 1.0),
        Zone::Small => (Action::Corrected, 1.0),
        Zone::Ring => {
            let p = correction_probability(d_max, thresholds)?;
            if proto_label == prior_label {
                (Action::Retained, p)
            } else if draw() < p {
                (Action::Corrected, p)
            } else {
                (Action::Retained, p)
            }
        }
        Zone::Outside => (Action::Unmoved, 0.0),
    };
    Ok(CorrectionRecord {
        index,
        d_max,
        proto_label,
        prior_label,
        zone,
        action,
        p_correct,
    })
}

/// Builds prototypes from the confident side, then repartitions.
pub fn repartition<R: rand::Rng + ?Sized>(
    net: &Network,
    ds: &mut NoisyDataset,
    partition: &Partition,
    thresholds: &Thresholds,
    rng: &mut R,
) -> Result<(Partition, CorrectionLog)> {
    let prototypes = build_prototypes(net, ds, partition)?;
    repartition_with(net, ds, partition, &prototypes, thresholds, rng)
}

/// Moves unconfident samples inside the big circle to the confident side,
/// relabeling them according to their zone, and writes corrected labels
/// back into `ds`.
///
/// Similarities are computed for every unconfident sample first; decisions
/// then consume uniform draws in ascending sample order.
pub fn repartition_with<R: rand::Rng + ?Sized>(
    net: &Network,
    ds: &mut NoisyDataset,
    partition: &Partition,
    prototypes: &PrototypeMatrix,
    thresholds: &Thresholds,
    rng: &mut R,
) -> Result<(Partition, CorrectionLog)> {
    if prototypes.num_classes() != ds.num_classes() {
        return Err(Error::param("prototype count does not match the class count"));
    }
    let sims = partition
        .unconfident()
        .iter()
        .map(|&i| similarity_to_prototypes(net, ds.features(i), prototypes))
        .collect::<Result<Vec<_>>>()?;

    let mut log = CorrectionLog::default();
    for (&i, s) in partition.unconfident().iter().zip(&sims) {
        log.records.push(decide(i, s, ds.working_label(i), thresholds, || {
            rng.random::<f64>()
        })?);
    }

    let mut confident = partition.confident().to_vec();
    let mut unconfident = Vec::new();
    for r in &log.records {
        if r.moved() {
            let label = r.new_label();
            if label != ds.working_label(r.index) {
                ds.set_working_label(r.index, label);
            }
            confident.push((r.index, label));
        } else {
            unconfident.push(r.index);
        }
    }
    let next = Partition::new(confident, unconfident, ds.len())?;
    Ok((next, log))
}

/// One column of a correction-accuracy table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsRow {
    pub unconfident: usize,
    pub small_circle: usize,
    pub corrected: usize,
    pub right: usize,
}

impl StatsRow {
    /// `right / corrected` as a percentage; `None` when nothing was corrected.
    pub fn accuracy(&self) -> Option<f64> {
        (self.corrected > 0).then(|| 100.0 * self.right as f64 / self.corrected as f64)
    }

    pub fn accuracy_text(&self) -> String {
        match self.accuracy() {
            Some(a) => format!("{a:.2}%"),
            None => "n/a".to_string(),
        }
    }
}

impl fmt::Display for StatsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Size of unconfident dataset: {}", self.unconfident)?;
        writeln!(f, "Samples in small circle: {}", self.small_circle)?;
        writeln!(f, "Label corrections: {}", self.corrected)?;
        writeln!(f, "Right label corrections: {}", self.right)?;
        write!(f, "Correction accuracy: {}", self.accuracy_text())
    }
}

/// Small-circle correction counts for one repartition.
pub fn correction_stats(log: &CorrectionLog, ds: &NoisyDataset) -> Result<StatsRow> {
    let mut row = StatsRow {
        unconfident: log.len(),
        ..StatsRow::default()
    };
    for r in &log.records {
        if r.index >= ds.len() {
            return Err(Error::param(format!(
                "log references sample {} but the dataset has {}",
                r.index,
                ds.len()
            )));
        }
        if r.zone != Zone::Small {
            continue;
        }
        row.small_circle += 1;
        if r.action == Action::Corrected {
            row.corrected += 1;
            if r.proto_label == ds.sample(r.index).true_label() {
                row.right += 1;
            }
        }
    }
    Ok(row)
}

const STATS_METRICS: [&str; 5] = [
    "Size of unconfident dataset",
    "Samples in small circle",
    "Label corrections",
    "Right label corrections",
    "Correction accuracy",
];

/// Metrics as rows and one column per `(name, row)`.
pub fn write_stats_table<W: Write + ?Sized>(columns: &[(String, StatsRow)], w: &mut W) -> Result<()> {
    let names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(w, "metric,{}", names.join(","))?;
    for (m, metric) in STATS_METRICS.iter().enumerate() {
        let cells: Vec<String> = columns
            .iter()
            .map(|(_, r)| match m {
                0 => r.unconfident.to_string(),
                1 => r.small_circle.to_string(),
                2 => r.corrected.to_string(),
                3 => r.right.to_string(),
                _ => r.accuracy_text(),
            })
            .collect();
        writeln!(w, "{metric},{}", cells.join(","))?;
    }
    Ok(())
}
