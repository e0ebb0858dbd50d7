//! Labeled datasets with a hidden clean label per sample, synthetic Gaussian
//! blob generation, the two label-corruption models, and the on-disk format.
//!
//! A [`Sample`] carries two labels. The working label is what training sees
//! and what repartitioning may rewrite; the true label is only ever read by
//! evaluation and reporting code.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

const DATASET_MAGIC: &str = "protosemi-dataset";
const DATASET_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    features: Vec<f64>,
    true_label: usize,
    working_label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, true_label: usize, working_label: usize) -> Self {
        Self {
            features,
            true_label,
            working_label,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Clean label, for evaluation and correction statistics only.
    pub fn true_label(&self) -> usize {
        self.true_label
    }

    pub fn working_label(&self) -> usize {
        self.working_label
    }

    pub fn is_noisy(&self) -> bool {
        self.working_label != self.true_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    None,
    Factual,
    Ambiguity,
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseType::None => "none",
            NoiseType::Factual => "factual",
            NoiseType::Ambiguity => "ambiguity",
        })
    }
}

impl FromStr for NoiseType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseType::None),
            "factual" => Ok(NoiseType::Factual),
            "ambiguity" => Ok(NoiseType::Ambiguity),
            other => Err(Error::param(format!(
                "unknown noise type `{other}` (expected none, factual or ambiguity)"
            ))),
        }
    }
}

/// The corruption that was applied to a dataset's working labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub noise_type: NoiseType,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            noise_type: NoiseType::None,
            rate: 0.0,
            seed: 0,
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::clean()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
    noise_spec: NoiseSpec,
}

impl NoisyDataset {
    /// Validates dimensions, label ranges, finiteness and that every class
    /// occurs at least once among the true labels.
    pub fn new(samples: Vec<Sample>, num_classes: usize, dim: usize) -> Result<Self> {
        Self::with_noise_spec(samples, num_classes, dim, NoiseSpec::clean())
    }

    pub fn with_noise_spec(
        samples: Vec<Sample>,
        num_classes: usize,
        dim: usize,
        noise_spec: NoiseSpec,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::param("num_classes must be at least 2"));
        }
        if dim == 0 {
            return Err(Error::param("dim must be at least 1"));
        }
        let mut seen = vec![false; num_classes];
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::param(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::param(format!("sample {i} feature {j} is not finite")));
            }
            if s.true_label >= num_classes || s.working_label >= num_classes {
                return Err(Error::param(format!(
                    "sample {i} has a label outside 0..{num_classes}"
                )));
            }
            seen[s.true_label] = true;
        }
        if let Some(k) = seen.iter().position(|&b| !b) {
            return Err(Error::param(format!("class {k} has no samples")));
        }
        Ok(Self {
            samples,
            num_classes,
            dim,
            noise_spec,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        self.noise_spec
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.samples[i].features
    }

    pub fn working_label(&self, i: usize) -> usize {
        self.samples[i].working_label
    }

    pub fn working_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.working_label).collect()
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.true_label).collect()
    }

    pub(crate) fn set_working_label(&mut self, i: usize, label: usize) {
        debug_assert!(label < self.num_classes);
        self.samples[i].working_label = label;
    }

    pub fn noisy_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_noisy()).count()
    }

    /// Fraction of samples whose working label differs from the true label.
    pub fn noise_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.noisy_count() as f64 / self.samples.len() as f64
    }

    /// Every sample paired with its working label.
    pub fn training_view(&self) -> LabeledView<'_> {
        LabeledView {
            features: self.samples.iter().map(|s| s.features.as_slice()).collect(),
            labels: self.working_labels(),
        }
    }

    /// Returns a copy holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::param(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_noise_spec(samples, self.num_classes, self.dim, self.noise_spec)
    }

    /// Splits off a random `fraction` of samples as a held-out set.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param("holdout fraction must lie in (0, 1)"));
        }
        let n = self.len();
        let take = (fraction * n as f64).round() as usize;
        if take == 0 || take == n {
            return Err(Error::param(format!(
                "holdout fraction {fraction} leaves an empty side for n={n}"
            )));
        }
        let mut rng = rng::stream(seed, rng::STREAM_SPLIT, 0);
        let mut held: Vec<usize> = index::sample(&mut rng, n, take).into_vec();
        held.sort_unstable();
        let mut is_held = vec![false; n];
        for &i in &held {
            is_held[i] = true;
        }
        let kept: Vec<usize> = (0..n).filter(|&i| !is_held[i]).collect();
        Ok((self.subset(&kept)?, self.subset(&held)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    /// Header `protosemi-dataset v1 n=<n> d=<D> k=<K>`, optionally followed
    /// by `noise=<type> rate=<r> seed=<s>`; then one line per sample with the
    /// features, the working label and the true label.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(
            w,
            "{DATASET_MAGIC} {DATASET_VERSION} n={} d={} k={}",
            self.len(),
            self.dim,
            self.num_classes
        )?;
        if self.noise_spec != NoiseSpec::clean() {
            write!(
                w,
                " noise={} rate={} seed={}",
                self.noise_spec.noise_type,
                fmt_float(self.noise_spec.rate),
                self.noise_spec.seed
            )?;
        }
        writeln!(w)?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            for v in &s.features {
                line.push_str(&fmt_float(*v));
                line.push(' ');
            }
            line.push_str(&format!("{} {}", s.working_label, s.true_label));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(Error::format("line 1", "missing header")),
        };
        let header = parse_header(&header)?;
        let mut samples = Vec::with_capacity(header.n);
        for i in 0..header.n {
            let lineno = i + 2;
            let line = match lines.next() {
                Some(line) => line?,
                None => {
                    return Err(Error::format(
                        format!("line {lineno}"),
                        format!("file truncated: expected {} samples, found {i}", header.n),
                    ))
                }
            };
            samples.push(parse_sample_line(&line, lineno, &header)?);
        }
        for (extra, line) in lines.enumerate() {
            if !line?.trim().is_empty() {
                return Err(Error::format(
                    format!("line {}", header.n + 2 + extra),
                    "unexpected data after the declared sample count",
                ));
            }
        }
        Self::with_noise_spec(samples, header.k, header.d, header.noise)
            .map_err(|e| Error::format("dataset", e.to_string()))
    }
}

struct Header {
    n: usize,
    d: usize,
    k: usize,
    noise: NoiseSpec,
}

fn parse_header(line: &str) -> Result<Header> {
    let bad = |msg: &str| Error::format("line 1", msg.to_string());
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(DATASET_MAGIC) {
        return Err(bad("not a protosemi dataset file"));
    }
    if tokens.next() != Some(DATASET_VERSION) {
        return Err(bad("unsupported dataset version"));
    }
    let (mut n, mut d, mut k) = (None, None, None);
    let mut noise = NoiseSpec::clean();
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| bad(&format!("malformed header field `{tok}`")))?;
        let int = || {
            value
                .parse::<usize>()
                .map_err(|_| bad(&format!("header field `{key}` is not an integer")))
        };
        match key {
            "n" => n = Some(int()?),
            "d" => d = Some(int()?),
            "k" => k = Some(int()?),
            "noise" => noise.noise_type = value.parse().map_err(|_| bad("unknown noise type"))?,
            "rate" => {
                noise.rate = value
                    .parse()
                    .map_err(|_| bad("header field `rate` is not a number"))?
            }
            "seed" => {
                noise.seed = value
                    .parse()
                    .map_err(|_| bad("header field `seed` is not an integer"))?
            }
            other => return Err(bad(&format!("unknown header field `{other}`"))),
        }
    }
    match (n, d, k) {
        (Some(n), Some(d), Some(k)) => Ok(Header { n, d, k, noise }),
        _ => Err(bad("header must declare n, d and k")),
    }
}

fn parse_sample_line(line: &str, lineno: usize, header: &Header) -> Result<Sample> {
    let loc = || format!("line {lineno} (sample {})", lineno - 2);
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != header.d + 2 {
        return Err(Error::format(
            loc(),
            format!(
                "expected {} fields ({} features and two labels), found {}",
                header.d + 2,
                header.d,
                tokens.len()
            ),
        ));
    }
    let mut features = Vec::with_capacity(header.d);
    for tok in &tokens[..header.d] {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::format(loc(), format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::format(loc(), "feature is not finite"));
        }
        features.push(v);
    }
    let label = |tok: &str, what: &str| -> Result<usize> {
        let l: usize = tok
            .parse()
            .map_err(|_| Error::format(loc(), format!("{what} `{tok}` is not a class index")))?;
        if l >= header.k {
            return Err(Error::format(
                loc(),
                format!("{what} {l} out of range for k={}", header.k),
            ));
        }
        Ok(l)
    };
    let working = label(tokens[header.d], "working label")?;
    let truth = label(tokens[header.d + 1], "true label")?;
    Ok(Sample::new(features, truth, working))
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Feature vectors paired with the labels training is allowed to see.
#[derive(Debug, Clone)]
pub struct LabeledView<'a> {
    pub features: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> LabeledView<'a> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Isotropic Gaussian blobs, one per class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl BlobParams {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::param("num_classes must be at least 2"));
        }
        if self.per_class < 1 {
            return Err(Error::param("per_class must be at least 1"));
        }
        if self.dim < 2 {
            return Err(Error::param("dim must be at least 2"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::param("separation must be positive"));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::param("spread must be positive"));
        }
        Ok(())
    }

    /// Class centers, pairwise at least `separation` apart.
    ///
    /// With `num_classes <= dim` the centers are the vertices of a randomly
    /// rotated regular simplex with edge length `separation`. Otherwise they
    /// are random directions accepted only when far enough from the others.
    pub fn centers(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = rng::stream(self.seed, rng::STREAM_BLOB_CENTERS, 0);
        let (k, d) = (self.num_classes, self.dim);
        let gaussian = |rng: &mut rng::Rng| -> Vec<f64> {
            (0..d).map(|_| StandardNormal.sample(rng)).collect()
        };
        if k <= d {
            let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
            while basis.len() < k {
                let mut v = gaussian(&mut rng);
                for b in &basis {
                    let proj = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
                let norm = dot(&v, &v).sqrt();
                if norm < 1e-6 {
                    continue;
                }
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
            let scale = self.separation / std::f64::consts::SQRT_2;
            let mut mean = vec![0.0; d];
            for b in &basis {
                mean.iter_mut().zip(b).for_each(|(m, x)| *m += x / k as f64);
            }
            Ok(basis
                .into_iter()
                .map(|b| b.iter().zip(&mean).map(|(x, m)| scale * (x - m)).collect())
                .collect())
        } else {
            let mut radius = self.separation;
            let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
            let mut failures = 0;
            while centers.len() < k {
                let mut v = gaussian(&mut rng);
                let norm = dot(&v, &v).sqrt();
                if norm < 1e-12 {
                    continue;
                }
                v.iter_mut().for_each(|x| *x *= radius / norm);
                if centers
                    .iter()
                    .all(|c| sq_dist(c, &v).sqrt() >= self.separation)
                {
                    centers.push(v);
                } else {
                    failures += 1;
                    if failures == 1000 {
                        failures = 0;
                        radius *= 1.25;
                    }
                }
            }
            Ok(centers)
        }
    }

    pub fn generate(&self) -> Result<NoisyDataset> {
        Ok(self.generate_with_heldout(0)?.0)
    }

    /// Draws `per_class + heldout_per_class` samples per class from the same
    /// blobs and returns them as `(train, heldout)`. The training part is
    /// identical to [`BlobParams::generate`] for the same parameters.
    pub fn generate_with_heldout(
        &self,
        heldout_per_class: usize,
    ) -> Result<(NoisyDataset, NoisyDataset)> {
        let centers = self.centers()?;
        let mut train = Vec::with_capacity(self.num_classes * self.per_class);
        let mut held = Vec::with_capacity(self.num_classes * heldout_per_class);
        for (class, center) in centers.iter().enumerate() {
            let mut rng = rng::stream(self.seed, rng::STREAM_BLOB_SAMPLES, class as u64);
            for j in 0..self.per_class + heldout_per_class {
                let features: Vec<f64> = center
                    .iter()
                    .map(|c| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        c + self.spread * g
                    })
                    .collect();
                let sample = Sample::new(features, class, class);
                if j < self.per_class {
                    train.push(sample);
                } else {
                    held.push(sample);
                }
            }
        }
        let train = NoisyDataset::new(train, self.num_classes, self.dim)?;
        let held = if heldout_per_class > 0 {
            NoisyDataset::new(held, self.num_classes, self.dim)?
        } else {
            // Empty placeholder; classes are trivially unrepresented.
            NoisyDataset {
                samples: held,
                num_classes: self.num_classes,
                dim: self.dim,
                noise_spec: NoiseSpec::clean(),
            }
        };
        Ok((train, held))
    }
}

pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<NoisyDataset> {
    BlobParams {
        num_classes,
        per_class,
        dim,
        separation,
        spread,
        seed,
    }
    .generate()
}

/// Number of samples to corrupt: `rate * n` rounded half away from zero.
pub fn flip_count(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

fn check_injection(ds: &NoisyDataset, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param(format!("noise rate {rate} outside [0, 1]")));
    }
    if ds.noisy_count() > 0 {
        return Err(Error::Precondition(
            "noise can only be injected into a clean dataset".into(),
        ));
    }
    Ok(())
}

/// Factual noise: a uniformly chosen subset of exactly `round(rate * n)`
/// samples gets a working label drawn uniformly from the wrong classes.
pub fn inject_factual_noise(ds: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    check_injection(ds, rate)?;
    let mut out = ds.clone();
    let n = ds.len();
    let m = flip_count(rate, n);
    let mut rng = rng::stream(seed, rng::STREAM_NOISE, 0);
    let mut chosen = index::sample(&mut rng, n, m).into_vec();
    chosen.sort_unstable();
    let k = ds.num_classes;
    for i in chosen {
        let truth = ds.samples[i].true_label;
        let r = rng.random_range(0..k - 1);
        let label = if r >= truth { r + 1 } else { r };
        out.samples[i].working_label = label;
    }
    out.noise_spec = NoiseSpec {
        noise_type: NoiseType::Factual,
        rate,
        seed,
    };
    Ok(out)
}

/// Ambiguity noise: the `round(rate * n)` samples closest to a class boundary
/// take the label of their nearest other class.
///
/// Closeness is the margin `d(x, nearest other centroid) - d(x, own centroid)`
/// with centroids averaged over true labels; ties go to the lower index. The
/// seed is recorded but the selection itself is deterministic.
pub fn inject_ambiguity_noise(ds: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    check_injection(ds, rate)?;
    let k = ds.num_classes;
    let mut centroids = vec![vec![0.0; ds.dim]; k];
    let mut counts = vec![0usize; k];
    for s in &ds.samples {
        counts[s.true_label] += 1;
        centroids[s.true_label]
            .iter_mut()
            .zip(&s.features)
            .for_each(|(c, x)| *c += x);
    }
    for (c, &cnt) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= cnt as f64);
    }

    let mut ranked: Vec<(f64, usize, usize)> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let own = sq_dist(&s.features, &centroids[s.true_label]).sqrt();
            let (other, other_dist) = (0..k)
                .filter(|&j| j != s.true_label)
                .map(|j| (j, sq_dist(&s.features, &centroids[j]).sqrt()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least two classes");
            (other_dist - own, i, other)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = ds.clone();
    for &(_, i, other) in ranked.iter().take(flip_count(rate, ds.len())) {
        out.samples[i].working_label = other;
    }
    out.noise_spec = NoiseSpec {
        noise_type: NoiseType::Ambiguity,
        rate,
        seed,
    };
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
