//! A small fully connected classifier trained with plain mini-batch SGD.
//!
//! Parameters live in one flat vector, layer after layer, each layer stored
//! as a row-major `out x in` weight matrix followed by its `out` biases.
//! Gradients use the same layout, so an SGD step is a single zip.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{fmt_float, LabeledView};
use crate::error::{Error, Result};
use crate::rng;

const NET_MAGIC: &str = "protosemi-net";
const NET_VERSION: &str = "v1";

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::param(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
}

/// Activations recorded during a forward pass: the input, every hidden
/// output and the logits.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.layers.last().expect("trace has logits")
    }

    /// Output of the last hidden layer.
    pub fn embedding(&self) -> &[f64] {
        &self.layers[self.layers.len() - 2]
    }
}

/// Builds a network with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
/// and zero biases. `layer_dims` is `[input, hidden..., classes]` and must
/// contain at least one hidden layer, since the embedding is the last hidden
/// activation.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<Network> {
    Network::new(layer_dims, Activation::Tanh, seed)
}

impl Network {
    pub fn new(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT, 0);
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// A network with every parameter set to zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::param(
                "layer_dims needs an input, at least one hidden layer and an output",
            ));
        }
        if let Some(i) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::param(format!("layer {i} has width 0")));
        }
        let count = layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            dims: layer_dims.to_vec(),
            params: vec![0.0; count],
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn embedding_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offsets of layer `l`'s weights and biases in the flat parameter vector.
    fn layer_range(&self, l: usize) -> (usize, usize) {
        let mut offset = 0;
        for w in self.dims.windows(2).take(l) {
            offset += w[0] * w[1] + w[1];
        }
        (offset, offset + self.dims[l] * self.dims[l + 1])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims[0] {
            return Err(Error::param(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.dims[0]
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.dims.len());
        layers.push(x.to_vec());
        let mut offset = 0;
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let biases = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &layers[l];
            let hidden = l + 1 < self.num_layers();
            let out: Vec<f64> = weights
                .chunks_exact(fan_in)
                .zip(biases)
                .map(|(row, b)| {
                    let z = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + b;
                    if hidden {
                        self.activation.apply(z)
                    } else {
                        z
                    }
                })
                .collect();
            layers.push(out);
        }
        Ok(Trace { layers })
    }

    /// Logits for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.layers.pop().unwrap())
    }

    /// The last hidden activation: the classifier without its final linear layer.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.trace(x)?;
        t.layers.pop();
        Ok(t.layers.pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Adds `d loss / d params` to `grads`, given `d loss / d logits`.
    pub fn backprop(&self, trace: &Trace, dlogits: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta = dlogits.to_vec();
        for l in (0..self.num_layers()).rev() {
            let fan_in = self.dims[l];
            let (w, b) = self.layer_range(l);
            let input = &trace.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grads[w + o * fan_in..w + (o + 1) * fan_in];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                grads[b + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[w..b];
            let mut prev = vec![0.0; fan_in];
            for (row, &d) in weights.chunks_exact(fan_in).zip(&delta) {
                prev.iter_mut().zip(row).for_each(|(p, wt)| *p += wt * d);
            }
            prev.iter_mut()
                .zip(input)
                .for_each(|(p, &a)| *p *= self.activation.derivative_from_output(a));
            delta = prev;
        }
    }

    /// One SGD step with L2 weight decay folded into the gradient.
    pub fn sgd_step(&mut self, grads: &[f64], lr: f64, weight_decay: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= lr * (g + weight_decay * *p);
        }
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

    /// Header `protosemi-net v1 <activation>`, a line of layer widths, then
    /// each layer's weight rows followed by a line of its biases.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{NET_MAGIC} {NET_VERSION} {}", self.activation)?;
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{}", dims.join(" "))?;
        for l in 0..self.num_layers() {
            let fan_in = self.dims[l];
            let (start, b) = self.layer_range(l);
            let end = b + self.dims[l + 1];
            for row in self.params[start..b].chunks_exact(fan_in) {
                writeln!(w, "{}", join_floats(row))?;
            }
            writeln!(w, "{}", join_floats(&self.params[b..end]))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(Error::format("end of file", format!("missing {what}"))),
            }
        };
        let (_, header) = next("header")?;
        let mut tokens = header.split_whitespace();
        if tokens.next() != Some(NET_MAGIC) || tokens.next() != Some(NET_VERSION) {
            return Err(Error::format("line 1", "not a protosemi-net v1 file"));
        }
        let activation: Activation = tokens
            .next()
            .ok_or_else(|| Error::format("line 1", "missing activation"))?
            .parse()
            .map_err(|e: Error| Error::format("line 1", e.to_string()))?;
        let (_, dims_line) = next("layer widths")?;
        let dims = dims_line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format("line 2", "layer widths must be integers"))?;
        let mut net =
            Self::zeros(&dims, activation).map_err(|e| Error::format("line 2", e.to_string()))?;
        let mut cursor = 0;
        for l in 0..net.num_layers() {
            let (fan_in, fan_out) = (net.dims[l], net.dims[l + 1]);
            for width in std::iter::repeat_n(fan_in, fan_out).chain([fan_out]) {
                let (lineno, line) = next("parameter row")?;
                let row = parse_floats(&line, width, lineno)?;
                net.params[cursor..cursor + width].copy_from_slice(&row);
                cursor += width;
            }
        }
        Ok(net)
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: &str, width: usize, lineno: usize) -> Result<Vec<f64>> {
    let row = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::format(format!("line {lineno}"), "malformed number"))?;
    if row.len() != width {
        return Err(Error::format(
            format!("line {lineno}"),
            format!("expected {width} values, found {}", row.len()),
        ));
    }
    Ok(row)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::param(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[label])
}

/// Cross-entropy against a target distribution. Zero-weight classes are
/// skipped, so a one-hot target gives exactly [`cross_entropy`].
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(lp, t)| -t * lp)
        .sum()
}

/// `base_lr * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, base_lr: f64) -> f64 {
    debug_assert!(total >= 1 && epoch <= total);
    base_lr * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.02,
            total_epochs: 100,
            batch_size: 64,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::param("base_lr must be a finite non-negative number"));
        }
        if self.total_epochs == 0 {
            return Err(Error::param("total_epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.total_epochs, self.base_lr)
    }
}

/// Sample order for one epoch, shuffled from `(seed, epoch)`.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::STREAM_SHUFFLE, epoch as u64));
    order
}

pub(crate) fn check_view(net: &Network, view: &LabeledView<'_>) -> Result<()> {
    let k = net.num_classes();
    if let Some(l) = view.labels.iter().find(|&&l| l >= k) {
        return Err(Error::param(format!("label {l} out of range for {k} classes")));
    }
    if let Some(x) = view.features.iter().find(|x| x.len() != net.input_dim()) {
        return Err(Error::param(format!(
            "feature dimension {} does not match network input {}",
            x.len(),
            net.input_dim()
        )));
    }
    Ok(())
}

/// One epoch of mini-batch SGD on mean cross-entropy.
///
/// Returns the mean per-sample loss, each loss taken before the update of
/// the batch it belongs to.
pub fn train_epoch(
    net: &mut Network,
    view: &LabeledView<'_>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    config.validate()?;
    if view.is_empty() {
        return Err(Error::param("cannot train on an empty view"));
    }
    if epoch >= config.total_epochs {
        return Err(Error::param(format!(
            "epoch {epoch} is past total_epochs {}",
            config.total_epochs
        )));
    }
    check_view(net, view)?;
    let lr = config.lr_at(epoch);
    let order = epoch_order(view.len(), config.seed, epoch);
    let mut grads = vec![0.0; net.num_params()];
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        grads.iter_mut().for_each(|g| *g = 0.0);
        for &i in batch {
            let trace = net.trace(view.features[i])?;
            let label = view.labels[i];
            let mut dlogits = softmax(trace.logits());
            total += -log_softmax(trace.logits())[label];
            dlogits[label] -= 1.0;
            net.backprop(&trace, &dlogits, &mut grads);
        }
        let scale = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| *g *= scale);
        net.sgd_step(&grads, lr, config.weight_decay);
    }
    Ok(total / view.len() as f64)
}

/// Mean cross-entropy over a view without touching the parameters.
pub fn mean_loss(net: &Network, view: &LabeledView<'_>) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::param("cannot evaluate loss on an empty view"));
    }
    check_view(net, view)?;
    let mut total = 0.0;
    for (x, &y) in view.features.iter().zip(&view.labels) {
        total += cross_entropy(&net.forward(x)?, y)?;
    }
    Ok(total / view.len() as f64)
}

/// Cross-entropy of one sample and its gradient with respect to every parameter.
pub fn loss_gradient(net: &Network, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let trace = net.trace(x)?;
    let loss = cross_entropy(trace.logits(), label)?;
    let mut dlogits = softmax(trace.logits());
    dlogits[label] -= 1.0;
    let mut grads = vec![0.0; net.num_params()];
    net.backprop(&trace, &dlogits, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&[2, 4, 3], 9).unwrap();
        let b = init_network(&[2, 4, 3], 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_network(&[2, 4, 3], 10).unwrap());
        assert_eq!(a.num_params(), 2 * 4 + 4 + 4 * 3 + 3);
    }

    #[test]
    fn init_requires_hidden_layer() {
        assert!(matches!(init_network(&[2, 3], 0), Err(Error::Parameter(_))));
        assert!(init_network(&[2, 0, 3], 0).is_err());
    }

    #[test]
    fn init_scale_and_zero_biases() {
        let net = init_network(&[9, 4, 3], 1).unwrap();
        let (w, b) = net.layer_range(0);
        assert!(net.params[w..b].iter().all(|p| p.abs() <= 1.0 / 3.0));
        assert!(net.params[b..b + 4].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn embed_dimension_is_last_hidden_width() {
        let net = init_network(&[2, 4, 3], 5).unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [100.0, 2.0]] {
            assert_eq!(net.embed(&x).unwrap().len(), 4);
        }
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeros(&[3, 5, 4], Activation::Tanh).unwrap();
        let logits = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
        assert!(softmax(&logits).iter().all(|&p| p == 0.25));
    }

    #[test]
    fn forward_and_embed_share_hidden_activation() {
        let net = init_network(&[3, 6, 5, 2], 3).unwrap();
        let x = [0.3, -1.2, 2.0];
        let trace = net.trace(&x).unwrap();
        assert_eq!(trace.embedding(), net.embed(&x).unwrap().as_slice());
        assert_eq!(trace.logits(), net.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        // [1, 1, 2]: h = tanh(w0 * x + b0), logits = (w1 * h + b1, w2 * h + b2)
        let mut net = Network::zeros(&[1, 1, 2], Activation::Tanh).unwrap();
        net.params_mut().copy_from_slice(&[0.5, 0.1, 2.0, -1.0, 0.25, 0.75]);
        let h = (0.5f64 * 2.0 + 0.1).tanh();
        let logits = net.forward(&[2.0]).unwrap();
        assert_eq!(logits, vec![2.0 * h + 0.25, -h + 0.75]);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = cross_entropy(&[0.0; 10], 3).unwrap();
        assert!((uniform - 10f64.ln()).abs() < 1e-12);
        assert_eq!(format!("{uniform:.6}"), "2.302585");
        let confident = cross_entropy(&[1000.0, 0.0, 0.0], 0).unwrap();
        assert!((0.0..1e-300).contains(&confident));
        // -log(e^2 / (e + e^2)) = ln(1 + e) - 1
        let v = cross_entropy(&[1.0, 2.0], 1).unwrap();
        assert!((v - ((1.0 + 1f64.exp()).ln() - 1.0)).abs() < 1e-14);
        assert!((v - 0.313262).abs() < 1e-6);
        let v0 = cross_entropy(&[1.0, 2.0], 0).unwrap();
        assert!((v0 - (1.0 + 1f64.exp()).ln()).abs() < 1e-14);
        assert!(cross_entropy(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn soft_cross_entropy_matches_hard_on_one_hot() {
        let logits = [0.3, -2.0, 1.7];
        let hard = cross_entropy(&logits, 2).unwrap();
        assert_eq!(soft_cross_entropy(&logits, &[0.0, 0.0, 1.0]), hard);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.1), 0.1);
        assert!(cosine_lr(10, 10, 0.1).abs() < 1e-17);
        assert!((cosine_lr(5, 10, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = init_network(&[3, 5, 4, 2], 12).unwrap();
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"protosemi-net v1"));
        assert_eq!(Network::read_from(buf.as_slice()).unwrap(), net);
        let cut = &buf[..buf.len() / 2];
        assert!(Network::read_from(cut).is_err());
    }

    #[test]
    fn train_epoch_rejects_bad_input() {
        let mut net = init_network(&[2, 3, 2], 0).unwrap();
        let cfg = TrainConfig {
            total_epochs: 2,
            ..TrainConfig::default()
        };
        let empty = LabeledView {
            features: vec![],
            labels: vec![],
        };
        assert!(train_epoch(&mut net, &empty, &cfg, 0).is_err());
        let x = [1.0, 2.0];
        let view = LabeledView {
            features: vec![&x],
            labels: vec![0],
        };
        assert!(train_epoch(&mut net, &view, &cfg, 2).is_err());
        let bad = LabeledView {
            features: vec![&x],
            labels: vec![5],
        };
        assert!(train_epoch(&mut net, &bad, &cfg, 0).is_err());
    }
}
