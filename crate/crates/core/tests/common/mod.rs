//! Brute-force reference implementations shared by the integration tests.
//! They read the flat parameter vector directly and never call into the
//! library's forward pass, split or prototype code.

#![allow(dead_code)]

pub mod invariants;

use protosemi::{
    inject_factual_noise, train_epoch, BlobParams, LabeledView, Network, NoisyDataset,
    PipelineConfig, TrainConfig,
};
use rand::Rng;

/// Last hidden activation and logits for `x`.
pub fn forward(net: &Network, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims = net.layer_dims();
    let params = net.params();
    let mut a = x.to_vec();
    let mut embedding = Vec::new();
    let mut offset = 0;
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut s = params[offset + n_in * n_out + o];
            for i in 0..n_in {
                s += params[offset + o * n_in + i] * a[i];
            }
            z[o] = s;
        }
        offset += n_in * n_out + n_out;
        if l + 2 < dims.len() {
            a = z.iter().map(|v| v.tanh()).collect();
            embedding = a.clone();
        } else {
            a = z;
        }
    }
    (embedding, a)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `(confident (index, label), unconfident)` by predicted-versus-working label.
pub fn split(net: &Network, ds: &NoisyDataset) -> (Vec<(usize, usize)>, Vec<usize>) {
    let mut conf = Vec::new();
    let mut unconf = Vec::new();
    for (i, s) in ds.samples().iter().enumerate() {
        let (_, logits) = forward(net, s.features());
        if argmax(&logits) == s.working_label() {
            conf.push((i, s.working_label()));
        } else {
            unconf.push(i);
        }
    }
    (conf, unconf)
}

/// Per-class mean embeddings, `None` when a class has no confident sample.
pub fn prototypes(
    net: &Network,
    ds: &NoisyDataset,
    confident: &[(usize, usize)],
) -> Option<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for k in 0..ds.num_classes() {
        let members: Vec<Vec<f64>> = confident
            .iter()
            .filter(|&&(_, l)| l == k)
            .map(|&(i, _)| forward(net, ds.features(i)).0)
            .collect();
        if members.is_empty() {
            return None;
        }
        let m = members[0].len();
        let mean = (0..m)
            .map(|j| members.iter().map(|e| e[j]).sum::<f64>() / members.len() as f64)
            .collect();
        rows.push(mean);
    }
    Some(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub proto: usize,
    /// 0 small, 1 ring, 2 outside.
    pub zone: u8,
    pub new_label: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
/// Repartition from scratch: one uniform draw, in ascending index order,
/// for each ring sample whose nearest prototype disagrees with its label.
pub fn repartition<R: Rng>(
    net: &Network,
    labels: &[usize],
    protos: &[Vec<f64>],
    unconfident: &[usize],
    ds: &NoisyDataset,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Vec<Decision> {
    let mut order = unconfident.to_vec();
    order.sort_unstable();
    let mut out = Vec::new();
    for i in order {
        let (e, _) = forward(net, ds.features(i));
        let sims: Vec<f64> = protos.iter().map(|p| cosine(&e, p)).collect();
        let proto = argmax(&sims);
        let d = sims[proto];
        let prior = labels[i];
        let (zone, new_label) = if d >= alpha {
            (0, Some(proto))
        } else if d >= beta {
            let p = (d - beta) / (alpha - beta);
            if proto == prior {
                (1, Some(prior))
            } else if rng.random::<f64>() < p {
                (1, Some(proto))
            } else {
                (1, Some(prior))
            }
        } else {
            (2, None)
        };
        out.push(Decision {
            index: i,
            proto,
            zone,
            new_label,
        });
    }
    out
}

/// A small noisy blob set and a briefly trained network.
pub fn small_problem(seed: u64, n_per_class: usize, epochs: usize) -> (NoisyDataset, Network) {
    let clean = BlobParams {
        num_classes: 3,
        per_class: n_per_class,
        dim: 4,
        separation: 4.0,
        spread: 1.0,
        seed,
    }
    .generate()
    .unwrap();
    let ds = inject_factual_noise(&clean, 0.2, seed + 7).unwrap();
    let mut net = protosemi::init_network(&[4, 6, 5, 3], seed).unwrap();
    let config = TrainConfig {
        base_lr: 0.1,
        total_epochs: epochs.max(1),
        batch_size: 8,
        weight_decay: 5e-4,
        seed,
    };
    for e in 0..epochs {
        train_epoch(&mut net, &ds.training_view(), &config, e).unwrap();
    }
    (ds, net)
}

pub fn view_of<'a>(xs: &'a [Vec<f64>], labels: &[usize]) -> LabeledView<'a> {
    LabeledView {
        features: xs.iter().map(|x| x.as_slice()).collect(),
        labels: labels.to_vec(),
    }
}

pub fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// The scaled benchmark: 4 blobs of 500 in 16 dimensions, separation 6,
/// 30% factual noise on the training side and 100 clean held-out points per class.
pub fn benchmark(seed: u64) -> (NoisyDataset, NoisyDataset) {
    let (clean, heldout) = BlobParams {
        num_classes: 4,
        per_class: 500,
        dim: 16,
        separation: 6.0,
        spread: 1.0,
        seed,
    }
    .generate_with_heldout(100)
    .unwrap();
    let train = inject_factual_noise(&clean, 0.3, seed + 1000).unwrap();
    (train, heldout)
}

/// A short pipeline configuration for tests that only need the mechanics.
pub fn quick_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        warmup_epochs: 2,
        proto_split_epochs: 2,
        main_epochs: 4,
        hidden_dims: vec![12, 8],
        batch_size: 32,
        seed,
        ..PipelineConfig::default()
    }
}

/// A 300-sample, 3-class noisy problem with a clean held-out set.
pub fn quick_problem(seed: u64) -> (NoisyDataset, NoisyDataset) {
    let (clean, heldout) = BlobParams {
        num_classes: 3,
        per_class: 100,
        dim: 5,
        separation: 5.0,
        spread: 1.0,
        seed,
    }
    .generate_with_heldout(20)
    .unwrap();
    (inject_factual_noise(&clean, 0.3, seed + 1).unwrap(), heldout)
}
