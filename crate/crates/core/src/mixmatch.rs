//! MixMatch-style semi-supervised training over a confident (labeled) and
//! an unconfident (unlabeled) set: jitter augmentation, label guessing with
//! temperature sharpening, mixup, and a cross-entropy plus squared-error loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::data::LabeledView;
use crate::error::{Error, Result};
use crate::net::{check_view, epoch_order, softmax, soft_cross_entropy, Network, TrainConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiConfig {
    /// Augmented copies per unlabeled sample.
    pub k_aug: usize,
    /// Sharpening temperature.
    pub temperature: f64,
    /// Beta(mix_alpha, mix_alpha) mixing coefficient; 0 disables mixing.
    pub mix_alpha: f64,
    /// Weight of the unlabeled loss once fully ramped up.
    pub lambda_u: f64,
    /// Standard deviation of the Gaussian feature jitter.
    pub aug_sigma: f64,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self {
            k_aug: 2,
            temperature: 0.5,
            mix_alpha: 0.75,
            lambda_u: 75.0,
            aug_sigma: 0.1,
        }
    }
}

/// Fraction of training over which the unlabeled weight ramps up linearly.
pub const RAMPUP_FRACTION: f64 = 0.25;

impl SemiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_aug == 0 {
            return Err(Error::param("k_aug must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param("temperature must be positive"));
        }
        if !(self.mix_alpha >= 0.0 && self.mix_alpha.is_finite()) {
            return Err(Error::param("mix_alpha must be non-negative"));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(Error::param("lambda_u must be non-negative"));
        }
        if !(self.aug_sigma >= 0.0 && self.aug_sigma.is_finite()) {
            return Err(Error::param("aug_sigma must be non-negative"));
        }
        Ok(())
    }

    /// Unlabeled loss weight at `epoch` out of `total` epochs.
    pub fn unlabeled_weight(&self, epoch: usize, total: usize) -> f64 {
        let ramp = RAMPUP_FRACTION * total as f64;
        if ramp <= 0.0 {
            return self.lambda_u;
        }
        self.lambda_u * (epoch as f64 / ramp).min(1.0)
    }
}

/// `x + sigma * g` with `g` standard normal.
pub fn augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(rng);
            v + sigma * g
        })
        .collect()
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::param("empty distribution"));
    }
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::param("distribution has a negative or non-finite entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!("distribution sums to {sum}, not 1")));
    }
    Ok(())
}

/// `p_k^(1/T) / sum_j p_j^(1/T)`, computed in log space. `T = 1` returns `p`.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_simplex(p)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param("temperature must be positive"));
    }
    if temperature == 1.0 {
        return Ok(p.to_vec());
    }
    let max_log = p
        .iter()
        .map(|v| v.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = p
        .iter()
        .map(|v| ((v.ln() - max_log) / temperature).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

/// Augmented copies of `u` together with their sharpened mean prediction.
fn guess_with_copies<R: Rng + ?Sized>(
    net: &Network,
    u: &[f64],
    k_aug: usize,
    temperature: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if k_aug == 0 {
        return Err(Error::param("k_aug must be at least 1"));
    }
    let mut mean = vec![0.0; net.num_classes()];
    let mut copies = Vec::with_capacity(k_aug);
    for _ in 0..k_aug {
        let x = augment(u, sigma, rng);
        let p = softmax(&net.forward(&x)?);
        mean.iter_mut().zip(&p).for_each(|(m, v)| *m += v);
        copies.push(x);
    }
    mean.iter_mut().for_each(|m| *m /= k_aug as f64);
    Ok((copies, sharpen(&mean, temperature)?))
}

/// Sharpened average prediction over `k_aug` augmentations of `u`.
pub fn guess_labels<R: Rng + ?Sized>(
    net: &Network,
    u: &[f64],
    k_aug: usize,
    temperature: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(guess_with_copies(net, u, k_aug, temperature, sigma, rng)?.1)
}

/// A mixed input and target, with the coefficient applied to the first pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: f64,
}

/// Mixes with a fixed coefficient `lambda'`, applied to the first pair.
pub fn mix_with(x1: &[f64], p1: &[f64], x2: &[f64], p2: &[f64], lambda: f64) -> Mixed {
    let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(u, v)| lambda * u + (1.0 - lambda) * v)
            .collect()
    };
    Mixed {
        x: blend(x1, x2),
        p: blend(p1, p2),
        lambda,
    }
}

/// Draws `lambda ~ Beta(mix_alpha, mix_alpha)` and mixes with
/// `max(lambda, 1 - lambda)`, so the result stays closer to the first pair.
/// `mix_alpha = 0` is the degenerate limit and returns the first pair.
pub fn mixup<R: Rng + ?Sized>(
    x1: &[f64],
    p1: &[f64],
    x2: &[f64],
    p2: &[f64],
    mix_alpha: f64,
    rng: &mut R,
) -> Result<Mixed> {
    check_simplex(p1)?;
    check_simplex(p2)?;
    let lambda = draw_lambda(mix_alpha, rng)?;
    Ok(mix_with(x1, p1, x2, p2, lambda.max(1.0 - lambda)))
}

fn draw_lambda<R: Rng + ?Sized>(mix_alpha: f64, rng: &mut R) -> Result<f64> {
    if mix_alpha == 0.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(mix_alpha, mix_alpha)
        .map_err(|e| Error::param(format!("invalid mix_alpha {mix_alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// Mean over classes of `(p - q)^2` and its gradient with respect to the logits.
fn squared_error_and_grad(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let k = p.len() as f64;
    let loss = p
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / k;
    let dp: Vec<f64> = p.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / k).collect();
    let inner: f64 = dp.iter().zip(&p).map(|(g, q)| g * q).sum();
    let dz = p.iter().zip(&dp).map(|(q, g)| q * (g - inner)).collect();
    (loss, dz)
}

/// Losses reported by one semi-supervised epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SemiLosses {
    /// Mean cross-entropy over mixed labeled samples.
    pub labeled: f64,
    /// Mean squared error over mixed unlabeled samples, before weighting.
    pub unlabeled: f64,
}

/// One epoch of MixMatch over the labeled batches of `confident`.
///
/// Per batch: jitter the labeled inputs, guess targets for the next slice of
/// unlabeled inputs, mix labeled items against a shuffled pool of all batch
/// items and unlabeled items against the rest of the pool, then take one SGD
/// step on `CE(labeled) + w * MSE(unlabeled)`, `w` ramping up to `lambda_u`.
/// An empty unlabeled set reduces this to supervised mixup training.
pub fn semi_train_epoch(
    net: &mut Network,
    confident: &LabeledView<'_>,
    unconfident: &[&[f64]],
    semi: &SemiConfig,
    train: &TrainConfig,
    epoch: usize,
) -> Result<SemiLosses> {
    semi.validate()?;
    train.validate()?;
    if confident.is_empty() {
        return Err(Error::param("semi-supervised training needs confident samples"));
    }
    if epoch >= train.total_epochs {
        return Err(Error::param(format!(
            "epoch {epoch} is past total_epochs {}",
            train.total_epochs
        )));
    }
    check_view(net, confident)?;
    if unconfident.iter().any(|u| u.len() != net.input_dim()) {
        return Err(Error::param("unlabeled feature dimension mismatch"));
    }

    let k = net.num_classes();
    let lr = train.lr_at(epoch);
    let weight_u = semi.unlabeled_weight(epoch, train.total_epochs);
    let order = epoch_order(confident.len(), train.seed, epoch);
    let mut rng = rng::stream(train.seed, rng::STREAM_AUGMENT, epoch as u64);
    let mut u_order: Vec<usize> = (0..unconfident.len()).collect();
    u_order.shuffle(&mut rng);
    let mut u_cursor = 0;

    let mut grads_x = vec![0.0; net.num_params()];
    let mut grads_u = vec![0.0; net.num_params()];
    let (mut sum_x, mut sum_u) = (0.0, 0.0);
    let mut count_u = 0usize;

    for batch in order.chunks(train.batch_size) {
        let mut pool: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for &i in batch {
            let mut onehot = vec![0.0; k];
            onehot[confident.labels[i]] = 1.0;
            pool.push((augment(confident.features[i], semi.aug_sigma, &mut rng), onehot));
        }
        let n_x = pool.len();
        let take = batch.len().min(unconfident.len());
        for _ in 0..take {
            let u = unconfident[u_order[u_cursor]];
            u_cursor = (u_cursor + 1) % unconfident.len();
            let (copies, q) = guess_with_copies(
                net,
                u,
                semi.k_aug,
                semi.temperature,
                semi.aug_sigma,
                &mut rng,
            )?;
            pool.extend(copies.into_iter().map(|c| (c, q.clone())));
        }

        let mut partners: Vec<usize> = (0..pool.len()).collect();
        partners.shuffle(&mut rng);

        grads_x.iter_mut().for_each(|g| *g = 0.0);
        grads_u.iter_mut().for_each(|g| *g = 0.0);
        for (slot, &j) in partners.iter().enumerate() {
            let (x1, p1) = &pool[slot];
            let (x2, p2) = &pool[j];
            let lambda = draw_lambda(semi.mix_alpha, &mut rng)?;
            let mixed = mix_with(x1, p1, x2, p2, lambda.max(1.0 - lambda));
            let trace = net.trace(&mixed.x)?;
            if slot < n_x {
                sum_x += soft_cross_entropy(trace.logits(), &mixed.p);
                let mut dlogits = softmax(trace.logits());
                dlogits.iter_mut().zip(&mixed.p).for_each(|(d, t)| *d -= t);
                net.backprop(&trace, &dlogits, &mut grads_x);
            } else {
                let (loss, dlogits) = squared_error_and_grad(trace.logits(), &mixed.p);
                sum_u += loss;
                count_u += 1;
                net.backprop(&trace, &dlogits, &mut grads_u);
            }
        }

        let scale_x = 1.0 / n_x as f64;
        grads_x.iter_mut().for_each(|g| *g *= scale_x);
        let n_u = pool.len() - n_x;
        if n_u > 0 && weight_u != 0.0 {
            let scale_u = weight_u / n_u as f64;
            grads_x
                .iter_mut()
                .zip(&grads_u)
                .for_each(|(g, u)| *g += scale_u * u);
        }
        net.sgd_step(&grads_x, lr, train.weight_decay);
    }

    Ok(SemiLosses {
        labeled: sum_x / confident.len() as f64,
        unlabeled: if count_u > 0 { sum_u / count_u as f64 } else { 0.0 },
    })
}
