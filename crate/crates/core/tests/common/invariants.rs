//! Property checks shared by the proptest suite and the acceptance run.
//! Each returns `Err` with a description of the first violation.

use protosemi::mixmatch::mixup;
use protosemi::pipeline::RunOutput;
use protosemi::rng;
use protosemi::select::{similarities, Zone};
use protosemi::{
    guess_labels, init_network, repartition, run_ablation, sharpen, split_by_agreement,
    correction_probability, NoisyDataset, PipelineConfig, PrototypeMatrix, Sample, SemiConfig,
    Thresholds, Variant,
};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn is_simplex(p: &[f64]) -> bool {
    p.iter().all(|&v| (0.0..=1.0).contains(&v)) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// Split and repartition keep every index on exactly one side.
pub fn partition_exact(seed: u64, alpha: f64, beta: f64) -> Check {
    let (ds, net) = super::small_problem(seed, 20, (seed % 4) as usize);
    let p = split_by_agreement(&net, &ds).map_err(|e| e.to_string())?;
    ensure(p.is_exact(ds.len()), || format!("split not exact for seed {seed}"))?;
    let th = Thresholds::new(alpha, beta).map_err(|e| e.to_string())?;
    let mut work = ds.clone();
    match repartition(&net, &mut work, &p, &th, &mut rng::stream(seed, 4, 0)) {
        Ok((next, log)) => {
            ensure(next.is_exact(ds.len()), || format!("repartition not exact for seed {seed}"))?;
            ensure(log.len() == p.unconfident().len(), || "log size".into())?;
            ensure(
                next.confident().len() == p.confident().len() + log.moved_count(),
                || "confident side did not grow by the moved count".into(),
            )
        }
        Err(e) if e.is_degenerate() => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

/// Sharpening stays on the simplex and keeps the mode.
pub fn sharpen_simplex(p: &[f64], t: f64) -> Check {
    let s = sharpen(p, t).map_err(|e| e.to_string())?;
    ensure(is_simplex(&s), || format!("sharpen({p:?}, {t}) = {s:?}"))?;
    let mode = super::argmax(p);
    ensure(s[mode] >= s.iter().cloned().fold(0.0, f64::max) - 1e-12, || {
        format!("sharpen moved the mode of {p:?}")
    })
}

/// Guessed labels lie on the simplex.
pub fn guess_simplex(seed: u64, k_aug: usize, t: f64, sigma: f64) -> Check {
    let net = init_network(&[3, 5, 4], seed).map_err(|e| e.to_string())?;
    let mut r = rng::stream(seed, 3, 0);
    let u = [seed as f64 * 0.01, -0.5, 2.0];
    let g = guess_labels(&net, &u, k_aug, t, sigma, &mut r).map_err(|e| e.to_string())?;
    ensure(is_simplex(&g), || format!("guess {g:?}"))
}

/// Mixed points stay inside the coordinate hull and nearer the first pair.
pub fn mixup_convex(x1: &[f64], x2: &[f64], p1: &[f64], p2: &[f64], alpha: f64, seed: u64) -> Check {
    let m = mixup(x1, p1, x2, p2, alpha, &mut rng::stream(seed, 3, 1)).map_err(|e| e.to_string())?;
    ensure((0.5..=1.0).contains(&m.lambda), || format!("lambda' {}", m.lambda))?;
    for j in 0..x1.len() {
        let (lo, hi) = (x1[j].min(x2[j]), x1[j].max(x2[j]));
        ensure(m.x[j] >= lo - 1e-12 && m.x[j] <= hi + 1e-12, || {
            format!("coordinate {j}: {} outside [{lo}, {hi}]", m.x[j])
        })?;
    }
    ensure(is_simplex(&m.p), || format!("mixed target {:?}", m.p))
}

fn zone_rank(z: Zone) -> u8 {
    match z {
        Zone::Outside => 0,
        Zone::Ring => 1,
        Zone::Small => 2,
    }
}

/// A higher similarity never lands in a farther zone or a lower ring probability.
pub fn threshold_monotone(alpha: f64, beta: f64, d1: f64, d2: f64) -> Check {
    let th = Thresholds::new(alpha, beta).map_err(|e| e.to_string())?;
    let (lo, hi) = (d1.min(d2), d1.max(d2));
    ensure(zone_rank(th.zone(lo)) <= zone_rank(th.zone(hi)), || {
        format!("zones not monotone at {lo}, {hi}")
    })?;
    if th.zone(lo) == Zone::Ring && th.zone(hi) == Zone::Ring {
        let (pl, ph) = (
            correction_probability(lo, &th).map_err(|e| e.to_string())?,
            correction_probability(hi, &th).map_err(|e| e.to_string())?,
        );
        ensure(pl <= ph && (0.0..=1.0).contains(&pl) && ph <= 1.0, || {
            format!("ramp not monotone: p({lo})={pl}, p({hi})={ph}")
        })?;
    }
    Ok(())
}

/// Rescaling embeddings or prototypes leaves zones and proto labels alone.
pub fn cosine_scale_invariant(e: &[f64], rows: &[Vec<f64>], scale: f64, th: &Thresholds) -> Check {
    let protos = PrototypeMatrix::from_rows(rows.to_vec(), vec![1; rows.len()]).map_err(|e| e.to_string())?;
    let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale * 0.5).collect()).collect();
    let scaled = PrototypeMatrix::from_rows(scaled_rows, vec![1; rows.len()]).map_err(|e| e.to_string())?;
    let e2: Vec<f64> = e.iter().map(|v| v * scale).collect();
    let (a, b) = match (similarities(e, &protos), similarities(&e2, &scaled)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(_), Err(_)) => return Ok(()),
        _ => return Err("scaling changed degeneracy".into()),
    };
    let (ka, kb) = (super::argmax(&a), super::argmax(&b));
    // Near-ties and near-threshold values may flip on rounding alone.
    let tol = 1e-9;
    let near_threshold = |d: f64| (d - th.alpha()).abs() < tol || (d - th.beta()).abs() < tol;
    let mut sorted = a.clone();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let tie = sorted.len() > 1 && sorted[0] - sorted[1] < tol;
    if !tie {
        ensure(ka == kb, || format!("proto label {ka} became {kb}"))?;
    }
    if !near_threshold(a[ka]) {
        ensure(th.zone(a[ka]) == th.zone(b[kb]), || format!("zone changed at {}", a[ka]))?;
    }
    Ok(())
}

/// The unlabeled weight ramps up monotonically and is capped at lambda_u.
pub fn ramp_monotone(lambda_u: f64, total: usize) -> Check {
    let semi = SemiConfig {
        lambda_u,
        ..SemiConfig::default()
    };
    let mut prev = 0.0;
    for e in 0..=total {
        let w = semi.unlabeled_weight(e, total);
        ensure(w >= prev - 1e-12 && w <= lambda_u + 1e-12, || {
            format!("weight {w} at epoch {e} after {prev}")
        })?;
        prev = w;
    }
    Ok(())
}

pub fn report_bytes(out: &RunOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    out.report.write_to(&mut buf).unwrap();
    buf
}

/// Two runs with one seed give byte-identical reports and identical networks.
pub fn run_deterministic(seed: u64) -> Check {
    let (train, held) = super::quick_problem(seed);
    let config = super::quick_config(seed);
    let a = run_ablation(&train, &held, &config, Variant::Full).map_err(|e| e.to_string())?;
    let b = run_ablation(&train, &held, &config, Variant::Full).map_err(|e| e.to_string())?;
    ensure(report_bytes(&a) == report_bytes(&b), || "reports differ".into())?;
    ensure(a.network == b.network, || "networks differ".into())
}

/// Relabels every true label; nothing the learner sees may change.
pub fn with_corrupted_truth(ds: &NoisyDataset, shift: usize) -> NoisyDataset {
    let k = ds.num_classes();
    let samples = ds
        .samples()
        .iter()
        .map(|s| Sample::new(s.features().to_vec(), (s.true_label() + shift) % k, s.working_label()))
        .collect();
    NoisyDataset::new(samples, k, ds.dim()).unwrap()
}

/// Corrupting true labels leaves losses, partitions, corrections, held-out
/// accuracy and the final network bit-identical.
pub fn label_hygiene(seed: u64, config: &PipelineConfig) -> Check {
    let (train, held) = super::quick_problem(seed);
    let corrupted = with_corrupted_truth(&train, 1 + (seed as usize % 2));
    let a = run_ablation(&train, &held, config, Variant::Full).map_err(|e| e.to_string())?;
    let b = run_ablation(&corrupted, &held, config, Variant::Full).map_err(|e| e.to_string())?;
    ensure(a.network == b.network, || "final networks differ".into())?;
    for (x, y) in a.report.epochs.iter().zip(&b.report.epochs) {
        let same = x.lr.to_bits() == y.lr.to_bits()
            && x.loss_labeled.to_bits() == y.loss_labeled.to_bits()
            && x.loss_unlabeled.to_bits() == y.loss_unlabeled.to_bits()
            && x.confident == y.confident
            && x.unconfident == y.unconfident
            && x.moved == y.moved
            && x.accuracy.to_bits() == y.accuracy.to_bits();
        ensure(same, || format!("epoch {} differs", x.epoch))?;
    }
    ensure(a.correction_logs == b.correction_logs, || "correction logs differ".into())?;
    ensure(a.dataset.working_labels() == b.dataset.working_labels(), || {
        "working labels differ".into()
    })
}
