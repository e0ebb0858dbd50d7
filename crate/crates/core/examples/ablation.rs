//! Runs the three variants on noisy blobs over several seeds and prints
//! held-out accuracy and small-circle correction accuracy.
//!
//! Usage: cargo run --release --example ablation -- [seeds] [noise_rate] [warmup] [main] [proto_split] [lambda_u]

use std::time::Instant;

use protosemi::{inject_factual_noise, run_ablation, BlobParams, PipelineConfig, Variant};

fn main() -> protosemi::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let rate: f64 = args.next().map_or(0.3, |s| s.parse().expect("noise rate"));
    let mut config = PipelineConfig::default();
    if let Some(v) = args.next() {
        config.warmup_epochs = v.parse().expect("warmup epochs");
    }
    if let Some(v) = args.next() {
        config.main_epochs = v.parse().expect("main epochs");
    }
    if let Some(v) = args.next() {
        config.proto_split_epochs = v.parse().expect("proto split epochs");
    }
    if let Some(v) = args.next() {
        config.semi.lambda_u = v.parse().expect("lambda_u");
    }
    println!("{config:?}");
    let mut sums = [0.0; 3];
    for seed in 0..seeds {
        let params = BlobParams {
            num_classes: 4,
            per_class: 500,
            dim: 16,
            separation: 6.0,
            spread: 1.0,
            seed,
        };
        let (clean, heldout) = params.generate_with_heldout(100)?;
        let train = inject_factual_noise(&clean, rate, seed + 1000)?;
        let config = PipelineConfig { seed, ..config.clone() };
        for (v, variant) in [Variant::Full, Variant::NoRepar, Variant::NoSemi].into_iter().enumerate() {
            let start = Instant::now();
            let run = run_ablation(&train, &heldout, &config, variant)?;
            let r = &run.report;
            sums[v] += r.last_accuracy();
            let stats: Vec<String> = r
                .stats_rows()
                .iter()
                .map(|(e, s)| format!("e{e}: u={} small={} corr={} right={} acc={}", s.unconfident, s.small_circle, s.corrected, s.right, s.accuracy_text()))
                .collect();
            println!(
                "seed {seed} {variant:>8}: last {:.4} best {:.4} ({:.1}s) {}",
                r.last_accuracy(),
                r.best_accuracy(),
                start.elapsed().as_secs_f64(),
                stats.join("; ")
            );
        }
    }
    let n = seeds as f64;
    println!(
        "mean last accuracy: full {:.4} no_repar {:.4} no_semi {:.4}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n
    );
    Ok(())
}
