mod common;

use protosemi::rng;
use protosemi::select::{decide, similarities, Action, Zone};
use protosemi::{
    build_prototypes, evaluate, repartition, split_by_agreement, BlobParams, Error,
    PrototypeMatrix, Thresholds,
};

const SEEDS: [u64; 5] = [11, 29, 37, 41, 59];

#[test]
fn split_matches_oracle_on_50_samples() {
    for seed in SEEDS {
        let (ds, net) = common::small_problem(seed, 17, 3);
        let ds = ds.subset(&(0..50).collect::<Vec<_>>()).unwrap();
        let p = split_by_agreement(&net, &ds).unwrap();
        let (conf, unconf) = common::split(&net, &ds);
        assert_eq!(p.confident(), conf.as_slice(), "seed {seed}");
        assert_eq!(p.unconfident(), unconf.as_slice(), "seed {seed}");
        assert!(p.is_exact(ds.len()));
    }
}

#[test]
fn split_matches_oracle_on_20_samples_with_untrained_net() {
    let (ds, _) = common::small_problem(5, 7, 0);
    let ds = ds.subset(&(0..20).collect::<Vec<_>>()).unwrap();
    let net = protosemi::init_network(&[4, 9, 3], 99).unwrap();
    let p = split_by_agreement(&net, &ds).unwrap();
    let (conf, unconf) = common::split(&net, &ds);
    assert_eq!(p.confident(), conf.as_slice());
    assert_eq!(p.unconfident(), unconf.as_slice());
}

#[test]
fn prototypes_match_oracle_means() {
    let mut compared = 0;
    for seed in SEEDS {
        let (ds, net) = common::small_problem(seed, 17, 3);
        let ds = ds.subset(&(0..50).collect::<Vec<_>>()).unwrap();
        let p = split_by_agreement(&net, &ds).unwrap();
        match common::prototypes(&net, &ds, p.confident()) {
            Some(rows) => {
                let protos = build_prototypes(&net, &ds, &p).unwrap();
                compared += 1;
                for (k, row) in rows.iter().enumerate() {
                    for (a, b) in protos.row(k).iter().zip(row) {
                        assert!((a - b).abs() < 1e-9, "seed {seed} class {k}: {a} vs {b}");
                    }
                }
            }
            None => assert!(matches!(
                build_prototypes(&net, &ds, &p),
                Err(Error::DegenerateClass { .. })
            )),
        }
    }
    assert_eq!(compared, 5);
}

#[test]
fn repartition_matches_replay_oracle() {
    let mut zones_seen = [0usize; 3];
    for seed in SEEDS {
        let (ds, net) = common::small_problem(seed, 17, 3);
        let ds = ds.subset(&(0..50).collect::<Vec<_>>()).unwrap();
        let p = split_by_agreement(&net, &ds).unwrap();
        let Some(rows) = common::prototypes(&net, &ds, p.confident()) else {
            continue;
        };
        // Wide rings so that every zone is populated somewhere.
        for (alpha, beta) in [(0.95, 0.9), (0.9, 0.3), (0.99, -0.5)] {
            let th = Thresholds::new(alpha, beta).unwrap();
            let mut lib_ds = ds.clone();
            let mut lib_rng = rng::stream(seed, 4, 0);
            let mut oracle_rng = lib_rng.clone();
            let (next, log) = repartition(&net, &mut lib_ds, &p, &th, &mut lib_rng).unwrap();
            let labels = ds.working_labels();
            let decisions = common::repartition(
                &net,
                &labels,
                &rows,
                p.unconfident(),
                &ds,
                alpha,
                beta,
                &mut oracle_rng,
            );
            assert_eq!(log.records.len(), decisions.len());
            let mut expected_labels = labels.clone();
            let mut expected_conf = p.confident().to_vec();
            let mut expected_unconf = Vec::new();
            for (r, d) in log.records.iter().zip(&decisions) {
                assert_eq!(r.index, d.index);
                assert_eq!(r.proto_label, d.proto);
                let zone = match r.zone {
                    Zone::Small => 0,
                    Zone::Ring => 1,
                    Zone::Outside => 2,
                };
                assert_eq!(zone, d.zone, "seed {seed} sample {}", d.index);
                zones_seen[zone as usize] += 1;
                match d.new_label {
                    Some(l) => {
                        assert!(r.moved());
                        assert_eq!(r.new_label(), l);
                        expected_labels[d.index] = l;
                        expected_conf.push((d.index, l));
                    }
                    None => {
                        assert_eq!(r.action, Action::Unmoved);
                        expected_unconf.push(d.index);
                    }
                }
            }
            expected_conf.sort_unstable();
            assert_eq!(next.confident(), expected_conf.as_slice());
            assert_eq!(next.unconfident(), expected_unconf.as_slice());
            assert_eq!(lib_ds.working_labels(), expected_labels);
            assert_eq!(lib_ds.true_labels(), ds.true_labels());
        }
    }
    assert!(zones_seen.iter().all(|&c| c > 0), "zones seen {zones_seen:?}");
}

#[test]
fn ring_zone_decisions_replay_uniform_draws() {
    // Ten embeddings placed at known angles from two prototypes.
    let protos = PrototypeMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1]).unwrap();
    let th = Thresholds::new(0.95, 0.90).unwrap();
    let embeddings: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let d: f64 = 0.9 + 0.005 * i as f64;
            vec![d, (1.0 - d * d).sqrt()]
        })
        .collect();
    let priors: Vec<usize> = (0..10).map(|i| if i % 3 == 0 { 0 } else { 1 }).collect();

    let mut lib_rng = rng::stream(2024, 4, 1);
    let mut oracle_rng = lib_rng.clone();
    let mut draws_used = 0;
    for (i, e) in embeddings.iter().enumerate() {
        let sims = similarities(e, &protos).unwrap();
        let r = decide(i, &sims, priors[i], &th, || {
            draws_used += 1;
            rand::Rng::random::<f64>(&mut lib_rng)
        })
        .unwrap();
        assert_eq!(r.zone, Zone::Ring, "sample {i}");
        assert_eq!(r.proto_label, 0);

        let d = common::cosine(e, &[1.0, 0.0]);
        let p = (d - 0.90) / (0.95 - 0.90);
        assert!((r.p_correct - p).abs() < 1e-12);
        let expected = if priors[i] == 0 {
            Action::Retained
        } else if rand::Rng::random::<f64>(&mut oracle_rng) < p {
            Action::Corrected
        } else {
            Action::Retained
        };
        assert_eq!(r.action, expected, "sample {i}");
    }
    assert_eq!(draws_used, priors.iter().filter(|&&p| p != 0).count());
}

#[test]
fn cosine_example() {
    let protos = PrototypeMatrix::from_rows(vec![vec![1.0, 1.0]], vec![1]).unwrap();
    let s = similarities(&[1.0, 0.0], &protos).unwrap();
    assert!((s[0] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(format!("{:.5}", s[0]), "0.70711");
}

#[test]
fn evaluate_matches_manual_count() {
    let held = BlobParams {
        num_classes: 4,
        per_class: 5,
        dim: 3,
        separation: 2.0,
        spread: 1.5,
        seed: 8,
    }
    .generate()
    .unwrap();
    assert_eq!(held.len(), 20);
    for seed in 0..5 {
        let net = protosemi::init_network(&[3, 7, 4], seed).unwrap();
        let hits = held
            .samples()
            .iter()
            .filter(|s| common::argmax(&common::forward(&net, s.features()).1) == s.true_label())
            .count();
        assert_eq!(evaluate(&net, &held).unwrap(), hits as f64 / 20.0);
    }
}
