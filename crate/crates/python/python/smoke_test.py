"""Smoke test for the protosemi extension module.

Run after `maturin develop` (or with the built library on PYTHONPATH as
protosemi.so):

    python crates/python/python/smoke_test.py
"""

import math

import protosemi


def main():
    assert protosemi.correction_accuracy(5416, 5703) is not None
    assert f"{protosemi.correction_accuracy(5416, 5703):.2f}" == "94.97"
    assert f"{protosemi.correction_accuracy(3846, 3992):.2f}" == "96.34"
    assert protosemi.correction_accuracy(0, 0) is None

    s = protosemi.sharpen([0.8, 0.2], 0.5)
    assert abs(s[0] - 0.64 / 0.68) < 1e-12
    assert protosemi.cosine_lr(5, 10, 0.02) == 0.01
    assert abs(protosemi.cross_entropy([0.0] * 10, 3) - math.log(10)) < 1e-12
    assert abs(protosemi.correction_probability(0.925) - 0.5) < 1e-12

    train, held = protosemi.Dataset.blobs(
        num_classes=3, per_class=60, dim=5, separation=5.0, seed=1, heldout_per_class=20
    )
    noisy = train.with_factual_noise(0.3, 2)
    assert len(noisy) == 180 and abs(noisy.noise_rate - 0.3) < 1e-12
    assert noisy.true_labels == train.true_labels

    net = protosemi.Network([5, 8, 6, 3], seed=0)
    assert len(net.embed([0.0] * 5)) == 6
    for epoch in range(5):
        net.train_epoch(noisy, epoch, 5, base_lr=0.05, batch_size=16)
    confident, unconfident = protosemi.split_by_agreement(net, noisy)
    assert len(confident) + len(unconfident) == len(noisy)
    protos = protosemi.build_prototypes(net, noisy)
    sims = protosemi.similarity_to_prototypes(net, noisy.features[0], protos)
    assert len(sims) == 3 and all(-1.0 <= v <= 1.0 for v in sims)
    assert 0.0 <= protosemi.evaluate(net, held) <= 1.0

    # The default unlabeled weight is tuned for larger sets; 180 samples
    # need a gentler one.
    report = protosemi.run(
        noisy, held, "full", warmup_epochs=2, proto_split_epochs=2, main_epochs=10,
        hidden=[12, 8], base_lr=0.1, batch_size=16, lambda_u=5, seed=3,
    )
    assert report["variant"] == "full"
    assert len(report["epochs"]) == 12
    assert report["best_accuracy"] >= report["last_accuracy"] > 0.8
    assert sum(e["stats"] is not None for e in report["epochs"]) == 2
    again = protosemi.run(
        noisy, held, "full", warmup_epochs=2, proto_split_epochs=2, main_epochs=10,
        hidden=[12, 8], base_lr=0.1, batch_size=16, lambda_u=5, seed=3,
    )
    assert again["epochs"] == report["epochs"]

    try:
        protosemi.run(noisy, held, colour="blue")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    print(f"smoke test passed: last accuracy {report['last_accuracy']:.3f}")


if __name__ == "__main__":
    main()
