#!/usr/bin/env python3
"""Smoke test for the chargegen_py extension module.

Builds the cdylib with cargo, loads it, and exercises the main surface:
schedule math, a tiny training + sampling round trip, the metrics, k-means,
and the bidding solver. Exits non-zero on the first failure.
"""

import math
import pathlib
import shutil
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "chargegen-py"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libchargegen_py.so"
    target = pathlib.Path(__file__).resolve().parent / "chargegen_py.so"
    shutil.copyfile(built, target)
    sys.path.insert(0, str(target.parent))
    import chargegen_py

    return chargegen_py


def main():
    cg = build_and_import()

    # Schedule: exact endpoints, closed-form corruption, posterior identity.
    sched = cg.Schedule(steps=50, beta_start=1e-4, beta_end=0.5)
    assert sched.steps == 50
    assert sched.beta(1) == 1e-4
    assert sched.beta(50) == 0.5
    assert abs(sched.beta(25) - 0.12351011302550546) < 1e-12
    assert sched.beta_tilde(1) == 0.0

    x0 = [0.5, -0.25, 1.0]
    eps = [0.1, 0.0, -0.3]
    xt = sched.forward_sample(x0, 10, eps)
    a = sched.posterior_mean_from_x0(x0, xt, 10)
    b = sched.posterior_mean_from_eps(xt, eps, 10)
    assert all(abs(u - v) < 1e-10 for u, v in zip(a, b)), "posterior identity"
    mean = sched.reverse_step(xt, eps, 1, [9.9, 9.9, 9.9])
    assert mean == sched.posterior_mean_from_eps(xt, eps, 1), "t=1 is deterministic"

    emb = cg.sinusoidal_step_embedding(1, 8)
    assert abs(emb[0] - math.sin(1)) < 1e-12 and abs(emb[1] - math.cos(1)) < 1e-12
    for j in range(4):
        assert abs(emb[2 * j] ** 2 + emb[2 * j + 1] ** 2 - 1.0) < 1e-12

    # Tiny corpus: two plateau levels with zero padding.
    corpus = []
    for i in range(24):
        level = 8.0 if i % 2 == 0 else 16.0
        corpus.append([level] * 14 + [0.0] * 10)

    model = cg.train_denoiser(
        corpus, hidden=8, heads=2, head_dim=4, epochs=3, batch_size=4, patience=3, seed=5
    )
    assert len(model.loss_history) <= 3 and model.loss_history[0] > 0
    assert not model.conditional

    samples = model.sample(6, seed=1)
    assert len(samples) == 6 and len(samples[0]) == 24
    assert all(math.isfinite(v) for row in samples for v in row)
    assert model.sample(6, seed=1) == samples, "fixed seed reproduces samples"
    assert model.sample(6, seed=2) != samples, "fresh seed changes samples"

    ckpt = pathlib.Path(__file__).resolve().parent / "smoke_checkpoint.json"
    model.save(str(ckpt))
    reloaded = cg.load_denoiser(str(ckpt))
    assert reloaded.sample(3, seed=9) == model.sample(3, seed=9)
    ckpt.unlink()

    # Metrics.
    assert cg.marginal_score(corpus, corpus) == 0.0
    shifted = [[v + 100.0 for v in row] for row in corpus]
    assert cg.marginal_score(corpus, shifted) == 1.0
    mean_bce, _std = cg.discriminative_score(corpus, shifted, repeats=1, seed=0)
    assert mean_bce <= 0.1, f"offset corpora should be separable, got {mean_bce}"

    centroids, assignments, medoids, wcss = cg.kmeans(
        [[0.0, 0.0], [0.1, 0.0], [9.0, 9.0], [9.1, 9.0]], k=2, seed=3
    )
    assert wcss < 0.1
    assert assignments[0] == assignments[1] and assignments[2] == assignments[3]
    assert assignments[0] != assignments[2]
    assert len(centroids) == 2 and len(medoids) == 2

    # Bidding: free energy tracks demand exactly; zero demand costs nothing.
    demand = [[3.0, 7.0, 0.0, 9.5]]
    power, energy, penalty, total = cg.solve_day_ahead_bids(
        demand, [0.0, 0.0, 0.0, 0.0], penalty_price=1.0
    )
    assert power == demand and energy == 0.0 and penalty == 0.0 and total == 0.0

    _, energy, penalty, total = cg.solve_day_ahead_bids(
        [[0.0] * 4], [0.2] * 4, penalty_price=1.0
    )
    assert total == 0.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
