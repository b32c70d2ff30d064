"""Acceptance criteria, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary (see conftest.py). Criteria 7, 9 and 10 share cached training runs.
Run standalone with ``python tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest

from omega_iosda import losses
from omega_iosda.cli import main as cli_main
from omega_iosda.clustering import assign_cluster, kmeans
from omega_iosda.config import load_config
from omega_iosda.evaluation import hos
from omega_iosda.experiment import build_data, run
from omega_iosda.model import Network
from omega_iosda.numerics import entropy, finite_diff_grad, grad_close, l2_normalize, softmax_tau, sym_kl, sym_kl_grad
from omega_iosda.thresholding import predict_open, update_thresholds

from conftest import random_probs, record_criterion
from test_losses import brute_cl, brute_nc
from test_model import composed_objective, perturbed

SEEDS = (0, 1, 2, 3, 4)
EPOCHS = 30


def verdict(n, ok, detail):
    record_criterion(n, ok, detail)
    assert ok, f"criterion {n}: {detail}"


# shared training runs: key -> (final HOS, loss history, wall seconds)
_RUNS = {}


def cached_run(key, seed, **train):
    if (key, seed) not in _RUNS:
        overrides = [f"train.{k}={v}" for k, v in train.items()] + [f"train.epochs={EPOCHS}"]
        cfg = load_config(overrides=overrides, seed=seed)
        start = time.perf_counter()
        res = run(cfg)
        wall = time.perf_counter() - start
        _RUNS[(key, seed)] = (res.history[-1].metrics.hos, [h.total for h in res.history], wall)
    return _RUNS[(key, seed)]


VARIANTS = {"full": {}, "no_me": {"r": 0}, "no_cl": {"eta2": 0}, "baseline": {"r": 0, "eta2": 0}}


def test_c1_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    passed = {"ce": 0, "es": 0, "kl": 0, "cl": 0, "nc": 0, "total": 0}
    K = 4
    rho = math.log(K) / 2
    for _ in range(20):
        p = random_probs(rng, 6, K)
        y = rng.integers(0, K, size=6)
        passed["ce"] += grad_close(losses.ce_loss(p, y)[1], finite_diff_grad(lambda v: losses.ce_loss(v, y)[0], p))

        while True:
            pe = random_probs(rng, 6, K, sharp=rng.uniform(0.2, 2))
            if np.all(np.abs(np.abs(entropy(pe) - rho) - 0.5) > 1e-3):
                break
        passed["es"] += grad_close(losses.es_loss(pe, rho, 0.5)[1],
                                   finite_diff_grad(lambda v: losses.es_loss(v, rho, 0.5)[0], pe))

        a, b = random_probs(rng, 1, K)[0], random_probs(rng, 1, K)[0]
        ga, gb = sym_kl_grad(a, b)
        passed["kl"] += grad_close(ga, finite_diff_grad(lambda v: sym_kl(v, b), a)) and \
            grad_close(gb, finite_diff_grad(lambda v: sym_kl(a, v), b))

        pseudo = rng.integers(0, 2, size=6)
        conf = rng.uniform(size=6)
        passed["cl"] += grad_close(losses.cl_loss(p, pseudo, conf)[1],
                                   finite_diff_grad(lambda v: losses.cl_loss(v, pseudo, conf)[0], p))

        bank = l2_normalize(rng.normal(size=(8, 4)))
        W = rng.normal(scale=0.3, size=(4, 3))
        idx = rng.choice(8, size=3, replace=False)
        f = l2_normalize(rng.normal(size=(3, 4)))
        passed["nc"] += grad_close(losses.nc_loss(f, idx, bank, W, 0.5)[1],
                                   finite_diff_grad(lambda v: losses.nc_loss(v, idx, bank, W, 0.5)[0], f))

    seed = 0
    while passed["total"] < 20:
        r = np.random.default_rng(seed)
        seed += 1
        net = Network(4, 3, widths=(5,), d=4, tau=0.5, rng=r)
        xs, ys = r.normal(size=(6, 4)), r.integers(0, 3, size=6)
        xt = r.normal(size=(5, 4))
        t_idx = r.choice(9, size=5, replace=False)
        bank = l2_normalize(r.normal(size=(9, 4)))
        pseudo, conf = r.integers(0, 2, size=5), r.uniform(size=5)
        rho3 = math.log(3) / 2
        _, ps = net.forward(xs, "source", train=True)
        ft, pt = net.forward(xt, "target", train=True)
        if np.any(np.abs(np.abs(entropy(pt) - rho3) - 0.5) < 1e-3):
            net.discard_records()
            continue
        g_ps = losses.ce_loss(ps, ys)[1]
        g_ft = losses.nc_loss(ft, t_idx, bank, net.classifier.W, net.tau)[1]
        g_pt = 0.05 * losses.es_loss(pt, rho3, 0.5)[1] + 0.1 * losses.cl_loss(pt, pseudo, conf)[1]
        grads = net.backward("source", grad_probs=g_ps)
        gt = net.backward("target", grad_feats=0.05 * g_ft, grad_probs=g_pt)
        protos = net.classifier.W.copy()
        ok = True
        for name, prm in net.parameters().items():
            num = finite_diff_grad(lambda v: perturbed(net, name, v, lambda: composed_objective(
                net, xs, ys, xt, t_idx, bank, pseudo, conf, protos)), prm.copy())
            ok &= grad_close(grads[name] + gt[name], num)
        if not ok:
            break
        passed["total"] += 1

    elapsed = time.perf_counter() - start
    ok = all(v == 20 for v in passed.values()) and elapsed < 30
    verdict(1, ok, f"instances passing per loss {passed}, {elapsed:.1f}s")


def test_c2_threshold_law():
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(1000):
        K = int(rng.integers(2, 20))
        r = float(rng.uniform(0, 0.5))
        E = rng.uniform(0, math.log(K), size=K)
        q = update_thresholds(E, np.ones(K), r)
        lnk = math.log(K)
        ok &= bool(np.all(q >= (0.5 - r) * lnk - 1e-12) and np.all(q <= (0.5 + r) * lnk + 1e-12))
        order = np.argsort(E, kind="stable")
        ok &= bool(np.all(np.diff(q[order]) >= -1e-12))
        ok &= bool(np.all(update_thresholds(E, np.ones(K), 0.0) == lnk / 2))
    with np.errstate(all="raise"):
        q_const = update_thresholds(np.full(6, 0.7), np.ones(6), 0.2)
        q_empty = update_thresholds(np.array([0.3, np.nan, 1.2]), np.array([4, 0, 2]), 0.2)
    ok &= bool(np.all(q_const == math.log(6) / 2)) and q_empty[1] == math.log(3) / 2
    ok &= bool(np.all(np.isfinite(q_empty)))
    verdict(2, ok, "1000 random E vectors: bounds, monotonicity, r=0 exactness, degenerate cases")


def test_c3_baseline_reduction():
    cfg = load_config(overrides=["train.r=0", "train.eta2=0", "train.epochs=2"], seed=0)
    res = run(cfg)
    _, probs = res.net.forward(res.target.X, "target", train=False)
    K = res.net.num_classes
    ours = predict_open(probs, res.state.thresholds.thresholds)
    fixed = np.where(entropy(probs) > math.log(K) / 2, K, np.argmax(probs, axis=1))
    same = np.array_equal(ours, fixed)
    verdict(3, same, f"{len(ours)} target predictions, identical={same}")


def test_c4_metric_oracles():
    a = hos(0.6632, 0.5718)
    b = hos(0.4530, 0.5573)
    rng = np.random.default_rng(3)
    pairs = rng.uniform(size=(10_000, 2))
    sym = all(hos(x, y) == hos(y, x) for x, y in pairs)
    idem = all(abs(hos(x, x) - x) < 1e-15 for x, _ in pairs)
    zero = all(hos(x, 0.0) == 0.0 and hos(0.0, x) == 0.0 for x, _ in pairs)
    ok = abs(a - 0.6141) <= 1e-4 and abs(b - 0.4998) <= 1e-4 and sym and idem and zero
    verdict(4, ok, f"hos -> {a:.4f}, {b:.4f}; symmetry={sym} idempotence={idem} zero={zero}")


def test_c5_brute_force_equivalence():
    rng = np.random.default_rng(11)
    worst_nc = 0.0
    for _ in range(200):
        n_t = int(rng.integers(2, 11))
        K = int(rng.integers(2, 6))
        d = int(rng.integers(2, 6))
        n = int(rng.integers(1, n_t + 1))
        bank = l2_normalize(rng.normal(size=(n_t, d)))
        W = rng.normal(scale=0.5, size=(d, K))
        idx = rng.choice(n_t, size=n, replace=False)
        f = l2_normalize(rng.normal(size=(n, d)))
        worst_nc = max(worst_nc, abs(losses.nc_loss(f, idx, bank, W, 0.05)[0] - brute_nc(f, idx, bank, W, 0.05)))
    C = rng.normal(size=(6, 3))
    assign_ok = all(
        assign_cluster(x, C) == int(np.argmin([math.dist(x, c) for c in C])) for x in rng.normal(size=(1000, 3))
    )
    worst_cl = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        p = random_probs(rng, n, 4, sharp=2)
        pseudo = rng.integers(0, 3, size=n)
        conf = rng.uniform(size=n)
        worst_cl = max(worst_cl, abs(losses.cl_loss(p, pseudo, conf)[0] - brute_cl(p, pseudo, conf)))
    ok = worst_nc <= 1e-9 and assign_ok and worst_cl <= 1e-9
    verdict(5, ok, f"max |nc diff|={worst_nc:.1e}, assign exact={assign_ok}, max |cl diff|={worst_cl:.1e}")


def test_c6_kmeans_contract():
    monotone = True
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = l2_normalize(rng.normal(size=(200, 8)))
        hist = kmeans(X, 4, rng).objective_history
        monotone &= all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
    rng = np.random.default_rng(99)
    X = np.vstack([rng.normal(-5, 0.2, size=(40, 3)), rng.normal(5, 0.2, size=(60, 3))])
    truth = np.repeat([0, 1], [40, 60])
    a = kmeans(X, 2, rng).assignment
    exact = np.array_equal(a, truth) or np.array_equal(a, 1 - truth)
    verdict(6, monotone and exact, f"50 runs nonincreasing={monotone}, two blobs recovered={exact}")


def test_c7_end_to_end(capsys):
    means = {}
    walls = []
    for v, kw in VARIANTS.items():
        runs = [cached_run(v, s, **kw) for s in SEEDS]
        means[v] = float(np.mean([r[0] for r in runs]))
        walls += [r[2] for r in runs]
    gap = 100 * (means["full"] - means["baseline"])
    beats = all(means["full"] > means[v] for v in ("no_me", "no_cl", "baseline"))
    ok = gap >= 5 and beats and max(walls) < 120
    table = ", ".join(f"{v}={100 * m:.2f}" for v, m in means.items())
    verdict(7, ok, f"mean HOS % {table}; full-baseline={gap:+.2f}pp; slowest run {max(walls):.0f}s")


def test_c8_determinism(tmp_path):
    args = ["train", "--set", "train.epochs=3", "--seed", "7"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("epochs.csv", "report.csv", "model.ckpt"))
    verdict(8, same, f"epochs.csv, report.csv and model.ckpt byte-identical={same}")


def test_c9_convergence():
    drops = []
    for s in SEEDS:
        _, totals, _ = cached_run("full", s)
        drops.append(totals[-1] < totals[0])
    firsts = [cached_run("full", s)[1][0] for s in SEEDS]
    lasts = [cached_run("full", s)[1][-1] for s in SEEDS]
    detail = "; ".join(f"seed {s}: {a:.3f} -> {b:.3f}" for s, a, b in zip(SEEDS, firsts, lasts))
    verdict(9, all(drops), detail)


def test_c10_sensitivity():
    keys = {0.0: "no_me", 0.05: "r0.05", 0.15: "full", 0.30: "r0.30"}
    means = {r: float(np.mean([cached_run(k, s, r=r)[0] for s in SEEDS])) for r, k in keys.items()}
    nonzero = [means[r] for r in (0.05, 0.15, 0.30)]
    spread = 100 * (max(nonzero) - min(nonzero))
    table = ", ".join(f"r={r}: {100 * m:.2f}" for r, m in means.items())
    verdict(10, spread < 10, f"mean final HOS % {table}; spread over r>0 = {spread:.2f}pp")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
