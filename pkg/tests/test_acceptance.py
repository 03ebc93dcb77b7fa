"""Acceptance criteria 1-9.  Each test prints one PASS/FAIL line in the summary.

Seed protocol for the training criteria: seeds 0, 1 and 2, each used both as
the dataset seed and as the run seed.
"""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from debias_lab.cli import main as cli_main
from debias_lab.datagen import GenConfig, generate_biased_dataset
from debias_lab.losses import (
    PriorTable,
    bias_balanced_probs,
    bs_loss,
    ce_loss,
    ce_per_sample,
    gce_loss,
    gce_per_sample,
)
from debias_lab.metrics import auc_score, roc_curve, youden_threshold
from debias_lab.model import softmax_stable
from debias_lab.pbbl import PbblConfig, evaluate_split, run_pbbl, run_vanilla
from debias_lab.trainer import Objective

SEEDS = (0, 1, 2)


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ----------------------------------------------------------------------------- oracles


def pair_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size)


def exhaustive_youden(scores, labels):
    """Smallest finite midpoint reaching the maximum of u + v; min score if none reaches it."""
    s = np.unique(scores)
    mids = (s[:-1] + s[1:]) / 2
    mids = np.where(mids > s[:-1], mids, s[1:])
    pos = int(labels.sum())
    neg = labels.size - pos
    js = [int(np.sum((scores >= t) & (labels == 1))) * neg
          + int(np.sum((scores < t) & (labels == 0))) * pos for t in mids]
    best = max(js, default=-1)
    if best < pos * neg:  # both sentinels score pos * neg
        return float(scores.min())
    return float(min(t for t, j in zip(mids, js) if j == best))


def random_instance(rng):
    n = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    if rng.random() < 0.5:
        scores = rng.integers(0, max(2, n // 4), n) / 8.0
    else:
        scores = rng.normal(size=n)
    return scores, labels


# ----------------------------------------------------------------------------- criteria 1-4


def test_criterion_1_gce_gradient_identity():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst_id = worst_fd = 0.0
    h = 1e-5
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        z = rng.normal(scale=2, size=(1, k))
        y = [int(rng.integers(0, k))]
        q = float(rng.uniform(0.01, 1.0))
        p = softmax_stable(z)
        _, g = gce_loss(p, y, q)
        _, g_ce = ce_loss(p, y)
        worst_id = max(worst_id, float(np.abs(g - p[0, y[0]] ** q * g_ce).max()))
        fd = np.zeros_like(z)
        for i in range(k):
            up, down = z.copy(), z.copy()
            up[0, i] += h
            down[0, i] -= h
            fd[0, i] = (gce_loss(softmax_stable(up), y, q)[0]
                        - gce_loss(softmax_stable(down), y, q)[0]) / (2 * h)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - g) / np.abs(g))))
    elapsed = time.perf_counter() - start
    ok = worst_id <= 1e-10 and worst_fd <= 1e-5 and elapsed < 5
    assert record(1, ok, f"identity err {worst_id:.2e} (<=1e-10), fd rel err {worst_fd:.2e} "
                         f"(<=1e-5), {elapsed:.2f}s (<5s)")


def test_criterion_2_gce_ce_limit():
    f = np.linspace(0.01, 0.99, 9801)
    probs = np.column_stack([1 - f, f])
    y = np.ones(f.size, dtype=int)
    gap = float(np.abs(gce_per_sample(probs, y, 1e-4) - ce_per_sample(probs, y)).max())
    assert record(2, gap < 1e-3, f"max |GCE(q=1e-4) - CE| = {gap:.6e} (<1e-3); "
                                 f"analytic q(ln 0.01)^2/2 = {1e-4 * np.log(0.01) ** 2 / 2:.6e}")


def test_criterion_3_balanced_softmax_identity():
    rng = np.random.default_rng(3)
    worst = worst_uniform = 0.0
    for _ in range(1000):
        k, nb, n = int(rng.integers(2, 6)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        table = PriorTable(rng.integers(0, 100, size=(k, nb)), 1.0)
        eta = rng.normal(scale=3, size=(n, k))
        b = rng.integers(0, nb, n)
        prior = table.probs[:, b].T
        direct = prior * np.exp(eta) / (prior * np.exp(eta)).sum(axis=1, keepdims=True)
        worst = max(worst, float(np.abs(bias_balanced_probs(eta, table, b) - direct).max()))
        worst = max(worst, float(np.abs(softmax_stable(eta + np.log(prior)) - direct).max()))
        uniform = PriorTable(np.full((k, nb), int(rng.integers(1, 50))), 1.0)
        y = rng.integers(0, k, n)
        lb, gb = bs_loss(eta, y, b, uniform)
        lc, gc = ce_loss(softmax_stable(eta), y)
        worst_uniform = max(worst_uniform, abs(lb - lc), float(np.abs(gb - gc).max()))
    ok = worst <= 1e-12 and worst_uniform <= 1e-12
    assert record(3, ok, f"direct vs adjusted softmax {worst:.2e}, uniform bs vs ce "
                         f"{worst_uniform:.2e} (<=1e-12)")


def test_criterion_4_roc_oracles():
    rng = np.random.default_rng(4)
    worst, mismatches = 0.0, 0
    for _ in range(1000):
        s, y = random_instance(rng)
        worst = max(worst, abs(auc_score(s, y) - pair_auc(s, y)))
        mismatches += youden_threshold(roc_curve(s, y)) != exhaustive_youden(s, y)
    ok = worst <= 1e-12 and mismatches == 0
    assert record(4, ok, f"auc err {worst:.2e} (<=1e-12), youden mismatches {mismatches}/1000")


# ----------------------------------------------------------------------------- criteria 5-8


@pytest.fixture(scope="module")
def runs():
    out = {}
    for seed in SEEDS:
        data = generate_biased_dataset(GenConfig(preset="sbp_analog", bias_ratio_pct=10.0,
                                                 majority_group_size=1000, seed=seed))
        cfg = PbblConfig(seed=seed)
        start = time.perf_counter()
        v_params, vanilla_hist = run_vanilla(data, cfg)
        vanilla_seconds = time.perf_counter() - start
        vanilla = evaluate_split(v_params, data, "test")
        _, oracle, _ = run_pbbl(data, PbblConfig(seed=seed, oracle=True))
        _, pbbl, _ = run_pbbl(data, cfg)
        _, gce_hist = run_vanilla(data, cfg, Objective("gce", q=0.7))
        out[seed] = {
            "vanilla": vanilla.to_dict(),
            "vanilla_seconds": vanilla_seconds,
            "vanilla_hist": vanilla_hist,
            "oracle": oracle["test"],
            "pbbl": pbbl,
            "gce_hist": gce_hist,
        }
    return out


def gap(report):
    return report["aligned"] - report["conflicting"]


def test_criterion_5_shortcut_learning(runs):
    parts, ok = [], True
    for seed, r in runs.items():
        g = gap(r["vanilla"])
        good = g >= 0.15 and r["vanilla_seconds"] < 60
        ok &= good
        parts.append(f"seed {seed}: gap {g:.4f}, {r['vanilla_seconds']:.1f}s")
    assert record(5, ok, "; ".join(parts) + " (gap >= 0.15, <60s)")


def test_criterion_6_oracle_balance(runs):
    parts, ok = [], True
    for seed, r in runs.items():
        g = gap(r["oracle"])
        lift = r["oracle"]["balanced"] - r["vanilla"]["balanced"]
        good = abs(g) <= 0.05 and lift >= 0.05
        ok &= good
        parts.append(f"seed {seed}: |gap| {abs(g):.4f}, balanced lift {lift:+.4f}"
                     f"{'' if good else ' [fail]'}")
    assert record(6, ok, "; ".join(parts) + " (|gap| <= 0.05, lift >= 0.05)")


def test_criterion_7_pbbl_efficacy(runs):
    parts, ok = [], True
    for seed, r in runs.items():
        p, v, o = r["pbbl"]["test"], r["vanilla"], r["oracle"]
        init_agree = r["pbbl"]["initial_agreement"]
        final_agree = r["pbbl"]["pseudo_bias"]["final_agreement"]
        reduction = 1 - abs(gap(p)) / abs(gap(v))
        good = (p["balanced"] > v["balanced"]
                and abs(p["balanced"] - o["balanced"]) <= 0.05
                and reduction >= 0.5
                and final_agree > init_agree)
        ok &= good
        parts.append(f"seed {seed}: balanced {p['balanced']:.4f} vs vanilla {v['balanced']:.4f} "
                     f"oracle {o['balanced']:.4f}, gap reduction {reduction:.1%}, "
                     f"agreement {final_agree:.4f} > {init_agree:.4f}")
    assert record(7, ok, "; ".join(parts))


def test_criterion_8_gce_amplification(runs):
    parts, ok = [], True
    for seed, r in runs.items():
        ce_last, gce_last = r["vanilla_hist"].records[-1], r["gce_hist"].records[-1]
        assert ce_last.step == gce_last.step == 1000
        ratio_ce = ce_last.conflicting_loss / ce_last.aligned_loss
        ratio_gce = gce_last.conflicting_loss / gce_last.aligned_loss
        ok &= ratio_gce > ratio_ce
        parts.append(f"seed {seed}: gce {ratio_gce:.2f} vs ce {ratio_ce:.2f}")
    assert record(8, ok, "; ".join(parts))


# ----------------------------------------------------------------------------- criterion 9


def test_criterion_9_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli_main(["gen", "--preset", "sbp", "--ratio", "10", "--n0", "1000", "--seed", "0",
                     "-o", "d.csv"]) == 0
    for d in ("a", "b"):
        assert cli_main(["pbbl", "--data", "d.csv", "--seed", "0", "--out-dir", f"p{d}"]) == 0
        assert cli_main(["train", "--data", "d.csv", "--loss", "ce", "--seed", "0",
                         "--out-dir", f"v{d}"]) == 0
    files = [("p", "report.json"), ("p", "history.csv"), ("v", "eval.json"), ("v", "history.csv")]
    same = [(tmp_path / f"{k}a" / n).read_bytes() == (tmp_path / f"{k}b" / n).read_bytes()
            for k, n in files]
    assert record(9, all(same), f"{sum(same)}/{len(same)} report and history files byte-identical")
