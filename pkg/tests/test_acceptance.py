"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured value,
the threshold and the wall-clock against its budget. Run directly with
``python3 tests/test_acceptance.py`` to get just those lines.
"""
from __future__ import annotations

import itertools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from sourceseek.config import ScenarioConfig
from sourceseek.environment import DynamicsModel, GridSpec, verify_assumption1
from sourceseek.kalman import FilterForm, FilterState, filter_step_stable, filter_step_standard
from sourceseek.numerics import mahalanobis_norm, weighted_l1_norm, weighted_l2_norm, weighted_linf_norm
from sourceseek.scenario import (
    build_world,
    reacquisition_steps,
    resolve_constants,
    run_experiment,
    run_trial,
)
from sourceseek.scenarios import get_scenario
from sourceseek.seeker import select_positions
from sourceseek.sensing import MeasurementBatch, SensorModel, materialize_H, measure, noise_covariance

RESULTS: dict[int, bool] = {}


def report(num: int, title: str, ok: bool, detail: str, elapsed: float, budget: float) -> bool:
    ok = ok and elapsed < budget
    RESULTS[num] = ok
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {title}: {detail}; runtime {elapsed:.1f}s < {budget:.0f}s"
    print(line, flush=True)
    return ok


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _invertible(rng, n, spread):
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (u * rng.uniform(1 - spread, 1 + spread, n)) @ v


def _batch(rng, n):
    cells = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
    v = float(rng.uniform(0.5, 4.0))
    z = rng.normal(2.0, 2.0, cells.size)
    y, yd = np.zeros(n), np.zeros(n)
    y[cells] = z / v
    yd[cells] = 1.0 / v
    return MeasurementBatch((cells,), z, (v,), y, yd)


def criterion_1() -> bool:
    """Recursion vs accumulated-information closed form, random systems."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    n, steps = 10, 50
    worst_m = worst_c = 0.0
    for _ in range(25):
        mats = {k: _invertible(rng, n, 0.05) for k in range(1, steps + 1)}
        model = DynamicsModel(lambda k, m=mats: m[k], n)
        rep = verify_assumption1(model, steps, samples=200, rng=rng)
        assert 0 < rep.alpha_lower <= rep.alpha_upper < np.inf
        mean0 = rng.normal(0, 1, n)
        cov0 = np.diag(rng.uniform(1, 5, n))
        lams = rng.uniform(1e-3, 1.0, steps)
        lams[rng.random(steps) < 0.2] = 1.0
        omegas = np.cumsum(rng.uniform(0, 0.3, steps) * (rng.random(steps) < 0.7))
        state = FilterState.initial(mean0, cov0)
        # independent batch evaluation with explicit inverses
        ups, vec, prod = np.linalg.inv(cov0), np.linalg.inv(cov0) @ mean0, np.eye(n)
        prev = 0.0
        for k in range(steps):
            b = _batch(rng, n)
            state = filter_step_standard(state, b, mats[k + 1], lams[k], omegas[k], prev)
            prev = omegas[k]
            ups = ups + lams[k] * prod.T @ np.diag(b.info_diag) @ prod
            vec = vec + lams[k] * prod.T @ b.info_vector
            prod = mats[k + 1] @ prod
            inv = np.linalg.inv(ups + omegas[k] * np.eye(n))
            worst_m = max(worst_m, _rel(state.mean, prod @ inv @ vec))
            worst_c = max(worst_c, _rel(state.cov, prod @ inv @ prod.T))
    ok = worst_m <= 1e-8 and worst_c <= 1e-8
    return report(1, "closed-form equivalence", ok,
                  f"max rel err mean {worst_m:.2e}, cov {worst_c:.2e} (<= 1e-8, 25 systems)",
                  time.perf_counter() - t0, 30)


def criterion_2() -> bool:
    """Scaled recursion vs standard one with lambda_k = omega_k = gamma^-k."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    n, steps = 6, 40
    worst = 0.0
    for gamma in (0.9, 0.95, 0.99):
        mats = {k: _invertible(rng, n, 0.1) for k in range(1, steps + 1)}
        mean0, cov0 = rng.normal(0, 1, n), np.diag(rng.uniform(1, 4, n))
        std = FilterState.initial(mean0, cov0)
        stab = FilterState.initial(mean0, cov0, FilterForm.STABLE, gamma)
        prev = gamma
        for k in range(steps):
            b = _batch(rng, n)
            w = gamma ** (-k)
            std = filter_step_standard(std, b, mats[k + 1], w, w, prev)
            prev = w
            stab = filter_step_stable(stab, b, mats[k + 1], gamma)
            # scaled cov at k+1 is gamma^-k times the standard one
            worst = max(worst, _rel(stab.mean, std.mean), _rel(stab.cov, std.cov * gamma ** (-k)))
    return report(2, "stable-form equivalence", worst <= 1e-7,
                  f"max rel err {worst:.2e} (<= 1e-7, gamma in 0.9/0.95/0.99)", time.perf_counter() - t0, 10)


def _grid10(**extra) -> ScenarioConfig:
    base = {
        "name": "grid10", "grid": {"side": 10}, "horizon": 300,
        "agents": {"count": 3, "radius": 2.0, "noise_variance": 4.0},
        "initial_field": {"sources": [{"row": 2, "col": 3, "magnitude": 10.0},
                                      {"row": 7, "col": 6, "magnitude": 7.0},
                                      {"row": 6, "col": 1, "magnitude": 5.0}]},
        "disturbance": {"type": "II", "kind": "windows", "windows": [[60, 66], [200, 206]],
                        "cells": 1, "magnitude": [1.0, 2.0], "placement": "near_peak"},
        "confidence": {"c_beta": 1e-5}, "seed": 11,
    }
    cfg = ScenarioConfig.from_dict(base)
    return cfg.replace(**extra)


def criterion_3() -> bool:
    t0 = time.perf_counter()
    stable = _grid10(**{"filter.mode": "type2", "filter.gamma": 1.0, "filter.form": "stable"})
    plain = _grid10(**{"filter.mode": "undiscounted", "filter.form": "standard"})
    a, b = run_trial(stable, 0), run_trial(plain, 0)
    ca = [c.tolist() for c in a.columns["chosen_cells"]] + [a.final_positions.tolist()]
    cb = [c.tolist() for c in b.columns["chosen_cells"]] + [b.final_positions.tolist()]
    same = sum(x == y for x, y in zip(ca, cb))
    ok = a.ok and b.ok and ca == cb
    return report(3, "gamma = 1 reduction", ok, f"{same}/{len(ca)} identical decisions (K = 300, 10x10)",
                  time.perf_counter() - t0, 20)


def criterion_4() -> bool:
    t0 = time.perf_counter()
    cfg = ScenarioConfig.from_dict({
        "name": "coverage", "grid": {"side": 6}, "horizon": 50,
        "agents": {"count": 3, "radius": 1.5, "noise_variance": 4.0},
        "dynamics": {"diffusion": 0.02, "dt": 0.5},
        "initial_field": {"sources": [{"row": 1, "col": 1, "magnitude": 8.0},
                                      {"row": 4, "col": 3, "magnitude": 5.0}], "background": 0.5},
        "filter": {"mode": "type1", "lambda_bar": 1.0},
        "confidence": {"delta": 0.1, "c_beta": 1.0}, "seed": 404,
    })
    world = build_world(cfg)
    consts = resolve_constants(cfg, world)
    from sourceseek.scenario import confidence_schedule
    conf = confidence_schedule(cfg, world, consts)
    phis = [world.phi0]
    for k in range(1, cfg.horizon + 1):
        phis.append(world.model.matrix(k) @ phis[-1])
    mu0 = cfg.filter.prior_mean + conf.beta(0) * math.sqrt(cfg.filter.prior_variance)
    covered = 0
    trials = 200
    for i in range(trials):
        res = run_trial(cfg, i, consts, world, record_mu=True)
        ok = res.ok and np.all(phis[0] <= mu0)
        # row k holds mu_{k+1}
        ok = ok and all(np.all(phis[k + 1] <= res.columns["mu"][k]) for k in range(cfg.horizon - 1))
        covered += int(ok)
    frac = covered / trials
    return report(4, "coverage", frac >= 0.9, f"{covered}/{trials} trials covered = {frac:.3f} (>= 0.90)",
                  time.perf_counter() - t0, 180)


def criterion_5() -> bool:
    t0 = time.perf_counter()
    cfg = get_scenario("desk-typeI-slow")
    world = build_world(cfg)
    consts = resolve_constants(cfg, world)
    rs = [run_trial(cfg, i, consts, world) for i in range(cfg.trials)]
    r = np.array([x.columns["r"] for x in rs if x.ok])
    early, late = r[:, :400].mean(), r[:, 400:800].mean()
    ratio = late / early
    ok = len(r) == 20 and ratio < 0.5
    return report(5, "sub-linear regret, type I", ok,
                  f"mean r late/early = {late:.4f}/{early:.4f} = {ratio:.3f} (< 0.5, {len(r)} trials, "
                  f"c_beta = {cfg.confidence.c_beta:g})", time.perf_counter() - t0, 300)


def criterion_6() -> bool:
    t0 = time.perf_counter()
    base = get_scenario("desk-typeII-abrupt")
    out = {}
    for gamma in (1.0, 0.99, 0.95):
        cfg = base.replace(**{"filter.gamma": gamma,
                              "filter.mode": "type2" if gamma < 1 else "undiscounted"})
        world = build_world(cfg)
        consts = resolve_constants(cfg, world)
        rs = [run_trial(cfg, i, consts, world) for i in range(cfg.trials)]
        good = [x for x in rs if x.ok]
        out[gamma] = (np.mean([x.cumulative[-1] for x in good]),
                      float(np.mean([reacquisition_steps(x) for x in good])), len(good))
    r1, r99, r95 = out[1.0][0], out[0.99][0], out[0.95][0]
    q99, q95 = out[0.99][1], out[0.95][1]
    ok = all(v[2] == 20 for v in out.values()) and r99 < r1 and q95 < q99
    return report(6, "disturbance adaptation, type II", ok,
                  f"R_800 gamma=0.99 {r99:.1f} vs undiscounted {r1:.1f} (gamma=0.95 {r95:.1f}); "
                  f"mean re-acquisition steps gamma=0.95 {q95:.1f} vs gamma=0.99 {q99:.1f}",
                  time.perf_counter() - t0, 600)


def criterion_7() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    worst = [np.inf, np.inf, np.inf]
    for _ in range(10_000):
        n = int(rng.integers(1, 51))
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        m = (q * np.exp(rng.uniform(-3, 3, n))) @ q.T
        m = 0.5 * (m + m.T)
        x = rng.standard_normal(n) * 10 ** rng.uniform(-2, 2)
        d = np.diag(m)
        worst[0] = min(worst[0], weighted_l2_norm(x, d * d) - weighted_linf_norm(x, d))
        worst[1] = min(worst[1], math.sqrt(n) * weighted_l2_norm(x, d * d) - weighted_l1_norm(x, d))
        worst[2] = min(worst[2], math.sqrt(n) * weighted_l2_norm(x, d) - mahalanobis_norm(x, m))
    ok = min(worst) >= -1e-10
    return report(7, "weighted-norm inequalities", ok,
                  "min slack " + ", ".join(f"{w:.2e}" for w in worst) + " (>= -1e-10, 10000 pairs)",
                  time.perf_counter() - t0, 10)


def criterion_8() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)
    assignments = np.array(list(itertools.product(range(8), repeat=3)))
    masks = np.zeros((len(assignments), 8))
    for row, a in enumerate(assignments):
        masks[row, np.unique(a)] = 1.0
    mismatches = 0
    for _ in range(500):
        mu = rng.uniform(0.0, 1.0, 8)
        cells, _ = select_positions(mu, 3)
        best = float((masks @ mu).max())
        mismatches += int(not math.isclose(float(mu[cells].sum()), best, rel_tol=1e-12))
    return report(8, "selection optimality", mismatches == 0,
                  f"{500 - mismatches}/500 match the exhaustive maximum over 8^3 assignments",
                  time.perf_counter() - t0, 5)


def criterion_9() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    bad = 0
    for _ in range(500):
        g = GridSpec(int(rng.integers(3, 13)))
        count = int(rng.integers(1, 6))
        sensors = SensorModel(float(rng.uniform(0, 4)), tuple(rng.uniform(0.1, 10, count)))
        b = measure(rng.uniform(0, 5, g.n), rng.integers(g.n, size=count), sensors, g, rng)
        h = materialize_H(b)
        vinv = np.linalg.inv(noise_covariance(b))
        dense = h.T @ vinv @ h
        offdiag_zero = np.array_equal(dense - np.diag(np.diag(dense)), np.zeros_like(dense))
        # correctly rounded column sums of the materialized H^T V^-1 H terms
        terms = h * np.diag(vinv)[:, None]
        diag = np.array([math.fsum(terms[:, j]) for j in range(g.n)])
        bad += int(not (offdiag_zero and np.array_equal(diag, b.info_diag)
                        and np.array_equal(np.diag(diag), b.information_matrix)))
    return report(9, "information matrix diagonal", bad == 0,
                  f"{500 - bad}/500 placements exactly equal", time.perf_counter() - t0, 5)


def criterion_10() -> bool:
    t0 = time.perf_counter()
    cfg = get_scenario("null").replace(**{"trials": 4, "horizon": 150, "seed": 1010,
                                          "confidence.c_beta": 1e-3})
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        run_experiment(cfg, root / "a", workers=1)
        run_experiment(cfg, root / "b", workers=1)
        run_experiment(cfg, root / "c", workers=2)
        names = sorted(p.name for p in (root / "a").glob("*.csv"))
        same = all((root / "a" / n).read_bytes() == (root / "b" / n).read_bytes()
                   == (root / "c" / n).read_bytes() for n in names)
    return report(10, "determinism", same and len(names) == 5,
                  f"{len(names)} CSV files byte-identical across 2 serial runs and 1 parallel run",
                  time.perf_counter() - t0, 120)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 11)])
def test_acceptance(criterion, capsys):
    with capsys.disabled():
        print()
        passed = criterion()
    assert passed


if __name__ == "__main__":
    passed = [c() for c in CRITERIA]
    print(f"{sum(passed)}/{len(passed)} criteria passed")
    sys.exit(0 if all(passed) else 1)
