"""End-to-end verification suites, each producing a table of measured vs expected values."""

from __future__ import annotations

import math
import time

import numpy as np

from . import analysis, geometry
from .model import RbmParams, visible_marginal
from .sampling import make_rng
from .training import TrainConfig, default_init, kl_divergence, train

HALF_LOG2 = 0.5 * math.log(2.0)


def _row(name, measured, expected, passed, note=""):
    return {"check": name, "measured": measured, "expected": expected,
            "pass": None if passed is None else bool(passed), "note": note}


def dimension_grid(seed=0, ns=range(2, 6), ms=range(0, 5), trials: int = 3) -> list:
    rows = []
    for n in ns:
        for m in ms:
            rep = geometry.dimension_check(n, m, trials, seed=(seed, n, m))
            rows.append(_row(f"dim n={n} m={m}", rep["observed"], rep["expected"], rep["match"]))
    return rows


def divergence_32(seed=0, restarts: int = 50, d31_targets: int = 10) -> list:
    rows = []
    for odd in (False, True):
        target = analysis.parity(3, odd).values
        res = analysis.rbm32_divergence(target)
        label = "odd" if odd else "even"
        rows.append(_row(f"exact divergence, {label} parity", res.divergence, HALF_LOG2,
                         abs(res.divergence - HALF_LOG2) <= 1e-9))
        projs = {tuple(np.round(c["projection"].values, 9))
                 for c in res.candidates if c["feasible"]}
        rows.append(_row(f"distinct feasible projections, {label} parity", len(projs), 6,
                         len(projs) == 6))
        est = analysis.divergence_to_rbm(target, 3, 2, restarts=restarts, seed=(seed, odd))
        rows.append(_row(f"multi-start divergence, {label} parity", est.divergence, HALF_LOG2,
                         abs(est.divergence - HALF_LOG2) <= 1e-3))
    cands = analysis.d31_candidates(make_rng((seed, 31)), d31_targets)
    d31 = analysis.max_divergence_estimate(3, 1, cands, restarts=5, seed=seed)
    rows.append(_row("max divergence estimate, one hidden unit", d31["estimate"],
                     analysis.suggested_d31(), None, "suggested constant, not asserted"))
    return rows


def membership_32(seed=0, draws: int = 10_000, tol: float = 1e-10) -> list:
    rng = make_rng(seed)
    inside = sum(
        analysis.rbm32_membership(visible_marginal(RbmParams.random(3, 2, rng, scale=2.0)).values,
                                  tol).inside
        for _ in range(draws)
    )
    rows = [_row("random marginals inside", inside, draws, inside == draws)]
    for odd in (False, True):
        v = analysis.rbm32_membership(analysis.parity(3, odd).values, tol)
        rows.append(_row(f"{'odd' if odd else 'even'} parity outside", v.inside, False,
                         not v.inside))
    return rows


def universal(seed=0, targets: int = 100, restarts: int = 20, tol: float = 1e-3) -> list:
    rows = []
    for n in (2, 3):
        m = analysis.universal_threshold(n)
        rng = make_rng((seed, n))
        worst = 0.0
        for t in range(targets):
            target = rng.dirichlet(np.ones(1 << n))
            est = analysis.divergence_to_rbm(target, n, m, restarts=restarts, seed=(seed, n, t),
                                             stop_below=tol / 10)
            worst = max(worst, est.divergence)
        rows.append(_row(f"worst divergence n={n} m={m}", worst, 0.0, worst < tol,
                         f"{targets} random targets, tolerance {tol}"))
    return rows


def training_recovery(seed=0, iters: int = 20000, lr: float = 1.0) -> list:
    rng = make_rng(seed)
    target = visible_marginal(RbmParams.random(3, 2, rng, scale=1.5))
    init = default_init(3, 2, rng)
    traj = train(init, target, TrainConfig(method="exact", lr=lr, max_iter=iters, tol=1e-9))
    final = kl_divergence(target.values, visible_marginal(traj.final.params).values)
    return [_row("exact-gradient self-recovery KL", final, 0.0, final < 1e-4,
                 f"{len(traj) - 1} iterations")]


SUITES = {
    "dimension-grid": dimension_grid,
    "divergence-32": divergence_32,
    "membership-32": membership_32,
    "universal": universal,
    "training-recovery": training_recovery,
}


def reproduce(name: str, seed=0) -> dict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    t0 = time.perf_counter()
    rows = SUITES[name](seed=seed)
    verdicts = [r["pass"] for r in rows if r["pass"] is not None]
    return {"suite": name, "passed": all(verdicts), "rows": rows,
            "seconds": time.perf_counter() - t0}
