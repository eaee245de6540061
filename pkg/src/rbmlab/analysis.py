"""Divergence to RBM models: exact small cases, optimisation estimates and bounds.

Also the semi-algebraic membership test for three visible and two hidden
units, strong modes, containment experiments and conditional-independence
residuals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .families import ExponentialFamily, Face, polyhedral_projection, rbm32_face_families
from .model import ProbabilityTensor, RbmParams, visible_log_probs
from .sampling import make_rng
from .statespace import all_states, neighbor_indices
from .training import entropy, exact_gradient, kl_divergence

LOG2 = math.log(2.0)

# determinant pairs (a*b - c*d) over state indices; x1 is the high bit
_DETERMINANTS = (
    ((0, 3, 1, 2), (4, 7, 5, 6)),  # x2, x3 given x1
    ((0, 5, 1, 4), (2, 7, 3, 6)),  # x1, x3 given x2
    ((0, 6, 4, 2), (1, 7, 5, 3)),  # x1, x2 given x3
)


@dataclass
class MembershipVerdict:
    inside: bool
    satisfied_sets: list
    residuals: np.ndarray  # (6, 2); set k holds iff both entries >= -tol

    def to_dict(self) -> dict:
        return {"inside": self.inside, "satisfied_sets": self.satisfied_sets,
                "residuals": self.residuals.tolist()}


def _determinants(p) -> np.ndarray:
    return np.array([[p[a] * p[b] - p[c] * p[d] for a, b, c, d in pair]
                     for pair in _DETERMINANTS])


def rbm32_membership(p, tol: float = 1e-10) -> MembershipVerdict:
    """Semi-algebraic membership test for the (3 visible, 2 hidden) model.

    The model is the union of six sets.  Sets ``2k`` and ``2k+1`` require the
    two conditional determinants of pair k to be both non-negative or both
    non-positive.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (8,):
        raise ValueError("membership test needs a distribution on 3 binary variables")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("input must be a normalized distribution")
    D = _determinants(p)
    residuals = np.empty((6, 2))
    residuals[0::2] = D
    residuals[1::2] = -D
    satisfied = [k for k in range(6) if np.all(residuals[k] >= -tol)]
    return MembershipVerdict(bool(satisfied), satisfied, residuals)


def rbm32_faces(tol: float = 1e-9) -> list[Face]:
    pred = lambda q: rbm32_membership(q, tol).inside  # noqa: E731
    return [Face(f, pred, f.name) for f in rbm32_face_families()]


@dataclass
class ExactDivergence:
    divergence: float
    projection: ProbabilityTensor
    face: int | None
    candidates: list = field(default_factory=list)


def rbm32_divergence(target, tol: float = 1e-10) -> ExactDivergence:
    """Exact ``D(target || RBM)`` for 3 visible and 2 hidden units."""
    p = np.asarray(target, dtype=float)
    if rbm32_membership(p, tol).inside:
        return ExactDivergence(0.0, ProbabilityTensor(p / p.sum()), None)
    res = polyhedral_projection(p, rbm32_faces())
    return ExactDivergence(res.divergence, res.projection, res.best, res.candidates)


@dataclass
class DivergenceEstimate:
    divergence: float
    params: RbmParams
    values: list
    upper_estimate: bool = True


def divergence_to_rbm(target, n: int, m: int, restarts: int = 10, seed=0,
                      init_scale: float = 1.0, max_iter: int = 3000,
                      stop_below: float | None = None) -> DivergenceEstimate:
    """Multi-start minimisation of ``D(target || p_theta)``.

    Uses the exact likelihood gradient with L-BFGS.  The returned value is the
    best local optimum found, so it is an upper estimate of the true
    divergence to the model.
    """
    p = np.asarray(target, dtype=float)
    if p.shape != (1 << n,):
        raise ValueError("target length does not match n")
    H = entropy(p)
    mask = p > 0
    rng = make_rng(seed)

    def fun(v):
        th = RbmParams.from_vector(v, n, m)
        ll = float(p[mask] @ visible_log_probs(th)[mask])
        return -ll - H, -exact_gradient(th, p)

    best_val, best_v, values = math.inf, None, []
    d = n * m + n + m
    for r in range(restarts):
        v0 = init_scale * rng.standard_normal(d)
        res = minimize(fun, v0, jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "ftol": 1e-16, "gtol": 1e-11})
        val = max(float(res.fun), 0.0)
        values.append(val)
        if val < best_val:
            best_val, best_v = val, res.x
        if stop_below is not None and best_val < stop_below:
            break
    return DivergenceEstimate(best_val, RbmParams.from_vector(best_v, n, m), values)


# bounds ---------------------------------------------------------------------

def bound_partition(n: int, m: int, visible_card=None, hidden_card=None) -> float:
    """Partition-model bound: min over admissible (Lambda, k) of ``log |X_{[n] - Lambda}|``.

    ``(Lambda, k)`` is admissible when ``1 + sum_j (|Y_j| - 1) >= |X_{Lambda - k}|``.
    """
    xs = [2] * n if visible_card is None else list(visible_card)
    ys = [2] * m if hidden_card is None else list(hidden_card)
    if len(xs) != n or len(ys) != m:
        raise ValueError("cardinality lists must match n and m")
    budget = 1 + sum(y - 1 for y in ys)
    best = math.inf
    for size in range(1, n + 1):
        for lam in itertools.combinations(range(n), size):
            inside = math.prod(xs[i] for i in lam)
            if any(inside // xs[k] <= budget for k in lam):
                rest = math.prod(xs[i] for i in range(n) if i not in lam)
                best = min(best, math.log(rest))
    return 0.0 if best == math.inf and n == 0 else best


def bound_mixture(n: int, m: int) -> float:
    """Mixtures-of-products bound; 0 beyond ``m = 2^(n-1) - 1``."""
    if m > (1 << (n - 1)) - 1:
        return 0.0
    L = (m + 1).bit_length() - 1
    return (n - L - (m + 1) / (1 << L)) * LOG2


def bound_hierarchical(n: int, m: int) -> float:
    """Hierarchical-model bound ``(n - k) log 2`` for the largest admissible k."""
    if m >= (1 << (n - 1)) - 1:
        return 0.0
    k = 0
    for cand in range(1, n + 1):
        if m >= (math.log(cand) + 1) / (cand + 1) * 2 ** (cand + 1) - 1:
            k = cand
    return (n - k) * LOG2


def divergence_bounds(n: int, m: int) -> dict:
    vals = {"partition": bound_partition(n, m), "mixture": bound_mixture(n, m),
            "hierarchical": bound_hierarchical(n, m)}
    vals["min"] = min(vals.values())
    return vals


def universal_threshold(n: int) -> int:
    """Hidden units sufficient for universal approximation on n binary variables."""
    if n < 1:
        raise ValueError("n must be >= 1")
    exact = {1: 0, 2: 1, 3: 3, 4: 6}
    if n in exact:
        return exact[n]
    second = 2 * (math.log(n - 1) + 1) / (n + 1) * ((1 << n) - (n + 1) - 1) + 1
    return int(math.ceil(min((1 << (n - 1)) - 1, second)))


def universal_interval(n: int) -> tuple[int, int]:
    """Known interval for the smallest universal hidden layer."""
    return necessary_lower_bound(n), universal_threshold(n)


def necessary_lower_bound(n: int) -> int:
    """``ceil(2^n / (n + 1) - 1)`` in exact arithmetic."""
    if n < 1:
        raise ValueError("n must be >= 1")
    q = Fraction(1 << n, n + 1) - 1
    return max(0, -((-q.numerator) // q.denominator))


# structure ------------------------------------------------------------------

def strong_modes(p) -> list[np.ndarray]:
    """States whose probability exceeds the total of their Hamming neighbours."""
    p = np.asarray(p, dtype=float)
    n = p.shape[0].bit_length() - 1
    S = all_states(n)
    return [S[i] for i in range(p.shape[0])
            if p[i] > sum(p[j] for j in neighbor_indices(i, n))]


def markov_residuals(p, A, B, C) -> np.ndarray:
    """``p(a,b,c) p(c) - p(a,c) p(b,c)`` over all values, shape (2^|A|, 2^|B|, 2^|C|).

    Variables are 0-based.  All residuals vanish iff ``X_A`` and ``X_B`` are
    conditionally independent given ``X_C``.
    """
    A, B, C = list(A), list(B), list(C)
    if set(A) & set(B) or set(A) & set(C) or set(B) & set(C):
        raise ValueError("A, B and C must be disjoint")
    p = np.asarray(p, dtype=float)
    n = p.shape[0].bit_length() - 1
    if any(not 0 <= i < n for i in A + B + C):
        raise ValueError("variable index out of range")
    T = p.reshape((2,) * n)
    drop = tuple(i for i in range(n) if i not in A + B + C)
    T = T.sum(axis=drop) if drop else T
    kept = [i for i in range(n) if i not in drop]
    T = np.transpose(T, [kept.index(i) for i in A + B + C])
    T = T.reshape(1 << len(A), 1 << len(B), 1 << len(C))
    pc = T.sum(axis=(0, 1))
    pac = T.sum(axis=1)
    pbc = T.sum(axis=0)
    return T * pc[None, None, :] - pac[:, None, :] * pbc[None, :, :]


@dataclass
class ContainmentReport:
    divergences: list
    max_divergence: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return {"divergences": self.divergences, "max_divergence": self.max_divergence,
                "tol": self.tol, "passed": self.passed}


def containment_experiment(family, n: int, m: int, samples: int = 50, tol: float = 1e-3,
                           seed=0, restarts: int = 10, scale: float = 1.0) -> ContainmentReport:
    """Draw members of ``family`` and measure how well the RBM approximates them.

    ``family`` is an :class:`ExponentialFamily` (members drawn with standard
    normal natural parameters times ``scale``) or a callable ``rng -> p``.
    """
    rng = make_rng(seed)
    divs = []
    for s in range(samples):
        if isinstance(family, ExponentialFamily):
            target = family.random_member(rng, scale).values
        else:
            target = np.asarray(family(rng), dtype=float)
        est = divergence_to_rbm(target, n, m, restarts=restarts, seed=(seed, s),
                                stop_below=tol / 10)
        divs.append(est.divergence)
    worst = max(divs)
    return ContainmentReport(divs, worst, tol, worst < tol)


def parity(n: int, odd: bool = False) -> ProbabilityTensor:
    """Uniform distribution on the even (or odd) weight states."""
    S = all_states(n)
    w = (S.sum(axis=1) % 2 == (1 if odd else 0)).astype(float)
    return ProbabilityTensor(w / w.sum())


def suggested_d31() -> float:
    """Conjectured maximum divergence to the one-hidden-unit model on 3 bits, in nats."""
    return -0.75 * math.log2(2 * math.sqrt(3) - 3) * LOG2


def max_divergence_estimate(n: int, m: int, targets, restarts: int = 10, seed=0) -> dict:
    """Largest optimised divergence over a candidate list of targets."""
    vals = [divergence_to_rbm(t, n, m, restarts=restarts, seed=(seed, i)).divergence
            for i, t in enumerate(targets)]
    i = int(np.argmax(vals))
    return {"estimate": vals[i], "argmax": int(i), "values": vals}


def d31_candidates(rng, random_targets: int = 20) -> list:
    """Candidate maximisers for 3 visible and 1 hidden unit."""
    out = [parity(3).values, parity(3, odd=True).values]
    for t in range(-10, 11):
        # uniform on 000 and the three weight-two states, tilted
        v = np.zeros(8)
        v[[0]] = 0.25 + 0.02 * t
        v[[3, 5, 6]] = (1 - v[0]) / 3
        out.append(v)
    out += [rng.dirichlet(np.full(8, 0.3)) for _ in range(random_targets)]
    return out
