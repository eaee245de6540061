"""Exponential families on {0,1}^n and constructive embeddings into RBMs.

A family is a statistics matrix ``A`` (d x 2^n) and a reference log-measure;
its members are ``normalize(exp(A^T eta + log_ref))``.  Entries of
``log_ref`` equal to ``-inf`` restrict the support without changing the
indexing of states.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import comb, logit, logsumexp

from .model import ProbabilityTensor, RbmParams, bernoulli_product, softplus, visible_marginal
from .statespace import all_states, mask_subset, monomial_matrix, subset_mask, to_monomials
from .training import kl_divergence


class ProjectionError(RuntimeError):
    """m-projection did not reach the requested moment residual."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(f"{message} (moment residual {residual:.3e})")
        self.residual = residual


class NoFeasibleProjection(RuntimeError):
    """No face projection satisfied its face's predicate."""


class ToleranceNotReached(RuntimeError):
    """A constructor could not meet its tolerance; ``achieved`` holds the best value."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved {achieved:.3e})")
        self.achieved = achieved


# families -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExponentialFamily:
    stats: np.ndarray
    log_ref: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.stats, dtype=float)
        size = np.shape(self.log_ref)[0]
        if A.ndim == 1 and A.size == 0:
            A = A.reshape(0, size)
        A = A.reshape(-1, size)
        if not np.all(np.isfinite(A)):
            raise ValueError("sufficient statistics must be finite")
        ref = np.array(self.log_ref, dtype=float)
        if size == 0 or size & (size - 1):
            raise ValueError("reference measure must cover 2^n states")
        if np.any(np.isnan(ref)) or np.any(ref == np.inf):
            raise ValueError("reference log-measure entries must be finite or -inf")
        if not np.any(np.isfinite(ref)):
            raise ValueError("family has empty support")
        A.setflags(write=False)
        ref.setflags(write=False)
        object.__setattr__(self, "stats", A)
        object.__setattr__(self, "log_ref", ref)

    @property
    def n(self) -> int:
        return self.log_ref.shape[0].bit_length() - 1

    @property
    def d(self) -> int:
        return self.stats.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.isfinite(self.log_ref)

    @property
    def dimension(self) -> int:
        """Dimension of the family: ``rank([A; 1])`` on the support, minus one."""
        A = self.stats[:, self.support]
        M = np.vstack([np.ones((1, A.shape[1])), A])
        return int(np.linalg.matrix_rank(M)) - 1

    def member(self, eta) -> ProbabilityTensor:
        eta = np.asarray(eta, dtype=float).reshape(self.d)
        logw = eta @ self.stats + self.log_ref
        q = np.exp(logw - logsumexp(logw))
        return ProbabilityTensor(q / q.sum())

    def random_member(self, rng, scale: float = 1.0) -> ProbabilityTensor:
        return self.member(scale * rng.standard_normal(self.d))

    def moments(self, p) -> np.ndarray:
        return self.stats @ np.asarray(p, dtype=float)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "stats": self.stats.tolist(),
            "log_ref": [None if not np.isfinite(v) else float(v) for v in self.log_ref],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExponentialFamily":
        n = int(d["n"])
        ref = d.get("log_ref")
        if ref is None:
            ref = np.zeros(1 << n)
        else:
            ref = np.array([-np.inf if v is None or v == "-inf" else float(v) for v in ref])
        if ref.shape != (1 << n,):
            raise ValueError("log_ref must have 2^n entries")
        stats = np.asarray(d.get("stats", []), dtype=float).reshape(-1, 1 << n)
        return cls(stats, ref, d.get("name", ""))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ExponentialFamily":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class HierarchicalSpec:
    """Inclusion-closed collection of interaction sets (0-based variables).

    The empty set is implicit and may be omitted.
    """

    n: int
    subsets: tuple

    def __post_init__(self):
        sets = {frozenset(s) for s in self.subsets} | {frozenset()}
        for s in sets:
            if any(not 0 <= i < self.n for i in s):
                raise ValueError(f"subset {sorted(s)} has variables outside 0..{self.n - 1}")
            for r in range(len(s)):
                for sub in itertools.combinations(sorted(s), r):
                    if frozenset(sub) not in sets:
                        raise ValueError(
                            f"collection is not inclusion-closed: {sorted(s)} present, "
                            f"{list(sub)} missing"
                        )
        ordered = sorted(sets, key=lambda s: (len(s), sorted(s)))
        object.__setattr__(self, "subsets", tuple(tuple(sorted(s)) for s in ordered))

    @property
    def masks(self) -> list[int]:
        return [subset_mask(s, self.n) for s in self.subsets]

    @classmethod
    def up_to_order(cls, n: int, k: int) -> "HierarchicalSpec":
        """All interaction sets of size at most k."""
        subsets = [s for r in range(k + 1) for s in itertools.combinations(range(n), r)]
        return cls(n, tuple(subsets))


def hierarchical_family(spec: HierarchicalSpec) -> ExponentialFamily:
    """Monomial statistics ``pi_lam`` for every non-empty lam in the collection."""
    masks = [mk for mk in spec.masks if mk != 0]
    A = monomial_matrix(spec.n, masks) if masks else np.zeros((0, 1 << spec.n))
    return ExponentialFamily(A, np.zeros(1 << spec.n), f"hierarchical{list(spec.subsets)}")


@dataclass(frozen=True)
class PartitionSpec:
    """Disjoint non-empty blocks of state indices; uncovered states get probability 0."""

    n: int
    blocks: tuple

    def __post_init__(self):
        seen: set[int] = set()
        blocks = []
        for blk in self.blocks:
            blk = tuple(int(i) for i in blk)
            if not blk:
                raise ValueError("partition blocks must be non-empty")
            if any(not 0 <= i < (1 << self.n) for i in blk):
                raise ValueError("block contains an out-of-range state index")
            if seen & set(blk) or len(set(blk)) != len(blk):
                raise ValueError("partition blocks overlap")
            seen |= set(blk)
            blocks.append(blk)
        object.__setattr__(self, "blocks", tuple(blocks))

    @classmethod
    def by_variables(cls, n: int, variables: Sequence[int]) -> "PartitionSpec":
        """Blocks of states sharing the values of the given variables."""
        S = all_states(n)
        keys = [tuple(row) for row in S[:, list(variables)]]
        groups: dict = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        return cls(n, tuple(tuple(v) for _, v in sorted(groups.items())))


def partition_family(spec: PartitionSpec) -> ExponentialFamily:
    """Block indicators; members are mixtures of uniform distributions on the blocks."""
    size = 1 << spec.n
    A = np.zeros((len(spec.blocks), size))
    ref = np.full(size, -np.inf)
    for k, blk in enumerate(spec.blocks):
        A[k, list(blk)] = 1.0
        ref[list(blk)] = 0.0
    return ExponentialFamily(A, ref, "partition")


def partition_member(spec: PartitionSpec, weights) -> ProbabilityTensor:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(spec.blocks),) or np.any(weights < 0):
        raise ValueError("one non-negative weight per block required")
    weights = weights / weights.sum()
    p = np.zeros(1 << spec.n)
    for w, blk in zip(weights, spec.blocks):
        p[list(blk)] = w / len(blk)
    return ProbabilityTensor(p)


# mixtures -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Mixture of product distributions.

    ``components[k]`` holds the Bernoulli parameters of product k; a parameter
    of exactly 0 or 1 fixes that coordinate and so restricts the support.
    """

    components: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        comps = np.atleast_2d(np.array(self.components, dtype=float))
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != comps.shape[0]:
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be non-negative and sum to one")
        if np.any(comps < 0) or np.any(comps > 1):
            raise ValueError("Bernoulli parameters must lie in [0, 1]")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.components.shape[1]

    def fixed(self, k: int) -> dict:
        """Coordinates fixed by component k, as {variable: value}."""
        q = self.components[k]
        return {i: int(q[i]) for i in range(self.n) if q[i] in (0.0, 1.0)}


def mixture_eval(spec: MixtureSpec) -> ProbabilityTensor:
    """``sum_k lambda_k q_k`` as an exact tensor."""
    p = sum(w * bernoulli_product(q) for w, q in zip(spec.weights, spec.components))
    return ProbabilityTensor(p / p.sum())


def _disjoint(a: dict, b: dict) -> bool:
    return any(i in b and b[i] != v for i, v in a.items())


def rbm_from_disjoint_mixture(spec: MixtureSpec, m: int | None = None, eps: float = 1e-3,
                              scale: float = 4.0, max_scale: float = 2.0 ** 10) -> RbmParams:
    """RBM whose visible marginal approximates the mixture to KL below ``eps``.

    Component 0 is arbitrary and supplies the visible biases; every further
    component must have a support disjoint from the others and is realised by
    one hidden unit.  The gating scale is doubled until the tolerance holds.
    """
    k = spec.components.shape[0] - 1
    m = k if m is None else m
    if m < k:
        raise ValueError(f"need at least {k} hidden units for {k} gated components")
    fixed = [spec.fixed(j) for j in range(k + 1)]
    for a, b in itertools.combinations(range(1, k + 1), 2):
        if not _disjoint(fixed[a], fixed[b]):
            raise ValueError(f"components {a} and {b} do not have disjoint supports")
    target = mixture_eval(spec).values
    n = spec.n
    best = (math.inf, None)
    s = scale
    while s <= max_scale:
        # component 0 is softened more gently than the gates (s / (n+1)), so
        # the 1 / p0 factor in cross terms never outgrows their suppression
        s0 = s / (n + 1)
        q0 = spec.components[0]
        b = np.where(q0 == 1.0, s0, np.where(q0 == 0.0, -s0, logit(np.clip(q0, 1e-300, 1.0))))
        lam = spec.weights
        log_lam0 = max(math.log(lam[0]) if lam[0] > 0 else -math.inf, -s0)
        logZ0 = float(np.sum(softplus(b)))
        W = np.zeros((m, n))
        c = np.zeros(m)
        for j in range(1, k + 1):
            q = spec.components[j]
            v = np.empty(n)
            cj = math.log(lam[j]) if lam[j] > 0 else -2 * s
            if lam[j] > 0:
                cj += logZ0 - log_lam0
            for i in range(n):
                if i in fixed[j]:
                    v[i] = s if fixed[j][i] == 1 else -s
                    cj -= s if fixed[j][i] == 1 else 0.0
                else:
                    v[i] = logit(q[i])
                    cj += math.log1p(-q[i])
            W[j - 1] = v - b
            c[j - 1] = cj
        params = RbmParams(W, b, c)
        div = kl_divergence(target, visible_marginal(params).values)
        if div < best[0]:
            best = (div, params)
        if div < eps:
            return params
        s *= 2
    raise ToleranceNotReached("scale cap reached before the KL tolerance", best[0])


# soft-plus units and hierarchical coverage ---------------------------------

def softplus_monomials(n: int, w, c: float) -> np.ndarray:
    """Monomial coefficients of ``x -> softplus(w^T x + c)``."""
    X = all_states(n).astype(float)
    return to_monomials(softplus(X @ np.asarray(w, float) + c)).values


def softplus_coefficient_fit(n: int, B: Sequence[int], targets: dict, eps: float = 1e-6,
                             max_rounds: int = 20):
    """Soft-plus unit whose monomial coefficients reproduce ``targets``.

    ``targets`` maps each variable ``j`` outside ``B`` to the desired
    coefficient of the monomial on ``B + {j}`` (missing entries mean 0).
    On return ``|K_{B+j} - targets[j]| <= eps`` and every coefficient off
    ``B`` and ``B + {j}`` is at most ``eps`` in magnitude; ``K_B`` is free.

    The unit is gated on ``B`` with a large weight ``s`` and shifted by a
    large offset ``T`` so that it is linear where all of ``B`` is on and
    negligible elsewhere.  Returns ``(w, c, achieved)``.
    """
    B = sorted(set(B))
    if len(B) >= n:
        raise ValueError("B must be a proper subset of the variables")
    rest = [j for j in range(n) if j not in B]
    J = {j: float(targets.get(j, 0.0)) for j in rest}
    bad = set(targets) - set(rest)
    if bad:
        raise ValueError(f"targets given for variables in B: {sorted(bad)}")

    def achieved(w, c):
        K = softplus_monomials(n, w, c)
        err = 0.0
        for mask in range(1 << n):
            sub = set(mask_subset(mask, n))
            if sub == set(B):
                continue
            if len(sub) == len(B) + 1 and set(B) <= sub:
                (j,) = sub - set(B)
                err = max(err, abs(K[mask] - J[j]))
            else:
                err = max(err, abs(K[mask]))
        return err

    if all(v == 0.0 for v in J.values()):
        w, c = np.zeros(n), -(40.0 + n)
        err = achieved(w, c)
        if err <= eps:
            return w, c, err
    total = sum(abs(v) for v in J.values())
    margin = math.log(1 / eps) + n * math.log(2) + 2.0
    err = math.inf
    for _ in range(max_rounds):
        T = total + margin
        s = T + total + margin
        w = np.zeros(n)
        w[B] = s
        for j in rest:
            w[j] = J[j]
        c = -s * len(B) + T
        err = achieved(w, c)
        if err <= eps:
            return w, c, err
        margin += 2.0
    raise ToleranceNotReached("soft-plus fit did not reach eps", err)


def hierarchical_cover(n: int, k: int) -> int:
    """Hidden units sufficient for every member of the order-k hierarchical model."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")
    first = sum(int(comb(n - 1, j - 1, exact=True)) for j in range(2, k + 1))
    if n < 2:
        return first
    second = (math.log(n - 1) + 1) / (n + 1) * sum(
        int(comb(n + 1, j, exact=True)) for j in range(2, k + 1))
    return int(math.ceil(min(first, second) - 1e-12))


def rbm_from_hierarchical(n: int, k: int, log_p, eps: float = 1e-6) -> RbmParams:
    """RBM approximating ``exp(log_p)`` (a member of the order-k model).

    One soft-plus unit per (k-1)-subset ``B`` of ``{1..n-1}``: each unit is
    responsible for the coefficients ``K_{B+j}`` with ``j`` after ``max(B)``.
    Units are added from the largest ``B`` downwards and every unit's
    leftover coefficients are subtracted before the next unit is fitted; the
    visible biases take the remaining singleton coefficients.
    """
    K = to_monomials(np.asarray(log_p, dtype=float)).values.copy()
    for mask in range(1 << n):
        if len(mask_subset(mask, n)) > k and abs(K[mask]) > 1e-9:
            raise ValueError("log_p has interactions above order k")
    units = []
    for size in range(k - 1, 0, -1):
        for B in itertools.combinations(range(n - 1), size):
            after = [j for j in range(max(B) + 1, n)]
            targets = {j: K[subset_mask(B + (j,), n)] for j in after}
            w, c, _ = softplus_coefficient_fit(n, B, targets, eps / (1 << n))
            K = K - softplus_monomials(n, w, c)
            units.append((w, c))
    b = np.array([K[subset_mask((i,), n)] for i in range(n)])
    W = np.array([u[0] for u in units]).reshape(len(units), n)
    c = np.array([u[1] for u in units])
    return RbmParams(W, b, c)


# projections ----------------------------------------------------------------

@dataclass
class Projection:
    q: ProbabilityTensor
    eta: np.ndarray
    support: np.ndarray
    residual: float
    divergence: float


def facial_support(family: ExponentialFamily, p: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """States that carry mass at some distribution with the same moments as p."""
    sup = family.support.copy()
    idx = np.flatnonzero(sup)
    A = family.stats[:, idx]
    Aeq = np.vstack([np.ones((1, idx.size)), A])
    beq = Aeq @ p[idx]
    out = np.zeros_like(sup)
    out[idx[p[idx] > 0]] = True
    for pos, state in enumerate(idx):
        if out[state]:
            continue
        cvec = np.zeros(idx.size)
        cvec[pos] = -1.0
        res = linprog(cvec, A_eq=Aeq, b_eq=beq, bounds=(0, None), method="highs")
        if res.status == 0 and -res.fun > tol:
            out[state] = True
    return out


def m_projection(target, family: ExponentialFamily, tol: float = 1e-9,
                 max_iter: int = 500) -> Projection:
    """Maximum-likelihood member of the family (or its closure) for ``target``.

    First the face of the moment polytope containing the target's moments is
    found by linear programming; the family restricted to that face has an
    interior solution, which damped Newton finds from ``eta = 0``.
    """
    p = np.asarray(target, dtype=float)
    if p.shape != family.log_ref.shape:
        raise ValueError("target and family cover different state spaces")
    if abs(p.sum() - 1) > 1e-10 or np.any(p < 0):
        raise ValueError("target must be a normalized distribution")
    outside = p[~family.support].sum()
    if outside > 1e-15:
        raise ProjectionError("target has mass outside the family's support", outside)
    face = facial_support(family, p)
    A = family.stats[:, face]
    ref = family.log_ref[face]
    mu = family.stats @ p
    eta = np.zeros(family.d)

    def evaluate(e):
        s = e @ A + ref
        lz = logsumexp(s)
        return float(e @ mu - lz), np.exp(s - lz)

    val, q = evaluate(eta)
    res = math.inf
    for _ in range(max_iter):
        mean = A @ q
        grad = mu - mean
        res = float(np.abs(grad).max()) if grad.size else 0.0
        if res <= tol:
            break
        C = A - mean[:, None]
        H = (C * q[None, :]) @ C.T
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-14:
            cand_val, cand_q = evaluate(eta + t * step)
            if cand_val >= val - 1e-15:
                break
            t *= 0.5
        if t <= 1e-14:
            break
        eta = eta + t * step
        val, q = cand_val, cand_q
    full = np.zeros_like(p)
    full[face] = q
    res = float(np.abs(family.stats @ full - mu).max()) if family.d else 0.0
    if res > tol:
        raise ProjectionError("m-projection did not converge", res)
    full /= full.sum()
    return Projection(ProbabilityTensor(full), eta, face, res, kl_divergence(p, full))


@dataclass
class Face:
    """An exponential-family piece of a polyhedral model and its feasibility test."""

    family: ExponentialFamily
    predicate: Callable[[np.ndarray], bool]
    name: str = ""


@dataclass
class PolyhedralResult:
    best: int
    projection: ProbabilityTensor
    divergence: float
    candidates: list


def polyhedral_projection(target, faces: Sequence[Face]) -> PolyhedralResult:
    """Project onto every face, keep the feasible ones and return the closest."""
    if not faces:
        raise ValueError("at least one face is required")
    p = np.asarray(target, dtype=float)
    candidates = []
    for i, face in enumerate(faces):
        proj = m_projection(p, face.family)
        feasible = bool(face.predicate(proj.q.values))
        candidates.append({"face": i, "name": face.name, "projection": proj.q,
                           "divergence": proj.divergence, "feasible": feasible})
    feasible = [c for c in candidates if c["feasible"]]
    if not feasible:
        raise NoFeasibleProjection("no face projection is feasible")
    best = min(feasible, key=lambda c: c["divergence"])
    return PolyhedralResult(best["face"], best["projection"], best["divergence"], candidates)


def rbm32_face_families() -> list[ExponentialFamily]:
    """The six boundary pieces of the three-visible, two-hidden model.

    Piece ``(v, a)`` makes the other two variables conditionally independent
    given ``x_v = a``: statistics are the singletons, the two pair monomials
    containing ``v`` and ``x_u x_w [x_v != a]``.
    """
    n = 3
    X = all_states(n).astype(float)
    fams = []
    for v in range(n):
        u, w = [i for i in range(n) if i != v]
        for a in (0, 1):
            rows = [X[:, 0], X[:, 1], X[:, 2], X[:, v] * X[:, u], X[:, v] * X[:, w],
                    X[:, u] * X[:, w] * (X[:, v] != a)]
            fams.append(ExponentialFamily(np.array(rows), np.zeros(8), f"x{v + 1}={a}"))
    return fams
