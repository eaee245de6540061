"""Likelihood, divergence and the RBM training procedures.

The parameter vector is always ``(W row-major, b, c)`` as produced by
:meth:`RbmParams.to_vector`.  Sufficient statistics of a visible state after
integrating out the hidden layer are

    phi(x) = (sigmoid(W x + c) outer x, x, sigmoid(W x + c)),

so the gradient of the mean log-likelihood is ``E_data[phi] - E_model[phi]``.
The model side is computed by enumerating visible states only, which keeps it
exact for large hidden layers.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .model import (
    ProbabilityTensor,
    RbmParams,
    check_cap,
    joint_distribution,
    joint_log_weights,
    sigmoid,
    visible_log_probs,
)
from .sampling import _bernoulli, make_rng
from .statespace import all_states, indices_of


class SingularFisherError(np.linalg.LinAlgError):
    """The undamped Fisher system is singular; use a damping lambda > 0."""


class MStepError(RuntimeError):
    """Newton iteration of the m-step stopped before matching moments."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (moment residual {residual:.3e})")
        self.residual = residual


# data handling --------------------------------------------------------------

def data_distribution(data, n: int | None = None) -> np.ndarray:
    """Empirical distribution as a plain vector over the 2^n visible states.

    ``data`` is a :class:`ProbabilityTensor`, a 1-d vector of probabilities
    or an (N, n) array of binary states.
    """
    if isinstance(data, ProbabilityTensor):
        p = np.asarray(data.values, dtype=float)
    else:
        arr = np.asarray(data)
        if arr.ndim == 2:
            if n is not None and arr.shape[1] != n:
                raise ValueError(f"states have {arr.shape[1]} columns, expected {n}")
            if not np.all((arr == 0) | (arr == 1)):
                raise ValueError("data states must be binary")
            k = arr.shape[1]
            counts = np.bincount(indices_of(arr), minlength=1 << k).astype(float)
            p = counts / counts.sum()
        else:
            p = ProbabilityTensor(arr).values
    if n is not None and p.shape[0] != 1 << n:
        raise ValueError(f"data covers {p.shape[0]} states, model has 2^{n}")
    return p


def log_likelihood(params: RbmParams, data) -> float:
    """Mean log-likelihood ``sum_x p_data(x) log p(x; theta)``."""
    p = data_distribution(data, params.n)
    logq = visible_log_probs(params)
    mask = p > 0
    return float(p[mask] @ logq[mask])


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-(p @ np.log(p)))


def kl_divergence(p, q) -> float:
    """``D(p || q)`` with ``0 log 0 = 0``; ``math.inf`` if supp(p) is not in supp(q)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(max(p[mask] @ (np.log(p[mask]) - np.log(q[mask])), 0.0))


# statistics and gradients ---------------------------------------------------

def visible_statistics(params: RbmParams, X) -> np.ndarray:
    """Rows ``phi(x)`` for each row x of X: hidden-integrated sufficient statistics."""
    X = np.asarray(X, dtype=float)
    H = sigmoid(X @ params.W.T + params.c)
    inter = (H[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)
    return np.hstack([inter, X, H])


def expected_statistics(params: RbmParams, p) -> np.ndarray:
    """``sum_x p(x) phi(x)``, with ``E[F_I] = Y~ diag(p) X~^T`` for the interaction block."""
    X = all_states(params.n).astype(float)
    return np.asarray(p, dtype=float) @ visible_statistics(params, X)


def exact_gradient(params: RbmParams, data) -> np.ndarray:
    """Gradient of the mean log-likelihood w.r.t. ``(W, b, c)``."""
    p_data = data_distribution(data, params.n)
    p_model = np.exp(visible_log_probs(params))
    return expected_statistics(params, p_data) - expected_statistics(params, p_model)


def model_expectations_table(params: RbmParams, cap: int = 12) -> np.ndarray:
    """Model-side ``E[F]`` from the full joint table over 2^n x 2^m states.

    Reference implementation used to check :func:`exact_gradient`; only
    feasible for small hidden layers.
    """
    if params.m > cap:
        raise ValueError(f"joint table needs m <= {cap}")
    P = np.asarray(joint_distribution(params).values).reshape(1 << params.n, 1 << params.m)
    X = all_states(params.n).astype(float)
    Y = all_states(params.m).astype(float)
    inter = Y.T @ P.T @ X
    return np.concatenate([inter.ravel(), P.sum(axis=1) @ X, P.sum(axis=0) @ Y])


def numerical_gradient(params: RbmParams, data, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of :func:`log_likelihood`."""
    v = params.to_vector()
    g = np.empty_like(v)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        up = log_likelihood(RbmParams.from_vector(v + e, params.n, params.m), data)
        dn = log_likelihood(RbmParams.from_vector(v - e, params.n, params.m), data)
        g[k] = (up - dn) / (2 * h)
    return g


def _step(params: RbmParams, direction, lr: float) -> RbmParams:
    return RbmParams.from_vector(params.to_vector() + lr * np.asarray(direction),
                                 params.n, params.m)


# contrastive divergence -----------------------------------------------------

def _batch_states(batch, n: int) -> np.ndarray:
    X = np.asarray(batch, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n:
        raise ValueError(f"batch states must have {n} columns")
    return X


def _negative_phase(params: RbmParams, X0: np.ndarray, k: int, rng) -> np.ndarray:
    X = X0
    for _ in range(k):
        Y = _bernoulli(rng, sigmoid(X @ params.W.T + params.c))
        X = _bernoulli(rng, sigmoid(Y @ params.W + params.b)).astype(float)
    return X


def cd_gradient(params: RbmParams, batch, k: int, rng, start=None):
    """CD-k estimate of the gradient.

    The positive phase uses the exact hidden activations of the batch; the
    negative phase uses the activations of the k-step reconstructions (or of
    chains started at ``start`` for persistent CD).

    Returns ``(gradient, final visible states)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = _batch_states(batch, params.n)
    X0 = X if start is None else _batch_states(start, params.n)
    Xk = _negative_phase(params, X0, k, rng)
    pos = visible_statistics(params, X).mean(axis=0)
    neg = visible_statistics(params, Xk).mean(axis=0)
    return pos - neg, Xk.astype(np.int8)


def cd_k_update(params: RbmParams, batch, k: int, lr: float, rng) -> RbmParams:
    grad, _ = cd_gradient(params, batch, k, rng)
    return _step(params, grad, lr)


def pcd_update(params: RbmParams, batch, chains, k: int, lr: float, rng):
    """Persistent CD: the negative chains continue from their previous samples.

    Returns ``(new params, advanced chains)``.
    """
    grad, chains = cd_gradient(params, batch, k, rng, start=chains)
    return _step(params, grad, lr), chains


# natural gradient -----------------------------------------------------------

def fisher_matrix(params: RbmParams) -> np.ndarray:
    """``G = Cov_{p(x)}[E[F | x]]`` under the visible marginal."""
    p = np.exp(visible_log_probs(params))
    Phi = visible_statistics(params, all_states(params.n).astype(float))
    mu = p @ Phi
    C = Phi - mu
    G = (C * p[:, None]).T @ C
    return 0.5 * (G + G.T)


def natural_gradient_direction(params: RbmParams, data, damping: float) -> np.ndarray:
    """Solve ``(G + damping I) delta = grad L``."""
    if damping < 0:
        raise ValueError("damping must be >= 0")
    grad = exact_gradient(params, data)
    G = fisher_matrix(params)
    d = G.shape[0]
    if damping == 0.0:
        if np.linalg.matrix_rank(G, tol=1e-12 * max(np.abs(G).max(), 1e-300)) < d:
            raise SingularFisherError(
                "Fisher matrix is singular at these parameters; "
                "pass a damping lambda > 0"
            )
        return linalg.solve(G, grad, assume_a="sym")
    return linalg.solve(G + damping * np.eye(d), grad, assume_a="pos")


def natural_gradient_step(params: RbmParams, data, lr: float, damping: float = 1e-4) -> RbmParams:
    return _step(params, natural_gradient_direction(params, data, damping), lr)


# expectation maximisation ---------------------------------------------------

def joint_statistics(n: int, m: int) -> np.ndarray:
    """Rows ``(y outer x, x, y)`` for all joint states, in joint index order."""
    X = all_states(n).astype(float)
    Y = all_states(m).astype(float)
    Xj = np.repeat(X, 1 << m, axis=0)
    Yj = np.tile(Y, (1 << n, 1))
    inter = (Yj[:, :, None] * Xj[:, None, :]).reshape(Xj.shape[0], -1)
    return np.hstack([inter, Xj, Yj])


def e_step(params: RbmParams, data) -> np.ndarray:
    """Joint table ``p_data(x) q(y | x; theta)`` of shape (2^n, 2^m)."""
    p = data_distribution(data, params.n)
    logw = joint_log_weights(params)
    cond = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    return p[:, None] * cond


def joint_divergence(P, params: RbmParams) -> float:
    """``D(P || q_theta)`` over joint states."""
    return kl_divergence(np.asarray(P).ravel(), np.asarray(joint_distribution(params).values))


def m_step(P, init: RbmParams, tol: float = 1e-8, max_iter: int = 200) -> RbmParams:
    """Joint-family member whose expected statistics match those of ``P``.

    Damped Newton on the concave joint log-likelihood, warm-started at
    ``init``; stops once the max-abs moment residual is at most ``tol``.
    """
    n, m = init.n, init.m
    check_cap(n + m, None, "joint states")
    F = joint_statistics(n, m)
    target = np.asarray(P, dtype=float).ravel() @ F
    theta = init.to_vector()

    def objective(th):
        s = F @ th
        lz = logsumexp(s)
        q = np.exp(s - lz)
        return float(target @ th - lz), q

    val, q = objective(theta)
    for _ in range(max_iter):
        mean = q @ F
        grad = target - mean
        res = float(np.abs(grad).max())
        if res <= tol:
            return RbmParams.from_vector(theta, n, m)
        C = F - mean
        H = (C * q[:, None]).T @ C
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand_val, cand_q = objective(theta + t * step)
            if cand_val >= val - 1e-15:
                break
            t *= 0.5
        theta = theta + t * step
        val, q = cand_val, cand_q
    res = float(np.abs(target - q @ F).max())
    if res <= tol:
        return RbmParams.from_vector(theta, n, m)
    raise MStepError("m-step did not converge", res)


def em_step(params: RbmParams, data, tol: float = 1e-8) -> RbmParams:
    """One e-projection followed by one m-projection."""
    return m_step(e_step(params, data), params, tol=tol)


# driver ---------------------------------------------------------------------

METHODS = ("exact", "cd", "pcd", "natgrad", "em")


@dataclass
class TrainConfig:
    method: str = "exact"
    lr: float = 0.1
    schedule: str = "constant"
    k: int = 1
    damping: float = 1e-2
    batch_size: int | None = None
    chains: int = 100
    max_iter: int = 1000
    tol: float = 1e-8
    seed: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.schedule not in ("constant", "inverse"):
            raise ValueError("schedule must be 'constant' or 'inverse'")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")

    def rate(self, t: int) -> float:
        """Learning rate at (1-based) iteration t."""
        return self.lr if self.schedule == "constant" else self.lr / t


@dataclass
class TrainRecord:
    iter: int
    params: RbmParams
    loglik: float
    gradnorm: float
    divergence: float | None
    wall_time: float


@dataclass
class Trajectory:
    records: list = field(default_factory=list)

    @property
    def final(self) -> TrainRecord:
        return self.records[-1]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loglik", "gradnorm", "divergence", "wall_time"])
            for r in self.records:
                div = "" if r.divergence is None else repr(r.divergence)
                w.writerow([r.iter, repr(r.loglik), repr(r.gradnorm), div, repr(r.wall_time)])


def default_init(n: int, m: int, rng) -> RbmParams:
    """Weights and biases drawn from uniform(-0.1, 0.1)."""
    return RbmParams.random(n, m, rng, scale=0.1, dist="uniform")


def train(params: RbmParams, data, config: TrainConfig, rng=None, target=None) -> Trajectory:
    """Run ``config.method`` from ``params`` and record every iterate.

    ``target`` (a distribution) enables the divergence column; by default the
    divergence is measured against the data distribution itself.
    """
    if config.method in ("cd", "pcd") and rng is None:
        if config.seed is None:
            raise ValueError(f"method {config.method!r} needs a seed or an rng")
        rng = make_rng(config.seed)
    p_data = data_distribution(data, params.n)
    ref = p_data if target is None else np.asarray(target, dtype=float)
    t0 = time.perf_counter()

    def record(t, th):
        grad = exact_gradient(th, p_data)
        q = np.exp(visible_log_probs(th))
        return TrainRecord(
            iter=t,
            params=th,
            loglik=log_likelihood(th, p_data),
            gradnorm=float(np.linalg.norm(grad)),
            divergence=kl_divergence(ref, q),
            wall_time=time.perf_counter() - t0,
        ), grad

    traj = Trajectory()
    rec, grad = record(0, params)
    traj.records.append(rec)
    states = all_states(params.n)
    chains = None
    th = params
    for t in range(1, config.max_iter + 1):
        if rec.gradnorm <= config.tol:
            break
        lr = config.rate(t)
        if config.method == "exact":
            th = _step(th, grad, lr)
        elif config.method == "natgrad":
            th = natural_gradient_step(th, p_data, lr, config.damping)
        elif config.method == "em":
            th = em_step(th, p_data)
        else:
            size = config.batch_size or config.chains
            batch = states[rng.choice(states.shape[0], size=size, p=p_data)]
            if config.method == "cd":
                th = cd_k_update(th, batch, config.k, lr, rng)
            else:
                if chains is None:
                    chains = batch.copy()
                th, chains = pcd_update(th, batch, chains, config.k, lr, rng)
        rec, grad = record(t, th)
        traj.records.append(rec)
    return traj
