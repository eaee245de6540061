"""Gibbs dynamics for the RBM: unit and block updates, chains, exact kernels.

Randomness is always threaded explicitly.  Generators are built on the
counter-based Philox bit generator so a fixed seed yields the same stream on
every platform.  A chain owns its generator; updates advance it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ProbabilityTensor, RbmParams, check_cap, sigmoid
from .statespace import all_states, indices_of

KERNEL_CAP = 12


def make_rng(seed) -> np.random.Generator:
    """Seeded counter-based generator (Philox)."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class ChainState:
    """Visible state, hidden state and the generator that drives the chain."""

    x: np.ndarray
    y: np.ndarray
    rng: np.random.Generator

    @classmethod
    def initial(cls, params: RbmParams, rng, x=None, y=None) -> "ChainState":
        """Start state; unspecified layers are drawn uniformly at random."""
        if x is None:
            x = (rng.random(params.n) < 0.5).astype(np.int8)
        if y is None:
            y = (rng.random(params.m) < 0.5).astype(np.int8)
        x = np.asarray(x, dtype=np.int8)
        y = np.asarray(y, dtype=np.int8)
        if x.shape != (params.n,) or y.shape != (params.m,):
            raise ValueError("initial state shapes do not match the model")
        return cls(x, y, rng)

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


def _bernoulli(rng, probs) -> np.ndarray:
    # strict inequality: a unit with probability 0 never fires, 1 always fires
    u = np.asarray(rng.random(np.shape(probs)))
    return (u < probs).astype(np.int8)


def gibbs_update_unit(params: RbmParams, state: ChainState, unit: int) -> ChainState:
    """Resample a single unit given all others.

    Units ``0..n-1`` are visible, ``n..n+m-1`` hidden.
    """
    n, m = params.n, params.m
    if not 0 <= unit < n + m:
        raise IndexError(f"unit {unit} out of range for n+m={n + m}")
    x, y = state.x.copy(), state.y.copy()
    if unit < n:
        field = params.W[:, unit] @ y + params.b[unit]
        x[unit] = _bernoulli(state.rng, sigmoid(field))
    else:
        j = unit - n
        field = params.W[j] @ x + params.c[j]
        y[j] = _bernoulli(state.rng, sigmoid(field))
    return ChainState(x, y, state.rng)


def block_update(params: RbmParams, state: ChainState, side: str) -> ChainState:
    """Resample every unit on ``side`` ('hidden' or 'visible') in parallel."""
    if side == "hidden":
        y = _bernoulli(state.rng, sigmoid(state.x @ params.W.T + params.c))
        return ChainState(state.x.copy(), y, state.rng)
    if side == "visible":
        x = _bernoulli(state.rng, sigmoid(state.y @ params.W + params.b))
        return ChainState(x, state.y.copy(), state.rng)
    raise ValueError(f"side must be 'hidden' or 'visible', got {side!r}")


def gibbs_sweep(params: RbmParams, X: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """One alternating sweep (hidden | visible, then visible | hidden) for rows of X."""
    Y = _bernoulli(rng, sigmoid(X @ params.W.T + params.c))
    X = _bernoulli(rng, sigmoid(Y @ params.W + params.b))
    return X, Y


def run_chain(
    params: RbmParams,
    init: ChainState,
    sweeps: int,
    burn_in: int = 0,
) -> np.ndarray:
    """Alternating block-Gibbs chain.

    Returns an array of shape ``(sweeps, n + m)`` with the joint state
    ``(x, y)`` recorded after each sweep (burn-in sweeps are discarded).
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    n, m = params.n, params.m
    out = np.empty((sweeps, n + m), dtype=np.int8)
    state = init
    for t in range(burn_in + sweeps):
        state = block_update(params, state, "hidden")
        state = block_update(params, state, "visible")
        if t >= burn_in:
            out[t - burn_in, :n] = state.x
            out[t - burn_in, n:] = state.y
    return out


def run_chains(
    params: RbmParams,
    rng,
    sweeps: int,
    chains: int = 1,
    burn_in: int = 0,
    X0=None,
) -> np.ndarray:
    """Many independent alternating chains advanced together.

    Returns shape ``(chains, sweeps, n + m)``.  Chains share one generator
    stream, consumed in a fixed order, so the output is seed-determined.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    n, m = params.n, params.m
    if X0 is None:
        X = (rng.random((chains, n)) < 0.5).astype(np.int8)
    else:
        X = np.array(X0, dtype=np.int8).reshape(chains, n)
    out = np.empty((chains, sweeps, n + m), dtype=np.int8)
    for t in range(burn_in + sweeps):
        X, Y = gibbs_sweep(params, X, rng)
        if t >= burn_in:
            out[:, t - burn_in, :n] = X
            out[:, t - burn_in, n:] = Y
    return out


def empirical_distribution(samples, n: int) -> ProbabilityTensor:
    """Normalised visit histogram of the first ``n`` columns of ``samples``."""
    samples = np.asarray(samples)
    samples = samples.reshape(-1, samples.shape[-1])[:, :n]
    counts = np.bincount(indices_of(samples), minlength=1 << n).astype(float)
    return ProbabilityTensor(counts / counts.sum())


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Row-stochastic matrix over joint states, rows indexed by the current state."""

    matrix: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.matrix, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("kernel must be square")
        if np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("kernel rows must be probability vectors")
        object.__setattr__(self, "matrix", T)

    def step(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.matrix

    def power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.matrix, k)

    def stationary(self) -> np.ndarray:
        """Left Perron eigenvector, normalised to a distribution."""
        vals, vecs = np.linalg.eig(self.matrix.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
        return v / v.sum()


def single_site_kernels(params: RbmParams, cap: int = KERNEL_CAP) -> list[np.ndarray]:
    """Exact kernels ``T_i`` for every unit, visible first, over joint states."""
    n, m = params.n, params.m
    N = n + m
    check_cap(N, cap, "joint states for a transition kernel")
    S = all_states(N).astype(float)
    X, Y = S[:, :n], S[:, n:]
    fields = np.hstack([Y @ params.W + params.b, X @ params.W.T + params.c])
    p1 = sigmoid(fields)
    idx = np.arange(1 << N)
    kernels = []
    for unit in range(N):
        bit = 1 << (N - 1 - unit)
        T = np.zeros((1 << N, 1 << N))
        T[idx, idx | bit] = p1[:, unit]
        T[idx, idx & ~bit] = 1.0 - p1[:, unit]
        kernels.append(T)
    return kernels


def exact_kernel(params: RbmParams, r=None, cap: int = KERNEL_CAP) -> TransitionKernel:
    """Random-scan kernel ``T = sum_i r(i) T_i``; uniform ``r`` by default."""
    N = params.n + params.m
    if r is None:
        r = np.full(N, 1.0 / N)
    r = np.asarray(r, dtype=float)
    if r.shape != (N,) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-12:
        raise ValueError("r must be a probability distribution over the n+m units")
    kernels = single_site_kernels(params, cap)
    T = sum(w * K for w, K in zip(r, kernels))
    return TransitionKernel(T)


def write_samples_csv(samples, n: int, m: int, path) -> None:
    """One row per sweep with columns x1..xn, y1..ym."""
    samples = np.asarray(samples).reshape(-1, n + m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(n)] + [f"y{j + 1}" for j in range(m)])
        w.writerows(samples.tolist())
