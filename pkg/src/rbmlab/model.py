"""Restricted Boltzmann machine over binary visible and hidden units.

All the equivalent views of the model live here: the energy and the joint
Gibbs-Boltzmann law, the visible marginal as a soft-plus superposition or as
a product of mixtures, the factorised conditionals, the Kronecker
(harmonium) arrangement of the parameters, and the tropical / ReLU
evaluation.

Joint states ``(x, y)`` are indexed as ``index(x) * 2**m + index(y)``, i.e.
the concatenated vector ``(x_1..x_n, y_1..y_m)`` with ``x_1`` most
significant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .statespace import all_states

#: Largest exponent of 2 that any enumeration may reach, by default.
ENUMERATION_CAP = 20
#: Hidden layers larger than this are refused even in product form.
MAX_HIDDEN = 30


class EnumerationCapError(ValueError):
    """Raised when an exact computation would exceed the enumeration cap."""


def check_cap(bits: int, cap: int | None = None, what: str = "states") -> None:
    cap = ENUMERATION_CAP if cap is None else cap
    if bits > cap:
        raise EnumerationCapError(
            f"exact enumeration over 2^{bits} {what} exceeds the cap 2^{cap}"
        )


def sigmoid(s):
    return expit(s)


def softplus(s):
    """``log(1 + exp(s))`` computed as ``max(s, 0) + log1p(exp(-|s|))``."""
    s = np.asarray(s, dtype=float)
    return np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))


def relu(s):
    return np.maximum(np.asarray(s, dtype=float), 0.0)


@dataclass(frozen=True, eq=False)
class ProbabilityTensor:
    """Non-negative vector over the 2^n states of n binary variables.

    ``normalized=False`` marks an unnormalized tensor, e.g. an entrywise
    product of factors before renormalisation.
    """

    values: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("probability tensor must be a flat vector over states")
        size = values.shape[0]
        if size == 0 or size & (size - 1):
            raise ValueError(f"length {size} is not a power of two")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("probability tensor entries must be finite and >= 0")
        if self.normalized and abs(values.sum() - 1.0) > 1e-10:
            raise ValueError(f"normalized tensor sums to {values.sum()!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0].bit_length() - 1

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, item):
        return self.values[item]

    def normalize(self) -> "ProbabilityTensor":
        total = self.values.sum()
        if total <= 0:
            raise ValueError("cannot normalise a zero tensor")
        return ProbabilityTensor(self.values / total)

    def hadamard(self, other) -> "ProbabilityTensor":
        """Entrywise product; the result is tagged unnormalized."""
        return ProbabilityTensor(self.values * np.asarray(other), normalized=False)

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityTensor":
        return cls(np.full(1 << n, 1.0 / (1 << n)))

    @classmethod
    def point_mass(cls, n: int, index: int) -> "ProbabilityTensor":
        v = np.zeros(1 << n)
        v[index] = 1.0
        return cls(v)


@dataclass(frozen=True, eq=False)
class RbmParams:
    """Parameters ``theta = (W, b, c)`` of an RBM with n visible, m hidden units.

    ``W`` is m x n with ``W[j, i]`` the weight between hidden unit j and
    visible unit i; ``b`` holds the visible biases and ``c`` the hidden ones.
    """

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        W = np.array(self.W, dtype=float).reshape(c.shape[0], b.shape[0])
        for name, arr in (("W", W), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def num_params(self) -> int:
        return self.n * self.m + self.n + self.m

    def to_vector(self) -> np.ndarray:
        """Flat parameter vector ordered as (W row-major, b, c)."""
        return np.concatenate([self.W.ravel(), self.b, self.c])

    @classmethod
    def from_vector(cls, v, n: int, m: int) -> "RbmParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (n * m + n + m,):
            raise ValueError(f"parameter vector has shape {v.shape}, expected ({n*m+n+m},)")
        return cls(v[: n * m].reshape(m, n), v[n * m : n * m + n], v[n * m + n :])

    @classmethod
    def zeros(cls, n: int, m: int) -> "RbmParams":
        return cls(np.zeros((m, n)), np.zeros(n), np.zeros(m))

    @classmethod
    def random(cls, n: int, m: int, rng, scale: float = 1.0, dist: str = "normal") -> "RbmParams":
        """Random parameters; ``dist='uniform'`` draws from (-scale, scale)."""
        size = n * m + n + m
        if dist == "normal":
            v = rng.normal(scale=scale, size=size)
        elif dist == "uniform":
            v = rng.uniform(-scale, scale, size=size)
        else:
            raise ValueError(f"unknown distribution {dist!r}")
        return cls.from_vector(v, n, m)

    def scaled(self, beta: float) -> "RbmParams":
        return RbmParams(beta * self.W, beta * self.b, beta * self.c)

    def permute_hidden(self, perm) -> "RbmParams":
        perm = np.asarray(perm)
        return RbmParams(self.W[perm], self.b, self.c[perm])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RbmParams":
        n, m = int(d["n"]), int(d["m"])
        W = np.asarray(d["W"], dtype=float).reshape(m, n) if m else np.zeros((0, n))
        b = np.asarray(d["b"], dtype=float)
        c = np.asarray(d["c"], dtype=float)
        if b.shape != (n,) or c.shape != (m,):
            raise ValueError("model file shapes do not match declared n, m")
        return cls(W, b, c)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "RbmParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_state(v, length: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (length,):
        raise ValueError(f"{what} must have length {length}, got shape {v.shape}")
    return v


def energy(params: RbmParams, x, y) -> float:
    """``E(x, y) = -(y^T W x + c^T y + b^T x)``."""
    x = _as_state(x, params.n, "x")
    y = _as_state(y, params.m, "y")
    return float(-(y @ params.W @ x + params.c @ y + params.b @ x))


def hidden_inputs(params: RbmParams, x) -> np.ndarray:
    """Pre-activations ``W x + c``; works on a single state or rows of states."""
    x = _as_state(x, params.n, "x")
    return x @ params.W.T + params.c


def visible_inputs(params: RbmParams, y) -> np.ndarray:
    y = _as_state(y, params.m, "y")
    return y @ params.W + params.b


def log_unnormalized(params: RbmParams, x):
    """``b^T x + sum_j softplus(W_j x + c_j)`` for one state or rows of states."""
    x = _as_state(x, params.n, "x")
    out = x @ params.b + softplus(hidden_inputs(params, x)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def product_of_mixtures(params: RbmParams, x):
    """``exp(b^T x) * prod_j (1 + exp(W_j x + c_j))`` evaluated in factored form."""
    x = _as_state(x, params.n, "x")
    factors = 1.0 + np.exp(hidden_inputs(params, x))
    out = np.exp(x @ params.b) * np.prod(factors, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def visible_log_unnormalized(params: RbmParams, cap: int | None = None) -> np.ndarray:
    """Soft-plus log-weights of all 2^n visible states."""
    check_cap(params.n, cap, "visible states")
    if params.m > MAX_HIDDEN:
        raise EnumerationCapError(f"m={params.m} exceeds the hidden limit {MAX_HIDDEN}")
    return log_unnormalized(params, all_states(params.n).astype(float))


def log_partition(params: RbmParams, cap: int | None = None) -> float:
    return float(logsumexp(visible_log_unnormalized(params, cap)))


def visible_log_probs(params: RbmParams, cap: int | None = None) -> np.ndarray:
    l = visible_log_unnormalized(params, cap)
    return l - logsumexp(l)


def visible_marginal(params: RbmParams, cap: int | None = None) -> ProbabilityTensor:
    """Exact marginal ``p(x; theta)`` over the 2^n visible states."""
    p = np.exp(visible_log_probs(params, cap))
    return ProbabilityTensor(p / p.sum())


def joint_log_weights(params: RbmParams, cap: int | None = None) -> np.ndarray:
    """``-E(x, y)`` for all joint states as a (2^n, 2^m) array."""
    check_cap(params.n + params.m, cap, "joint states")
    X = all_states(params.n).astype(float)
    Y = all_states(params.m).astype(float)
    return (X @ params.W.T @ Y.T) + (X @ params.b)[:, None] + (Y @ params.c)[None, :]


def joint_distribution(params: RbmParams, cap: int | None = None) -> ProbabilityTensor:
    """Gibbs-Boltzmann law ``exp(-E(x, y)) / Z`` over all 2^(n+m) joint states."""
    logw = joint_log_weights(params, cap).ravel()
    p = np.exp(logw - logsumexp(logw))
    return ProbabilityTensor(p / p.sum())


def conditional(params: RbmParams, direction: str, given) -> np.ndarray:
    """Bernoulli parameters of the factorised conditional.

    ``direction='hidden'`` returns ``p(y_j = 1 | x) = sigmoid(W x + c)``;
    ``direction='visible'`` returns ``p(x_i = 1 | y) = sigmoid(W^T y + b)``.
    """
    if direction == "hidden":
        return sigmoid(hidden_inputs(params, given))
    if direction == "visible":
        return sigmoid(visible_inputs(params, given))
    raise ValueError(f"direction must be 'hidden' or 'visible', got {direction!r}")


def bernoulli_product(probs) -> np.ndarray:
    """Product distribution with the given Bernoulli parameters, as a 2^k vector."""
    probs = np.asarray(probs, dtype=float)
    S = all_states(probs.shape[0]).astype(float)
    return np.prod(np.where(S == 1, probs, 1.0 - probs), axis=1)


def harmonium_matrix(params: RbmParams) -> np.ndarray:
    """The (m+1) x (n+1) arrangement ``Theta`` of theta.

    ``Theta[0, 0]`` is the (immaterial) constant, row 0 holds ``b``, column 0
    holds ``c`` and the lower-right block is ``W``.
    """
    theta = np.zeros((params.m + 1, params.n + 1))
    theta[0, 1:] = params.b
    theta[1:, 0] = params.c
    theta[1:, 1:] = params.W
    return theta


def harmonium_vector(params: RbmParams) -> np.ndarray:
    """theta as the column-by-column vectorisation of ``Theta``."""
    return harmonium_matrix(params).ravel(order="F")


def kronecker_statistics(x, y) -> np.ndarray:
    """``F(x, y) = (1, x) kron (1, y)``."""
    return np.kron(np.concatenate([[1.0], np.asarray(x, float)]),
                   np.concatenate([[1.0], np.asarray(y, float)]))


def harmonium_params(params: RbmParams, x) -> np.ndarray:
    """Natural parameters ``Theta F^V(x)`` of ``p(y | x)`` in the hidden family."""
    x = _as_state(x, params.n, "x")
    return harmonium_matrix(params) @ np.concatenate([[1.0], x])


def harmonium_params_visible(params: RbmParams, y) -> np.ndarray:
    """Natural parameters ``Theta^T F^H(y)`` of ``p(x | y)`` in the visible family."""
    y = _as_state(y, params.m, "y")
    return harmonium_matrix(params).T @ np.concatenate([[1.0], y])


def inference(params: RbmParams, x) -> np.ndarray:
    """Most probable hidden state given ``x``; ties go to ``y_j = 1``."""
    return (hidden_inputs(params, x) >= 0).astype(np.int8)


def tropical_value(params: RbmParams, x):
    """Max-plus log-weight ``b^T x + sum_j [W_j x + c_j]_+``."""
    x = _as_state(x, params.n, "x")
    out = x @ params.b + relu(hidden_inputs(params, x)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def tropical_brute_force(params: RbmParams, x) -> float:
    """``max_y theta^T F(x, y)`` by enumerating hidden states (m small)."""
    x = _as_state(x, params.n, "x")
    Y = all_states(params.m).astype(float)
    return float(np.max(Y @ (params.W @ x + params.c) + params.b @ x))
