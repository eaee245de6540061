"""Enumeration and basis transforms for functions on {0,1}^n.

States are indexed so that ``x[0]`` (the first variable) is the most
significant bit of the index.  Subsets of variables are encoded as n-bit
masks with the same convention, so the mask of a subset ``lam`` is the index
of the state that has ones exactly on ``lam``.  With this encoding the
monomial ``prod_{i in lam} x_i`` equals one iff ``mask & index == mask``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

CHARACTER = "character"
MONOMIAL = "monomial"


@dataclass(frozen=True)
class StateSpace:
    """The set {0,1}^n with its canonical index order."""

    n: int

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be non-negative, got {self.n}")

    @property
    def size(self) -> int:
        return 1 << self.n

    def index_of(self, x) -> int:
        return index_of(x, self.n)

    def state_of(self, i: int) -> np.ndarray:
        return state_of(i, self.n)

    def states(self) -> np.ndarray:
        return all_states(self.n)


def index_of(x, n: int | None = None) -> int:
    """Index of the binary vector ``x``; ``x[0]`` is the most significant bit."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("state must be a 1-d binary vector")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"state has length {x.shape[0]}, expected {n}")
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("state entries must be 0 or 1")
    i = 0
    for bit in x:
        i = (i << 1) | int(bit)
    return i


def state_of(i: int, n: int) -> np.ndarray:
    """Binary vector of length ``n`` with index ``i``."""
    i = int(i)
    if not 0 <= i < (1 << n):
        raise ValueError(f"index {i} out of range for n={n}")
    return np.array([(i >> (n - 1 - k)) & 1 for k in range(n)], dtype=np.int8)


@lru_cache(maxsize=64)
def all_states(n: int) -> np.ndarray:
    """All 2^n states as rows of a (2^n, n) integer array, in index order.

    The result is cached and read-only.
    """
    idx = np.arange(1 << n)
    shifts = np.arange(n - 1, -1, -1)
    out = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8)
    out.setflags(write=False)
    return out


def indices_of(states: np.ndarray) -> np.ndarray:
    """Vectorised ``index_of`` for an (N, n) array of states."""
    states = np.asarray(states, dtype=np.int64)
    if states.ndim != 2:
        raise ValueError("expected an (N, n) array of states")
    n = states.shape[1]
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return states @ weights


def hamming_neighbors(x) -> list[np.ndarray]:
    """The n states that differ from ``x`` in exactly one coordinate."""
    x = np.asarray(x, dtype=np.int8)
    if x.ndim != 1:
        raise ValueError("state must be a 1-d binary vector")
    out = []
    for k in range(x.shape[0]):
        y = x.copy()
        y[k] = 1 - y[k]
        out.append(y)
    return out


def neighbor_indices(i: int, n: int) -> list[int]:
    return [i ^ (1 << k) for k in range(n - 1, -1, -1)]


def subset_mask(subset: Iterable[int], n: int) -> int:
    """Mask of a subset of variables (0-based indices)."""
    mask = 0
    for k in subset:
        if not 0 <= k < n:
            raise ValueError(f"variable {k} out of range for n={n}")
        mask |= 1 << (n - 1 - k)
    return mask


def mask_subset(mask: int, n: int) -> tuple[int, ...]:
    """Inverse of :func:`subset_mask`."""
    return tuple(k for k in range(n) if mask >> (n - 1 - k) & 1)


def popcount(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    count = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        count += (a & np.uint64(1)).astype(np.int64)
        a = a >> np.uint64(1)
    return count


def _check_length(values, n=None):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("expected a 1-d vector over states")
    size = values.shape[0]
    if size == 0 or size & (size - 1):
        raise ValueError(f"length {size} is not a power of two")
    k = size.bit_length() - 1
    if n is not None and k != n:
        raise ValueError(f"length {size} does not match n={n}")
    return values, k


@dataclass(frozen=True)
class CoefficientVector:
    """Interaction coefficients indexed by subset masks.

    ``values[mask]`` is the coefficient of the character ``sigma_lam`` or
    the monomial ``pi_lam`` depending on ``basis``.
    """

    n: int
    basis: str
    values: np.ndarray

    def __post_init__(self):
        if self.basis not in (CHARACTER, MONOMIAL):
            raise ValueError(f"unknown basis {self.basis!r}")
        if np.shape(self.values) != (1 << self.n,):
            raise ValueError("coefficient vector must have 2^n entries")

    def __getitem__(self, subset) -> float:
        return float(self.values[subset_mask(subset, self.n)])

    def evaluate(self) -> np.ndarray:
        """The function on all states represented by these coefficients."""
        if self.basis == CHARACTER:
            return from_characters(self)
        return from_monomials(self)


def _walsh_hadamard(v: np.ndarray) -> np.ndarray:
    # in-place butterfly on a copy, O(n 2^n)
    v = v.copy()
    h = 1
    size = v.shape[0]
    while h < size:
        v = v.reshape(-1, 2, h)
        a = v[:, 0, :].copy()
        b = v[:, 1, :]
        v[:, 0, :] = a + b
        v[:, 1, :] = a - b
        v = v.reshape(size)
        h *= 2
    return v


def to_characters(l, n: int | None = None) -> CoefficientVector:
    """Character coefficients ``J_lam = 2^-n sum_x sigma_lam(x) l(x)``."""
    l, k = _check_length(l, n)
    return CoefficientVector(k, CHARACTER, _walsh_hadamard(l) / (1 << k))


def from_characters(coeffs: CoefficientVector) -> np.ndarray:
    if coeffs.basis != CHARACTER:
        raise ValueError("expected character coefficients")
    return _walsh_hadamard(np.asarray(coeffs.values, dtype=float))


def _zeta(v: np.ndarray, sign: float) -> np.ndarray:
    # subset-sum (sign=+1) or Moebius inversion (sign=-1) over masks
    v = v.copy()
    size = v.shape[0]
    h = 1
    while h < size:
        v = v.reshape(-1, 2, h)
        v[:, 1, :] += sign * v[:, 0, :]
        v = v.reshape(size)
        h *= 2
    return v


def to_monomials(l, n: int | None = None) -> CoefficientVector:
    """Monomial coefficients K with ``l(x) = sum_lam K_lam prod_{i in lam} x_i``.

    Computed by Moebius inversion over the subset lattice.
    """
    l, k = _check_length(l, n)
    return CoefficientVector(k, MONOMIAL, _zeta(l, -1.0))


def from_monomials(coeffs: CoefficientVector) -> np.ndarray:
    if coeffs.basis != MONOMIAL:
        raise ValueError("expected monomial coefficients")
    return _zeta(np.asarray(coeffs.values, dtype=float), 1.0)


def eval_polynomial(coeffs: CoefficientVector, x) -> float:
    """Evaluate ``sum_lam K_lam prod_{i in lam} x_i`` at a single state."""
    if coeffs.basis != MONOMIAL:
        raise ValueError("expected monomial coefficients")
    i = index_of(x, coeffs.n)
    masks = np.arange(1 << coeffs.n)
    covered = (masks & i) == masks
    return float(np.sum(np.asarray(coeffs.values)[covered]))


def character_matrix(n: int, masks: Sequence[int] | None = None) -> np.ndarray:
    """Rows ``sigma_lam`` evaluated on all states, for the given masks."""
    if masks is None:
        masks = range(1 << n)
    idx = np.arange(1 << n)
    rows = [(-1.0) ** popcount(np.asarray(m) & idx) for m in masks]
    return np.array(rows, dtype=float).reshape(len(rows), 1 << n)


def monomial_matrix(n: int, masks: Sequence[int] | None = None) -> np.ndarray:
    """Rows ``pi_lam`` evaluated on all states, for the given masks."""
    if masks is None:
        masks = range(1 << n)
    idx = np.arange(1 << n)
    rows = [((idx & m) == m).astype(float) for m in masks]
    return np.array(rows, dtype=float).reshape(len(rows), 1 << n)


def load_function(path) -> np.ndarray:
    """Read a JSON array of 2^n numbers ordered by state index."""
    import json

    with open(path) as fh:
        data = json.load(fh)
    values, _ = _check_length(data)
    return values


def dump_function(values, path) -> None:
    import json

    with open(path, "w") as fh:
        json.dump([float(v) for v in np.asarray(values)], fh)
