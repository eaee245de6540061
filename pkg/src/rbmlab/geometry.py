"""Jacobians of the visible-marginal parametrisation and their ranks.

Two conventions appear.  The *normalized* Jacobian differentiates
``p(x; theta)`` itself; its column for state x is
``p(x) (phi(x) - E[phi])`` and its rank is the model dimension.  The
*denormalized* Jacobian drops the partition function; its column for x is
``(1, x) kron (1, sigmoid(W x + c))`` and its rank is one larger.
"""

from __future__ import annotations

import numpy as np
from scipy.special import softmax

from .model import RbmParams, check_cap, sigmoid, visible_log_probs
from .sampling import make_rng
from .statespace import all_states
from .training import visible_statistics

DEFAULT_RANK_TOL = 1e-9


class DegenerateHyperplaneError(ValueError):
    """A hidden unit's hyperplane ``W_j x + c_j = 0`` passes through a state."""


def _hat(A: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((A.shape[0], 1)), A])


def _kron_columns(X: np.ndarray, H: np.ndarray) -> np.ndarray:
    # column x is (1, x) kron (1, h(x)); rows ordered i * (m + 1) + j
    Xh, Hh = _hat(X), _hat(H)
    return (Xh[:, :, None] * Hh[:, None, :]).reshape(X.shape[0], -1).T


def numerical_rank(matrix, tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    M = np.asarray(matrix, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def marginal_jacobian(params: RbmParams) -> np.ndarray:
    """Denormalized Jacobian, shape ((n+1)(m+1), 2^n)."""
    check_cap(params.n, None, "visible states")
    X = all_states(params.n).astype(float)
    return _kron_columns(X, sigmoid(X @ params.W.T + params.c))


def normalized_jacobian(params: RbmParams) -> np.ndarray:
    """Jacobian of ``p(x; theta)`` w.r.t. ``(W, b, c)``, shape (mn+n+m, 2^n)."""
    check_cap(params.n, None, "visible states")
    p = np.exp(visible_log_probs(params))
    Phi = visible_statistics(params, all_states(params.n).astype(float))
    return ((Phi - p @ Phi) * p[:, None]).T


def expected_dimension(n: int, m: int) -> int:
    return min((1 << n) - 1, (n + 1) * (m + 1) - 1)


def dimension_check(n: int, m: int, trials: int = 3, seed=0,
                    tol: float = DEFAULT_RANK_TOL, scale: float = 1.0) -> dict:
    """Compare the generic rank of the normalized Jacobian with the expected dimension."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n > 12:
        raise ValueError("dimension_check supports n <= 12")
    rng = make_rng(seed)
    ranks = [numerical_rank(normalized_jacobian(RbmParams.random(n, m, rng, scale=scale)), tol)
             for _ in range(trials)]
    observed = max(ranks)
    expected = expected_dimension(n, m)
    return {
        "n": n,
        "m": m,
        "expected": expected,
        "observed": observed,
        "ranks": ranks,
        "generic_fraction": ranks.count(observed) / trials,
        "trials": trials,
        "tol": tol,
        "match": observed == expected,
    }


def tropical_jacobian(params: RbmParams, eps: float = 1e-12) -> np.ndarray:
    """Columns ``(1, x) kron (1, 1[W x + c > 0])``; refuses hyperplanes through states."""
    check_cap(params.n, None, "visible states")
    X = all_states(params.n).astype(float)
    S = X @ params.W.T + params.c
    hit = np.abs(S) <= eps
    if np.any(hit):
        x_idx, j = np.argwhere(hit)[0]
        raise DegenerateHyperplaneError(
            f"hidden unit {j} has W_j x + c_j = 0 at state index {x_idx}"
        )
    return _kron_columns(X, (S > 0).astype(float))


def mixture_jacobian(Wt, ct) -> np.ndarray:
    """Columns ``(1, x) kron softmax(Wt x + ct)`` for a mixture of k products.

    ``Wt`` is k x n and ``ct`` has length k.
    """
    Wt = np.atleast_2d(np.asarray(Wt, dtype=float))
    ct = np.asarray(ct, dtype=float).reshape(-1)
    n = Wt.shape[1]
    X = all_states(n).astype(float)
    S = softmax(X @ Wt.T + ct, axis=1)
    Xh = _hat(X)
    return (Xh[:, :, None] * S[:, None, :]).reshape(X.shape[0], -1).T


def mixture_jacobian_comparison(Wt, ct, tol: float = DEFAULT_RANK_TOL) -> dict:
    """Rank report for the soft-max (mixture of products) Jacobian."""
    J = mixture_jacobian(Wt, ct)
    rank = numerical_rank(J, tol)
    k, n = np.atleast_2d(Wt).shape
    return {
        "n": n,
        "components": k,
        "shape": list(J.shape),
        "rank": rank,
        "dimension": rank - 1,
        "naive_dimension": min(1 << n, k * (n + 1)) - 1,
    }
