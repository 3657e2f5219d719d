"""Principal component pursuit: split a matrix into low-rank plus sparse parts.

Solves ``min ||L||_* + lam * ||S||_1  s.t.  L + S = X`` with the inexact
augmented Lagrangian method::

    L <- SVT(X - S + Y/mu, 1/mu)
    S <- shrink(X - L + Y/mu, lam/mu)
    Y <- Y + mu (X - L - S)
    mu <- min(mu * mu_growth, mu_max)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidInputError, SVDFailureError


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the ALM solver.

    ``lam=None`` means ``lam_scale / sqrt(max(m, n))``.  The scale defaults to
    1.75 rather than 1: delay matrices with a few endpoints per (AS, city)
    cluster are coherent, and at scale 1 whole small-cluster rows migrate
    into S.  ``mu_initial=None`` means ``1.25 / ||X||_2``.
    """

    lam: Optional[float] = None
    lam_scale: float = 1.75
    tolerance: float = 1e-7
    max_iterations: int = 1000
    mu_initial: Optional[float] = None
    mu_growth: float = 1.5
    mu_max_factor: float = 1e7
    rank_tolerance: float = 1e-6

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise InvalidInputError(f"lam must be positive, got {self.lam}")
        if not self.lam_scale > 0:
            raise InvalidInputError(f"lam_scale must be positive, got {self.lam_scale}")
        if not self.tolerance > 0:
            raise InvalidInputError(f"tolerance must be positive, got {self.tolerance}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InvalidInputError(f"max_iterations must be an integer >= 1, got {self.max_iterations}")
        if self.mu_initial is not None and not self.mu_initial > 0:
            raise InvalidInputError(f"mu_initial must be positive, got {self.mu_initial}")
        if not self.mu_growth > 1:
            raise InvalidInputError(f"mu_growth must exceed 1, got {self.mu_growth}")
        if not self.mu_max_factor >= 1:
            raise InvalidInputError(f"mu_max_factor must be >= 1, got {self.mu_max_factor}")
        if not self.rank_tolerance > 0:
            raise InvalidInputError(f"rank_tolerance must be positive, got {self.rank_tolerance}")

    def to_dict(self):
        return {
            "lambda": self.lam,
            "lambda_scale": self.lam_scale,
            "tolerance": self.tolerance,
            "max_iterations": self.max_iterations,
            "mu_initial": self.mu_initial,
            "mu_growth": self.mu_growth,
            "mu_max_factor": self.mu_max_factor,
            "rank_tolerance": self.rank_tolerance,
        }


@dataclass(frozen=True)
class Decomposition:
    L: np.ndarray
    S: np.ndarray
    rank_L: int
    iterations: int
    residual: float
    lambda_used: float
    converged: bool
    residual_history: tuple = field(default=(), repr=False)

    @property
    def shape(self):
        return self.L.shape


def _check_matrix(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def soft_threshold(M, tau):
    """Entrywise ``sign(x) * max(|x| - tau, 0)``."""
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    M = _check_matrix(M)
    return _kernels.shrink(np.ascontiguousarray(M), float(tau))


def _svd(M):
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SVDFailureError(f"SVD did not converge: {exc}") from exc


def _svt(M, tau):
    U, s, Vt = _svd(M)
    keep = int(np.count_nonzero(s > tau))
    if keep == 0:
        return np.zeros_like(M), 0
    return (U[:, :keep] * (s[:keep] - tau)) @ Vt[:keep], keep


def singular_value_threshold(M, tau):
    """Proximal step of the nuclear norm.

    Returns ``(U diag(max(s - tau, 0)) V^T, count of s > tau)``.
    """
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    M = _check_matrix(M)
    return _svt(M, float(tau))


def numerical_rank(M, rank_tolerance=1e-6):
    """Number of singular values above ``rank_tolerance * sigma_max``."""
    M = _check_matrix(M)
    if M.size == 0:
        return 0
    try:
        s = np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SVDFailureError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rank_tolerance * s[0]))


def _input_values(X):
    # LatencyMatrix inputs are latency data and must be non-negative where
    # observed; raw arrays are accepted as generic real matrices.
    values = getattr(X, "values", None)
    if values is not None and hasattr(X, "state"):
        arr = _check_matrix(values, "latency matrix")
        filled = X.filled_mask
        if np.any(arr[filled] < 0):
            raise InvalidInputError("latency matrix has negative observed entries")
        return arr
    return _check_matrix(X, "X")


def decompose(X, opts=None):
    """Split ``X`` into low-rank ``L`` and sparse ``S``.

    ``X`` is a 2-D array or a ``LatencyMatrix``; for the latter, cells still
    marked missing enter the solver as their 0.0 sentinel.  Non-convergence is
    reported through ``Decomposition.converged`` rather than raised.
    """
    opts = opts or SolverOptions()
    X = _input_values(X)
    m, n = X.shape
    if m == 0 or n == 0:
        raise InvalidInputError(f"cannot decompose an empty {m}x{n} matrix")

    lam = opts.lam if opts.lam is not None else opts.lam_scale / np.sqrt(max(m, n))
    norm_x = np.linalg.norm(X)
    if norm_x == 0.0:
        zero = np.zeros_like(X)
        return Decomposition(zero, zero.copy(), 0, 0, 0.0, lam, True, ())

    if opts.mu_initial is not None:
        mu = opts.mu_initial
    else:
        mu = 1.25 / np.linalg.norm(X, 2)
    mu_max = mu * opts.mu_max_factor
    S = np.zeros_like(X)
    Y = np.zeros_like(X)
    L = np.zeros_like(X)
    history = []
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        L, _ = _svt(X - S + Y / mu, 1.0 / mu)
        S = _kernels.shrink(X - L + Y / mu, lam / mu)
        Z = X - L - S
        res = float(np.linalg.norm(Z) / norm_x)
        history.append(res)
        if res <= opts.tolerance:
            converged = True
            break
        Y += mu * Z
        mu = min(mu * opts.mu_growth, mu_max)

    rank = numerical_rank(L, opts.rank_tolerance)
    return Decomposition(L, S, rank, it, history[-1], float(lam), converged, tuple(history))
