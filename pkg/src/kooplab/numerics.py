"""Shared numerical kernels: least squares, finite differences, one RK4 step.

Everything downstream (fitting, Jacobian checks, simulation) funnels through
these three routines, so their error behavior is deliberately strict: any
non-finite value is rejected at the boundary instead of propagating NaNs
into fitted operators.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "RankDeficiencyError",
    "solve_least_squares",
    "finite_difference_jacobian",
    "rk4_step",
]

# Central differences: optimal step scale for O(h^2) truncation vs roundoff.
_FD_STEP_SCALE = float(np.cbrt(np.finfo(float).eps))


class RankDeficiencyError(np.linalg.LinAlgError):
    """Raised when an unregularized least-squares design matrix is rank deficient."""

    def __init__(self, rank: int, columns: int, message: str | None = None):
        self.rank = int(rank)
        self.columns = int(columns)
        if message is None:
            message = (
                f"design matrix is numerically rank deficient: rank {rank} < "
                f"{columns} columns; add ridge regularization or enrich the data"
            )
        super().__init__(message)


def _as_float_array(a, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def solve_least_squares(A, B, ridge: float = 0.0) -> np.ndarray:
    """Minimize ||A X - B||_F^2 (+ ridge * ||X||_F^2) over X.

    Parameters
    ----------
    A : (m, n) array_like
        Design matrix.
    B : (m,) or (m, p) array_like
        Right-hand side; the returned X matches its dimensionality.
    ridge : float, optional
        Tikhonov weight. Zero (default) solves the plain problem and raises
        :class:`RankDeficiencyError` when A is numerically rank deficient;
        positive values solve the equivalent augmented full-rank problem
        [A; sqrt(ridge) I] X = [B; 0].

    Returns
    -------
    X : (n,) or (n, p) ndarray

    Notes
    -----
    The solve goes through an orthogonal decomposition (SVD), never the
    normal equations, so conditioning is that of A itself.
    """
    A = _as_float_array(A, "A", ndim=2)
    B_in = np.asarray(B, dtype=float)
    if B_in.ndim not in (1, 2):
        raise ValueError(f"B must be 1- or 2-dimensional, got shape {B_in.shape}")
    vector_rhs = B_in.ndim == 1
    B2 = _as_float_array(B_in if not vector_rhs else B_in[:, None], "B", ndim=2)
    if A.shape[0] != B2.shape[0]:
        raise ValueError(
            f"A and B row counts differ: A has {A.shape[0]} rows, B has {B2.shape[0]}"
        )
    if A.shape[0] == 0 or A.shape[1] == 0:
        raise ValueError("A must have at least one row and one column")
    if not np.isscalar(ridge) or ridge < 0:
        raise ValueError(f"ridge must be a nonnegative scalar, got {ridge!r}")

    n = A.shape[1]
    if ridge > 0.0:
        A_solve = np.vstack([A, np.sqrt(ridge) * np.eye(n)])
        B_solve = np.vstack([B2, np.zeros((n, B2.shape[1]))])
        X, _, _, _ = np.linalg.lstsq(A_solve, B_solve, rcond=None)
    else:
        X, _, rank, _ = np.linalg.lstsq(A, B2, rcond=None)
        if rank < n:
            raise RankDeficiencyError(rank, n)
    return X[:, 0] if vector_rhs else X


def finite_difference_jacobian(
    f: Callable[[np.ndarray], np.ndarray],
    x,
    h: float | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``.

    Parameters
    ----------
    f : callable
        Maps a 1-D point to a 1-D value; output length may differ from input.
    x : (n,) array_like
        Evaluation point.
    h : float, optional
        Step size. Default is cbrt(machine eps) scaled per coordinate by
        (1 + |x_j|), balancing O(h^2) truncation against roundoff.

    Returns
    -------
    J : (len(f(x)), n) ndarray
    """
    x = _as_float_array(x, "x", ndim=1)
    if h is not None and (not np.isscalar(h) or h <= 0):
        raise ValueError(f"h must be a positive scalar, got {h!r}")
    f0 = np.asarray(f(x), dtype=float)
    if f0.ndim != 1:
        raise ValueError(f"f must return a 1-D array, got shape {f0.shape}")
    if f0.size and not np.all(np.isfinite(f0)):
        raise ValueError(f"f returned non-finite values at x = {x.tolist()}")
    J = np.empty((f0.shape[0], x.shape[0]))
    for j in range(x.shape[0]):
        hj = h if h is not None else _FD_STEP_SCALE * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += hj
        xm[j] -= hj
        fp = np.asarray(f(xp), dtype=float)
        fm = np.asarray(f(xm), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(
                f"f returned non-finite values near x = {x.tolist()} "
                f"(coordinate {j}, step {hj})"
            )
        J[:, j] = (fp - fm) / (2.0 * hj)
    return J


def rk4_step(
    field: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
    x,
    u,
    t: float,
    dt: float,
) -> np.ndarray:
    """One classical Runge-Kutta (fourth order) step with the input held constant.

    Parameters
    ----------
    field : callable
        Map (state, input, time) -> state derivative.
    x : (n,) array_like
        State at time ``t``.
    u : (m,) array_like
        Input, zero-order held over the step.
    t : float
        Step start time.
    dt : float
        Step length, must be nonzero (negative steps integrate backwards).

    Returns
    -------
    (n,) ndarray
        State at time ``t + dt``.
    """
    x = _as_float_array(x, "x", ndim=1)
    u = _as_float_array(u, "u", ndim=1)
    if not np.isscalar(dt) or dt == 0 or not np.isfinite(dt):
        raise ValueError(f"dt must be a nonzero finite scalar, got {dt!r}")

    def _eval(xs, ts):
        k = np.asarray(field(xs, u, ts), dtype=float)
        if k.shape != x.shape:
            raise ValueError(
                f"field returned shape {k.shape}, expected {x.shape}"
            )
        if not np.all(np.isfinite(k)):
            raise ValueError(f"field returned non-finite derivative at t = {ts}")
        return k

    k1 = _eval(x, t)
    k2 = _eval(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = _eval(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = _eval(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
