"""Asymmetric least-squares loss, residuals, objective and gradients.

The loss on a residual t is ``w(t) * t**2`` with ``w(t) = omega`` for
``t >= 0`` and ``1 - omega`` otherwise (ties at zero count as nonnegative).
It is convex and continuously differentiable; omega = 0.5 recovers plain
least squares up to the constant factor 1/2.
"""

from __future__ import annotations

import numpy as np

from .core import EntryObservations, FactorPair, ObservationSet


def _check_omega(omega: float):
    if not 0.0 < omega < 1.0:
        raise ValueError(f"omega must be in (0, 1), got {omega}")


def asymmetric_weight(t: float, omega: float) -> float:
    """Weight applied to the squared residual t: omega if t >= 0 else 1 - omega."""
    _check_omega(omega)
    return omega if t >= 0.0 else 1.0 - omega


def asymmetric_weights(t: np.ndarray, omega: float) -> np.ndarray:
    """Vectorized :func:`asymmetric_weight`."""
    _check_omega(omega)
    return np.where(np.asarray(t) >= 0.0, omega, 1.0 - omega)


def expectile_loss(t: float, omega: float) -> float:
    """Loss value w(t) * t**2."""
    return asymmetric_weight(t, omega) * t * t


def _check_dims(obs: ObservationSet, f: FactorPair):
    if obs.shape != f.shape:
        raise ValueError(
            f"observation shape {obs.shape} does not match factor shape {f.shape}"
        )


def product_at_entries(f: FactorPair, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Entries of f.x @ f.y.T gathered at (rows, cols), no m-by-n product formed."""
    return np.einsum("pk,pk->p", f.x[rows], f.y[cols])


def residuals(obs: ObservationSet, f: FactorPair) -> np.ndarray:
    """Residual vector r_i = b_i - <A_i, x y^T>."""
    _check_dims(obs, f)
    if isinstance(obs, EntryObservations):
        return obs.values - product_at_entries(f, obs.row_idx, obs.col_idx)
    # <A, X Y^T> = <A @ Y, X>; never materializes the m-by-n product
    out = np.empty(obs.size)
    for i, a in enumerate(obs.measurements):
        out[i] = obs.values[i] - float(np.vdot(np.asarray(a @ f.y), f.x))
    return out


def objective(obs: ObservationSet, f: FactorPair, omega: float, ridge: float = 0.0) -> float:
    """Sum of asymmetric losses over residuals plus ridge * (|x|_F^2 + |y|_F^2)."""
    _check_omega(omega)
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    r = residuals(obs, f)
    w = asymmetric_weights(r, omega)
    val = float(np.dot(w * r, r))
    if ridge:
        val += ridge * (float(np.dot(f.x.ravel(), f.x.ravel()))
                        + float(np.dot(f.y.ravel(), f.y.ravel())))
    return val


def gradient_y(obs: ObservationSet, f: FactorPair, omega: float, ridge: float = 0.0) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the y factor (n-by-k).

    Equals -2 * sum_i w_i r_i A_i^T x plus 2 * ridge * y; well defined
    everywhere since the loss is C^1.
    """
    _check_dims(obs, f)
    r = residuals(obs, f)
    w = asymmetric_weights(r, omega)
    coeff = -2.0 * w * r
    if isinstance(obs, EntryObservations):
        g = obs.by_col @ (coeff[:, None] * f.x[obs.row_idx])
    else:
        g = np.zeros_like(f.y)
        for c, a in zip(coeff, obs.measurements):
            g += c * np.asarray(a.T @ f.x)
    if ridge:
        g = g + 2.0 * ridge * f.y
    return g


def gradient_x(obs: ObservationSet, f: FactorPair, omega: float, ridge: float = 0.0) -> np.ndarray:
    """Gradient with respect to the x factor (m-by-k); mirror of :func:`gradient_y`."""
    return gradient_y(obs.transposed, FactorPair(f.y, f.x), omega, ridge)


def scalar_expectile(values, omega: float) -> float:
    """The omega-expectile of a sample: argmin_m sum_i w(v_i - m) (v_i - m)^2.

    Solved exactly by sign-set iteration: fix weights from the signs of
    v - m, take the weighted mean, repeat until the sign pattern is stable.
    Each stable pattern's weighted mean satisfying its own signs is the
    unique minimizer of the strictly convex piecewise-quadratic objective.
    """
    _check_omega(omega)
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("scalar_expectile needs a non-empty sample")
    if not np.isfinite(v).all():
        raise ValueError("sample contains non-finite values")
    m = float(v.mean())
    above = v >= m
    for _ in range(v.size + 2):
        w = np.where(above, omega, 1.0 - omega)
        m = float(np.dot(w, v) / w.sum())
        new_above = v >= m
        if np.array_equal(new_above, above):
            return m
        above = new_above
    # Degenerate tie structure: scan all p+1 split patterns and keep the
    # self-consistent one (exists and is unique by strict convexity).
    s = np.sort(v)
    low = np.concatenate([[0.0], np.cumsum(s)])       # sums of the i smallest
    high = low[-1] - low
    counts = np.arange(v.size + 1)
    denom = (1.0 - omega) * counts + omega * (v.size - counts)
    cand = ((1.0 - omega) * low + omega * high) / denom
    below = np.searchsorted(s, cand, side="left")      # #{v_i < cand}
    ok = np.nonzero(below == counts)[0]
    return float(cand[ok[0]])
