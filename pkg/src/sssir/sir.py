"""Deterministic SIR dynamics on the unit simplex.

State points are length-3 arrays (s, i, r) of susceptible, infectious and
removed proportions. Rates are the infection rate beta and removal rate gamma
(per day). The module provides the one-day ODE solution used as the mean of
the latent state transition, full-trajectory simulation, the closed-form
peak-intensity functional and its inversion, and peak-timing extraction.

All functions are pure; there is no shared state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EpidemicPeak",
    "sir_rhs",
    "rk4_unit_step",
    "simulate_trajectory",
    "peak_intensity",
    "invert_rho",
    "peak_timing",
    "peak_timing_batch",
    "validate_compartments",
]

RHO_TOL = 1e-12  # absolute tolerance of the bisection in invert_rho


@dataclass(frozen=True)
class EpidemicPeak:
    """Peak of the infectious proportion along a simulated trajectory.

    ``time`` is in days on the model axis (day 1 = 2020-03-01 for the Japan
    analysis). ``censored`` marks a maximum still at the simulation horizon;
    ``degenerate`` marks the sub-threshold regime rho >= s(0) where the
    infectious proportion only decays and the peak sits at t = 0.
    """

    time: float
    intensity: float
    censored: bool = False
    degenerate: bool = False


def validate_compartments(theta, atol: float = 1e-12) -> None:
    """Raise if theta is not a nonnegative point on the 2-simplex."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 3:
        raise ValueError("compartment vector must have three components")
    if np.any(theta < 0) or np.any(~np.isfinite(theta)):
        raise ValueError("compartments must be finite and nonnegative")
    if np.any(np.abs(theta.sum(axis=-1) - 1.0) > atol):
        raise ValueError("compartments must sum to 1")


def sir_rhs(theta, beta, gamma):
    """Time derivative of (s, i, r); broadcasts over leading dimensions."""
    theta = np.asarray(theta, dtype=float)
    s = theta[..., 0]
    i = theta[..., 1]
    flow = beta * s * i
    removal = gamma * i
    return np.stack([-flow, flow - removal, removal], axis=-1)


def _rk4_batch(theta, beta, gamma, nsteps, h=None):
    """nsteps RK4 steps of size h on (..., 3) states; renormalized, no validation.

    With the default h = 1/nsteps this advances exactly one day.
    """
    if h is None:
        h = 1.0 / nsteps
    x = np.asarray(theta, dtype=float)
    for _ in range(nsteps):
        k1 = sir_rhs(x, beta, gamma)
        k2 = sir_rhs(x + (0.5 * h) * k1, beta, gamma)
        k3 = sir_rhs(x + (0.5 * h) * k2, beta, gamma)
        k4 = sir_rhs(x + h * k3, beta, gamma)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x / x.sum(axis=-1, keepdims=True)


def _rk4_scalar(s, i, r, beta, gamma, nsteps, h=None):
    """Scalar fast path: nsteps RK4 steps of size h (default h = 1/nsteps, one day).

    The r stages reduce to gamma*i, so only s and i feed back into the stage
    evaluations. Kept free of numpy so the MCMC sweep can call it cheaply.
    Renormalizes once at the end.
    """
    if h is None:
        h = 1.0 / nsteps
    for _ in range(nsteps):
        b1 = beta * s * i
        g1 = gamma * i
        s1 = s - 0.5 * h * b1
        i1 = i + 0.5 * h * (b1 - g1)
        b2 = beta * s1 * i1
        g2 = gamma * i1
        s2 = s - 0.5 * h * b2
        i2 = i + 0.5 * h * (b2 - g2)
        b3 = beta * s2 * i2
        g3 = gamma * i2
        s3 = s - h * b3
        i3 = i + h * (b3 - g3)
        b4 = beta * s3 * i3
        g4 = gamma * i3
        s += -(h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        i += (h / 6.0) * ((b1 - g1) + 2.0 * (b2 - g2) + 2.0 * (b3 - g3) + (b4 - g4))
        r += (h / 6.0) * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
    total = s + i + r
    return s / total, i / total, r / total


def rk4_unit_step(theta, beta, gamma, substeps: int = 10):
    """Advance the SIR state by exactly one day with classical RK4.

    Uses ``substeps`` equal sub-intervals and renormalizes the result onto the
    simplex to absorb floating-point drift. Broadcasts over leading dimensions
    of theta, and over array-valued rates.

    Raises ``ArithmeticError`` if the integration produces non-finite values
    (the caller should reject the offending parameter draw).
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    out = _rk4_batch(theta, beta, gamma, substeps)
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("non-finite values in SIR integration")
    return out


def simulate_trajectory(theta0, beta, gamma, days: int, substeps: int = 10):
    """Simulate theta(1..days) from theta0 by repeated one-day RK4 steps.

    Returns an array of shape (days, 3); days = 0 gives an empty array.
    """
    if days < 0:
        raise ValueError("days must be nonnegative")
    theta0 = np.asarray(theta0, dtype=float)
    out = np.empty((days, 3))
    s, i, r = float(theta0[0]), float(theta0[1]), float(theta0[2])
    for d in range(days):
        s, i, r = _rk4_scalar(s, i, r, beta, gamma, substeps)
        out[d, 0], out[d, 1], out[d, 2] = s, i, r
    if days and not np.all(np.isfinite(out)):
        raise ArithmeticError("non-finite values in SIR integration")
    return out


def peak_intensity(s0, i0, rho):
    """Closed-form maximum of the infectious proportion.

    For a trajectory started at (s0, i0, 1 - s0 - i0) with rho = gamma/beta,
    the first integral of the SIR system gives the peak

        i0 + s0 - rho * (log(s0) + 1 - log(rho)),

    attained when the susceptible proportion falls to rho. Requires
    0 < rho <= s0 (otherwise the infectious proportion never rises).
    """
    s0 = np.asarray(s0, dtype=float)
    i0 = np.asarray(i0, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or np.any(rho > s0):
        raise ValueError("peak_intensity requires 0 < rho <= s0 (epidemic regime)")
    out = i0 + s0 - rho * (np.log(s0) + 1.0 - np.log(rho))
    return float(out) if out.ndim == 0 else out


def _invert_rho_scalar(pi, s0, i0):
    if not (i0 < pi < i0 + s0):
        raise ValueError(f"peak intensity {pi!r} outside the invertible range ({i0!r}, {i0 + s0!r})")
    log_s0 = math.log(s0)
    lo, hi = RHO_TOL, s0
    # g is strictly decreasing in rho on (0, s0], so plain bisection suffices
    while hi - lo > RHO_TOL:
        mid = 0.5 * (lo + hi)
        g = i0 + s0 - mid * (log_s0 + 1.0 - math.log(mid))
        if g > pi:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _invert_rho_array(pi, s0, i0):
    pi = np.asarray(pi, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    i0 = np.asarray(i0, dtype=float)
    if np.any(pi <= i0) or np.any(pi >= i0 + s0):
        raise ValueError("peak intensity outside the invertible range (i0, i0 + s0)")
    shape = np.broadcast_shapes(pi.shape, s0.shape, i0.shape)
    lo = np.full(shape, RHO_TOL)
    hi = np.broadcast_to(s0, shape).astype(float).copy()
    log_s0 = np.log(s0)
    # fixed iteration count: 0.95 * 2**-45 < 1e-12
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        g = i0 + s0 - mid * (log_s0 + 1.0 - np.log(mid))
        above = g > pi
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def invert_rho(pi, s0, i0):
    """Unique rho in (0, s0] whose analytic peak intensity equals pi.

    Solved by bisection to absolute tolerance 1e-12; requires
    i0 < pi < i0 + s0. Accepts scalars or broadcastable arrays.
    """
    if np.ndim(pi) == 0 and np.ndim(s0) == 0 and np.ndim(i0) == 0:
        return _invert_rho_scalar(float(pi), float(s0), float(i0))
    return _invert_rho_array(pi, s0, i0)


def _parabolic_vertex(t_mid, h, y_lo, y_mid, y_hi):
    """Vertex of the parabola through three equally spaced points around a maximum."""
    denom = y_lo - 2.0 * y_mid + y_hi
    if denom >= 0 or not math.isfinite(denom):
        return t_mid, y_mid
    delta = 0.5 * h * (y_lo - y_hi) / denom
    delta = max(-h, min(h, delta))
    value = y_mid - 0.125 * (y_lo - y_hi) ** 2 / denom
    return t_mid + delta, value


def peak_timing(theta0, beta, gamma, horizon: int, substeps: int = 10, refine: bool = True) -> EpidemicPeak:
    """Locate the maximum of the infectious proportion within ``horizon`` days.

    Scans the RK4 trajectory at sub-day resolution (1/substeps). With
    ``refine`` a parabola through the three samples around the discrete
    argmax sharpens the estimate well below the substep quantization, which
    the infection-rate regression needs at short peak times. A maximum still
    increasing at the horizon is returned with ``censored=True``; the
    sub-threshold regime gamma/beta >= s(0) returns time 0 with
    ``degenerate=True``.
    """
    theta0 = np.asarray(theta0, dtype=float)
    s, i, r = float(theta0[0]), float(theta0[1]), float(theta0[2])
    if gamma / beta >= s:
        return EpidemicPeak(0.0, i, degenerate=True)
    h = 1.0 / substeps
    i_prev2 = math.nan
    i_prev = i
    t = 0.0
    for step in range(1, horizon * substeps + 1):
        s, i, r = _rk4_scalar(s, i, r, beta, gamma, 1, h)
        t = step * h
        if i < i_prev:
            t_peak, v_peak = t - h, i_prev
            if refine and math.isfinite(i_prev2):
                t_peak, v_peak = _parabolic_vertex(t - h, h, i_prev2, i_prev, i)
            return EpidemicPeak(t_peak, v_peak)
        i_prev2 = i_prev
        i_prev = i
    return EpidemicPeak(float(horizon), i_prev, censored=True)


def peak_timing_batch(theta0, beta, gamma, horizon: int, substeps: int = 10):
    """Vectorized peak_timing over rows of theta0 and per-row rates.

    Returns (time, intensity, censored, degenerate) arrays. Rows are retired
    from the integration loop as soon as their infectious component first
    decreases, so mixed fast/slow batches stay cheap.
    """
    theta0 = np.asarray(theta0, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n = theta0.shape[0]
    time = np.zeros(n)
    intensity = theta0[:, 1].copy()
    censored = np.zeros(n, dtype=bool)
    degenerate = gamma / beta >= theta0[:, 0]

    active = np.flatnonzero(~degenerate)
    if active.size == 0:
        return time, intensity, censored, degenerate

    h = 1.0 / substeps
    x = theta0[active].copy()
    b = np.broadcast_to(beta, (n,))[active].astype(float)
    g = np.broadcast_to(gamma, (n,))[active].astype(float)
    i_prev2 = np.full(active.size, np.nan)
    i_prev = x[:, 1].copy()

    for step in range(1, horizon * substeps + 1):
        x = _rk4_batch(x, b, g, 1, h)
        i_cur = x[:, 1]
        done = i_cur < i_prev
        if np.any(done):
            idx = np.flatnonzero(done)
            rows = active[idx]
            t_mid = (step - 1) * h
            y_lo, y_mid, y_hi = i_prev2[idx], i_prev[idx], i_cur[idx]
            denom = y_lo - 2.0 * y_mid + y_hi
            with np.errstate(divide="ignore", invalid="ignore"):
                delta = 0.5 * h * (y_lo - y_hi) / denom
                value = y_mid - 0.125 * (y_lo - y_hi) ** 2 / denom
            ok = np.isfinite(delta) & (denom < 0)
            delta = np.where(ok, np.clip(delta, -h, h), 0.0)
            value = np.where(ok, value, y_mid)
            time[rows] = t_mid + delta
            intensity[rows] = value
            keep = ~done
            active = active[keep]
            if active.size == 0:
                return time, intensity, censored, degenerate
            x = x[keep]
            b = b[keep]
            g = g[keep]
            i_prev2 = i_prev[keep]
            i_prev = i_cur[keep]
        else:
            i_prev2 = i_prev
            i_prev = i_cur

    time[active] = float(horizon)
    intensity[active] = i_prev
    censored[active] = True
    return time, intensity, censored, degenerate
