"""Euler simulation of the Volterra volatility and rate processes.

Equity paths are generated under the T-forward measure,

    nu_t = g_0^T(t) + int_0^t G_nu(t,s) (kappa_nu nu_s ds + eta_nu dW_nu),
    d log I^T = -1/2 (nu^2 + eta_r^2 B_r^2 + 2 rho_I_r nu eta_r B_r) dt + nu dW_I + eta_r B_r dW_r,

with the Volterra sum carried explicitly over all past increments (O(steps^2)
per path).  Each past cell enters through its kernel average
int_{t_j}^{t_{j+1}} G(t_k,s) ds / dt, which stays finite for singular kernels.
Given nu at the left end of a step the log-forward increment is drawn exactly,
so E[I^T_T] = I^T_0 holds path-by-path in expectation.

Every path owns a Philox stream keyed by (seed, path index), so results do not
depend on how paths are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .charfn import ModelParams, correlation_matrix
from .kernels import KernelSpec, kernel_integral
from .rates import DiscountCurve, RateLegParams

__all__ = [
    "RatePathResult",
    "SimConfig",
    "SimResult",
    "correlation_factor",
    "simulate_equity",
    "simulate_rate_path",
]

_BATCH = 4096
_REFINE = 8


@dataclass(frozen=True)
class SimConfig:
    """Path count, time steps, RNG seed and antithetic switch."""

    paths: int = 10_000
    steps: int = 100
    seed: int = 0
    antithetic: bool = False

    def __post_init__(self) -> None:
        if int(self.paths) != self.paths or self.paths < 2:
            raise ValueError("paths must be an integer >= 2")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")


@dataclass(frozen=True)
class SimResult:
    """Discounted call estimates with 95% intervals and the martingale check."""

    strikes: np.ndarray
    prices: np.ndarray
    stderr: np.ndarray
    forward_mean: float
    forward_stderr: float
    paths: dict | None = None

    @property
    def ci_low(self) -> np.ndarray:
        return self.prices - 1.96 * self.stderr

    @property
    def ci_high(self) -> np.ndarray:
        return self.prices + 1.96 * self.stderr


@dataclass(frozen=True)
class RatePathResult:
    """Short-rate paths on ``times`` with autocorrelation estimates."""

    times: np.ndarray
    paths: np.ndarray
    lags: np.ndarray
    increment_autocorr: np.ndarray
    level_autocorr: np.ndarray


def correlation_factor(corr: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower factor L with L L^T = corr, also for singular PSD matrices."""
    corr = np.asarray(corr, dtype=float)
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -tol:
        raise ValueError(f"correlation matrix is not positive semi-definite (min eigenvalue {vals.min():.3e})")
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(corr + 1e-13 * np.eye(len(corr)))


def _normals(seed: int, first: int, count: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals for paths first .. first+count-1, one Philox stream per path."""
    out = np.empty((count,) + shape)
    for i in range(count):
        gen = np.random.Generator(np.random.Philox(key=[int(seed), first + i]))
        out[i] = gen.standard_normal(shape)
    return out


def _cell_weights(kernel: KernelSpec, times: np.ndarray) -> np.ndarray:
    """W[k, j] = int_{t_j}^{t_{j+1}} G(t_k, s) ds for j < k, else 0."""
    lo, hi = times[None, :-1], times[None, 1:]
    W = kernel_integral(kernel, times[:, None], lo, hi)
    return np.tril(np.atleast_2d(W), -1)


def _forward_drift(model: ModelParams, T: float, times: np.ndarray) -> np.ndarray:
    """g_0^T on the grid, the B_r convolution by a product midpoint rule on a refined grid."""
    eq = model.equity
    kernel = eq.kernel
    load = model.rates.loading(horizon=max(50.0, T))
    base = eq.nu0 + eq.theta_nu * np.asarray(kernel_integral(kernel, times, np.zeros_like(times), times))
    coef = eq.eta_nu * model.rates.eta_r * eq.rho_nu_r
    if coef == 0.0:
        return base
    fine = np.linspace(0.0, T, _REFINE * (len(times) - 1) + 1)
    mids = 0.5 * (fine[:-1] + fine[1:])
    cells = kernel_integral(kernel, times[:, None], fine[None, :-1], fine[None, 1:])
    return base - coef * (np.atleast_2d(cells) @ load.B(T - mids))


def simulate_equity(
    model: ModelParams,
    T: float,
    config: SimConfig,
    strikes,
    *,
    forward: float = 100.0,
    discount: float = 1.0,
    record_paths: int = 0,
    r0_curve=None,
) -> SimResult:
    """Monte Carlo calls on I^T_T with forward I^T_0 = ``forward``.

    ``record_paths`` keeps the first few (t, nu, log I) trajectories for export;
    with ``r0_curve`` (a DiscountCurve or callable) the short rate driven by the
    same rate noise is recorded too.
    """
    if not T > 0:
        raise ValueError("maturity must be positive")
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(strikes <= 0):
        raise ValueError("strikes must be positive")
    eq = model.equity
    n = int(config.steps)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    W = _cell_weights(eq.kernel, times) / dt
    g0 = _forward_drift(model, T, times)
    chol = correlation_factor(correlation_matrix(eq.rho_I_nu, eq.rho_I_r, eq.rho_nu_r))
    load = model.rates.loading(horizon=max(50.0, T))
    br = model.rates.eta_r * load.B(T - times[:-1])
    sq = math.sqrt(dt)

    pairs = config.paths // 2 if config.antithetic else config.paths
    terminal = np.empty(config.paths)
    kept = None
    for start in range(0, pairs, _BATCH):
        m = min(_BATCH, pairs - start)
        z = _normals(config.seed, start, m, (n, 3)) @ chol.T
        if config.antithetic:
            z = np.concatenate([z, -z])
        dw = sq * z
        nu = np.empty((z.shape[0], n + 1))
        drive = np.empty((z.shape[0], n))
        logi = np.zeros(z.shape[0])
        for k in range(n + 1):
            nu[:, k] = g0[k] + drive[:, :k] @ W[k, :k] if k else g0[0]
            if k == n:
                break
            v = nu[:, k]
            drive[:, k] = eq.kappa_nu * v * dt + eq.eta_nu * dw[:, k, 1]
            var = v * v + br[k] ** 2 + 2.0 * eq.rho_I_r * v * br[k]
            logi += -0.5 * var * dt + v * dw[:, k, 0] + br[k] * dw[:, k, 2]
        if config.antithetic:
            terminal[start:start + m] = logi[:m]
            terminal[pairs + start:pairs + start + m] = logi[m:]
        else:
            terminal[start:start + m] = logi
        if record_paths and kept is None:
            keep = min(record_paths, z.shape[0])
            kept = {"t": times, "nu": nu[:keep].copy(), "logI": np.log(forward) + _cumulative_log(nu[:keep], dw[:keep], br, eq.rho_I_r, dt)}
            if r0_curve is not None:
                kept["r"] = _forward_measure_rate(model.rates, r0_curve, T, times, dw[:keep, :, 2])
    fwd = forward * np.exp(terminal)
    payoff = np.maximum(fwd[:, None] - strikes[None, :], 0.0)
    if config.antithetic:
        payoff = 0.5 * (payoff[:pairs] + payoff[pairs:])
        fwd_s = 0.5 * (fwd[:pairs] + fwd[pairs:])
    else:
        fwd_s = fwd
    count = payoff.shape[0]
    prices = discount * payoff.mean(axis=0)
    stderr = discount * payoff.std(axis=0, ddof=1) / math.sqrt(count)
    return SimResult(strikes, prices, stderr, float(fwd_s.mean()), float(fwd_s.std(ddof=1) / math.sqrt(count)), kept)


def _forward_measure_rate(params: RateLegParams, r0_curve, T: float, times: np.ndarray, dw_r: np.ndarray) -> np.ndarray:
    """Short rate under the T-forward measure, where dW^Q = dW^T - eta_r B_r(t,T) dt."""
    r0 = r0_curve.r0_at if isinstance(r0_curve, DiscountCurve) else r0_curve
    base = np.broadcast_to(np.asarray(r0(times), dtype=float), times.shape)
    dt = times[1] - times[0]
    W = _cell_weights(params.kernel, times) / dt
    shift = params.eta_r**2 * params.loading(horizon=max(50.0, T)).B(T - times[:-1]) * dt
    r = np.empty((dw_r.shape[0], len(times)))
    drive = np.empty_like(dw_r)
    for k in range(len(times)):
        r[:, k] = base[k] + (drive[:, :k] @ W[k, :k] if k else 0.0)
        if k < dw_r.shape[1]:
            drive[:, k] = params.kappa_r * r[:, k] * dt - shift[k] + params.eta_r * dw_r[:, k]
    return r


def _cumulative_log(nu, dw, br, rho, dt) -> np.ndarray:
    v = nu[:, :-1]
    inc = -0.5 * (v * v + br**2 + 2.0 * rho * v * br) * dt + v * dw[:, :, 0] + br * dw[:, :, 2]
    return np.concatenate([np.zeros((len(nu), 1)), np.cumsum(inc, axis=1)], axis=1)


def _autocorr(x: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Sample autocorrelation of each row, averaged over rows."""
    x = x - x.mean(axis=1, keepdims=True)
    denom = np.sum(x * x, axis=1)
    denom = np.where(denom > 0, denom, np.nan)
    out = np.full(len(lags), np.nan)
    live = np.isfinite(denom)
    if not live.any():
        return out
    for i, lag in enumerate(lags):
        if lag < x.shape[1]:
            out[i] = np.mean(np.sum(x[live, lag:] * x[live, : x.shape[1] - lag], axis=1) / denom[live])
    return out


def simulate_rate_path(
    params: RateLegParams,
    r0_curve,
    T: float,
    config: SimConfig,
    lags=(1, 2, 5, 10, 20, 50, 100),
) -> RatePathResult:
    """Euler paths of r_t = r0(t) + int G_r(t,s) (kappa_r r_s ds + eta_r dW(s)) under Q.

    ``r0_curve`` is a :class:`DiscountCurve` (its stripped r0) or a callable of t.
    Autocorrelations are per-path sample estimates averaged over paths, for the
    increments of r and for r - r0.
    """
    if not T > 0:
        raise ValueError("horizon must be positive")
    r0 = r0_curve.r0_at if isinstance(r0_curve, DiscountCurve) else r0_curve
    n = int(config.steps)
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    base = np.broadcast_to(np.asarray(r0(times), dtype=float), times.shape)
    W = _cell_weights(params.kernel, times) / dt
    total = config.paths // 2 if config.antithetic else config.paths
    rows = []
    for start in range(0, total, _BATCH):
        m = min(_BATCH, total - start)
        z = _normals(config.seed, start, m, (n,))
        if config.antithetic:
            z = np.concatenate([z, -z])
        dw = math.sqrt(dt) * z
        r = np.empty((z.shape[0], n + 1))
        drive = np.empty((z.shape[0], n))
        for k in range(n + 1):
            r[:, k] = base[k] + (drive[:, :k] @ W[k, :k] if k else 0.0)
            if k < n:
                drive[:, k] = params.kappa_r * r[:, k] * dt + params.eta_r * dw[:, k]
        rows.append(r)
    paths = np.concatenate(rows) if len(rows) > 1 else rows[0]
    lags = np.asarray(lags, dtype=int)
    return RatePathResult(times, paths, lags, _autocorr(np.diff(paths, axis=1), lags), _autocorr(paths - base, lags))
