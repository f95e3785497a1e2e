"""Volterra Hull-White rate analytics at time zero.

Short rate

    r_t = r0(t) + int_0^t G_r(t,s) kappa_r r_s ds + int_0^t G_r(t,s) eta_r dW_s

with a deterministic input curve r0.  Zero-coupon bonds are

    P(0,T) = exp(-int_0^T r0(s) (1 + kappa_r B(s,T)) ds - eta_r^2/2 int_0^T B(u,T)^2 du),

where B is the bond loading of :mod:`volterra_hybrid.kernels`.  The input
curve r0 is piecewise constant on the pillar grid and bootstrapped so that
every pillar reprices exactly.

Bond options are lognormal in the bond ratio P(t,S)/P(t,T) under the
T-forward measure with total variance

    v^2 T = eta_r^2 int_0^T (B(s,T) - B(s,S))^2 ds,

and caps/floors are portfolios of such options.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .kernels import BondLoading, KernelSpec, bond_loading
from .specialfn import gauss_legendre

__all__ = [
    "CapSpec",
    "DiscountCurve",
    "RateLegParams",
    "StripError",
    "atm_cap_strike",
    "atm_cap_vol_curve",
    "black_cap_price",
    "bond_price",
    "cap_implied_vol",
    "cap_price",
    "caplet_std_devs",
    "quarterly_schedule",
    "strip_r0",
    "zc_option_price",
]

_STRIP_NODES = 32
_OPTION_NODES = 64


class StripError(ArithmeticError):
    """The bootstrap denominator vanished or changed sign."""


@dataclass(frozen=True)
class RateLegParams:
    """Rate leg: multiplier kappa_r, volatility eta_r and kernel G_r."""

    kappa_r: float
    eta_r: float
    kernel: KernelSpec = field(default_factory=KernelSpec.constant)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.kappa_r) and math.isfinite(self.eta_r)):
            raise ValueError("rate parameters must be finite")
        if self.eta_r < 0:
            raise ValueError("eta_r must be nonnegative")

    def loading(self, horizon: float = 50.0) -> BondLoading:
        return bond_loading(self.kernel, self.kappa_r, horizon)


@dataclass(frozen=True)
class DiscountCurve:
    """Market pillars with the stripped piecewise-constant r0.

    ``r0[i]`` applies on [pillars[i-1], pillars[i]) with pillars[-1] := 0.
    """

    pillars: np.ndarray
    discounts: np.ndarray
    r0: np.ndarray
    params: RateLegParams

    @property
    def last(self) -> float:
        return float(self.pillars[-1])

    def r0_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.pillars, t, side="right"), 0, len(self.pillars) - 1)
        return self.r0[idx]


def _validate_pillars(pillars, discounts) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pillars, dtype=float)
    d = np.asarray(discounts, dtype=float)
    if p.ndim != 1 or p.shape != d.shape or p.size == 0:
        raise ValueError("pillars and discounts must be 1-D arrays of equal positive length")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
        raise ValueError("pillars and discounts must be finite")
    if p[0] <= 0 or np.any(np.diff(p) <= 0):
        raise ValueError("pillars must be strictly increasing and positive")
    if np.any(d <= 0):
        raise ValueError("discount factors must be positive")
    return p, d


def _panel_edges(pillars: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], pillars])


def _convexity(load: BondLoading, edges: np.ndarray, T: np.ndarray) -> np.ndarray:
    """J(T) = int_0^T B(tau)^2 dtau with Gauss-Legendre panels split at the pillar grid.

    J is a fixed function of T: both the bootstrap and the pricer call it, so the
    round trip through the pillars is exact up to rounding.
    """
    x, w = gauss_legendre(_STRIP_NODES, 0.0, 1.0)
    lo, hi = edges[:-1], edges[1:]
    nodes = lo[:, None] + (hi - lo)[:, None] * x[None, :]
    full = ((load.B(nodes) ** 2) @ w) * (hi - lo)
    cum = np.concatenate([[0.0], np.cumsum(full)])
    m = np.searchsorted(edges, T, side="left")  # edges[m-1] < T <= edges[m]
    m = np.clip(m, 1, len(edges) - 1)
    start = edges[m - 1]
    width = T - start
    part_nodes = start[:, None] + width[:, None] * x[None, :]
    partial = ((load.B(part_nodes) ** 2) @ w) * width
    out = cum[m - 1] + partial
    return np.where(T > 0, out, 0.0)


def _segment_weights(load: BondLoading, kappa: float, edges: np.ndarray, T: np.ndarray) -> np.ndarray:
    """S[q, k] = int over segment k, clipped to [0, T_q], of (1 + kappa B(T_q - s)) ds."""
    lo = edges[:-1][None, :]
    hi = np.minimum(edges[1:][None, :], T[:, None])
    active = hi > lo
    hi = np.where(active, hi, lo)
    gap_lo = np.maximum(T[:, None] - hi, 0.0)
    gap_hi = np.maximum(T[:, None] - lo, 0.0)
    lin = (hi - lo) + kappa * (load.integral(gap_hi) - load.integral(gap_lo))
    return np.where(active, lin, 0.0)


def strip_r0(pillars, discounts, params: RateLegParams) -> DiscountCurve:
    """Bootstrap a piecewise-constant r0 that reprices every pillar exactly.

    Pillar i solves

        -ln P_i - eta^2/2 J(T_i) = sum_{k <= i} r0_k int_{T_{k-1}}^{T_k} (1 + kappa B(s, T_i)) ds

    for r0_i given the earlier segments.
    """
    p, d = _validate_pillars(pillars, discounts)
    edges = _panel_edges(p)
    load = params.loading(horizon=max(50.0, float(p[-1])))
    S = _segment_weights(load, params.kappa_r, edges, p)
    conv = 0.5 * params.eta_r**2 * _convexity(load, edges, p)
    target = -np.log(d) - conv
    r0 = np.empty_like(p)
    for i in range(len(p)):
        denom = S[i, i]
        if not denom > 0:
            raise StripError(f"degenerate bootstrap denominator {denom:.3e} on segment ending at {p[i]}")
        r0[i] = (target[i] - np.dot(S[i, :i], r0[:i])) / denom
    return DiscountCurve(p, d, r0, params)


def bond_price(curve: DiscountCurve, params: RateLegParams | None, T):
    """P(0, T) from the stripped r0; ``params`` defaults to the stripping parameters."""
    params = curve.params if params is None else params
    T_arr = np.atleast_1d(np.asarray(T, dtype=float))
    if np.any(T_arr < 0):
        raise ValueError("bond maturity must be nonnegative")
    if np.any(T_arr > curve.last * (1 + 1e-14)):
        raise ValueError(f"maturity {np.max(T_arr)} beyond the last pillar {curve.last}: no extrapolation")
    edges = _panel_edges(curve.pillars)
    load = params.loading(horizon=max(50.0, curve.last))
    S = _segment_weights(load, params.kappa_r, edges, T_arr)
    expo = S @ curve.r0 + 0.5 * params.eta_r**2 * _convexity(load, edges, T_arr)
    out = np.exp(-expo)
    return out if np.ndim(T) else float(out[0])


def _variance(params: RateLegParams, T, S):
    """Total log-variance v^2 T of P(T,S)/P(T,T) over [0, T] (vectorized)."""
    T = np.asarray(T, dtype=float)
    S = np.asarray(S, dtype=float)
    load = params.loading(horizon=max(50.0, float(np.max(S))))
    # tau = T - s = T w^2 smooths the tau^alpha behaviour of B near s = T
    w, wt = gauss_legendre(_OPTION_NODES, 0.0, 1.0)
    tau = T[..., None] * w**2
    jac = 2.0 * T[..., None] * w
    diff = load.B(tau) - load.B(tau + (S - T)[..., None])
    return params.eta_r**2 * np.sum(wt * jac * diff * diff, axis=-1)


def caplet_std_devs(params: RateLegParams, expiries, maturities) -> np.ndarray:
    """v sqrt(T) for bond options expiring at ``expiries`` on bonds maturing at ``maturities``."""
    return np.sqrt(np.maximum(_variance(params, expiries, maturities), 0.0))


def _zc_formula(p_t, p_s, strike, std, side: str):
    strike = np.asarray(strike, dtype=float)
    std = np.asarray(std, dtype=float)
    degenerate = std < 1e-12
    s = np.where(degenerate, 1.0, std)
    with np.errstate(divide="ignore"):
        d2 = np.log(strike * p_t / p_s) / s + 0.5 * s
    d1 = d2 - s
    if side == "call":
        val = p_s * norm.cdf(-d1) - strike * p_t * norm.cdf(-d2)
        intrinsic = np.maximum(p_s - strike * p_t, 0.0)
    else:
        val = strike * p_t * norm.cdf(d2) - p_s * norm.cdf(d1)
        intrinsic = np.maximum(strike * p_t - p_s, 0.0)
    return np.where(degenerate, intrinsic, val)


def _side(side: str) -> str:
    s = side.lower()
    if s not in ("call", "put"):
        raise ValueError("side must be 'call' or 'put'")
    return s


def zc_option_price(curve: DiscountCurve, params: RateLegParams | None, T: float, S: float, K, side: str = "call"):
    """Price at 0 of an option expiring at T on the zero-coupon bond maturing at S."""
    params = curve.params if params is None else params
    if not 0 < T < S:
        raise ValueError("zero-coupon option needs 0 < T < S")
    if S > curve.last * (1 + 1e-14):
        raise ValueError("bond maturity beyond the last pillar")
    p_t, p_s = bond_price(curve, params, np.array([T, S]))
    std = caplet_std_devs(params, np.array(T), np.array(S))
    out = _zc_formula(p_t, p_s, K, std, _side(side))
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# Caps and floors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapSpec:
    """Caplet schedule T_0 < T_1 < ... < T_beta with a flat strike."""

    payment_dates: tuple[float, ...]
    strike: float
    side: str = "cap"

    def __post_init__(self) -> None:
        dates = np.asarray(self.payment_dates, dtype=float)
        if dates.size < 2:
            raise ValueError("a cap needs at least one caplet (two dates)")
        if np.any(np.diff(dates) <= 0):
            raise ValueError("cap dates must be strictly increasing")
        if dates[0] <= 0:
            raise ValueError("the first fixing date must be positive")
        if self.side not in ("cap", "floor"):
            raise ValueError("side must be 'cap' or 'floor'")

    @property
    def dates(self) -> np.ndarray:
        return np.asarray(self.payment_dates, dtype=float)


def quarterly_schedule(maturity: float, start: float = 0.25, step: float = 0.25) -> tuple[float, ...]:
    """Dates start, start + step, ..., maturity (the first period is excluded from the cap)."""
    n = int(round((maturity - start) / step))
    if n < 1:
        raise ValueError("maturity too short for a quarterly cap")
    return tuple(start + step * np.arange(n + 1))


def cap_price(curve: DiscountCurve, params: RateLegParams | None, spec: CapSpec) -> float:
    """Sum over caplets of (1 + K tau_i) ZC puts (calls for floors) with strike 1/(1 + K tau_i)."""
    params = curve.params if params is None else params
    dates = spec.dates
    if dates[-1] > curve.last * (1 + 1e-14):
        raise ValueError("cap schedule beyond the last pillar")
    disc = bond_price(curve, params, dates)
    tau = np.diff(dates)
    scale = 1.0 + spec.strike * tau
    std = caplet_std_devs(params, dates[:-1], dates[1:])
    side = "put" if spec.side == "cap" else "call"
    legs = scale * _zc_formula(disc[:-1], disc[1:], 1.0 / scale, std, side)
    return float(math.fsum(legs))


def _forwards(disc: np.ndarray, dates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tau = np.diff(dates)
    return (disc[:-1] / disc[1:] - 1.0) / tau, tau


def atm_cap_strike(curve: DiscountCurve, dates) -> float:
    """Swap-equivalent rate K with sum tau_i (F_i - K) P(0,T_i) = 0."""
    dates = np.asarray(dates, dtype=float)
    disc = bond_price(curve, None, dates)
    tau = np.diff(dates)
    return float((disc[0] - disc[-1]) / np.dot(tau, disc[1:]))


def black_cap_price(curve: DiscountCurve, spec: CapSpec, vol: float) -> float:
    """Black (lognormal) price of the cap with one flat volatility for every caplet."""
    dates = spec.dates
    disc = bond_price(curve, None, dates)
    fwd, tau = _forwards(disc, dates)
    return float(np.sum(_black_legs(fwd, tau, disc[1:], dates[:-1], spec.strike, vol, spec.side)))


def _black_legs(fwd, tau, pay_disc, expiry, strike, vol, side: str):
    fwd = np.asarray(fwd, dtype=float)
    if vol <= 0:
        intrinsic = np.maximum(fwd - strike, 0.0) if side == "cap" else np.maximum(strike - fwd, 0.0)
        return pay_disc * tau * intrinsic
    std = vol * np.sqrt(expiry)
    if strike <= 0:
        if side == "cap":
            return pay_disc * tau * (fwd - strike)
        return np.zeros_like(fwd)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(fwd / strike) + 0.5 * std * std) / std
    d2 = d1 - std
    if side == "cap":
        return pay_disc * tau * (fwd * norm.cdf(d1) - strike * norm.cdf(d2))
    return pay_disc * tau * (strike * norm.cdf(-d2) - fwd * norm.cdf(-d1))


def cap_implied_vol(curve: DiscountCurve, spec: CapSpec, price: float, *, upper: float = 10.0) -> float:
    """Flat Black volatility reproducing ``price``; 0 at the lower arbitrage bound."""
    dates = spec.dates
    disc = bond_price(curve, None, dates)
    return _implied_from_discounts(disc, dates, spec.strike, spec.side, price, upper)


def _implied_from_discounts(disc, dates, strike: float, side: str, price: float, upper: float = 10.0) -> float:
    fwd, tau = _forwards(disc, dates)
    pay, expiry = disc[1:], dates[:-1]
    if np.any(fwd <= 0) and strike > 0:
        raise ValueError("lognormal cap vols need positive forwards")
    lower = float(np.sum(_black_legs(fwd, tau, pay, expiry, strike, 0.0, side)))
    if side == "cap":
        sup = float(np.dot(tau * pay, fwd))
    else:
        sup = float(np.dot(tau * pay, np.full_like(fwd, strike)))
    tol = 1e-14 * max(1.0, abs(sup))
    if price < lower - tol or price >= sup:
        raise ValueError(f"cap price {price:.6e} outside the Black bounds [{lower:.6e}, {sup:.6e})")
    if price <= lower + tol:
        return 0.0

    def f(v: float) -> float:
        return float(np.sum(_black_legs(fwd, tau, pay, expiry, strike, v, side))) - price

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > upper * 100:
            raise ValueError("cap implied vol search failed to bracket the price")
    return float(brentq(f, 1e-12, hi, xtol=1e-14, rtol=1e-12, maxiter=200))


def atm_cap_vol_curve(
    curve: DiscountCurve,
    params: RateLegParams | None,
    maturities,
    *,
    start: float = 0.25,
    step: float = 0.25,
) -> np.ndarray:
    """Model ATM cap implied vols for several quarterly cap maturities at once.

    Discounts and caplet variances are shared across maturities, which is what
    makes the rate calibration objective cheap.
    """
    params = curve.params if params is None else params
    mats = np.atleast_1d(np.asarray(maturities, dtype=float))
    longest = quarterly_schedule(float(np.max(mats)), start, step)
    dates = np.asarray(longest)
    disc = bond_price(curve, params, dates)
    std = caplet_std_devs(params, dates[:-1], dates[1:])
    out = np.empty_like(mats)
    for q, m in enumerate(mats):
        n = int(round((m - start) / step))
        if n < 1 or not np.isclose(dates[n], m):
            raise ValueError(f"cap maturity {m} is not on the quarterly grid")
        d, tau = disc[: n + 1], np.diff(dates[: n + 1])
        strike = float((d[0] - d[-1]) / np.dot(tau, d[1:]))
        scale = 1.0 + strike * tau
        price = math.fsum(scale * _zc_formula(d[:-1], d[1:], 1.0 / scale, std[:n], "put"))
        out[q] = _implied_from_discounts(d, dates[: n + 1], strike, "cap", price)
    return out
