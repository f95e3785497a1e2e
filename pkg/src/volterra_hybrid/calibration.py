"""Two-stage calibration of the hybrid model.

Stage one fits the rate leg (kappa_r, eta_r and the kernel exponent H_r) to
ATM cap implied volatilities, re-stripping r0 from the discount curve for
every candidate so the curve is always matched exactly.  Stage two keeps the
rate leg fixed and fits the volatility leg (nu_0, theta_nu, eta_nu, rho_I_nu,
rho_I_r and H_nu) to an equity implied-volatility surface priced through the
characteristic function; kappa_nu and rho_nu_r stay at their initial values.

Both stages minimize the root mean square implied-volatility error with
Nelder-Mead in an unconstrained coordinate (logistic maps onto the parameter
boxes), followed by a few randomly perturbed restarts from the incumbent.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .charfn import EquityLegParams, ModelParams, SingularMatrixError, build_engine
from .fourier import OptionRequest, smile
from .kernels import KernelSpec
from .rates import RateLegParams, StripError, atm_cap_vol_curve, strip_r0

__all__ = [
    "CalibOptions",
    "CalibReport",
    "CapQuote",
    "OptionQuote",
    "calibrate_equity",
    "calibrate_rates",
    "equity_model_vols",
    "rate_model_vols",
    "rmse",
]

# model vol error charged for a quote the model cannot price
_MISS = 1.0
# objective value for a candidate that fails outright
_FAIL = 10.0


@dataclass(frozen=True)
class CapQuote:
    maturity: float
    vol: float


@dataclass(frozen=True)
class OptionQuote:
    maturity: float
    strike: float
    vol: float


@dataclass(frozen=True)
class CalibOptions:
    """Optimizer budget and pricing settings.

    ``max_evals`` bounds each Nelder-Mead run; ``restarts`` extra runs start
    from the incumbent perturbed by ``restart_scale`` in the free coordinates.
    Restarts are skipped once the RMSE is below ``target``.
    """

    max_evals: int = 400
    restarts: int = 3
    restart_scale: float = 0.3
    seed: int = 0
    xatol: float = 1e-7
    fatol: float = 1e-12
    target: float = 1e-9
    N: int = 40
    L: int | None = None
    scheme: str = "midpoint"
    sigma_method: str = "quadrature"


@dataclass
class CalibReport:
    """Fitted parameters, per-quote vols and optimizer statistics."""

    stage: str
    params: dict[str, float]
    rmse: float
    quotes: list[dict[str, float]]
    evaluations: int
    iterations: int
    wall_time: float
    history: list[float] = field(default_factory=list)
    fitted: object = field(default=None, repr=False)

    def recomputed_rmse(self) -> float:
        return rmse([q["market_vol"] for q in self.quotes], [q["model_vol"] for q in self.quotes])

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "params": self.params,
            "rmse": self.rmse,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "quotes": self.quotes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    def residual_rows(self) -> list[list[float]]:
        keys = [k for k in self.quotes[0] if k not in ("market_vol", "model_vol")] if self.quotes else []
        rows = []
        for q in self.quotes:
            rows.append([q[k] for k in keys] + [q["market_vol"], q["model_vol"], q["model_vol"] - q["market_vol"]])
        return rows


def rmse(market: Sequence[float], model: Sequence[float]) -> float:
    """Root mean square vol error; unpriceable (NaN) model vols count as a 100 vol point miss."""
    market = np.asarray(market, dtype=float)
    model = np.asarray(model, dtype=float)
    err = np.where(np.isfinite(model), model - market, _MISS)
    return float(math.sqrt(np.mean(err * err)))


# ---------------------------------------------------------------------------
# Bounded coordinates and the optimizer loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Box:
    lower: np.ndarray
    upper: np.ndarray

    def to_free(self, x: np.ndarray) -> np.ndarray:
        p = (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)
        p = np.clip(p, 1e-9, 1.0 - 1e-9)
        return np.log(p / (1.0 - p))

    def to_box(self, y: np.ndarray) -> np.ndarray:
        return self.lower + (self.upper - self.lower) / (1.0 + np.exp(-np.asarray(y, dtype=float)))


def _minimize(objective: Callable[[np.ndarray], float], x0: np.ndarray, box: _Box, opts: CalibOptions):
    """Nelder-Mead plus perturbed restarts; returns (best x, best f, evals, iterations, history)."""
    best = {"f": math.inf, "x": np.asarray(x0, dtype=float)}
    history: list[float] = []

    def record(x: np.ndarray) -> float:
        f = objective(x)
        if not math.isfinite(f):
            f = _FAIL
        if f < best["f"]:
            best["f"], best["x"] = f, x
        history.append(best["f"])
        return f

    def tracked(y: np.ndarray) -> float:
        return record(box.to_box(y))

    # the start is scored as given, not after a trip through the free coordinates
    record(best["x"])
    y0 = box.to_free(x0)
    iterations = 0
    if opts.max_evals <= 0 or best["f"] <= opts.target:
        return best["x"], best["f"], len(history), iterations, history
    rng = np.random.default_rng(opts.seed)
    starts = [y0] + [None] * max(0, opts.restarts)
    for start in starts:
        if start is None:
            start = box.to_free(best["x"]) + opts.restart_scale * rng.standard_normal(len(y0))
        res = minimize(
            tracked,
            start,
            method="Nelder-Mead",
            options={"maxfev": opts.max_evals, "xatol": opts.xatol, "fatol": opts.fatol, "adaptive": len(y0) > 3},
        )
        iterations += int(res.nit)
        if best["f"] <= opts.target:
            break
    return best["x"], best["f"], len(history), iterations, history


# ---------------------------------------------------------------------------
# Rates stage
# ---------------------------------------------------------------------------

_RATE_BOUNDS = {"kappa_r": (-5.0, 5.0), "eta_r": (1e-5, 0.5), "H_r": (0.01, 1.49)}


def _rate_names(kernel: KernelSpec) -> list[str]:
    names = ["kappa_r", "eta_r"]
    if kernel.family in ("fractional", "shifted_fractional"):
        names.append("H_r")
    return names


def _rate_params(initial: RateLegParams, names: list[str], x: np.ndarray) -> RateLegParams:
    values = dict(zip(names, x))
    kernel = initial.kernel
    if "H_r" in values:
        kernel = kernel.with_params(H=values["H_r"])
    return RateLegParams(values["kappa_r"], values["eta_r"], kernel)


def _rate_values(params: RateLegParams, names: list[str]) -> np.ndarray:
    lookup = {"kappa_r": params.kappa_r, "eta_r": params.eta_r}
    if "H_r" in names:
        lookup["H_r"] = params.kernel.H
    return np.array([lookup[n] for n in names])


def rate_model_vols(pillars, discounts, params: RateLegParams, maturities) -> np.ndarray:
    """Model ATM cap vols after stripping r0 for ``params``."""
    curve = strip_r0(pillars, discounts, params)
    return atm_cap_vol_curve(curve, params, maturities)


def calibrate_rates(
    curve,
    cap_quotes: Sequence[CapQuote],
    initial: RateLegParams,
    options: CalibOptions | None = None,
) -> CalibReport:
    """Fit the rate leg to ATM cap vols.

    ``curve`` is a (pillars, discounts) pair or anything with those attributes.
    """
    opts = options or CalibOptions()
    pillars, discounts = (curve.pillars, curve.discounts) if hasattr(curve, "pillars") else curve
    if not cap_quotes:
        raise ValueError("no cap quotes")
    mats = np.array([q.maturity for q in cap_quotes])
    market = np.array([q.vol for q in cap_quotes])
    names = _rate_names(initial.kernel)
    box = _Box(np.array([_RATE_BOUNDS[n][0] for n in names]), np.array([_RATE_BOUNDS[n][1] for n in names]))

    def objective(x: np.ndarray) -> float:
        try:
            return rmse(market, rate_model_vols(pillars, discounts, _rate_params(initial, names, x), mats))
        except (StripError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            return _FAIL

    start = time.perf_counter()
    x, f, evals, iters, history = _minimize(objective, _rate_values(initial, names), box, opts)
    fitted = _rate_params(initial, names, x) if evals > 1 and not np.array_equal(x, _rate_values(initial, names)) else initial
    try:
        model = rate_model_vols(pillars, discounts, fitted, mats)
    except (StripError, ValueError, ArithmeticError):
        model = np.full_like(market, np.nan)
    quotes = [{"maturity": float(m), "market_vol": float(v), "model_vol": float(w)} for m, v, w in zip(mats, market, model)]
    report = CalibReport("rates", dict(zip(names, map(float, _rate_values(fitted, names)))), 0.0, quotes, evals, iters, time.perf_counter() - start, history, fitted)
    report.rmse = report.recomputed_rmse()
    return report


# ---------------------------------------------------------------------------
# Equity stage
# ---------------------------------------------------------------------------

_EQUITY_BOUNDS = {
    "nu0": (1e-4, 1.5),
    "theta_nu": (-2.0, 2.0),
    "eta_nu": (1e-4, 2.0),
    "rho_I_nu": (-0.999, 0.999),
    "rho_I_r": (-0.999, 0.999),
    "H_nu": (0.01, 1.49),
}


def _equity_names(kernel: KernelSpec) -> list[str]:
    names = ["nu0", "theta_nu", "eta_nu", "rho_I_nu", "rho_I_r"]
    if kernel.family in ("fractional", "shifted_fractional"):
        names.append("H_nu")
    return names


def _rho_band(rho_I_nu: float, rho_nu_r: float) -> tuple[float, float]:
    """Centre and half-width of the rho_I_r interval keeping the correlation matrix PSD."""
    return rho_I_nu * rho_nu_r, math.sqrt(max(0.0, (1.0 - rho_I_nu**2) * (1.0 - rho_nu_r**2)))


def _equity_params(initial: EquityLegParams, names: list[str], x: np.ndarray) -> EquityLegParams:
    """Candidate from optimizer coordinates; the rho_I_r slot is a position in its PSD band."""
    values = dict(zip(names, map(float, x)))
    kernel = initial.kernel
    if "H_nu" in values:
        kernel = kernel.with_params(H=values.pop("H_nu"))
    centre, half = _rho_band(values["rho_I_nu"], initial.rho_nu_r)
    values["rho_I_r"] = centre + values["rho_I_r"] * half
    return replace(initial, kernel=kernel, **values)


def _equity_values(params: EquityLegParams, names: list[str]) -> np.ndarray:
    centre, half = _rho_band(params.rho_I_nu, params.rho_nu_r)
    band = (params.rho_I_r - centre) / half if half > 0 else 0.0
    lookup = {"H_nu": params.kernel.H if "H_nu" in names else 0.0, "rho_I_r": band}
    return np.array([lookup[n] if n in lookup else getattr(params, n) for n in names])


def _equity_natural(params: EquityLegParams, names: list[str]) -> dict[str, float]:
    return {n: float(params.kernel.H if n == "H_nu" else getattr(params, n)) for n in names}


def _forward_for(forwards, T: float) -> float:
    if isinstance(forwards, (int, float)):
        return float(forwards)
    return float(forwards(T) if callable(forwards) else forwards[T])


def equity_model_vols(
    model: ModelParams,
    quotes: Sequence[OptionQuote],
    forwards=100.0,
    options: CalibOptions | None = None,
) -> np.ndarray:
    """Model implied vols for every quote, one engine per maturity."""
    opts = options or CalibOptions()
    out = np.empty(len(quotes))
    by_maturity: dict[float, list[int]] = {}
    for i, q in enumerate(quotes):
        by_maturity.setdefault(q.maturity, []).append(i)
    for T, idx in by_maturity.items():
        engine = build_engine(model, T, opts.N, scheme=opts.scheme, sigma_method=opts.sigma_method)
        req = OptionRequest.from_forward(T, [quotes[i].strike for i in idx], _forward_for(forwards, T))
        out[idx] = smile(engine, req, opts.L)
    return out


def calibrate_equity(
    rates: RateLegParams | ModelParams,
    option_quotes: Sequence[OptionQuote],
    initial: EquityLegParams,
    options: CalibOptions | None = None,
    *,
    forwards=100.0,
) -> CalibReport:
    """Fit the volatility leg to an implied-vol surface with the rate leg held fixed.

    The optimizer moves rho_I_r inside the interval that keeps the correlation
    matrix positive semi-definite for the current rho_I_nu, so every candidate
    is admissible.
    """
    opts = options or CalibOptions()
    rate_leg = rates.rates if isinstance(rates, ModelParams) else rates
    if not option_quotes:
        raise ValueError("no option quotes")
    market = np.array([q.vol for q in option_quotes])
    names = _equity_names(initial.kernel)
    box = _Box(np.array([_EQUITY_BOUNDS[n][0] for n in names]), np.array([_EQUITY_BOUNDS[n][1] for n in names]))

    def objective(x: np.ndarray) -> float:
        try:
            eq = _equity_params(initial, names, x)
        except ValueError:
            return _FAIL
        try:
            return rmse(market, equity_model_vols(ModelParams(rate_leg, eq), option_quotes, forwards, opts))
        except (SingularMatrixError, ValueError, ArithmeticError, np.linalg.LinAlgError):
            return _FAIL

    start = time.perf_counter()
    x, f, evals, iters, history = _minimize(objective, _equity_values(initial, names), box, opts)
    fitted = _equity_params(initial, names, x) if evals > 1 and not np.array_equal(x, _equity_values(initial, names)) else initial
    try:
        model = equity_model_vols(ModelParams(rate_leg, fitted), option_quotes, forwards, opts)
    except (SingularMatrixError, ValueError, ArithmeticError):
        model = np.full_like(market, np.nan)
    quotes = [
        {"maturity": float(q.maturity), "strike": float(q.strike), "market_vol": float(q.vol), "model_vol": float(w)}
        for q, w in zip(option_quotes, model)
    ]
    report = CalibReport("equity", _equity_natural(fitted, names), 0.0, quotes, evals, iters, time.perf_counter() - start, history, fitted)
    report.rmse = report.recomputed_rmse()
    return report
