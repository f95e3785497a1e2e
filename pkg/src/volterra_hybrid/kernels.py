"""Volterra kernel algebra.

All kernels in this package are of convolution type, G(t, s) = g(t - s) for
s < t and 0 otherwise:

    Constant             g(tau) = c
    Exponential          g(tau) = c exp(-beta tau)
    Fractional           g(tau) = c tau^{H - 1/2} / Gamma(H + 1/2)
    ShiftedFractional    g(tau) = c (tau + eps)^{H - 1/2} / Gamma(H + 1/2)
    CMMixture            g(tau) = sum_i w_i exp(-x_i tau)

The resolvent R of kappa*G solves R = kappa G + kappa G * R.  The bond
loading

    B(t, T) = (1/kappa) int_t^T R(s, t) ds

is the deterministic volatility factor of zero-coupon bonds.  It only
depends on tau = T - t and satisfies the linear Volterra equation

    B(tau) = int_0^tau g + kappa int_0^tau g(tau - s) B(s) ds,

which has Mittag-Leffler closed forms for the first three families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm
from scipy.special import gamma, rgamma

from .specialfn import exprel, exprel2, gauss_legendre, mittag_leffler_array

__all__ = [
    "FAMILIES",
    "BondLoading",
    "KernelSpec",
    "ResolventEval",
    "UnsupportedKernelError",
    "b_g",
    "bond_loading",
    "kernel_eval",
    "kernel_integral",
    "l2_norm_distance",
    "resolvent_eval",
]

FAMILIES = ("constant", "exponential", "fractional", "shifted_fractional", "cm_mixture")
_CLOSED_FORM = ("constant", "exponential", "fractional")
# H_r up to 1.5 is used by the rate calibration; only H > 0 is needed for L2 integrability
_FRACTIONAL_H_RANGE = (0.0, 1.5)


class UnsupportedKernelError(ValueError):
    """The requested operation has no implementation for this kernel family."""


@dataclass(frozen=True)
class KernelSpec:
    """Declarative description of a convolution Volterra kernel.

    Use the named constructors (``constant``, ``exponential``, ``fractional``,
    ``shifted_fractional``, ``cm_mixture``) rather than the raw initializer.
    """

    family: str
    c: float = 1.0
    beta: float = 0.0
    H: float = 0.5
    epsilon: float = 0.0
    weights: tuple[float, ...] = field(default_factory=tuple)
    nodes: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        for name in ("c", "beta", "H", "epsilon"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"kernel parameter {name} must be finite")
        if self.family == "fractional":
            lo, hi = _FRACTIONAL_H_RANGE
            if not lo < self.H < hi:
                raise ValueError(f"fractional kernel needs H in ({lo}, {hi}), got {self.H}")
        if self.family == "shifted_fractional" and not self.epsilon > 0:
            raise ValueError("shifted fractional kernel needs epsilon > 0")
        if self.family == "cm_mixture":
            w = np.asarray(self.weights, float)
            x = np.asarray(self.nodes, float)
            if w.size == 0 or w.shape != x.shape:
                raise ValueError("cm_mixture needs equally many weights and nodes (at least one)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(x))):
                raise ValueError("cm_mixture weights and nodes must be finite")
            if np.any(x < 0):
                raise ValueError("cm_mixture nodes must be nonnegative")
            if len(np.unique(x)) != len(x):
                raise ValueError("cm_mixture nodes must be distinct")

    # -- constructors --------------------------------------------------
    @classmethod
    def constant(cls, c: float = 1.0) -> KernelSpec:
        return cls("constant", c=float(c))

    @classmethod
    def exponential(cls, c: float, beta: float) -> KernelSpec:
        return cls("exponential", c=float(c), beta=float(beta))

    @classmethod
    def fractional(cls, c: float, H: float) -> KernelSpec:
        return cls("fractional", c=float(c), H=float(H))

    @classmethod
    def shifted_fractional(cls, c: float, H: float, epsilon: float) -> KernelSpec:
        return cls("shifted_fractional", c=float(c), H=float(H), epsilon=float(epsilon))

    @classmethod
    def cm_mixture(cls, weights, nodes) -> KernelSpec:
        return cls(
            "cm_mixture",
            weights=tuple(float(v) for v in weights),
            nodes=tuple(float(v) for v in nodes),
        )

    # -- helpers -------------------------------------------------------
    @property
    def alpha(self) -> float:
        """Power-law exponent H + 1/2 of the (shifted) fractional families."""
        return self.H + 0.5

    @property
    def is_singular(self) -> bool:
        return self.family == "fractional" and self.H < 0.5

    def with_params(self, **changes: Any) -> KernelSpec:
        data = self.to_dict()
        data.update(changes)
        return KernelSpec.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        if self.family == "constant":
            return {"family": "constant", "c": self.c}
        if self.family == "exponential":
            return {"family": "exponential", "c": self.c, "beta": self.beta}
        if self.family == "fractional":
            return {"family": "fractional", "c": self.c, "H": self.H}
        if self.family == "shifted_fractional":
            return {"family": "shifted_fractional", "c": self.c, "H": self.H, "epsilon": self.epsilon}
        return {"family": "cm_mixture", "weights": list(self.weights), "nodes": list(self.nodes)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> KernelSpec:
        data = dict(data)
        family = data.pop("family", None)
        allowed = {
            "constant": {"c"},
            "exponential": {"c", "beta"},
            "fractional": {"c", "H"},
            "shifted_fractional": {"c", "H", "epsilon"},
            "cm_mixture": {"weights", "nodes"},
        }
        if family not in allowed:
            raise ValueError(f"unknown kernel family {family!r}")
        unknown = set(data) - allowed[family]
        if unknown:
            raise ValueError(f"unknown keys for {family} kernel: {sorted(unknown)}")
        if family == "cm_mixture":
            return cls.cm_mixture(data.get("weights", []), data.get("nodes", []))
        return cls(family, **{k: float(v) for k, v in data.items()})


def _lag_eval(spec: KernelSpec, tau):
    """g(tau) for tau > 0 (no indicator)."""
    tau = np.asarray(tau, dtype=float)
    fam = spec.family
    if fam == "constant":
        return np.full_like(tau, spec.c)
    if fam == "exponential":
        return spec.c * np.exp(-spec.beta * tau)
    if fam == "fractional":
        with np.errstate(divide="ignore"):
            return spec.c * tau ** (spec.alpha - 1.0) * rgamma(spec.alpha)
    if fam == "shifted_fractional":
        return spec.c * (tau + spec.epsilon) ** (spec.alpha - 1.0) * rgamma(spec.alpha)
    w = np.asarray(spec.weights)
    x = np.asarray(spec.nodes)
    return np.exp(-np.multiply.outer(tau, x)) @ w


def kernel_eval(spec: KernelSpec, t, s):
    """G(t, s), zero whenever s >= t."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tau = t - s
    pos = tau > 0
    safe = np.where(pos, tau, 1.0)
    out = np.where(pos, _lag_eval(spec, safe), 0.0)
    return out if out.ndim else float(out)


def _power_antiderivative(spec: KernelSpec, w):
    """Antiderivative of c w^{alpha-1}/Gamma(alpha) in w, i.e. c w^alpha / Gamma(alpha+1)."""
    a = spec.alpha
    if a == 0.0:
        return spec.c * np.log(w)
    return spec.c * w**a * rgamma(a + 1.0)


def kernel_integral(spec: KernelSpec, t, a, b):
    """int_a^b G(t, s) ds for a <= b; the part of [a, b] beyond t contributes nothing."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.minimum(np.asarray(b, dtype=float), t)
    a = np.minimum(a, b)
    width = b - a
    fam = spec.family
    if fam == "constant":
        out = spec.c * width
    elif fam == "exponential":
        out = spec.c * np.exp(-spec.beta * (t - b)) * width * exprel(-spec.beta * width)
    elif fam in ("fractional", "shifted_fractional"):
        eps = spec.epsilon if fam == "shifted_fractional" else 0.0
        out = _power_antiderivative(spec, t - a + eps) - _power_antiderivative(spec, t - b + eps)
        out = np.where(width > 0, out, 0.0)
    else:
        w = np.asarray(spec.weights)
        x = np.asarray(spec.nodes)
        lag = np.multiply.outer(t - b, x)
        wid = np.multiply.outer(width, x)
        out = (np.exp(-lag) * np.multiply.outer(width, np.ones_like(x)) * exprel(-wid)) @ w
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Resolvents and bond loadings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResolventEval:
    """Resolvent of kappa * G for a base kernel G."""

    base: KernelSpec
    multiplier: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.multiplier):
            raise ValueError("resolvent multiplier must be finite")


def _ml_unique(alpha: float, beta: float, x: np.ndarray) -> np.ndarray:
    # lags on pillar grids repeat a lot; evaluate each distinct argument once
    x = np.asarray(x, dtype=float)
    uniq, inverse = np.unique(x, return_inverse=True)
    return mittag_leffler_array(alpha, beta, uniq)[inverse].reshape(x.shape)


class BondLoading:
    """tau -> B(tau), its antiderivative, and R/kappa for one (kernel, kappa) pair.

    Closed forms are used for the constant, exponential and fractional
    families.  The mixture family is solved exactly through the eigen
    decomposition of its linear ODE system.  The shifted fractional family
    is solved by product integration on a grid up to ``horizon`` and is
    flagged with ``numerical = True``.
    """

    def __init__(self, spec: KernelSpec, kappa: float, horizon: float = 50.0, grid: int = 4000):
        self.spec = spec
        self.kappa = float(kappa)
        self.horizon = float(horizon)
        self.numerical = spec.family == "shifted_fractional"
        self._grid = grid
        fam = spec.family
        if fam == "cm_mixture":
            self._setup_mixture()
        elif fam == "shifted_fractional":
            self._setup_grid()

    # closed forms ---------------------------------------------------------
    def _rate(self) -> float:
        lam = self.kappa * self.spec.c
        return lam - self.spec.beta if self.spec.family == "exponential" else lam

    def _check(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0):
            raise ValueError("bond loading needs T >= t")
        if self.numerical and np.any(tau > self.horizon * (1 + 1e-12)):
            raise ValueError(f"maturity gap {np.max(tau)} beyond the numerical horizon {self.horizon}")
        return tau

    def B(self, tau):
        tau = self._check(tau)
        fam = self.spec.family
        c = self.spec.c
        if fam in ("constant", "exponential"):
            return c * tau * exprel(self._rate() * tau)
        if fam == "fractional":
            a = self.spec.alpha
            ta = tau**a
            return c * ta * _ml_unique(a, a + 1.0, self.kappa * c * ta)
        if fam == "cm_mixture":
            return self._mixture_eval(tau, order=1)
        return self._spline(tau)

    def integral(self, tau):
        """int_0^tau B(x) dx."""
        tau = self._check(tau)
        fam = self.spec.family
        c = self.spec.c
        if fam in ("constant", "exponential"):
            return c * tau * tau * exprel2(self._rate() * tau)
        if fam == "fractional":
            a = self.spec.alpha
            ta = tau**a
            return c * ta * tau * _ml_unique(a, a + 2.0, self.kappa * c * ta)
        if fam == "cm_mixture":
            return self._mixture_eval(tau, order=2)
        return self._spline_int(tau)

    def scaled_resolvent(self, tau):
        """R_{kappa G}(tau)/kappa, equal to G at kappa = 0."""
        tau = self._check(tau)
        fam = self.spec.family
        c = self.spec.c
        if fam in ("constant", "exponential"):
            return c * np.exp(self._rate() * tau)
        if fam == "fractional":
            a = self.spec.alpha
            with np.errstate(divide="ignore"):
                return c * tau ** (a - 1.0) * _ml_unique(a, a, self.kappa * c * tau**a)
        if fam == "cm_mixture":
            return self._mixture_eval(tau, order=0)
        return self._spline_der(tau)

    # mixture: Y' = M Y + 1, B = w.Y, M = kappa 1 w^T - diag(x) ------------
    def _setup_mixture(self) -> None:
        w = np.asarray(self.spec.weights)
        x = np.asarray(self.spec.nodes)
        self._w = w
        self._m = self.kappa * np.outer(np.ones_like(w), w) - np.diag(x)
        vals, vecs = np.linalg.eig(self._m)
        self._eig = None
        if np.linalg.cond(vecs) < 1e8:
            left = w @ vecs
            right = np.linalg.solve(vecs, np.ones_like(w))
            self._eig = (vals, left * right)

    def _mixture_eval(self, tau: np.ndarray, order: int):
        if self._eig is not None:
            vals, coef = self._eig
            z = np.multiply.outer(tau, vals)
            if order == 0:
                basis = np.exp(z)
            elif order == 1:
                basis = tau[..., None] * exprel(z)
            else:
                basis = (tau * tau)[..., None] * exprel2(z)
            return np.real(basis @ coef)
        # defective or ill-conditioned system: augmented state (Y, 1, int B)
        n = len(self._w)
        big = np.zeros((n + 2, n + 2))
        big[:n, :n] = self._m
        big[:n, n] = 1.0
        big[n + 1, :n] = self._w
        out = np.empty(tau.shape)
        for idx, tv in np.ndenumerate(tau):
            col = expm(big * tv)[:, n]
            y = col[:n]
            if order == 0:
                out[idx] = self._w @ (self._m @ y + 1.0)
            elif order == 1:
                out[idx] = self._w @ y
            else:
                out[idx] = col[n + 1]
        return out

    # shifted fractional: product trapezoid on a graded grid ------------------
    def _setup_grid(self) -> None:
        spec = self.spec
        n = self._grid
        # quadratic grading resolves the O(eps) boundary layer of g near lag 0
        grid = self.horizon * np.linspace(0.0, 1.0, n + 1) ** 2
        a = spec.alpha
        eps = spec.epsilon
        scale = spec.c * rgamma(a)
        k = self.kappa
        b = np.zeros(n + 1)
        forcing = scale * ((grid + eps) ** a - eps**a) / a
        for i in range(1, n + 1):
            # moments over cell [s_j, s_{j+1}] of g(tau_i - s) and g(tau_i - s)(s - s_j)
            s_lo, s_hi = grid[:i], grid[1 : i + 1]
            h = s_hi - s_lo
            w_hi = grid[i] - s_lo + eps
            w_lo = grid[i] - s_hi + eps
            p_hi, p_lo = w_hi**a, w_lo**a
            m0 = scale * (p_hi - p_lo) / a
            m1 = scale * (w_hi * (p_hi - p_lo) / a - (p_hi * w_hi - p_lo * w_lo) / (a + 1.0))
            right = m1 / h
            left = m0 - right
            acc = np.dot(left, b[:i]) + np.dot(right[:-1], b[1:i])
            b[i] = (forcing[i] + k * acc) / (1.0 - k * right[-1])
        self._cs = CubicSpline(grid, b)
        self._cs_int = self._cs.antiderivative()
        self._cs_der = self._cs.derivative()

    def _spline(self, tau):
        return self._cs(tau)

    def _spline_int(self, tau):
        return self._cs_int(tau)

    def _spline_der(self, tau):
        return self._cs_der(tau)


_LOADING_CACHE: dict[tuple, BondLoading] = {}


def bond_loading(spec: KernelSpec, kappa: float, horizon: float = 50.0) -> BondLoading:
    """Cached :class:`BondLoading` factory."""
    key = (spec, float(kappa), float(horizon) if spec.family == "shifted_fractional" else 0.0)
    hit = _LOADING_CACHE.get(key)
    if hit is None:
        if len(_LOADING_CACHE) > 256:
            _LOADING_CACHE.clear()
        hit = BondLoading(spec, kappa, horizon)
        _LOADING_CACHE[key] = hit
    return hit


def _require_closed_form(spec: KernelSpec, numerical: bool) -> None:
    if spec.family not in _CLOSED_FORM and not numerical:
        raise UnsupportedKernelError(
            f"{spec.family} kernel has no closed-form resolvent; pass numerical=True for the grid path"
        )


def resolvent_eval(res: ResolventEval, t, s, *, numerical: bool = False):
    """R_{kappa G}(t, s) for s < t; at kappa = 0 returns G(t, s) by convention."""
    _require_closed_form(res.base, numerical)
    tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("resolvent_eval needs s < t")
    load = bond_loading(res.base, res.multiplier, horizon=max(50.0, float(np.max(tau))))
    scaled = load.scaled_resolvent(tau)
    out = scaled if res.multiplier == 0.0 else res.multiplier * scaled
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def b_g(res: ResolventEval, t, T, *, numerical: bool = False):
    """B(t, T) = (1/kappa) int_t^T R_{kappa G}(s, t) ds (int_t^T G(s, t) ds at kappa = 0)."""
    _require_closed_form(res.base, numerical)
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau < 0):
        raise ValueError("b_g needs t <= T")
    load = bond_loading(res.base, res.multiplier, horizon=max(50.0, float(np.max(tau))))
    out = np.asarray(load.B(tau), dtype=float)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# L2 distance
# ---------------------------------------------------------------------------


def _singular_exponent(spec: KernelSpec) -> float | None:
    return spec.alpha if spec.family == "fractional" and spec.alpha < 1.0 else None


def l2_norm_distance(a: KernelSpec, b: KernelSpec, T: float, grid: int = 64) -> float:
    """|| G_a - G_b ||_{L2([0,T]^2)}.

    For convolution kernels the double integral reduces to
    int_0^T (T - tau) (g_a - g_b)(tau)^2 dtau.  The substitution
    tau = T v^p with p = 1/(2 alpha - 1) removes the power singularity of
    singular fractional kernels, and the v-integral uses composite
    Gauss-Legendre with ``grid`` points on each of 8 panels.
    """
    if grid < 16:
        raise ValueError("l2_norm_distance needs grid >= 16")
    if T <= 0:
        raise ValueError("l2_norm_distance needs T > 0")
    alphas = [x for x in (_singular_exponent(a), _singular_exponent(b)) if x is not None]
    p = 1.0 / (2.0 * min(alphas) - 1.0) if alphas else 1.0
    p = max(p, 1.0)
    edges = np.linspace(0.0, 1.0, 9)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, wv = gauss_legendre(grid, lo, hi)
        tau = T * v**p
        jac = T * p * v ** (p - 1.0)
        diff = _lag_eval(a, tau) - _lag_eval(b, tau)
        total += float(np.sum(wv * jac * (T - tau) * diff * diff))
    return math.sqrt(max(total, 0.0))


def laplace_measure_density(spec: KernelSpec, x):
    """Density of the Laplace measure of a completely monotone (shifted) fractional kernel."""
    if spec.family not in ("fractional", "shifted_fractional") or not spec.alpha < 1.0:
        raise UnsupportedKernelError("Laplace density is defined for (shifted) fractional kernels with H < 1/2")
    a = spec.alpha
    x = np.asarray(x, dtype=float)
    dens = spec.c * x ** (-a) / (gamma(a) * gamma(1.0 - a))
    if spec.family == "shifted_fractional":
        dens = dens * np.exp(-spec.epsilon * x)
    return dens
