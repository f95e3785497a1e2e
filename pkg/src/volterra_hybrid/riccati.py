"""Riccati routes for completely monotone volatility kernels.

When G_nu(t,s) = sum_i w_i exp(-x_i (t-s)) the volatility is a finite sum of
Ornstein-Uhlenbeck type factors, nu_t = nu_0 + sum_i w_i y^i_t with

    dy^i_t = (-x_i y^i_t + theta(t) + kappa_nu nu_t) dt + eta_nu dW_nu,   y^i_0 = 0,

and theta(t) = theta_nu - eta_nu eta_r rho_nu_r B_r(t,T).  The log-forward
mgf is then exp(A + 2 B.y + y.C y) where (A, B, C) solve a quadratic ODE
system backward from zero terminal data; at t = 0 only A survives.

For a single exponential factor the system integrates in closed form
(Volterra Stein-Stein with a Hull-White short rate).  General fractional
kernels are first reduced to finitely many factors by binning their
Laplace measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, gammainc

from .charfn import ModelParams
from .kernels import KernelSpec, l2_norm_distance
from .specialfn import exprel, exprel2, gauss_legendre

__all__ = [
    "FactorSet",
    "RiccatiConvergenceError",
    "RiccatiState",
    "multifactor_reduce",
    "riccati_charfn",
    "riccati_solve",
    "stein_stein_charfn",
]

_A_NODES = 256


class RiccatiConvergenceError(ArithmeticError):
    """The implicit step's fixed-point iteration did not converge even after step halving."""


@dataclass(frozen=True)
class FactorSet:
    """Weights w_i and mean reversions x_i of an exponential-sum kernel."""

    weights: tuple[float, ...]
    nodes: tuple[float, ...]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        x = np.asarray(self.nodes, dtype=float)
        if w.shape != x.shape or w.ndim != 1 or w.size == 0:
            raise ValueError("weights and nodes must be 1-D of equal positive length")
        if np.any(x < 0) or len(np.unique(x)) != len(x):
            raise ValueError("nodes must be distinct and nonnegative")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(x))):
            raise ValueError("weights and nodes must be finite")

    def __len__(self) -> int:
        return len(self.weights)

    def to_kernel(self) -> KernelSpec:
        return KernelSpec.cm_mixture(self.weights, self.nodes)

    @classmethod
    def from_kernel(cls, kernel: KernelSpec) -> FactorSet:
        """Exact factor form of constant, exponential and mixture kernels."""
        if kernel.family == "cm_mixture":
            return cls(tuple(kernel.weights), tuple(kernel.nodes))
        if kernel.family == "exponential":
            if kernel.beta < 0:
                raise ValueError("an exponential kernel with beta < 0 is not completely monotone")
            return cls((kernel.c,), (kernel.beta,))
        if kernel.family == "constant":
            return cls((kernel.c,), (0.0,))
        raise ValueError(f"{kernel.family} kernel has no exact factor form; use multifactor_reduce")


@dataclass(frozen=True)
class RiccatiState:
    """(A, B, C) at time ``t`` for a batch of arguments u (leading axis)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    t: float


# ---------------------------------------------------------------------------
# Multi-factor reduction of fractional kernels
# ---------------------------------------------------------------------------


def _bin_moments(kernel: KernelSpec, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mass and first moment of the Laplace measure on each [edges[i-1], edges[i]]."""
    alpha = kernel.alpha
    norm = kernel.c / (gamma(alpha) * gamma(1.0 - alpha))
    lo, hi = edges[:-1], edges[1:]
    if kernel.family == "fractional":
        s0, s1 = 1.0 - alpha, 2.0 - alpha
        mass = (hi**s0 - lo**s0) / s0
        first = (hi**s1 - lo**s1) / s1
    else:
        eps = kernel.epsilon
        s0, s1 = 1.0 - alpha, 2.0 - alpha
        # int x^{s-1} e^{-eps x} dx = eps^{-s} Gamma(s) (P(s, eps hi) - P(s, eps lo))
        mass = eps**-s0 * gamma(s0) * (gammainc(s0, eps * hi) - gammainc(s0, eps * lo))
        first = eps**-s1 * gamma(s1) * (gammainc(s1, eps * hi) - gammainc(s1, eps * lo))
    return norm * mass, first / np.where(mass > 0, mass, 1.0)


def _geometric_factors(kernel: KernelSpec, n_factors: int, k_min: float, ratio: float) -> FactorSet:
    edges = np.concatenate([[0.0], k_min * ratio ** np.arange(n_factors)])
    w, x = _bin_moments(kernel, edges)
    return FactorSet(tuple(w), tuple(x))


def multifactor_reduce(
    kernel: KernelSpec,
    n_factors: int,
    T: float,
    *,
    k_min_grid=None,
    ratio_grid=None,
) -> FactorSet:
    """Exponential-sum approximation of a completely monotone power kernel.

    The Laplace measure c x^{-alpha} / (Gamma(alpha) Gamma(1-alpha)) dx (times
    e^{-eps x} when shifted) is cut into bins 0 < k_min < k_min r < ... and
    each bin is replaced by a point mass carrying its weight at its mean.  The
    pair (k_min, r) minimizing the L^2 kernel error on [0, T]^2 is picked from
    a coarse grid and then refined once around the best cell.
    """
    if kernel.family in ("cm_mixture", "exponential", "constant"):
        return FactorSet.from_kernel(kernel)
    if kernel.family not in ("fractional", "shifted_fractional"):
        raise ValueError(f"cannot reduce a {kernel.family} kernel")
    if kernel.alpha >= 1.0:
        raise ValueError("kernel is not completely monotone for H >= 1/2")
    if kernel.alpha <= 0.0:
        raise ValueError("multifactor reduction needs H > -1/2")
    if n_factors < 1:
        raise ValueError("need at least one factor")
    if not T > 0:
        raise ValueError("horizon must be positive")
    k_grid = np.logspace(-3, 1, 9) if k_min_grid is None else np.asarray(k_min_grid, dtype=float)
    r_grid = np.array([1.2, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0, 20.0]) if ratio_grid is None else np.asarray(ratio_grid)
    if n_factors == 1:
        r_grid = np.array([2.0])

    def error(k0: float, r: float) -> float:
        try:
            fs = _geometric_factors(kernel, n_factors, k0, r)
            return l2_norm_distance(kernel, fs.to_kernel(), T)
        except (ValueError, FloatingPointError):
            return math.inf

    scores = np.array([[error(k0, r) for r in r_grid] for k0 in k_grid])
    i, j = np.unravel_index(np.argmin(scores), scores.shape)
    best = (scores[i, j], k_grid[i], r_grid[j])
    # one refinement pass on a finer local grid in log coordinates
    dk = np.log(k_grid[1] / k_grid[0]) if len(k_grid) > 1 else 0.5
    dr = np.log(r_grid[min(j + 1, len(r_grid) - 1)] / r_grid[max(j - 1, 0)]) / 2 if len(r_grid) > 1 else 0.0
    for k0 in k_grid[i] * np.exp(np.linspace(-dk, dk, 5)):
        for r in r_grid[j] * np.exp(np.linspace(-dr, dr, 5)):
            if r <= 1.0:
                continue
            e = error(k0, r)
            if e < best[0]:
                best = (e, k0, r)
    return _geometric_factors(kernel, n_factors, best[1], best[2])


# ---------------------------------------------------------------------------
# Multi-factor Riccati system
# ---------------------------------------------------------------------------


def _as_factors(model: ModelParams) -> FactorSet:
    kernel = model.equity.kernel
    try:
        return FactorSet.from_kernel(kernel)
    except ValueError:
        raise ValueError("riccati_charfn needs a completely monotone mixture (or exponential) volatility kernel") from None


def _check_strip(u: np.ndarray) -> None:
    if np.any(u.real < -1e-14) or np.any(u.real > 1 + 1e-14):
        raise ValueError("characteristic function needs 0 <= Re(u) <= 1")


class _System:
    """Right-hand side in time-to-maturity tau = T - t (so the ODE runs forward)."""

    def __init__(self, model: ModelParams, T: float, factors: FactorSet, u: np.ndarray):
        eq = model.equity
        self.w = np.asarray(factors.weights, dtype=float)
        self.x = np.asarray(factors.nodes, dtype=float)
        self.eta2 = eq.eta_nu**2
        self.nu0 = eq.nu0
        self.rho_Ir = eq.rho_I_r
        self.eta_r = model.rates.eta_r
        self.a = 0.5 * (u * u - u)
        self.b = eq.kappa_nu + eq.eta_nu * u * eq.rho_I_nu
        self.load = model.rates.loading(horizon=max(50.0, T))
        # D(tau) = theta_nu + b nu0 + (u - 1) eta_nu rho_nu_r eta_r B_r(tau)
        self.d0 = eq.theta_nu + self.b * eq.nu0
        self.d1 = (u - 1.0) * eq.eta_nu * eq.rho_nu_r * self.eta_r

    def rates(self, tau: float):
        br = float(self.load.B(np.array(tau)))
        drive = self.d0 + self.d1 * br
        q = self.nu0**2 + (self.eta_r * br) ** 2 + 2.0 * self.rho_Ir * self.nu0 * self.eta_r * br
        lin = self.nu0 + self.rho_Ir * self.eta_r * br
        return drive, q, lin

    def bc(self, tau: float, B: np.ndarray, C: np.ndarray):
        """Right-hand sides of B and C without the diagonal decay -x B and -(x_k + x_l) C."""
        drive, _, lin = self.rates(tau)
        a, b = self.a[:, None], self.b[:, None]
        w = self.w[None, :]
        c1 = C.sum(axis=2)
        sb = B.sum(axis=1)[:, None]
        dB = a * w * lin + c1 * drive[:, None] + b * w * sb + 2.0 * self.eta2 * sb * c1
        dC = (
            self.a[:, None, None] * np.multiply.outer(self.w, self.w)[None]
            + self.b[:, None, None] * (c1[:, :, None] * w[:, None, :] + c1[:, None, :] * w[:, :, None])
            + 2.0 * self.eta2 * c1[:, :, None] * c1[:, None, :]
        )
        return dB, dC

    def da(self, tau: float, B: np.ndarray, C: np.ndarray) -> np.ndarray:
        drive, q, _ = self.rates(tau)
        sb = B.sum(axis=1)
        return self.a * q + 2.0 * sb * drive + self.eta2 * (2.0 * sb * sb + C.sum(axis=(1, 2)))


def _decay(sys: _System, h: float):
    """exp(-h x), h phi1(-h x) and h phi2(-h x) for the B and C decay rates."""
    out = []
    for rate in (sys.x, sys.x[:, None] + sys.x[None, :]):
        z = -h * rate
        out.append((np.exp(z), h * exprel(z), h * exprel2(z)))
    return out


def _cn_step(sys: _System, tau: float, h: float, B, C, tol: float, max_iter: int, depth: int = 0):
    """One second-order exponential trapezoid step with fixed-point inner solves.

    The diagonal decay is integrated exactly, so the fast factors of a
    many-factor kernel do not restrict the step; the remaining terms use
    trapezoid weights.  The step is halved when the inner iteration stalls.
    """
    (eB, p1B, p2B), (eC, p1C, p2C) = _decay(sys, h)
    nB0, nC0 = sys.bc(tau, B, C)
    baseB = eB * B + p1B * nB0
    baseC = eC * C + p1C * nC0
    B1, C1 = baseB, baseC
    for _ in range(max_iter):
        nB1, nC1 = sys.bc(tau + h, B1, C1)
        Bn = baseB + p2B * (nB1 - nB0)
        Cn = baseC + p2C * (nC1 - nC0)
        Cn = 0.5 * (Cn + np.swapaxes(Cn, 1, 2))
        if not (np.all(np.isfinite(Bn)) and np.all(np.isfinite(Cn))):
            break
        change = max(np.max(np.abs(Bn - B1)), np.max(np.abs(Cn - C1)))
        scale = 1.0 + max(np.max(np.abs(Bn)), np.max(np.abs(Cn)))
        B1, C1 = Bn, Cn
        if change <= tol * scale:
            a_inc = 0.5 * h * (sys.da(tau, B, C) + sys.da(tau + h, B1, C1))
            return B1, C1, a_inc
    if depth >= 12:
        raise RiccatiConvergenceError(f"fixed-point iteration stalled at tau={tau:.6g} after step halving")
    half = 0.5 * h
    Bm, Cm, a1 = _cn_step(sys, tau, half, B, C, tol, max_iter, depth + 1)
    Bn, Cn, a2 = _cn_step(sys, tau + half, half, Bm, Cm, tol, max_iter, depth + 1)
    return Bn, Cn, a1 + a2


def riccati_solve(
    model: ModelParams,
    T: float,
    u,
    steps: int = 2000,
    *,
    factors: FactorSet | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> RiccatiState:
    """Integrate (A, B, C) from the zero terminal state at T back to t = 0."""
    if steps < 1 or int(steps) != steps:
        raise ValueError("steps must be a positive integer")
    if not T > 0:
        raise ValueError("maturity must be positive")
    u_arr = np.atleast_1d(np.asarray(u, dtype=complex))
    _check_strip(u_arr)
    fs = _as_factors(model) if factors is None else factors
    sys = _System(model, T, fs, u_arr)
    n = len(fs)
    B = np.zeros((len(u_arr), n), dtype=complex)
    C = np.zeros((len(u_arr), n, n), dtype=complex)
    A = np.zeros(len(u_arr), dtype=complex)
    h = T / steps
    for k in range(int(steps)):
        B, C, a_inc = _cn_step(sys, k * h, h, B, C, tol, max_iter)
        A = A + a_inc
    return RiccatiState(A, B, C, 0.0)


def riccati_charfn(model: ModelParams, T: float, u, steps: int = 2000, *, factors: FactorSet | None = None):
    """exp(A_0) from the multi-factor Riccati system (the factors start at zero)."""
    if steps < 100:
        raise ValueError("riccati_charfn needs steps >= 100")
    state = riccati_solve(model, T, u, steps, factors=factors)
    out = np.exp(state.A)
    return out if np.ndim(u) else complex(out[0])


# ---------------------------------------------------------------------------
# Closed form for one exponential factor with a Hull-White rate
# ---------------------------------------------------------------------------


def stein_stein_charfn(model: ModelParams, T: float, u):
    """Closed-form mgf for G_nu = c e^{-beta tau} and the constant rate kernel.

    With p = b c - beta and gamma = sqrt(p^2 - 2 eta_nu^2 a c^2), in
    time-to-maturity tau,

        C(tau) = a c^2 (1 - e^{-2 gamma tau}) / den(tau),
        den(tau) = (gamma - p) + (gamma + p) e^{-2 gamma tau},

    B solves a linear ODE driven by exponentials of the Hull-White loading and
    integrates to a four-term exponential sum over den; A is a Gauss-Legendre
    integral of the closed-form B and C.
    """
    eq = model.equity
    kernel = eq.kernel
    if kernel.family == "constant":
        c, beta = kernel.c, 0.0
    elif kernel.family == "exponential":
        c, beta = kernel.c, kernel.beta
    else:
        raise ValueError("stein_stein_charfn needs a constant or exponential volatility kernel")
    rk = model.rates.kernel
    if rk.family != "constant" or rk.c != 1.0:
        raise ValueError("stein_stein_charfn needs the unit constant rate kernel")
    kr = model.rates.kappa_r
    if kr == 0.0:
        raise ValueError("stein_stein_charfn needs kappa_r != 0")
    if not T > 0:
        raise ValueError("maturity must be positive")
    u_all = np.atleast_1d(np.asarray(u, dtype=complex))
    _check_strip(u_all)
    # u in {0, 1} gives a = 0, so B = C = 0 and A = 0 exactly
    live = 0.5 * (u_all * u_all - u_all) != 0
    out = np.ones(u_all.shape, dtype=complex)
    if not np.any(live):
        return out if np.ndim(u) else complex(out[0])
    u_arr = u_all[live]
    eta_r = model.rates.eta_r
    rho = eq.rho_I_r
    a = 0.5 * (u_arr * u_arr - u_arr)
    b = eq.kappa_nu + eq.eta_nu * u_arr * eq.rho_I_nu
    p = b * c - beta
    gam = np.sqrt(p * p - 2.0 * eq.eta_nu**2 * a * c * c + 0j)
    if np.any(gam == 0):
        raise ZeroDivisionError("removable singularity gamma = 0; perturb the parameters")
    c0 = a * c * c
    d0 = eq.theta_nu + b * eq.nu0
    d1 = (u_arr - 1.0) * eq.eta_nu * eq.rho_nu_r * eta_r
    alpha0 = a * c * (eq.nu0 - rho * eta_r / kr)
    alpha1 = a * c * rho * eta_r / kr
    beta0 = c0 * (d0 - d1 / kr)
    beta1 = c0 * d1 / kr
    lambdas = [gam, gam + kr, -gam, kr - gam]
    coeffs = [
        alpha0 * (gam - p) + beta0,
        alpha1 * (gam - p) + beta1,
        alpha0 * (gam + p) - beta0,
        alpha1 * (gam + p) - beta1,
    ]
    tau, wt = gauss_legendre(_A_NODES, 0.0, T)
    tau_c = tau[None, :]
    g = gam[:, None]
    decay = np.exp(-g * tau_c)
    den = (g - p[:, None]) + (g + p[:, None]) * decay * decay
    C = c0[:, None] * (1.0 - decay * decay) / den
    B = np.zeros_like(C)
    for lam, coef in zip(lambdas, coeffs):
        # [e^{(lam - gamma) tau} - e^{-gamma tau}] / lam, finite as lam -> 0
        B = B + coef[:, None] * decay * tau_c * exprel(lam[:, None] * tau_c)
    B = B / den
    br = tau * exprel(kr * tau)
    q = eq.nu0**2 + (eta_r * br) ** 2 + 2.0 * rho * eq.nu0 * eta_r * br
    drive = d0[:, None] + d1[:, None] * br[None, :]
    integrand = a[:, None] * q[None, :] + 2.0 * B * drive + eq.eta_nu**2 * (2.0 * B * B + C)
    A = integrand @ wt
    out[live] = np.exp(A)
    return out if np.ndim(u) else complex(out[0])
