"""Characteristic function of the log-forward index.

Under the T-forward measure the forward index and its volatility follow

    dI^T_t / I^T_t = nu_t dW_I + eta_r B_r(t,T) dW_r,
    nu_t = g_0^T(t) + int_0^t G_nu(t,s) (kappa_nu nu_s ds + eta_nu dW_nu(s)),

with g_0^T(t) = nu_0 + theta_nu int_0^t G_nu - eta_nu eta_r rho_nu_r int_0^t G_nu(t,s) B_r(s,T) ds.
The moment generating function E[exp(z log(I^T_T / I^T_0))], 0 <= Re z <= 1,
is a Gaussian functional

    exp(chi + <h, Psi h> - 1/2 log det(id - 2 a Sigma~)),

with a = (z^2 - z)/2 and b = kappa_nu + eta_nu z rho_I_nu.  The operators are
discretized on N cells of [0, T] (a Nystrom scheme) and the Fredholm
determinant becomes an N x N determinant.

Two node placements are offered:

``left``
    h and the operators sampled at the left cell ends t_0 .. t_{N-1}; the
    operator matrix is strictly lower triangular.  First order in 1/N.
``midpoint``
    sampled at the cell centres, with the half cell below each centre kept on
    the diagonal of the operator matrix.  Second order for smooth kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.linalg import lu_factor, lu_solve, solve_triangular
from scipy.special import rgamma, roots_jacobi

from .kernels import KernelSpec, _lag_eval, kernel_eval, kernel_integral
from .rates import RateLegParams
from .specialfn import appell_f1_batch, exprel, gauss_legendre, hyp2f1

__all__ = [
    "CharFnEngine",
    "EquityLegParams",
    "ModelParams",
    "SingularMatrixError",
    "build_engine",
    "charfn",
    "correlation_matrix",
    "log_charfn",
    "sigma_matrix",
]

SCHEMES = ("left", "midpoint")
SIGMA_METHODS = ("closed", "quadrature")
_PIVOT_FLOOR = 1e-14
_CHI_NODES = 128
_SIGMA_NODES = 64


class SingularMatrixError(ArithmeticError):
    """An LU pivot of the determinant matrix vanished."""


def correlation_matrix(rho_I_nu: float, rho_I_r: float, rho_nu_r: float) -> np.ndarray:
    """Correlation matrix of (W_I, W_nu, W_r)."""
    return np.array(
        [
            [1.0, rho_I_nu, rho_I_r],
            [rho_I_nu, 1.0, rho_nu_r],
            [rho_I_r, rho_nu_r, 1.0],
        ]
    )


@dataclass(frozen=True)
class EquityLegParams:
    """Volatility leg: nu_0, theta_nu, kappa_nu, eta_nu, kernel G_nu and correlations."""

    nu0: float
    theta_nu: float
    kappa_nu: float
    eta_nu: float
    kernel: KernelSpec = field(default_factory=KernelSpec.constant)
    rho_I_nu: float = 0.0
    rho_I_r: float = 0.0
    rho_nu_r: float = 0.0

    def __post_init__(self) -> None:
        vals = (self.nu0, self.theta_nu, self.kappa_nu, self.eta_nu, self.rho_I_nu, self.rho_I_r, self.rho_nu_r)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("equity parameters must be finite")
        if self.eta_nu < 0:
            raise ValueError("eta_nu must be nonnegative")
        for name in ("rho_I_nu", "rho_I_r", "rho_nu_r"):
            if abs(getattr(self, name)) > 1:
                raise ValueError(f"{name} must lie in [-1, 1]")
        lam = np.linalg.eigvalsh(self.correlation)
        if lam[0] < -1e-12:
            raise ValueError(f"correlation matrix not positive semidefinite (min eigenvalue {lam[0]:.3e})")

    @property
    def correlation(self) -> np.ndarray:
        return correlation_matrix(self.rho_I_nu, self.rho_I_r, self.rho_nu_r)

    def with_params(self, **changes) -> EquityLegParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class ModelParams:
    """Full hybrid parameter set: rate leg and equity/volatility leg."""

    rates: RateLegParams
    equity: EquityLegParams

    def with_equity(self, **changes) -> ModelParams:
        return replace(self, equity=replace(self.equity, **changes))

    def with_rates(self, **changes) -> ModelParams:
        return replace(self, rates=replace(self.rates, **changes))


# ---------------------------------------------------------------------------
# Covariance matrix
# ---------------------------------------------------------------------------


def _sigma_closed(kernel: KernelSpec, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """int_0^lo G(lo, s) G(hi, s) ds for lo <= hi, without the eta^2 factor."""
    fam = kernel.family
    c = kernel.c
    out = np.zeros_like(lo)
    pos = lo > 0
    if fam == "constant":
        return c * c * lo
    if fam == "exponential":
        beta = kernel.beta
        return c * c * np.exp(-beta * (hi - lo)) * lo * exprel(-2.0 * beta * lo)
    if fam == "cm_mixture":
        w = np.asarray(kernel.weights)
        x = np.asarray(kernel.nodes)
        xs = x[:, None] + x[None, :]
        gap = (hi - lo)[..., None, None]
        m = lo[..., None, None]
        # index k belongs to the earlier time lo, index l to the later time hi
        terms = np.exp(-x[None, None, :] * gap) * m * exprel(-xs * m)
        return np.einsum("k,l,...kl->...", w, w, terms)
    alpha = kernel.alpha
    g2 = rgamma(alpha) ** 2
    if fam == "fractional":
        diag = pos & (hi == lo)
        off = pos & (hi > lo)
        out[diag] = lo[diag] ** (2 * alpha - 1) / (2 * alpha - 1)
        if np.any(off):
            ratio = lo[off] / hi[off]
            out[off] = lo[off] ** alpha * hi[off] ** (alpha - 1) * hyp2f1(1.0, 1.0 - alpha, 1.0 + alpha, ratio) / alpha
        return c * c * g2 * out
    eps = kernel.epsilon
    if np.any(pos):
        a, b = lo[pos], hi[pos]
        x = a / (b + eps)
        y = a / (a + eps)
        rho = float(max(np.max(x), np.max(y)))
        # the series needs about log(tol)/log(rho) degrees in each variable
        degree = math.log(1e-16) / math.log(max(rho, 1e-3)) + 64
        f1 = appell_f1_batch(1.0, 1.0 - alpha, 1.0 - alpha, 2.0, x, y, max_terms=int(degree * degree) + 10_000)
        out[pos] = a * (a + eps) ** (alpha - 1) * (b + eps) ** (alpha - 1) * f1
    return c * c * g2 * out


def _sigma_quadrature(kernel: KernelSpec, lo: np.ndarray, hi: np.ndarray, nodes: int = _SIGMA_NODES) -> np.ndarray:
    """Same integral by Gaussian quadrature in the lag w = lo - s.

    For the shifted kernel the substitution w + eps = eps e^z smooths the
    near-singularity at w = 0; the unshifted kernel uses geometric panels.
    """
    x, wt = gauss_legendre(nodes, 0.0, 1.0)
    gap = (hi - lo)[..., None]
    out = np.zeros(lo.shape)
    pos = lo > 0
    L = lo[pos][:, None]
    g = gap[pos]
    fam = kernel.family
    if fam == "fractional":
        out[pos] = _fractional_panels(kernel, lo[pos], (hi - lo)[pos])
        return out
    if fam == "shifted_fractional":
        eps = kernel.epsilon
        zmax = np.log((L + eps) / eps)
        z = zmax * x[None, :]
        w = eps * np.expm1(z)
        jac = zmax * eps * np.exp(z)
        vals = _lag_eval(kernel, w) * _lag_eval(kernel, w + g) * jac
    else:
        w = L * x[None, :]
        vals = _lag_eval(kernel, w) * _lag_eval(kernel, w + g) * L
    out[pos] = vals @ wt
    return out


def _fractional_panels(kernel: KernelSpec, L: np.ndarray, gap: np.ndarray, nodes: int = 16) -> np.ndarray:
    """int_0^L G(w) G(w + gap) dw for the fractional kernel on geometric panels.

    The lag axis is cut at gap, 2 gap, 4 gap, ... so that every panel sits at
    least its own width away from both singular points w = 0 and w = -gap.
    The first panel carries the w^{alpha-1} factor in a Gauss-Jacobi weight.
    """
    alpha = kernel.alpha
    scale = (kernel.c * rgamma(alpha)) ** 2
    out = np.zeros_like(L)
    diag = gap <= 0
    out[diag] = scale * L[diag] ** (2 * alpha - 1) / (2 * alpha - 1)
    off = ~diag
    if not np.any(off):
        return out
    Lo, g = L[off], gap[off]
    xj, wj = roots_jacobi(nodes, 0.0, alpha - 1.0)
    first = np.minimum(g, Lo)
    w = 0.5 * first[:, None] * (1.0 + xj[None, :])
    total = (0.5 * first) ** alpha * ((w + g[:, None]) ** (alpha - 1.0) @ wj)
    xg, wg = gauss_legendre(nodes, 0.0, 1.0)
    panels = int(np.ceil(np.log2(np.max(Lo / g)))) + 1
    start = first.copy()
    for _ in range(panels):
        stop = np.minimum(2.0 * start, Lo)
        width = stop - start
        w = start[:, None] + width[:, None] * xg[None, :]
        total += width * ((w ** (alpha - 1.0) * (w + g[:, None]) ** (alpha - 1.0)) @ wg)
        start = stop
    out[off] = scale * total
    return out


def _sigma_adaptive(kernel: KernelSpec, lo: float, hi: float) -> float:
    """Adaptive quadrature oracle for a single entry (tests and cross-checks)."""
    if lo <= 0:
        return 0.0
    if kernel.family == "fractional" and kernel.alpha < 1:
        # integrable endpoint singularity: hand it to the algebraic weight
        a1 = kernel.alpha - 1.0
        g = rgamma(kernel.alpha) * kernel.c
        if hi == lo:
            val, _ = quad(lambda s: g * g, 0.0, lo, weight="alg", wvar=(0.0, 2 * a1), epsabs=0.0, epsrel=1e-13)
            return float(val)
        val, _ = quad(
            lambda s: g * kernel_eval(kernel, hi, s),
            0.0,
            lo,
            weight="alg",
            wvar=(0.0, a1),
            epsabs=0.0,
            epsrel=1e-13,
            limit=200,
            points=None,
        )
        return float(val)
    val, _ = quad(
        lambda s: kernel_eval(kernel, lo, s) * kernel_eval(kernel, hi, s),
        0.0,
        lo,
        epsabs=0.0,
        epsrel=1e-13,
        limit=400,
    )
    return float(val)


def sigma_matrix(kernel: KernelSpec, eta: float, nodes: np.ndarray, method: str = "closed") -> np.ndarray:
    """eta^2 int_0^T G(t_i, s) G(t_j, s) ds for all node pairs."""
    if method not in SIGMA_METHODS:
        raise ValueError(f"sigma method must be one of {SIGMA_METHODS}")
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    iu, ju = np.triu_indices(n)
    lo = np.minimum(nodes[iu], nodes[ju])
    hi = np.maximum(nodes[iu], nodes[ju])
    if method == "closed" or kernel.family in ("constant", "exponential", "cm_mixture"):
        vals = _sigma_closed(kernel, lo, hi)
    else:
        vals = _sigma_quadrature(kernel, lo, hi)
    out = np.zeros((n, n))
    out[iu, ju] = vals
    out[ju, iu] = vals
    return eta * eta * out


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CharFnEngine:
    """u-independent pieces of the discretized characteristic function for one maturity."""

    model: ModelParams
    maturity: float
    n: int
    scheme: str
    nodes: np.ndarray
    G_matrix: np.ndarray
    Sigma_matrix: np.ndarray
    g0: np.ndarray
    bond_loading: np.ndarray
    convolution: np.ndarray
    chi_integral: float

    @property
    def cell(self) -> float:
        return self.maturity / self.n


def _g_matrix(kernel: KernelSpec, T: float, n: int, scheme: str) -> tuple[np.ndarray, np.ndarray]:
    edges = T * np.arange(n + 1) / n
    if scheme == "left":
        nodes = edges[:-1]
        t = nodes[:, None]
        G = kernel_integral(kernel, t, edges[None, :-1], edges[None, 1:])
        G = np.tril(np.atleast_2d(G), -1)
    else:
        nodes = 0.5 * (edges[:-1] + edges[1:])
        t = nodes[:, None]
        G = kernel_integral(kernel, t, edges[None, :-1], np.minimum(edges[None, 1:], t))
        G = np.tril(np.atleast_2d(G))
    return nodes, G


def build_engine(
    model: ModelParams,
    T: float,
    N: int,
    *,
    scheme: str = "midpoint",
    sigma_method: str = "closed",
) -> CharFnEngine:
    """Precompute the operator matrices for maturity ``T`` on ``N`` cells."""
    if not (T > 0 and math.isfinite(T)):
        raise ValueError("maturity must be positive")
    if int(N) != N or N < 2:
        raise ValueError("grid size N must be an integer >= 2")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    N = int(N)
    eq = model.equity
    kernel = eq.kernel
    nodes, G = _g_matrix(kernel, T, N, scheme)
    Sigma = sigma_matrix(kernel, eq.eta_nu, nodes, sigma_method)
    load = model.rates.loading(horizon=max(50.0, T))
    bond = load.B(T - nodes)
    conv = G @ bond
    g0 = eq.nu0 + eq.theta_nu * np.asarray(kernel_integral(kernel, nodes, np.zeros_like(nodes), nodes))
    x, w = gauss_legendre(_CHI_NODES, 0.0, T)
    chi = float(np.dot(w, load.B(T - x) ** 2))
    for arr in (G, Sigma, bond, conv, g0):
        arr.setflags(write=False)
    return CharFnEngine(model, float(T), N, scheme, nodes, G, Sigma, g0, bond, conv, chi)


def _logdet(lu: np.ndarray, piv: np.ndarray, matrix: np.ndarray) -> complex:
    pivots = np.diag(lu)
    if np.min(np.abs(pivots)) < _PIVOT_FLOOR:
        raise SingularMatrixError(f"LU pivot magnitude {np.min(np.abs(pivots)):.2e} below {_PIVOT_FLOOR}")
    swaps = int(np.count_nonzero(piv != np.arange(len(piv))))
    if swaps == 0:
        return complex(np.sum(np.log(pivots.astype(complex))))
    # with row exchanges the pivots no longer follow the identity continuously;
    # the eigenvalues do, so take the branch from them
    return complex(np.sum(np.log(np.linalg.eigvals(matrix).astype(complex))))


def log_charfn(engine: CharFnEngine, u) -> np.ndarray | complex:
    """log E[exp(u log(I^T_T/I^T_0))] for 0 <= Re u <= 1 (scalar or array)."""
    u_arr = np.atleast_1d(np.asarray(u, dtype=complex))
    re = u_arr.real
    if np.any(re < -1e-14) or np.any(re > 1 + 1e-14):
        raise ValueError("characteristic function needs 0 <= Re(u) <= 1")
    eq = engine.model.equity
    eta_r = engine.model.rates.eta_r
    n = engine.n
    dt = engine.cell
    ident = np.eye(n)
    lower = engine.scheme == "left"
    out = np.empty(u_arr.shape, dtype=complex)
    for k, z in enumerate(u_arr):
        a = 0.5 * (z * z - z)
        b = eq.kappa_nu + eq.eta_nu * z * eq.rho_I_nu
        chi = a * (1.0 - eq.rho_I_r**2) * eta_r**2 * engine.chi_integral
        if a == 0:
            out[k] = chi
            continue
        h = (
            engine.g0
            + eq.rho_I_r * eta_r * engine.bond_loading
            - eta_r * (eq.eta_nu * eq.rho_nu_r + b * eq.rho_I_r - z * eq.eta_nu * eq.rho_nu_r) * engine.convolution
        )
        M = ident - b * engine.G_matrix
        left = solve_triangular(M, engine.Sigma_matrix.astype(complex), lower=True, unit_diagonal=lower)
        sig_t = dt * solve_triangular(M, left.T, lower=True, unit_diagonal=lower).T
        Phi = ident - 2.0 * a * sig_t
        lu, piv = lu_factor(Phi, check_finite=False)
        logdet = _logdet(lu, piv, Phi)
        y = solve_triangular(M, h.astype(complex), lower=True, unit_diagonal=lower)
        quad_form = dt * a * (y @ lu_solve((lu, piv), y, check_finite=False))
        out[k] = chi + quad_form - 0.5 * logdet
    return out if np.ndim(u) else complex(out[0])


def charfn(engine: CharFnEngine, u) -> np.ndarray | complex:
    """E[exp(u log(I^T_T/I^T_0))] for 0 <= Re u <= 1 (scalar or array)."""
    val = np.exp(log_charfn(engine, u))
    return val if np.ndim(val) else complex(val)
