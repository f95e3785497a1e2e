"""Special functions and quadrature rules.

Mittag-Leffler function
    E_{a,b}(x) = sum_{n>=0} x^n / Gamma(a n + b)

summed directly where the series is well conditioned.  For large negative
arguments the series loses every digit to cancellation, so the
exponentially improved asymptotic expansion

    E_{a,b}(x) ~ (1/a) sum_m z_m^{1-b} exp(z_m) - sum_{k>=1} x^{-k} / Gamma(b - a k)

is used instead, with z_m the admissible branches of x^{1/a} and the
algebraic tail truncated at its smallest term.  Each evaluation picks the
branch with the smaller error estimate.

Appell hypergeometric function of the first kind

    F1(a; b, b'; c; x, y) = sum_{m,n} (a)_{m+n} (b)_m (b')_n / ((c)_{m+n} m! n!) x^m y^n

summed by total degree k = m + n, which turns the inner sum into a
discrete convolution of the two single-variable series.

Gauss-Laguerre rules for the weight e^{-x} on (0, inf).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.special import gammaln, hyp2f1, rgamma, roots_laguerre

__all__ = [
    "AccuracyError",
    "QuadratureRule",
    "appell_f1",
    "appell_f1_batch",
    "exprel",
    "exprel2",
    "gauss_laguerre",
    "gauss_legendre",
    "hyp2f1",
    "mittag_leffler",
    "mittag_leffler_array",
]

_EPS = np.finfo(float).eps


class AccuracyError(ArithmeticError):
    """A series could not be summed to the requested tolerance."""


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights of an L-point rule."""

    nodes: np.ndarray
    weights: np.ndarray
    level: int

    def __post_init__(self) -> None:
        if len(self.nodes) != self.level or len(self.weights) != self.level:
            raise ValueError("nodes and weights must both have length level")


# ---------------------------------------------------------------------------
# Mittag-Leffler
# ---------------------------------------------------------------------------


def _series_terms(alpha: float, beta: float, x: np.ndarray, n_terms: int):
    """Series terms x^n / Gamma(alpha n + beta), shape (len(x), n_terms), and their log-magnitudes."""
    n = np.arange(n_terms, dtype=float)
    ax = np.abs(x)[:, None]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_mag = n[None, :] * np.log(ax) - gammaln(alpha * n + beta)[None, :]
        log_mag[:, 0] = -gammaln(beta)
        mag = np.exp(log_mag)
    # Gamma(alpha n + beta) > 0 for beta > 0, so the sign comes from x^n
    sign = np.where((x[:, None] < 0) & (n[None, :] % 2 == 1), -1.0, 1.0)
    return sign * mag, log_mag


def _series_length(alpha: float, x_abs_max: float, max_terms: int) -> int:
    # the terms peak near n ~ |x|^{1/alpha} / alpha and then decay faster than geometrically
    peak = x_abs_max ** (1.0 / alpha) / alpha if x_abs_max > 0 else 0.0
    return int(min(max_terms, 3.0 * peak + 40.0 / min(alpha, 1.0) + 30))


def _asymptotic(alpha: float, beta: float, x: np.ndarray, k_max: int = 80):
    """Asymptotic value and error estimate for x < 0, alpha in (0, 2)."""
    # optimal truncation sits near alpha k ~ |x|^{1/alpha}; no need to go far beyond
    k_max = int(min(k_max, 2.0 * np.max(np.abs(x)) ** (1.0 / alpha) / alpha + 16))
    k = np.arange(1, k_max + 1, dtype=float)
    inv = 1.0 / x[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        terms = inv ** k[None, :] * rgamma(beta - alpha * k)[None, :]
    arg = beta - alpha * k
    pole = (arg <= 0) & (np.abs(arg - np.round(arg)) < 1e-12)
    terms = np.where(pole[None, :], 0.0, terms)
    mag = np.abs(terms)
    # smooth envelope |1/Gamma(z)| <= Gamma(1 - z)/pi (reflection) so that terms close to a
    # pole of Gamma cannot fake an early minimum; truncate just before its smallest value
    with np.errstate(over="ignore"):
        bound = np.where(1.0 - arg > 0, np.exp(gammaln(np.maximum(1.0 - arg, 1e-300))) / np.pi, 0.0)
        env = np.abs(inv) ** k[None, :] * np.maximum(np.abs(rgamma(arg)), bound)[None, :]
    k_star = np.argmin(np.where(np.isfinite(env), env, np.inf), axis=1)
    # an expansion whose remaining coefficients all sit on poles is a finite, exact sum
    nonpole = np.nonzero(~pole)[0]
    finite_len = int(nonpole[-1]) + 1 if nonpole.size else 0
    exact = finite_len < k_max - 1
    if exact:
        k_star = np.full_like(k_star, finite_len)
    rows = np.arange(len(x))
    keep = np.arange(k_max)[None, :] < k_star[:, None]
    algebraic = -np.sum(np.where(keep, terms, 0.0), axis=1)
    tail = np.zeros(len(x)) if exact else env[rows, k_star]
    tail = np.where(np.isfinite(tail), tail, np.inf)

    ax = np.abs(x)
    if abs(alpha - 1.0) < 1e-13:
        # exactly on the Stokes line: one real branch z = x
        z = x.astype(complex)
        expo = (z ** (1.0 - beta) * np.exp(z)).real
    elif alpha > 1.0:
        # both branches |x|^{1/alpha} e^{+-i pi/alpha} are admissible; they are conjugate
        z = ax ** (1.0 / alpha) * np.exp(1j * np.pi / alpha)
        expo = (2.0 / alpha) * (z ** (1.0 - beta) * np.exp(z)).real
    else:
        expo = np.zeros_like(ax)
    value = expo + algebraic
    rounding = _EPS * (np.abs(expo) + np.sum(np.where(keep, mag, 0.0), axis=1))
    return value, tail + 4.0 * rounding


def _ml_eval(alpha: float, beta: float, x: np.ndarray, max_terms: int):
    """Return value and absolute error estimate for an array of real arguments."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.empty_like(flat)
    err = np.empty_like(flat)
    if flat.size == 0:
        return out.reshape(x.shape), err.reshape(x.shape), True
    n_terms = _series_length(alpha, float(np.max(np.abs(flat))), max_terms)
    terms, log_mag = _series_terms(alpha, beta, flat, n_terms)
    with np.errstate(over="ignore", invalid="ignore"):
        s_val = np.sum(terms, axis=1)
        abs_terms = np.abs(terms)
        abs_sum = np.sum(abs_terms, axis=1)
        # exp() of a rounded log-magnitude carries a relative error ~ |log| eps
        s_err = _EPS * np.sum(abs_terms * (4.0 + np.abs(np.nan_to_num(log_mag))), axis=1)
    # truncation check: last few terms must be negligible
    trunc = np.max(np.abs(terms[:, -5:]), axis=1)
    converged = bool(np.all((trunc <= 1e-17 * np.maximum(abs_sum, 1e-300)) | ~np.isfinite(abs_sum)))
    s_err = s_err + trunc
    s_err = np.where(np.isfinite(s_err) & np.isfinite(s_val), s_err, np.inf)
    out[:] = s_val
    err[:] = s_err
    # the asymptotic branch is only worth its cost where the series loses digits
    neg = (flat < 0) & (alpha < 2.0) & ~(err <= 1e-12 * np.abs(out))
    if np.any(neg):
        idx = np.nonzero(neg)[0]
        a_val, a_err = _asymptotic(alpha, beta, flat[idx])
        better = a_err < err[idx]
        out[idx[better]] = a_val[better]
        err[idx[better]] = a_err[better]
    return out.reshape(x.shape), err.reshape(x.shape), converged


def mittag_leffler(
    alpha: float,
    beta: float,
    x: float,
    *,
    rtol: float = 1e-10,
    max_terms: int = 10_000,
) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(x) for real x.

    Parameters
    ----------
    alpha, beta : float
        Positive parameters.
    x : float
        Real argument.
    rtol : float
        Relative accuracy target.  An :class:`AccuracyError` is raised when
        the error estimate of the best available branch exceeds it.
    max_terms : int
        Series term budget.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("mittag_leffler requires alpha > 0 and beta > 0")
    if not math.isfinite(x):
        raise ValueError("mittag_leffler requires a finite argument")
    val, err, converged = _ml_eval(alpha, beta, np.array([x]), max_terms)
    v, e = float(val[0]), float(err[0])
    if converged and math.isfinite(v) and e <= rtol * abs(v):
        return v
    # cancellation in double precision: redo the series with enough guard digits
    return _ml_extended(alpha, beta, x, rtol, max_terms)


def _ml_extended(alpha: float, beta: float, x: float, rtol: float, max_terms: int) -> float:
    ax = abs(x)
    peak = ax ** (1.0 / alpha) / alpha if ax > 0 else 0.0
    # the largest term is about exp(|x|^{1/alpha}); that many decimal digits cancel
    lost = ax ** (1.0 / alpha) / math.log(10.0) + 5.0
    with mpmath.workdps(int(30 + lost)):
        xm = mpmath.mpf(x)
        am, bm = mpmath.mpf(alpha), mpmath.mpf(beta)
        total = mpmath.mpf(0)
        power = mpmath.mpf(1)
        for n in range(max_terms):
            term = power * mpmath.rgamma(am * n + bm)
            total += term
            if n > peak + 5 and abs(term) < 1e-3 * rtol * max(abs(total), mpmath.mpf(10) ** -300):
                break
            power *= xm
        else:
            raise AccuracyError(f"series for E_{{{alpha},{beta}}}({x}) not converged in {max_terms} terms")
        v = float(total)
    if not math.isfinite(v):
        raise AccuracyError(f"E_{{{alpha},{beta}}}({x}) overflows")
    return v


def mittag_leffler_array(alpha: float, beta: float, x, max_terms: int = 10_000) -> np.ndarray:
    """Vectorized E_{alpha,beta} for kernel algebra; never raises on accuracy.

    Stays in double precision: in the crossover between the series and the
    asymptotic expansion (large negative x, alpha near 1.5) the relative error
    can reach 1e-5 close to zeros of the function, while the absolute error
    stays below about 1e-8.  :func:`mittag_leffler` is the accurate scalar path.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError("mittag_leffler requires alpha > 0 and beta > 0")
    val, _, _ = _ml_eval(alpha, beta, np.asarray(x, dtype=float), max_terms)
    return val


# ---------------------------------------------------------------------------
# Exponential relatives, (e^z - 1)/z and (e^z - 1 - z)/z^2, for real or complex z
# ---------------------------------------------------------------------------

_SMALL = 0.1


def exprel(z):
    """(e^z - 1)/z with the removable singularity at z = 0 filled in."""
    z = np.asarray(z)
    small = np.abs(z) < _SMALL
    zs = np.where(small, z, 0.0)
    # Taylor series 1 + z/2! + z^2/3! + ... to z^9
    series = np.ones_like(zs)
    term = np.ones_like(zs)
    for k in range(2, 12):
        term = term * zs / k
        series = series + term
    zb = np.where(small, 1.0, z)
    with np.errstate(over="ignore", invalid="ignore"):
        big = np.expm1(zb) / zb
    return np.where(small, series, big)


def exprel2(z):
    """(e^z - 1 - z)/z^2 with the removable singularity at z = 0 filled in."""
    z = np.asarray(z)
    small = np.abs(z) < _SMALL
    zs = np.where(small, z, 0.0)
    # 1/2! + z/3! + z^2/4! + ... to z^9
    term = np.full_like(zs, 0.5)
    series = term.copy()
    for k in range(3, 13):
        term = term * zs / k
        series = series + term
    zb = np.where(small, 1.0, z)
    with np.errstate(over="ignore", invalid="ignore"):
        big = (np.expm1(zb) - zb) / (zb * zb)
    return np.where(small, series, big)


# ---------------------------------------------------------------------------
# Appell F1
# ---------------------------------------------------------------------------


def _pochhammer_series(p: float, z: np.ndarray, n_terms: int) -> np.ndarray:
    """Rows of (p)_m z^m / m!, m = 0..n_terms-1."""
    m = np.arange(n_terms - 1, dtype=float)
    ratios = (p + m)[None, :] * z[:, None] / (m + 1.0)[None, :]
    out = np.ones((len(z), n_terms))
    out[:, 1:] = np.cumprod(ratios, axis=1)
    return out


def _degree_count(rho: float, tol: float) -> int:
    if rho <= 0:
        return 2
    # rho^K K^2 < tol, solved by a couple of fixed-point passes
    k = math.log(tol) / math.log(rho)
    for _ in range(3):
        k = (math.log(tol) - 2.0 * math.log(max(k, 2.0))) / math.log(rho)
    return int(k) + 16


def appell_f1_batch(
    a: float,
    b: float,
    b2: float,
    c: float,
    x,
    y,
    *,
    tol: float = 1e-15,
    max_terms: int = 1_000_000,
) -> np.ndarray:
    """Appell F1 for arrays of (x, y) sharing the parameters (a; b, b2; c).

    The series is truncated at total degree K where max(|x|,|y|)^K K^2 < tol.
    ``max_terms`` bounds the number of (m, n) pairs, K (K + 1) / 2.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    x = x.ravel()
    y = y.ravel()
    if np.any(np.abs(x) >= 1) or np.any(np.abs(y) >= 1):
        raise ValueError("appell_f1 requires |x| < 1 and |y| < 1")
    if c <= 0 and float(c).is_integer():
        raise ValueError("appell_f1 requires c not a non-positive integer")
    rho = float(max(np.max(np.abs(x), initial=0.0), np.max(np.abs(y), initial=0.0)))
    k_deg = max(_degree_count(rho, tol), 4)
    if k_deg * (k_deg + 1) // 2 > max_terms:
        raise AccuracyError(
            f"appell_f1 needs degree {k_deg} (> budget of {max_terms} terms) for max(|x|,|y|)={rho:.6f}"
        )
    sx = _pochhammer_series(b, x, k_deg)
    sy = _pochhammer_series(b2, y, k_deg)
    n_fft = 1 << int(math.ceil(math.log2(2 * k_deg)))
    conv = np.fft.irfft(np.fft.rfft(sx, n_fft, axis=1) * np.fft.rfft(sy, n_fft, axis=1), n_fft, axis=1)
    conv = conv[:, :k_deg]
    k = np.arange(k_deg - 1, dtype=float)
    coef = np.ones(k_deg)
    coef[1:] = np.cumprod((a + k) / (c + k))
    return (conv @ coef).reshape(shape)


def appell_f1(
    a: float,
    b: float,
    b2: float,
    c: float,
    x: float,
    y: float,
    *,
    tol: float = 1e-15,
    max_terms: int = 1_000_000,
) -> float:
    """Appell hypergeometric function F1(a; b, b2; c; x, y) inside the unit bidisc.

    Examples
    --------
    >>> appell_f1(1.0, 0.5, 0.5, 2.0, 0.0, 0.0)
    1.0
    """
    if abs(x) >= 1 or abs(y) >= 1:
        raise ValueError("appell_f1 requires |x| < 1 and |y| < 1")
    if c <= 0 and float(c).is_integer():
        raise ValueError("appell_f1 requires c not a non-positive integer")
    rho = max(abs(x), abs(y))
    k_deg = max(_degree_count(rho, tol), 4)
    if k_deg * (k_deg + 1) // 2 > max_terms:
        raise AccuracyError(
            f"appell_f1 needs degree {k_deg} (> budget of {max_terms} terms) for max(|x|,|y|)={rho:.6f}"
        )
    sx = _pochhammer_series(b, np.array([x]), k_deg)[0]
    sy = _pochhammer_series(b2, np.array([y]), k_deg)[0]
    conv = np.convolve(sx, sy)[:k_deg]
    k = np.arange(k_deg - 1, dtype=float)
    coef = np.ones(k_deg)
    coef[1:] = np.cumprod((a + k) / (c + k))
    return float(math.fsum(conv * coef))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def gauss_laguerre(level: int) -> QuadratureRule:
    """Gauss-Laguerre rule with ``level`` points for the weight e^{-x} on (0, inf).

    Exact for polynomials up to degree 2 * level - 1.
    """
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= 128:
        raise ValueError("Gauss-Laguerre level must be an integer in [1, 128]")
    nodes, weights = roots_laguerre(int(level))
    return QuadratureRule(np.asarray(nodes, float), np.asarray(weights, float), int(level))


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    x, w = _GL_CACHE[n]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w
