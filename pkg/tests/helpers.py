"""Shared parameter sets for the test suite."""

from __future__ import annotations

import numpy as np

from volterra_hybrid.charfn import EquityLegParams, ModelParams
from volterra_hybrid.kernels import KernelSpec
from volterra_hybrid.rates import RateLegParams

STRIKES = np.arange(80.0, 121.0, 5.0)

# fitted rate leg used throughout the cap tests
FITTED_RATES = dict(kappa_r=-0.5566, eta_r=0.0377, H_r=0.9845)
# fitted shifted-fractional equity leg
FITTED_EQUITY = dict(nu0=0.1978, theta_nu=-0.0259, eta_nu=0.2164, rho_I_nu=-0.7868, rho_I_r=-0.6107, H_nu=0.2273)


def fitted_rates() -> RateLegParams:
    p = FITTED_RATES
    return RateLegParams(p["kappa_r"], p["eta_r"], KernelSpec.fractional(1.0, p["H_r"]))


def fitted_equity(kernel: KernelSpec | None = None) -> EquityLegParams:
    p = FITTED_EQUITY
    kern = kernel or KernelSpec.shifted_fractional(1.0, p["H_nu"], 1.0 / 52.0)
    return EquityLegParams(p["nu0"], p["theta_nu"], 0.0, p["eta_nu"], kern, p["rho_I_nu"], p["rho_I_r"], 0.0)


def stein_stein_model(kernel: KernelSpec | None = None) -> ModelParams:
    """Constant-kernel volatility with a constant rate kernel."""
    eq = EquityLegParams(0.1, 0.1, 0.0, 0.125, kernel or KernelSpec.constant(), -0.7, -0.25, -0.25)
    return ModelParams(RateLegParams(-0.03, 0.01), eq)


def reference_model(H: float = 0.5) -> ModelParams:
    """Fractional volatility kernel with the short-maturity test parameters."""
    eq = EquityLegParams(0.2, 0.1, 0.0, 0.2, KernelSpec.fractional(1.0, H), -0.7, -0.25, -0.25)
    return ModelParams(RateLegParams(-0.03, 0.01), eq)


def deterministic_model(vol: float = 0.2, eta_r: float = 0.0) -> ModelParams:
    return ModelParams(RateLegParams(-0.03, eta_r), EquityLegParams(vol, 0.0, 0.0, 0.0))


def zero_correlation(model: ModelParams) -> ModelParams:
    return model.with_equity(rho_I_nu=0.0, rho_I_r=0.0, rho_nu_r=0.0)


def random_model(rng: np.random.Generator) -> ModelParams:
    """A random admissible parameter set with a random kernel family."""
    while True:
        rho = rng.uniform(-0.8, 0.8, 3)
        lam = np.linalg.eigvalsh(np.array([[1, rho[0], rho[1]], [rho[0], 1, rho[2]], [rho[1], rho[2], 1]]))
        if lam[0] > 1e-3:
            break
    fam = rng.integers(4)
    if fam == 0:
        kern = KernelSpec.constant(rng.uniform(0.5, 1.5))
    elif fam == 1:
        kern = KernelSpec.exponential(rng.uniform(0.5, 1.5), rng.uniform(0.1, 2.0))
    elif fam == 2:
        kern = KernelSpec.fractional(1.0, rng.uniform(0.1, 0.9))
    else:
        kern = KernelSpec.shifted_fractional(1.0, rng.uniform(0.1, 0.9), rng.uniform(0.01, 0.1))
    eq = EquityLegParams(
        rng.uniform(0.05, 0.3),
        rng.uniform(-0.1, 0.2),
        rng.uniform(-0.5, 0.2),
        rng.uniform(0.05, 0.4),
        kern,
        *rho,
    )
    rk = KernelSpec.fractional(1.0, rng.uniform(0.3, 1.2)) if rng.random() < 0.5 else KernelSpec.constant()
    return ModelParams(RateLegParams(rng.uniform(-0.5, 0.1), rng.uniform(0.0, 0.03), rk), eq)


def flat_curve(rate: float = 0.03, years: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    pillars = 0.25 * np.arange(1, int(round(years * 4)) + 1)
    return pillars, np.exp(-rate * pillars)
