"""Acceptance suite: one test per criterion, each printing a single verdict line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are repeated in
an "acceptance criteria" section at the end of the pytest report.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import VERDICTS
from helpers import STRIKES, fitted_equity, fitted_rates, random_model, reference_model, stein_stein_model, zero_correlation
from volterra_hybrid.calibration import CalibOptions, CapQuote, OptionQuote, calibrate_equity, calibrate_rates, equity_model_vols, rate_model_vols
from volterra_hybrid.charfn import ModelParams, build_engine, charfn, sigma_matrix
from volterra_hybrid.fourier import OptionRequest, atm_skew, lewis_call
from volterra_hybrid.kernels import KernelSpec, kernel_eval
from volterra_hybrid.montecarlo import SimConfig, simulate_equity
from volterra_hybrid.rates import (
    CapSpec,
    RateLegParams,
    atm_cap_vol_curve,
    bond_price,
    cap_price,
    strip_r0,
    zc_option_price,
)
from volterra_hybrid.riccati import FactorSet, multifactor_reduce, riccati_charfn, stein_stein_charfn
from volterra_hybrid.specialfn import gauss_laguerre, mittag_leffler

pytestmark = pytest.mark.acceptance


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def riccati_factors(model: ModelParams, T: float, rng: np.random.Generator) -> FactorSet:
    """Factors for the Riccati route: the kernel itself when Markovian, else a reduction or a random mixture."""
    kernel = model.equity.kernel
    if kernel.family in ("constant", "exponential"):
        return FactorSet.from_kernel(kernel)
    if kernel.alpha < 1.0:
        return multifactor_reduce(kernel, 5, T)
    return FactorSet.from_kernel(KernelSpec.cm_mixture(rng.uniform(0.1, 1.0, 3), rng.uniform(0.0, 5.0, 3)))


def test_martingale_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(5):
        model = random_model(rng)
        T = float(rng.uniform(0.1, 2.0))
        for N in (2, 17, 64):
            for scheme in ("left", "midpoint"):
                phi = charfn(build_engine(model, T, N, scheme=scheme), np.array([0.0, 1.0]))
                worst = max(worst, float(np.max(np.abs(phi - 1.0))))
        factors = riccati_factors(model, T, rng)
        for steps in (100, 257, 1000):
            phi = riccati_charfn(model, T, np.array([0.0, 1.0]), steps, factors=factors)
            worst = max(worst, float(np.max(np.abs(phi - 1.0))))
    elapsed = time.perf_counter() - start
    verdict(1, "martingale identities", worst <= 1e-12 and elapsed < 60, f"max |phi-1| {worst:.1e}, {elapsed:.0f}s")


def test_table_two_reproduction():
    start = time.perf_counter()
    model = reference_model(0.5)
    T = 0.05
    rule = gauss_laguerre(60)
    u = rule.nodes
    z = 0.5 + 1j * u
    exact = stein_stein_charfn(model.with_equity(kernel=KernelSpec.constant()), T, z)
    scale = rule.weights * np.exp(u) / (u * u + 0.25)
    errors = {}
    for scheme in ("left", "midpoint"):
        errors[scheme] = [float(np.sum(scale * np.abs((charfn(build_engine(model, T, N, scheme=scheme), z) - exact).real))) for N in (10, 40, 100)]
    elapsed = time.perf_counter() - start
    ok = all(e[0] > e[1] > e[2] and e[2] <= 1.5e-4 for e in errors.values()) and elapsed < 300
    detail = ", ".join(f"{s} " + "/".join(f"{v:.2e}" for v in e) for s, e in errors.items())
    verdict(2, "discretization error table", ok, f"N=10/40/100: {detail}; {elapsed:.0f}s")


def test_oracle_agreement():
    start = time.perf_counter()
    model = stein_stein_model()
    z = 0.5 + 1j * np.array([1.0, 3.0, 10.0])
    worst = 0.0
    for T in (0.25, 1.0):
        exact = stein_stein_charfn(model, T, z)
        operator = charfn(build_engine(model, T, 400), z)
        markov = riccati_charfn(model, T, z, 2000)
        worst = max(worst, float(np.max(np.abs(operator - exact))), float(np.max(np.abs(markov - exact))), float(np.max(np.abs(operator - markov))))
    elapsed = time.perf_counter() - start
    verdict(3, "closed form vs operator vs Riccati", worst <= 1e-5 and elapsed < 300, f"max gap {worst:.1e}, {elapsed:.0f}s")


def test_monte_carlo_consistency():
    start = time.perf_counter()
    rows = []
    for H in (0.3, 0.5):
        model = reference_model(H)
        for T in (0.25, 1.0):
            mc = simulate_equity(model, T, SimConfig(50_000, 300, 7), STRIKES)
            fourier = lewis_call(build_engine(model, T, 40), OptionRequest.from_forward(T, STRIKES, 100.0))
            inside = (fourier >= mc.ci_low) & (fourier <= mc.ci_high)
            rows.append((H, T, int(inside.sum())))
    elapsed = time.perf_counter() - start
    ok = all(k >= math.ceil(0.9 * len(STRIKES)) for *_, k in rows) and elapsed < 900
    detail = ", ".join(f"H={H} T={T}: {k}/{len(STRIKES)}" for H, T, k in rows)
    verdict(4, "Monte Carlo confidence intervals", ok, f"{detail}; {elapsed:.0f}s")


def test_rates_round_trip():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    families = {
        "constant": KernelSpec.constant(),
        "exponential": KernelSpec.exponential(1.0, 0.5),
        "fractional": KernelSpec.fractional(1.0, 0.9845),
    }
    worst = 0.0
    for _ in range(5):
        pillars = np.cumsum(rng.uniform(0.25, 3.0, 12))
        discounts = np.exp(-np.cumsum(rng.uniform(-0.005, 0.06, 12) * np.diff(pillars, prepend=0.0)))
        for kernel in families.values():
            params = RateLegParams(float(rng.uniform(-0.6, 0.1)), float(rng.uniform(0.0, 0.04)), kernel)
            curve = strip_r0(pillars, discounts, params)
            worst = max(worst, float(np.max(np.abs(bond_price(curve, None, pillars) / discounts - 1.0))))
    elapsed = time.perf_counter() - start
    verdict(5, "curve stripping round trip", worst <= 1e-10 and elapsed < 60, f"max rel error {worst:.1e}, {elapsed:.1f}s")


def test_parity_and_cap_decomposition():
    rng = np.random.default_rng(11)
    kernels = [KernelSpec.constant(), KernelSpec.fractional(1.0, 0.9845), KernelSpec.fractional(1.0, 0.3)]
    curves = []
    for kernel in kernels:
        pillars = 0.25 * np.arange(1, 41)
        discounts = np.exp(-0.03 * pillars - 0.002 * pillars * np.sin(pillars))
        curves.append(strip_r0(pillars, discounts, RateLegParams(-0.4, 0.02, kernel)))
    parity = decomposition = 0.0
    for _ in range(1000):
        curve = curves[rng.integers(len(curves))]
        params = RateLegParams(float(rng.uniform(-1.0, 0.2)), float(rng.uniform(0.0, 0.05)), curve.params.kernel)
        T = float(rng.uniform(0.1, 8.0))
        S = T + float(rng.uniform(0.05, 2.0))
        p_t, p_s = bond_price(curve, params, np.array([T, S]))
        K = float(p_s / p_t * rng.uniform(0.9, 1.1))
        call = zc_option_price(curve, params, T, S, K, "call")
        put = zc_option_price(curve, params, T, S, K, "put")
        parity = max(parity, abs((call - put) - (p_s - K * p_t)))
        n = int(rng.integers(1, 12))
        first = float(rng.uniform(0.1, 1.0))
        dates = tuple(first + 0.25 * np.arange(n + 1))
        strike = float(rng.uniform(0.0, 0.08))
        caps = cap_price(curve, params, CapSpec(dates, strike, "cap"))
        floors = cap_price(curve, params, CapSpec(dates, strike, "floor"))
        disc = bond_price(curve, params, np.array(dates))
        tau = np.diff(dates)
        swap = math.fsum(disc[:-1] - disc[1:] - strike * tau * disc[1:])
        pieces = math.fsum(
            (1 + strike * t) * zc_option_price(curve, params, a, b, 1.0 / (1 + strike * t), "put")
            for a, b, t in zip(dates[:-1], dates[1:], tau)
        )
        decomposition = max(decomposition, abs(caps - floors - swap), abs(caps - pieces))
    ok = parity <= 1e-12 and decomposition <= 1e-12
    verdict(6, "bond option parity and cap decomposition", ok, f"parity {parity:.1e}, decomposition {decomposition:.1e}, 1000 cases")


def single_interior_maximum(v: np.ndarray) -> bool:
    k = int(np.argmax(v))
    return 0 < k < len(v) - 1 and np.all(np.diff(v[: k + 1]) > 0) and np.all(np.diff(v[k:]) < 0)


def test_cap_vol_hump():
    start = time.perf_counter()
    pillars = 0.25 * np.arange(1, 121)
    discounts = np.exp(-0.03 * pillars)
    mats = np.arange(1.0, 31.0)
    fitted = fitted_rates()
    hump = atm_cap_vol_curve(strip_r0(pillars, discounts, fitted), None, mats)
    hull_white = RateLegParams(fitted.kappa_r, fitted.eta_r, KernelSpec.fractional(1.0, 0.5))
    flat = atm_cap_vol_curve(strip_r0(pillars, discounts, hull_white), None, mats)
    monotone = bool(np.all(np.diff(flat) < 0) or np.all(np.diff(flat) > 0))
    elapsed = time.perf_counter() - start
    peak = mats[int(np.argmax(hump))]
    ok = single_interior_maximum(hump) and monotone and elapsed < 120
    verdict(7, "cap vol hump", ok, f"fitted kernel peaks at {peak:.0f}y, H=0.5 {'monotone' if monotone else 'not monotone'}; {elapsed:.1f}s")


def test_calibration_round_trips():
    start = time.perf_counter()
    pillars = 0.25 * np.arange(1, 121)
    discounts = np.exp(-0.03 * pillars)
    truth = fitted_rates()
    mats = np.arange(1.0, 31.0)
    caps = [CapQuote(m, v) for m, v in zip(mats, rate_model_vols(pillars, discounts, truth, mats))]
    rates = calibrate_rates((pillars, discounts), caps, RateLegParams(-0.3, 0.02, KernelSpec.fractional(1.0, 0.7)), CalibOptions(max_evals=300))
    rate_err = max(abs(rates.params[k] / v - 1.0) for k, v in (("kappa_r", truth.kappa_r), ("eta_r", truth.eta_r), ("H_r", truth.kernel.H)))

    target = fitted_equity()
    grid = [OptionQuote(T, K, 0.0) for T in (0.25, 0.5, 1.0, 1.5, 2.0) for K in STRIKES]
    vols = equity_model_vols(ModelParams(truth, target), grid)
    quotes = [OptionQuote(q.maturity, q.strike, v) for q, v in zip(grid, vols)]
    start_eq = target.with_params(nu0=0.15, theta_nu=0.0, eta_nu=0.3, rho_I_nu=-0.5, rho_I_r=-0.4, kernel=target.kernel.with_params(H=0.35))
    shifted = calibrate_equity(truth, quotes, start_eq, CalibOptions(max_evals=1000))
    names = {"nu0": target.nu0, "theta_nu": target.theta_nu, "eta_nu": target.eta_nu, "rho_I_nu": target.rho_I_nu, "rho_I_r": target.rho_I_r, "H_nu": target.kernel.H}
    eq_err = max(abs(shifted.params[k] / v - 1.0) for k, v in names.items())

    fractional = calibrate_equity(truth, quotes, start_eq.with_params(kernel=KernelSpec.fractional(1.0, 0.35)), CalibOptions(max_evals=1000))
    elapsed = time.perf_counter() - start
    ok = rate_err <= 0.05 and rates.rmse < 1e-6 and eq_err <= 0.10 and shifted.rmse <= fractional.rmse and elapsed < 1800
    detail = (
        f"rates max rel err {rate_err:.1e} rmse {rates.rmse:.1e}; equity max rel err {eq_err:.1e} rmse {shifted.rmse:.1e}; "
        f"fractional-kernel rmse {fractional.rmse:.1e}; {elapsed:.0f}s"
    )
    verdict(8, "calibration round trips", ok, detail)


def test_symmetry():
    model = zero_correlation(reference_model(0.3))
    skews = []
    sym = 0.0
    for T in (0.25, 1.0):
        engine = build_engine(model, T, 40)
        skews.append(abs(atm_skew(engine, T)))
        z = np.array([0.2 + 0.7j, 0.5 + 3.0j, 0.9 - 1.5j, 0.3 + 0.0j])
        sym = max(sym, float(np.max(np.abs(charfn(engine, z) - charfn(engine, 1.0 - z)))))
    ok = max(skews) <= 1e-6 and sym <= 1e-10
    verdict(9, "zero-correlation symmetry", ok, f"max |skew| {max(skews):.1e}, max |phi(u)-phi(1-u)| {sym:.1e}")


def test_special_functions():
    start = time.perf_counter()
    checks = []
    checks.append(abs(mittag_leffler(1.0, 1.0, 2.0) / math.exp(2.0) - 1.0) <= 1e-10)
    checks.append(abs(mittag_leffler(1.0, 2.0, 1.0) / (math.e - 1.0) - 1.0) <= 1e-10)
    checks.append(all(abs(mittag_leffler(1.0, 1.0, x) / math.exp(x) - 1.0) <= 1e-12 for x in np.linspace(-5, 5, 41)))
    one, two, forty = gauss_laguerre(1), gauss_laguerre(2), gauss_laguerre(40)
    checks.append(np.allclose(one.nodes, [1.0], rtol=1e-14) and np.allclose(one.weights, [1.0], rtol=1e-14))
    r2 = math.sqrt(2.0)
    checks.append(np.allclose(two.nodes, [2 - r2, 2 + r2], rtol=1e-14) and np.allclose(two.weights, [(2 + r2) / 4, (2 - r2) / 4], rtol=1e-14))
    moments = [math.fsum(forty.weights * forty.nodes**k) / math.factorial(k) - 1.0 for k in range(80)]
    checks.append(max(abs(m) for m in moments) <= 1e-9)
    checks.append(all(abs(gauss_laguerre(L).weights.sum() - 1.0) <= 1e-12 for L in (1, 5, 40, 128)))

    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        H = float(rng.uniform(0.05, 0.95))
        eps = float(rng.uniform(0.005, 0.2))
        kernel = KernelSpec.shifted_fractional(1.0, H, eps)
        nodes = np.linspace(0.0, float(rng.uniform(0.5, 3.0)), 21)
        i, j = sorted(int(v) for v in rng.integers(1, 21, 2))
        closed = sigma_matrix(kernel, 1.0, nodes, "closed")[i, j]
        ref, _ = quad(lambda s: kernel_eval(kernel, nodes[i], s) * kernel_eval(kernel, nodes[j], s), 0.0, nodes[i], epsabs=0.0, epsrel=1e-12, limit=500)
        worst = max(worst, abs(closed / ref - 1.0))
    elapsed = time.perf_counter() - start
    ok = all(checks) and worst <= 1e-6 and elapsed < 60
    verdict(10, "special functions", ok, f"{sum(checks)}/{len(checks)} identities, Sigma vs quadrature max rel {worst:.1e}, {elapsed:.1f}s")
