from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gamma

from volterra_hybrid.kernels import (
    KernelSpec,
    ResolventEval,
    UnsupportedKernelError,
    b_g,
    bond_loading,
    kernel_eval,
    kernel_integral,
    l2_norm_distance,
    laplace_measure_density,
    resolvent_eval,
)
from volterra_hybrid.riccati import FactorSet, multifactor_reduce

SPECS = [
    KernelSpec.constant(1.3),
    KernelSpec.exponential(0.8, 1.5),
    KernelSpec.fractional(1.0, 0.3),
    KernelSpec.fractional(0.7, 0.9845),
    KernelSpec.shifted_fractional(1.0, 0.2, 1 / 52),
    KernelSpec.cm_mixture([0.5, 0.3], [0.0, 2.0]),
]


class TestKernelSpec:
    def test_fractional_range(self):
        with pytest.raises(ValueError):
            KernelSpec.fractional(1.0, 0.0)
        with pytest.raises(ValueError):
            KernelSpec.fractional(1.0, 1.6)

    def test_shifted_needs_positive_shift(self):
        with pytest.raises(ValueError):
            KernelSpec.shifted_fractional(1.0, 0.3, 0.0)

    def test_mixture_nodes(self):
        with pytest.raises(ValueError):
            KernelSpec.cm_mixture([1.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            KernelSpec.cm_mixture([1.0], [-1.0])

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            KernelSpec.from_dict({"family": "gaussian"})
        with pytest.raises(ValueError):
            KernelSpec.from_dict({"family": "constant", "c": 1.0, "H": 0.2})

    @pytest.mark.parametrize("spec", SPECS)
    def test_dict_round_trip(self, spec):
        assert KernelSpec.from_dict(spec.to_dict()) == spec


class TestKernelEval:
    def test_constant(self):
        assert kernel_eval(KernelSpec.constant(1.0), 2.0, 1.0) == 1.0

    @pytest.mark.parametrize("spec", SPECS)
    def test_volterra_property(self, spec):
        assert kernel_eval(spec, 1.0, 1.0) == 0.0
        assert kernel_eval(spec, 1.0, 1.5) == 0.0

    def test_shifted_fractional_value(self):
        spec = KernelSpec.shifted_fractional(1.0, 0.2, 1 / 52)
        expected = (0.25 + 1 / 52) ** (-0.3) / gamma(0.7)
        assert kernel_eval(spec, 0.5, 0.25) == pytest.approx(expected, rel=1e-14)

    def test_shift_to_zero_limit(self):
        frac = kernel_eval(KernelSpec.fractional(1.0, 0.2), 0.5, 0.25)
        shifted = kernel_eval(KernelSpec.shifted_fractional(1.0, 0.2, 1e-12), 0.5, 0.25)
        assert shifted == pytest.approx(frac, rel=1e-9)

    @pytest.mark.parametrize("spec", SPECS)
    def test_integral_matches_quadrature(self, spec):
        t, a, b = 1.0, 0.2, 0.9
        ref, _ = quad(lambda s: kernel_eval(spec, t, s), a, b, limit=200)
        assert kernel_integral(spec, t, a, b) == pytest.approx(ref, rel=1e-9)


def volterra_residual(spec: KernelSpec, kappa: float, tau: float) -> float:
    """B(tau) - int_0^tau g - kappa int_0^tau g(tau - s) B(s) ds by adaptive quadrature."""
    load = bond_loading(spec, kappa)
    drive = float(kernel_integral(spec, tau, 0.0, tau))
    conv, _ = quad(lambda s: kernel_eval(spec, tau, s) * float(load.B(s)), 0.0, tau, limit=400, epsabs=1e-13)
    return float(load.B(tau)) - drive - kappa * conv


class TestResolvent:
    def test_constant_row(self):
        res = ResolventEval(KernelSpec.constant(1.0), 1.0)
        assert resolvent_eval(res, 0.5, 0.0) == pytest.approx(math.exp(0.5), rel=1e-12)

    def test_fractional_unit_alpha(self):
        res = ResolventEval(KernelSpec.fractional(1.0, 0.5), 2.0)
        assert resolvent_eval(res, 0.3, 0.0) == pytest.approx(2 * math.exp(0.6), rel=1e-12)

    @pytest.mark.parametrize("spec", SPECS[:4])
    def test_zero_multiplier_is_kernel(self, spec):
        res = ResolventEval(spec, 0.0)
        assert resolvent_eval(res, 1.0, 0.4) == pytest.approx(kernel_eval(spec, 1.0, 0.4), rel=1e-14)

    def test_exponential_without_decay_is_constant(self):
        t = np.array([0.3, 1.0, 4.0])
        a = resolvent_eval(ResolventEval(KernelSpec.exponential(0.7, 0.0), -0.4), t, 0.0)
        b = resolvent_eval(ResolventEval(KernelSpec.constant(0.7), -0.4), t, 0.0)
        assert np.allclose(a, b, rtol=1e-14)

    @pytest.mark.parametrize("spec", [KernelSpec.shifted_fractional(1.0, 0.3, 0.1), KernelSpec.cm_mixture([1.0], [1.0])])
    def test_closed_form_families_only(self, spec):
        with pytest.raises(UnsupportedKernelError):
            resolvent_eval(ResolventEval(spec, 0.5), 1.0, 0.0)
        with pytest.raises(UnsupportedKernelError):
            b_g(ResolventEval(spec, 0.5), 0.0, 1.0)

    def test_numerical_path_available(self):
        spec = KernelSpec.shifted_fractional(1.0, 0.3, 0.1)
        val = b_g(ResolventEval(spec, -0.5), 0.0, 2.0, numerical=True)
        assert np.isfinite(val) and val > 0

    def test_order(self):
        with pytest.raises(ValueError):
            resolvent_eval(ResolventEval(KernelSpec.constant(), 1.0), 0.5, 0.5)


class TestBondLoading:
    def test_zero_gap(self):
        assert b_g(ResolventEval(KernelSpec.fractional(1.0, 0.3), -0.5), 1.0, 1.0) == 0.0

    def test_constant_row(self):
        assert b_g(ResolventEval(KernelSpec.constant(1.0), 1.0), 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-12)

    def test_fractional_unit_alpha(self):
        val = b_g(ResolventEval(KernelSpec.fractional(1.0, 0.5), -0.03), 0.0, 2.0)
        assert val == pytest.approx(1.94118, abs=5e-6)
        assert val == pytest.approx(math.expm1(-0.06) / -0.03, rel=1e-10)

    def test_order(self):
        with pytest.raises(ValueError):
            b_g(ResolventEval(KernelSpec.constant(), 1.0), 2.0, 1.0)

    @pytest.mark.parametrize("spec", SPECS)
    @pytest.mark.parametrize("kappa", [-0.6, 0.0, 0.4])
    def test_volterra_equation(self, spec, kappa):
        # B = int g + kappa g * B, checked by independent adaptive quadrature;
        # the shifted family goes through the second-order grid solver
        tol = 1e-6 if bond_loading(spec, kappa).numerical else 1e-9
        for tau in (0.5, 3.0):
            assert abs(volterra_residual(spec, kappa, tau)) < tol * max(1.0, float(bond_loading(spec, kappa).B(tau)))

    @pytest.mark.parametrize("spec", SPECS[:4])
    def test_b_is_integral_of_resolvent(self, spec):
        kappa = -0.5
        load = bond_loading(spec, kappa)
        for tau in (0.4, 2.5):
            ref, _ = quad(lambda s: float(load.scaled_resolvent(s)), 0.0, tau, limit=400, epsabs=1e-14)
            assert float(load.B(tau)) == pytest.approx(ref, rel=1e-8)

    @given(st.floats(0.01, 20.0), st.floats(-1.0, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_antiderivative(self, tau, kappa):
        load = bond_loading(KernelSpec.fractional(1.0, 0.9845), kappa)
        ref, _ = quad(lambda s: float(load.B(s)), 0.0, tau, epsabs=1e-13, epsrel=1e-10)
        assert float(load.integral(tau)) == pytest.approx(ref, rel=1e-8, abs=1e-12)

    @given(st.floats(0.0, 30.0), st.floats(-1.0, 0.5))
    @settings(max_examples=30, deadline=None)
    def test_exponential_family_matches_fractional_unit_alpha(self, tau, kappa):
        a = bond_loading(KernelSpec.fractional(1.3, 0.5), kappa).B(tau)
        b = bond_loading(KernelSpec.exponential(1.3, 0.0), kappa).B(tau)
        assert float(a) == pytest.approx(float(b), rel=1e-10, abs=1e-14)


class TestL2:
    def test_zero_distance(self):
        spec = KernelSpec.fractional(1.0, 0.3)
        assert l2_norm_distance(spec, spec, 1.0) == 0.0

    def test_triangle(self):
        d = l2_norm_distance(KernelSpec.constant(1.0), KernelSpec.constant(0.0), 1.0)
        assert d == pytest.approx(math.sqrt(0.5), rel=1e-12)

    def test_fractional_power(self):
        # ||G||^2 = int_0^1 (1 - tau) tau^{2H - 1} / Gamma(H + 1/2)^2
        H = 0.3
        d = l2_norm_distance(KernelSpec.fractional(1.0, H), KernelSpec.constant(0.0), 1.0)
        exact = 1.0 / (2 * H * (2 * H + 1)) / gamma(H + 0.5) ** 2
        assert d**2 == pytest.approx(exact, rel=1e-10)

    def test_factor_count_improves_approximation(self):
        spec = KernelSpec.fractional(1.0, 0.3)
        d5 = l2_norm_distance(spec, multifactor_reduce(spec, 5, 1.0).to_kernel(), 1.0)
        d20 = l2_norm_distance(spec, multifactor_reduce(spec, 20, 1.0).to_kernel(), 1.0)
        assert d20 < d5

    def test_grid_guard(self):
        with pytest.raises(ValueError):
            l2_norm_distance(KernelSpec.constant(), KernelSpec.constant(), 1.0, grid=8)


def test_laplace_density_reproduces_kernel():
    spec = KernelSpec.shifted_fractional(1.0, 0.2, 0.05)
    tau = 0.7
    val, _ = quad(lambda x: laplace_measure_density(spec, x) * math.exp(-x * tau), 0.0, np.inf, limit=400)
    assert val == pytest.approx(kernel_eval(spec, tau, 0.0), rel=1e-8)


def test_factor_set_round_trip():
    fs = FactorSet((0.5, 0.25), (0.0, 3.0))
    assert FactorSet.from_kernel(fs.to_kernel()) == fs
