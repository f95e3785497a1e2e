from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import deterministic_model, reference_model, stein_stein_model
from volterra_hybrid.charfn import EquityLegParams, ModelParams, build_engine, charfn
from volterra_hybrid.kernels import KernelSpec, l2_norm_distance
from volterra_hybrid.rates import RateLegParams
from volterra_hybrid.riccati import (
    FactorSet,
    RiccatiConvergenceError,
    multifactor_reduce,
    riccati_charfn,
    riccati_solve,
    stein_stein_charfn,
)

U_POINTS = 0.5 + 1j * np.array([0.0, 1.0, 3.0, 10.0])


class TestReduction:
    def test_mixture_identity(self):
        kernel = KernelSpec.cm_mixture([0.4, 0.6], [0.5, 3.0])
        fs = multifactor_reduce(kernel, 7, 1.0)
        assert fs == FactorSet((0.4, 0.6), (0.5, 3.0))

    def test_point_mass_is_exponential(self):
        fs = multifactor_reduce(KernelSpec.exponential(1.0, 0.8), 1, 1.0)
        assert fs.weights == (1.0,) and fs.nodes == (0.8,)

    def test_l2_improves_with_factors(self):
        kernel = KernelSpec.fractional(1.0, 0.3)
        d = [l2_norm_distance(kernel, multifactor_reduce(kernel, n, 1.0).to_kernel(), 1.0) for n in (5, 20)]
        assert d[1] < d[0]

    def test_shifted_kernel(self):
        kernel = KernelSpec.shifted_fractional(1.0, 0.2, 0.05)
        d5 = l2_norm_distance(kernel, multifactor_reduce(kernel, 5, 1.0).to_kernel(), 1.0)
        d20 = l2_norm_distance(kernel, multifactor_reduce(kernel, 20, 1.0).to_kernel(), 1.0)
        assert d20 < d5 < 0.2

    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError):
            multifactor_reduce(KernelSpec.fractional(1.0, 0.7), 5, 1.0)

    def test_factor_validation(self):
        with pytest.raises(ValueError):
            FactorSet((1.0, 2.0), (1.0, 1.0))
        with pytest.raises(ValueError):
            FactorSet((1.0,), (-0.5,))

    def test_moment_matching(self):
        # bin weights add up to the Laplace mass covered by the partition
        kernel = KernelSpec.fractional(1.0, 0.3)
        fs = multifactor_reduce(kernel, 10, 1.0)
        assert np.all(np.asarray(fs.weights) > 0)
        assert np.all(np.diff(fs.nodes) > 0)


class TestRiccati:
    def test_martingale_points(self):
        model = stein_stein_model()
        state = riccati_solve(model, 1.0, np.array([0.0, 1.0]), 200)
        assert np.all(state.A == 0) and np.all(state.B == 0) and np.all(state.C == 0)
        assert np.all(riccati_charfn(model, 1.0, np.array([0.0, 1.0]), 100) == 1.0)

    def test_symmetric_c(self):
        fs = multifactor_reduce(KernelSpec.fractional(1.0, 0.3), 6, 1.0)
        state = riccati_solve(reference_model(0.3), 1.0, np.array([0.5 + 2j]), 200, factors=fs)
        assert np.allclose(state.C, np.swapaxes(state.C, 1, 2), atol=0)

    def test_closed_form_agreement(self):
        model = stein_stein_model()
        for T in (0.25, 1.0):
            assert np.max(np.abs(riccati_charfn(model, T, U_POINTS, 2000) - stein_stein_charfn(model, T, U_POINTS))) < 1e-6

    def test_step_convergence(self):
        model = stein_stein_model()
        a = riccati_charfn(model, 1.0, U_POINTS, 2000)
        b = riccati_charfn(model, 1.0, U_POINTS, 4000)
        assert np.max(np.abs(a - b)) <= 1e-7

    def test_many_stiff_factors(self):
        # fast factors are integrated exactly and must not stall the solver
        fs = multifactor_reduce(KernelSpec.fractional(1.0, 0.3), 40, 1.0)
        assert max(fs.nodes) > 1e6
        val = riccati_charfn(reference_model(0.3), 1.0, np.array([0.5 + 20j]), 200, factors=fs)
        assert np.all(np.isfinite(val))

    def test_operator_agreement_for_mixture(self):
        kernel = KernelSpec.cm_mixture([0.6, 0.5], [0.2, 2.0])
        model = reference_model().with_equity(kernel=kernel)
        ric = riccati_charfn(model, 1.0, U_POINTS, 2000)
        op = charfn(build_engine(model, 1.0, 400), U_POINTS)
        assert np.max(np.abs(ric - op)) < 1e-5

    def test_validation(self):
        with pytest.raises(ValueError):
            riccati_charfn(stein_stein_model(), 1.0, 0.5, 50)
        with pytest.raises(ValueError):
            riccati_charfn(stein_stein_model(), 1.0, 1.2, 200)
        with pytest.raises(ValueError):
            riccati_charfn(reference_model(0.3), 1.0, 0.5, 200)

    def test_stall_is_reported(self):
        with pytest.raises(RiccatiConvergenceError):
            riccati_solve(stein_stein_model(), 1.0, np.array([0.5 + 5j]), 1, max_iter=1, tol=0.0)


class TestSteinStein:
    def test_martingale_points(self):
        vals = stein_stein_charfn(stein_stein_model(), 1.0, np.array([0.0, 1.0]))
        assert np.max(np.abs(vals - 1)) < 1e-14

    def test_deterministic_limit(self):
        # eta_nu -> 0, theta = 0, beta -> 0 reduces to the lognormal case
        T = 1.0
        model = ModelParams(RateLegParams(-0.03, 0.01), EquityLegParams(0.2, 0.0, 0.0, 1e-9, KernelSpec.exponential(1.0, 1e-9), rho_I_r=-0.3))
        det = build_engine(ModelParams(model.rates, EquityLegParams(0.2, 0.0, 0.0, 0.0, rho_I_r=-0.3)), T, 2000)
        for u in (0.3, 0.5 + 2j):
            assert abs(stein_stein_charfn(model, T, u) - charfn(det, u)) < 1e-7

    def test_operator_oracle(self):
        model = stein_stein_model()
        u = 0.5 + 3j
        op = charfn(build_engine(model, 1.0, 400), u)
        assert abs(stein_stein_charfn(model, 1.0, u) - op) < 1e-5

    def test_needs_constant_rate_kernel(self):
        model = stein_stein_model().with_rates(kernel=KernelSpec.fractional(1.0, 0.8))
        with pytest.raises(ValueError):
            stein_stein_charfn(model, 1.0, 0.5)

    @given(st.floats(0.0, 1.0), st.floats(-20.0, 20.0))
    @settings(max_examples=30, deadline=None)
    def test_conjugate_symmetry(self, re, im):
        model = stein_stein_model()
        z = complex(re, im)
        assert abs(stein_stein_charfn(model, 0.5, np.conj(z)) - np.conj(stein_stein_charfn(model, 0.5, z))) < 1e-13


def test_deterministic_route_agreement():
    model = deterministic_model(0.2, 0.01).with_equity(kernel=KernelSpec.exponential(1.0, 0.5))
    ric = riccati_charfn(model, 1.0, U_POINTS, 500)
    op = charfn(build_engine(model, 1.0, 400), U_POINTS)
    assert np.max(np.abs(ric - op)) < 1e-6


def test_hundred_factor_atm_vol_matches_operator():
    from volterra_hybrid.fourier import OptionRequest, implied_vol, lewis_call, lewis_call_mgf

    model = reference_model(0.3)
    req = OptionRequest.from_forward(1.0, [100.0], 100.0)
    fs = multifactor_reduce(model.equity.kernel, 100, 1.0)
    ric = lewis_call_mgf(lambda z: riccati_charfn(model, 1.0, z, 100, factors=fs), req)
    op = lewis_call(build_engine(model, 1.0, 200), req)
    vol_ric = implied_vol(ric[0], 100.0, 100.0, 1.0)
    vol_op = implied_vol(op[0], 100.0, 100.0, 1.0)
    assert abs(vol_ric - vol_op) < 0.005
