"""Tests for the linearized density evolution module."""

import numpy as np
import pytest

from vpdamp.equilibria import gaussian, zero
from vpdamp.linear import (
    DensityTrace,
    FitResult,
    contour_parameters,
    cosine_initial_hat,
    fit_decay,
    resolvent_kernel,
    solve_via_kernel,
    source_from_initial,
    volterra_solve,
)
from vpdamp.spectral import Grid, SpectralState

# Dominant Landau root of the gaussian background at k = 1, frozen from an
# independent trapezoid-quadrature Newton oracle.
GAUSSIAN_ROOT_K1 = -0.8513304555998186 + 2.045904868820431j

EQ = gaussian()
STUB = zero()
EPS = 1e-3


def single_mode_source(k=1, eps=EPS, offset=0.0):
    hat0 = cosine_initial_hat(EQ, [(k, eps, offset)])
    return hat0, (lambda t, _h=hat0, _k=k: np.asarray(_h(_k, _k * np.atleast_1d(t)), complex))


class TestTrace:
    def test_field_relation_exact(self):
        t = np.linspace(0, 1, 5)
        vals = np.exp(1j * t)
        tr = DensityTrace(k=3, times=t, values=vals)
        assert np.array_equal(tr.field_values, vals / (3j))

    def test_zero_mode_rejected(self):
        with pytest.raises(ValueError, match="k != 0"):
            DensityTrace(k=0, times=np.zeros(3), values=np.zeros(3, complex))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matching"):
            DensityTrace(k=1, times=np.zeros(3), values=np.zeros(4, complex))


class TestSource:
    def test_single_cosine_closed_form(self):
        hat0, _ = single_mode_source()
        t = np.linspace(0.0, 4.0, 9)
        got = source_from_initial(hat0, 1, t)
        assert np.allclose(got, 0.5 * EPS * np.exp(-0.5 * t**2), atol=1e-15)

    def test_eta_offset_shifts_the_profile(self):
        hat0 = cosine_initial_hat(EQ, [(2, EPS, 1.5)])
        t = np.array([0.0, 0.5, 1.0])
        got = source_from_initial(hat0, 2, t)
        assert np.allclose(got, 0.5 * EPS * np.exp(-0.5 * (2 * t - 1.5) ** 2), atol=1e-15)

    def test_conjugate_mode(self):
        hat0, _ = single_mode_source()
        t = np.linspace(0.0, 2.0, 5)
        plus = np.asarray(hat0(1, t))
        minus = np.asarray(hat0(-1, -t))
        assert np.allclose(minus, np.conj(plus), atol=1e-16)

    def test_absent_mode_is_zero(self):
        hat0, _ = single_mode_source()
        assert np.all(source_from_initial(hat0, 3, np.linspace(0, 2, 5)) == 0)

    def test_spectral_state_path_matches_closed_form(self):
        g = Grid(k_max=2, V=8.0, N_v=256)
        st = SpectralState.zeros(g)
        st.data[g.mode_index(1)] = 0.5 * EPS * EQ.mu(g.v)
        st.data[g.mode_index(-1)] = 0.5 * EPS * EQ.mu(g.v)
        hat0, _ = single_mode_source()
        t = np.linspace(0.0, 3.0, 7)
        got = source_from_initial(st, 1, t)
        assert np.max(np.abs(got - hat0(1, t))) < 1e-12

    def test_scalar_time_returns_scalar(self):
        hat0, _ = single_mode_source()
        out = source_from_initial(hat0, 1, 1.5)
        assert isinstance(out, complex)


class TestVolterra:
    def test_stub_background_returns_source_exactly(self):
        src = lambda t: np.exp(-0.3 * np.atleast_1d(t)).astype(complex)
        tr = volterra_solve(STUB, 2, src, 1e-2, 10.0)
        assert np.array_equal(tr.values, src(tr.times))

    def test_initial_value_exact(self):
        _, src = single_mode_source()
        tr = volterra_solve(EQ, 1, src, 1e-2, 1.0)
        assert tr.values[0] == 0.5 * EPS

    def test_linearity_under_power_of_two_scaling(self):
        _, src = single_mode_source()
        tr1 = volterra_solve(EQ, 1, src, 1e-2, 5.0)
        tr2 = volterra_solve(EQ, 1, lambda t: 2.0 * src(t), 1e-2, 5.0)
        assert np.array_equal(tr2.values, 2.0 * tr1.values)

    def test_richardson_ratio_near_four(self):
        # second-order accuracy: halving dt shrinks the t = 5 error 4x
        _, src = single_mode_source()
        end = {}
        for dt in (4e-3, 2e-3, 1e-3):
            end[dt] = volterra_solve(EQ, 1, src, dt, 5.0).values[-1]
        ratio = abs(end[4e-3] - end[2e-3]) / abs(end[2e-3] - end[1e-3])
        assert 3.5 < ratio < 4.5

    def test_decay_rate_matches_dispersion_root(self):
        _, src = single_mode_source()
        tr = volterra_solve(EQ, 1, src, 1e-3, 20.0)
        fit = fit_decay(tr, 1.0, window=(5.0, 20.0))
        target = -GAUSSIAN_ROOT_K1.real
        assert abs(fit.rate - target) / target < 0.02
        assert abs(fit.rate - target) < 1e-3

    @pytest.mark.parametrize(
        "dt,T,msg",
        [(0.0, 1.0, "positive"), (-0.1, 1.0, "positive"), (0.3, 1.0, "integer multiple")],
    )
    def test_grid_validation(self, dt, T, msg):
        _, src = single_mode_source()
        with pytest.raises(ValueError, match=msg):
            volterra_solve(EQ, 1, src, dt, T)

    def test_step_limit(self):
        _, src = single_mode_source()
        with pytest.raises(ValueError, match="step limit"):
            volterra_solve(EQ, 1, src, 1e-8, 200.0)


class TestKernel:
    def test_stub_kernel_identically_zero(self):
        t = 1e-2 * np.arange(101)
        ker = resolvent_kernel(STUB, 1, 0.25, 50.0, 256, t)
        assert np.max(np.abs(ker.values)) == 0.0

    def test_abscissa_beyond_strip_refused(self):
        with pytest.raises(ValueError, match="certified strip"):
            resolvent_kernel(EQ, 1, 0.9, 100.0, 512, np.linspace(0, 1, 11))

    def test_omega_tail_refused(self):
        with pytest.raises(ValueError, match="tail"):
            resolvent_kernel(EQ, 1, 0.25, 5.0, 64, np.linspace(0, 1, 11))

    @pytest.mark.parametrize("bad", [(0.0, 100.0, 64), (0.25, -1.0, 64), (0.25, 100.0, 1)])
    def test_parameter_validation(self, bad):
        with pytest.raises(ValueError):
            resolvent_kernel(EQ, 1, *bad, np.linspace(0, 1, 11))

    def test_small_time_behaviour(self):
        # K(0) = 0 and K'(0) = -mu_hat(0) = -1
        th, Om, nq = contour_parameters(EQ, 1, 1.0)
        ker = resolvent_kernel(EQ, 1, th, Om, nq, np.array([0.0, 0.01]))
        assert abs(ker.values[0]) < 1e-10
        assert abs(ker.values[1] / 0.01 + 1.0) < 1e-3

    def test_decay_certificate(self):
        times = 2e-3 * np.arange(5001)
        th, Om, nq = contour_parameters(EQ, 1, 10.0)
        ker = resolvent_kernel(EQ, 1, th, Om, nq, times)
        assert ker.theta_fit > 0.8  # Landau rate of the k = 1 root
        assert ker.C_fit < 2.0
        mag = np.abs(ker.values)
        usable = mag > 1e-12 * mag.max()
        bound = ker.C_fit * np.exp(-ker.theta_fit * times)
        assert np.all(mag[usable] <= bound[usable] * (1 + 1e-9))

    def test_identity_residual(self):
        # K + kappa + kappa * K = 0, discretized with the same trapezoid
        times = 2e-3 * np.arange(5001)
        th, Om, nq = contour_parameters(EQ, 1, 10.0)
        ker = resolvent_kernel(EQ, 1, th, Om, nq, times)
        kap = times * np.asarray(EQ.mu_hat(times), float)
        K = ker.values
        dt = 2e-3
        full = np.convolve(kap, K)[: times.size]
        conv = dt * (full - 0.5 * kap * K[0] - 0.5 * kap[0] * K)
        assert np.max(np.abs(K + kap + conv)) < 5e-6


class TestKernelRoute:
    def test_stub_route_returns_source(self):
        t = 1e-2 * np.arange(101)
        ker = resolvent_kernel(STUB, 1, 0.25, 50.0, 256, t)
        S = np.exp(-0.1 * t).astype(complex)
        out = solve_via_kernel(DensityTrace(k=1, times=t, values=S), ker)
        assert np.array_equal(out.values, S)

    def test_routes_agree(self):
        times = 2e-3 * np.arange(5001)
        hat0, src = single_mode_source()
        tra = volterra_solve(EQ, 1, src, 2e-3, 10.0)
        th, Om, nq = contour_parameters(EQ, 1, 10.0)
        ker = resolvent_kernel(EQ, 1, th, Om, nq, times)
        S = np.asarray(hat0(1, times), complex)
        trb = solve_via_kernel(DensityTrace(k=1, times=times, values=S), ker)
        assert np.max(np.abs(tra.values - trb.values)) < 1e-6

    def test_grid_mismatch_rejected(self):
        t = 1e-2 * np.arange(101)
        ker = resolvent_kernel(STUB, 1, 0.25, 50.0, 256, t)
        with pytest.raises(ValueError, match="time grid"):
            solve_via_kernel(np.zeros(51, complex), ker, times=1e-2 * np.arange(51))


class TestFitDecay:
    def test_pure_exponential(self):
        t = 1e-2 * np.arange(1001)
        tr = DensityTrace(k=1, times=t, values=1j * np.exp(-0.3 * t))
        fit = fit_decay(tr, 1.0)
        assert abs(fit.rate - 0.3) < 1e-6
        assert fit.residual < 1e-12

    def test_constant_trace_gives_zero_rate(self):
        t = 1e-2 * np.arange(1001)
        tr = DensityTrace(k=1, times=t, values=np.full(1001, 0.7j))
        assert abs(fit_decay(tr, 1.0).rate) < 1e-10

    def test_stretched_exponential(self):
        t = 1e-2 * np.arange(4001)
        tr = DensityTrace(k=1, times=t, values=1j * 2.0 * np.exp(-0.5 * t**0.6))
        fit = fit_decay(tr, 0.6)
        assert abs(fit.rate - 0.5) < 1e-8
        assert abs(fit.log_amplitude - np.log(2.0)) < 1e-8

    def test_oscillatory_trace_fits_envelope(self):
        t = 1e-2 * np.arange(2001)
        tr = DensityTrace(k=1, times=t, values=1j * np.exp(-0.4 * t) * np.cos(2.0 * t))
        fit = fit_decay(tr, 1.0)
        assert abs(fit.rate - 0.4) < 1e-2
        assert fit.n_used >= 8

    def test_window_restricts_the_fit(self):
        t = 1e-2 * np.arange(1001)
        vals = np.where(t < 5.0, np.exp(-0.3 * t), np.exp(-1.5 - 0.8 * (t - 5.0)))
        tr = DensityTrace(k=1, times=t, values=(1j * vals).astype(complex))
        fit = fit_decay(tr, 1.0, window=(0.0, 5.0))
        assert abs(fit.rate - 0.3) < 1e-6

    def test_too_few_points_rejected(self):
        t = 1e-2 * np.arange(6)
        tr = DensityTrace(k=1, times=t, values=np.exp(-t).astype(complex))
        with pytest.raises(ValueError, match="need 8"):
            fit_decay(tr, 1.0)
