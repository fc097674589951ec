import numpy as np
import pytest

from zkflat.domain import Params
from zkflat.freeflow import (SmoothingWindowError, build_mode_operator, cheb_diff, energy_balance, evolve_free,
                             evolve_mode, smoothing_diagnostic, trace_bound_diagnostic, trace_f, trace_f_derivs)

P = Params(nt=400)


def _profile(x):
    return x**2 * (x + 1) * np.cos(x)


def test_cheb_diff_exact_on_polynomials():
    x, D = cheb_diff(20)
    assert np.allclose(D @ x**7, 7 * x**6, atol=1e-11)


def test_operator_on_cubic():
    op = build_mode_operator(1, P)
    x = op.x
    u = x**2 * (x + 1)
    exact = 6.0 + (P.a - np.pi**2) * (3 * x**2 + 2 * x)
    assert np.max(np.abs(op.apply(u) - exact)) <= 1e-8 * np.max(np.abs(exact))


def test_operator_converges_spectrally():
    errs = []
    c = 0.4  # pole outside [-1, 0] limits the convergence rate
    for n in (16, 20, 24, 32):
        op = build_mode_operator(1, Params(nx=n))
        x = op.x
        exact = -6 * (x - c) ** -4 + (P.a - np.pi**2) * (-(x - c) ** -2)
        errs.append(np.max(np.abs(op.apply(1 / (x - c)) - exact)) / np.max(np.abs(exact)))
    assert all(b < a / 10 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8


def test_operator_needs_enough_nodes():
    with pytest.raises(ValueError):
        build_mode_operator(1, Params(nx=8))


def test_boundary_conditions_preserved():
    evs = evolve_free(np.stack([_profile(build_mode_operator(1, P).x)] * P.J_max), P)
    for ev in evs:
        u = ev.snapshots
        assert np.max(np.abs(u[0])) == 0.0
        assert np.max(np.abs(u[-1])) == 0.0
        assert np.max(np.abs(ev.op.D1[-1] @ u)) <= 1e-12


def test_norm_decays_monotonically():
    op = build_mode_operator(2, P)
    ev = evolve_mode(op, _profile(op.x), P)
    n = ev.norms()
    assert np.all(np.diff(n) <= 1e-15)
    assert n[-1] < 1e-10 * n[0]


@pytest.mark.parametrize("j", [1, 3])
def test_energy_identity(j):
    op = build_mode_operator(j, Params(nx=48))
    ev = evolve_mode(op, _profile(op.x), Params(nx=48))
    e = energy_balance(ev)
    assert abs(e["relative_residual"]) <= 1e-6
    assert abs(e["weighted_residual"]) <= 1e-6 * e["weighted_rhs"]


def test_crank_nicolson_second_order_on_eigenmode():
    op = build_mode_operator(1, P)
    nu, _, vr, _, _ = op.spectrum
    u0 = op.E @ np.real(vr[:, 0])
    exact = u0 * np.exp(-nu[0].real * 0.1)
    errs = []
    for nt in (400, 800, 1600):
        cn = evolve_mode(op, u0, P.replace(nt=nt), method="cn")
        errs.append(np.max(np.abs(cn.snapshots[:, nt // 10] - exact)))
    assert all(b < a / 3.5 for a, b in zip(errs, errs[1:]))


def test_trace_derivatives_match_eigenmode():
    op = build_mode_operator(1, P)
    nu, _, vr, _, _ = op.spectrum
    k = 0
    u0 = op.E @ np.real(vr[:, k] / vr[np.argmax(np.abs(vr[:, k])), k])
    ev = evolve_mode(op, u0, P, t_min=0.1)
    f0 = op.D2[-1] @ u0
    t = np.array([0.1, 0.3, 0.7])
    d = trace_f_derivs(ev, t, 5)
    for n in range(6):
        ref = f0 * (-nu[k].real) ** n * np.exp(-nu[k].real * t)
        assert np.allclose(d[n], ref, rtol=1e-8, atol=1e-14 * abs(f0) * abs(nu[k]) ** n)


def test_trace_derivative_against_differences():
    op = build_mode_operator(1, Params(nt=4000))
    ev = evolve_mode(op, _profile(op.x), Params(nt=4000))
    t = ev.t
    k = np.arange(800, 3200, 400)
    f = np.array([trace_f(ev, tk) for tk in t])
    fd = (f[k - 2] - 8 * f[k - 1] + 8 * f[k + 1] - f[k + 2]) / (12 * ev.dt)
    d1 = trace_f_derivs(ev, t[k], 1)[1]
    assert np.allclose(fd, d1, rtol=1e-6, atol=1e-12)


def test_smoothing_window_enforced():
    op = build_mode_operator(1, P)
    ev = evolve_mode(op, _profile(op.x), P, t_min=0.1)
    with pytest.raises(SmoothingWindowError):
        trace_f_derivs(ev, 0.05, 2)
    with pytest.raises(ValueError):
        trace_f_derivs(ev, 0.5, ev.n_max + 1)


def test_diagnostics_are_reported():
    op = build_mode_operator(1, P)
    ev = evolve_mode(op, _profile(op.x), P, t_min=0.1)
    s = smoothing_diagnostic(ev, [0.2, 0.5], 4)
    tb = trace_bound_diagnostic(ev, [0.2, 0.5], 4)
    assert s["C_fit"] > 0 and len(s["samples"]) == 8
    assert tb["max_scaled"] > 0 and tb["j"] == 1


def test_zero_initial_data_stays_zero():
    evs = evolve_free(np.zeros((P.J_max, P.nx)), P)
    assert all(not np.any(ev.snapshots) for ev in evs)
    assert not np.any(trace_f_derivs(evs[0], 0.5, 3))
