"""Acceptance criteria, each at its stated tolerance.

A summary line per criterion is printed at the end of the session.
"""

import math
import time

import numpy as np

from conftest import NullRun, ReachRun
from zkflat.domain import Field, Grid, Params, l2_norm, make_basis
from zkflat.freeflow import cheb_diff, energy_balance, evolve_free
from zkflat.genfun import build_table, check_bound, closed_form_g0, eval_series, ode_residual
from zkflat.gevrey import BumpParams, bump, bump_deriv, interpolant_deriv
from zkflat.simulator import _fd_weights, field_scale, pde_residual, simulate_controlled
from zkflat.synthesis import assemble_state, fit_series_decay, splice_gap, truncation_bound


def test_c01_generating_function_bounds(criterion):
    t0 = time.perf_counter()
    p = Params(a=1.0, I_max=15, J_max=10)
    table = build_table(p, make_basis(10))
    rep = check_bound(table, np.linspace(-1.0, 0.0, 101))
    elapsed = time.perf_counter() - t0
    criterion(1, "generating-function bound suite", not rep.violations and elapsed <= 2.0,
              f"{len(rep.violations)} violations, max ratio {rep.max_ratio:.3g}, {elapsed:.2f} s")


def test_c02_ode_residual_and_closed_form(criterion):
    xs = np.linspace(-1.0, 0.0, 101)
    worst_res, worst_cf = 0.0, 0.0
    for a in (1.0, math.pi**2, 15.0):
        p = Params(a=a, I_max=15, J_max=4)
        table = build_table(p, make_basis(4))
        for i, j in table.entries:
            worst_res = max(worst_res, ode_residual(table, i, j, xs))
        for j in range(1, 5):
            ref = closed_form_g0(j, a, xs)
            err = np.max(np.abs(eval_series(table[(0, j)], xs) - ref)) / np.max(np.abs(ref))
            worst_cf = max(worst_cf, float(err))
    criterion(2, "ODE residual and closed form", worst_res <= 1e-10 and worst_cf <= 1e-12,
              f"relative residual {worst_res:.2e}, closed-form error {worst_cf:.2e}")


def test_c03_energy_identity(criterion):
    p = Params(J_max=10, nx=64, nt=2000, T=1.0)
    x = Grid.from_params(p).x_nodes
    profile = x**2 * (x + 1) * np.cos(x)
    u0 = np.stack([profile / j for j in range(1, 11)])
    evs = evolve_free(u0, p)
    worst = max(abs(energy_balance(ev)["relative_residual"]) for ev in evs)
    criterion(3, "energy identity", worst <= 1e-6, f"max relative residual {worst:.2e} over j <= 10")


def test_c04_c05_null_controllability(criterion):
    t0 = time.perf_counter()
    p = Params()
    run = NullRun(p)
    res = simulate_controlled(run.u0, run.h, p)
    elapsed = time.perf_counter() - t0
    nu0 = l2_norm(run.u0)
    before = np.max(np.abs(run.h.samples[:, run.grid.t_nodes < p.tau]))
    rel = l2_norm(res.terminal()) / nu0
    ok = before <= 1e-12 and rel <= 1e-3 and elapsed <= 60.0
    criterion(4, "null controllability", ok,
              f"max |h| before tau {before:.1e}, terminal ratio {rel:.2e}, {elapsed:.1f} s")
    gap = splice_gap(run.table, run.z, run.evs, run.grid, p.tau / 2)
    criterion(5, "series/free-flow splice", gap <= 1e-4 * nu0, f"gap at tau/2 {gap:.2e} vs ||u0|| {nu0:.3f}")


def test_c06_reach_round_trip(criterion):
    t0 = time.perf_counter()
    p = Params()
    run = ReachRun(p)
    B = run.b.array()
    expected = np.zeros_like(B)
    expected[0, 0], expected[1, 1] = 1.0, 0.3
    coef_err = float(np.max(np.abs(B - expected)))
    Z = run.z.derivs(np.array([p.T]), 10)[:, :, 0]
    anchor_err = 0.0
    for j in range(B.shape[1]):
        ref = np.max(np.abs(B[:11, j]))
        if ref > 0:
            anchor_err = max(anchor_err, float(np.max(np.abs(Z[:, j] - B[:11, j])) / ref))
    res = simulate_controlled(None, run.h, p)
    u1 = Field(run.target.evaluate(run.grid.x_nodes, run.grid.y_nodes, run.table), run.grid, "target")
    rel = l2_norm(Field(res.terminal().values - u1.values, run.grid)) / l2_norm(u1)
    elapsed = time.perf_counter() - t0
    ok = coef_err <= 1e-8 and anchor_err <= 1e-8 and rel <= 1e-3 and elapsed <= 60.0
    criterion(6, "reachability round trip", ok,
              f"coefficient error {coef_err:.1e}, anchor error {anchor_err:.1e}, "
              f"terminal relative error {rel:.2e}, {elapsed:.1f} s")


def _assembled_fields():
    p = Params()
    null, reach = NullRun(p), ReachRun(p)
    fn = assemble_state(null.table, null.z, null.grid, free=null.evs).field
    fr = assemble_state(reach.table, reach.z, reach.grid).field
    return p, fn, fr


def test_c07_pde_residual(criterion):
    p, fn, fr = _assembled_fields()
    rn = pde_residual(fn, p, t_window=(p.tau / 2, p.T)) / field_scale(fn)
    rr = pde_residual(fr, p) / field_scale(fr)
    criterion(7, "flat-series PDE residual", max(rn, rr) <= 1e-6,
              f"null {rn:.1e} (t >= tau/2), reach {rr:.1e} relative to field scale")


def test_c08_structural_zeros(criterion):
    p, fn, fr = _assembled_fields()
    _, D1 = cheb_diff(p.nx)
    worst = 0.0
    for f in (fn, fr):
        u = f.values
        ux0 = np.einsum("b,byt->yt", D1[-1], u)
        worst = max(worst, float(np.max(np.abs(u[-1]))), float(np.max(np.abs(ux0))),
                    float(np.max(np.abs(u[:, 0]))), float(np.max(np.abs(u[:, -1]))))
    criterion(8, "structural boundary zeros", worst <= 1e-12, f"max boundary value {worst:.1e}")


def test_c09_bump_and_interpolant(criterion):
    bp = BumpParams(s=1.6, M=1.0)
    rho = np.linspace(0.0, 1.0, 201)
    partition = float(np.max(np.abs(bump(bp, rho) + bump(bp, 1.0 - rho) - 1.0)))
    h = 1e-3
    off = np.arange(-5, 6)
    w = _fd_weights(off, 1)
    inner = np.linspace(0.02, 0.98, 97)
    fd_err = 0.0
    for k in range(1, 5):
        exact = bump_deriv(bp, inner, k)
        fd = sum(wi * bump_deriv(bp, inner + o * h, k - 1) for wi, o in zip(w, off)) / h
        fd_err = max(fd_err, float(np.max(np.abs(fd - exact)) / np.max(np.abs(exact))))
    run = ReachRun(Params())
    anchor_err = 0.0
    for f in run.z.sources:
        if f is None:
            continue
        ref = np.max(np.abs(f.d[:11]))
        for q in range(11):
            anchor_err = max(anchor_err, abs(interpolant_deriv(f, f.anchor, q) - f.d[q]) / ref)
    ok = partition <= 1e-14 and fd_err <= 1e-8 and anchor_err <= 1e-8
    criterion(9, "bump and interpolant suite", ok,
              f"partition {partition:.1e}, derivative vs differences {fd_err:.1e}, anchor {anchor_err:.1e}")


def test_c10_convergence(criterion):
    defects = []
    for nt in (2000, 4000):
        p = Params(nt=nt)
        run = NullRun(p)
        res = simulate_controlled(run.u0, run.h, p)
        defects.append(l2_norm(res.terminal()))
    ratio = defects[0] / defects[1]
    for I in (15, 20):
        p = Params(I_max=I)
        run = NullRun(p)
        if I == 15:
            C = check_bound(run.table, np.linspace(-1.0, 0.0, 101)).factorial_C
            ts = run.grid.t_nodes[run.grid.t_nodes >= p.tau]
            fit = fit_series_decay(run.table, run.z, ts, C, x=-1.0)
            tb = truncation_bound(p, fit["M_j"], fit["R"], fit["C"])
            h15 = run.h.samples
        else:
            change = float(np.max(np.abs(run.h.samples - h15)))
    ok = ratio >= 3.0 and change <= tb["total"]
    criterion(10, "convergence sanity", ok,
              f"defect ratio under dt halving {ratio:.1f}, control change I 15->20 {change:.1e} "
              f"vs truncation bound {tb['total']:.1e}")
