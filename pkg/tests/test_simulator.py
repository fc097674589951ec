import json
import math

import numpy as np
import pytest

from zkflat.domain import Field, Grid, Params, l2_norm, make_basis, sample_function
from zkflat.freeflow import build_mode_operator, evolve_free, modes_from_field
from zkflat.simulator import (compare_fields, lifting, pde_residual, read_field_csv, run_summary,
                              simulate_controlled, simulate_mode, write_field_csv, zero_control)
from zkflat.synthesis import ControlSignal

P = Params(nt=400)


def _u0(grid):
    return sample_function(lambda x, y: x**2 * (x + 1) * (np.sin(np.pi * y) - 0.3 * np.sin(3 * np.pi * y)), grid)


def test_lifting_meets_boundary_conditions():
    assert lifting(np.array([-1.0, 0.0])).tolist() == [1.0, 0.0]


@pytest.mark.parametrize("method", ["split", "cn"])
def test_zero_control_reproduces_free_flow(method):
    g = Grid.from_params(P)
    u0 = _u0(g)
    res = simulate_controlled(u0, zero_control(P, g), P, method=method)
    evs = evolve_free(modes_from_field(u0.values, g.y_nodes, make_basis(P.J_max)), P,
                      method="exact" if method == "split" else "cn")
    ref = np.stack([ev.snapshots for ev in evs])
    assert np.max(np.abs(res.modes - ref)) <= 1e-10


def test_modes_simulate_independently():
    g = Grid.from_params(P)
    t = g.t_nodes
    modes = np.stack([np.sin(3 * t) * (1 - np.exp(-t)) * (j + 1) for j in range(P.J_max)])
    h = ControlSignal(t, g.y_nodes, modes, None, 0.0, "test")
    joint = simulate_controlled(None, h, P)
    op = build_mode_operator(2, P)
    dh = np.gradient(modes[1], t, edge_order=2)
    alone = simulate_mode(op, np.zeros(P.nx), modes[1], dh, P)
    assert np.array_equal(joint.modes[1], alone)
    assert np.max(np.abs(joint.modes[1][0] - modes[1])) <= 1e-14


def test_manufactured_solution_second_order():
    errs = []
    r, dr = np.sin, np.cos
    for nt in (200, 400, 800):
        p = Params(nt=nt, J_max=1, ny=9)
        g = Grid.from_params(p)
        q = g.x_nodes**2 * (g.x_nodes + 1)
        Lq = build_mode_operator(1, p).apply(q)
        res = simulate_controlled(None, zero_control(p, g), p,
                                  forcing=lambda j, t: q * dr(t) + Lq * r(t))
        errs.append(np.max(np.abs(res.modes[0, :, -1] - q * r(p.T))))
    assert all(b <= a / 3.5 for a, b in zip(errs, errs[1:]))


def test_boundary_control_enters_at_left_end():
    g = Grid.from_params(P)
    t = g.t_nodes
    modes = np.zeros((P.J_max, t.size))
    modes[0] = t**2
    h = ControlSignal(t, g.y_nodes, modes, 2 * modes / np.where(t > 0, t, 1), 0.0, "test")
    res = simulate_controlled(None, h, P)
    assert np.allclose(res.modes[0][0], t**2, atol=1e-14)
    assert np.max(np.abs(res.modes[0][-1])) <= 1e-14
    assert np.max(np.abs(res.modes[1:])) == 0.0


def test_control_time_grid_checked():
    g = Grid.from_params(P)
    h = zero_control(P.replace(nt=200))
    with pytest.raises(ValueError):
        simulate_controlled(_u0(g), h, P)


def test_initial_mismatch_warns():
    g = Grid.from_params(P)
    h = zero_control(P, g)
    modes = h.modes.copy()
    modes[0, 0] = 1.0
    with pytest.warns(UserWarning):
        simulate_controlled(_u0(g), ControlSignal(h.t, h.y, modes, None, 0.0, "bad"), P)


def test_pde_residual_zero_field():
    g = Grid.from_params(P)
    assert pde_residual(Field(np.zeros((P.nx, P.ny, P.nt + 1)), g), P) == 0.0


def test_pde_residual_small_on_simulated_free_flow():
    p = Params(nt=2000)
    g = Grid.from_params(p)
    res = simulate_controlled(_u0(g), zero_control(p, g), p)
    f = res.field()
    assert pde_residual(f, p, t_window=(0.1, 1.0)) <= 1e-6 * np.max(np.abs(f.values))


def test_pde_residual_negative_control():
    rng = np.random.default_rng(7)
    g = Grid.from_params(P)
    c = rng.normal(size=4)
    X = g.x_nodes[:, None, None]
    Y = g.y_nodes[None, :, None]
    T = g.t_nodes[None, None, :]
    q = X**2 * (X + 1) * (c[0] + c[1] * X)
    u = math.sqrt(2) * np.sin(np.pi * Y) * q * (1 + c[2] * T + c[3] * T**2)
    f = Field(u, g)
    assert pde_residual(f, P) > 0.1 * np.max(np.abs(u))


def test_compare_fields():
    g = Grid.from_params(Params(nx=33, ny=129, nt=2))
    u = _u0(g)
    eps = 1e-3
    v = sample_function(lambda x, y: u.values + eps * math.sqrt(2) * np.sin(np.pi * y), g)
    d = compare_fields(v, u)
    assert d["l2_error"] == pytest.approx(eps, rel=1e-9)
    assert compare_fields(u, u)["l2_error"] == 0.0
    zero = Field(np.zeros_like(u.values), g)
    assert compare_fields(zero, u)["relative_l2"] == pytest.approx(1.0)
    other = Grid.from_params(Params(nx=17, ny=129, nt=2))
    with pytest.raises(ValueError):
        compare_fields(u, sample_function(lambda x, y: x, other))


def test_field_csv_round_trip(tmp_path):
    g = Grid.from_params(Params(nx=17, ny=9, nt=2))
    u = _u0(g)
    path = tmp_path / "state.csv"
    write_field_csv(path, u, "zkflat test")
    assert np.array_equal(read_field_csv(path, g).values, u.values)


def test_run_summary_is_json():
    g = Grid.from_params(P)
    res = simulate_controlled(_u0(g), zero_control(P, g), P)
    doc = json.loads(run_summary(res, P, note="x"))
    assert doc["norms"]["terminal"] < doc["norms"]["initial"]
    assert doc["note"] == "x"
    assert doc["norms"]["initial"] == pytest.approx(l2_norm(_u0(g)), rel=1e-3)
