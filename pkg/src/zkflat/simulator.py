"""Independent simulation of the boundary-controlled system, mode by mode.

Mode j with Dirichlet data u(-1) = h_j(t) is lifted as u = v + h_j(t) w(x),
w(x) = -x^3, so that v satisfies homogeneous conditions and

    dv/dt = -L v - h_j'(t) w - h_j(t) L w (+ optional forcing).

The default ``split`` scheme propagates the free part from u0 exactly and the
part driven from zero by the control with Crank-Nicolson; ``cn`` applies
Crank-Nicolson to everything.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from .domain import Field, Grid, Params, TransverseBasis, l2_norm, sine_analyze
from .freeflow import ModeOperator, _expm_snapshots, build_mode_operator, cheb_diff, crank_nicolson
from .synthesis import ControlSignal

COMPAT_TOL = 1e-6
T_ORDER = 10


def lifting(x: np.ndarray) -> np.ndarray:
    """w(x) = -x^3: w(-1) = 1, w(0) = w'(0) = 0."""
    return -np.asarray(x, dtype=float) ** 3


@dataclass(frozen=True)
class ControlledModeProblem:
    j: int
    op: ModeOperator
    h: np.ndarray
    dh: np.ndarray
    w: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        return np.arange(2, self.op.n - 1)

    def reduced(self, nodal: np.ndarray) -> np.ndarray:
        """B^{-1} applied to the equation rows of a nodal right-hand side."""
        B = self.op.E[self.rows]
        return np.linalg.solve(B, nodal[self.rows])


def control_derivative(h: ControlSignal) -> np.ndarray:
    """Analytic derivative when the signal carries one, else second-order differences."""
    if h.dmodes is not None:
        return h.dmodes
    if h.t.size < 3:
        raise ValueError("control needs at least 3 time samples to estimate h'")
    return np.gradient(h.modes, h.t, axis=1, edge_order=2)


def simulate_mode(op: ModeOperator, u0: np.ndarray, hh: np.ndarray, dh: np.ndarray, p: Params, *,
                  method: str = "split", forcing: Callable | None = None) -> np.ndarray:
    """Nodal snapshots (nx, nt+1) of one controlled mode.

    ``forcing(t)`` returns an extra nodal source term for the mode equation.
    """
    prob = ControlledModeProblem(op.j, op, hh, dh, lifting(op.x))
    nt, dt = p.nt, p.dt
    t = np.linspace(0.0, p.T, nt + 1)
    bw = prob.reduced(prob.w)
    blw = prob.reduced(op.L @ prob.w)
    src = None
    if forcing is not None:
        src = np.stack([prob.reduced(np.asarray(forcing(tk), dtype=float)) for tk in t], axis=1)

    def F(k):
        f = -(dh[k] * bw + hh[k] * blw)
        return f if src is None else f + src[:, k]

    driven = np.any(hh) or np.any(dh) or src is not None
    if method == "split":
        red = _expm_snapshots(op, op.restrict(u0), nt, dt)
        if driven:
            red = red + crank_nicolson(op, op.restrict(-hh[0] * prob.w), nt, dt, F)
    elif method == "cn":
        red = crank_nicolson(op, op.restrict(u0 - hh[0] * prob.w), nt, dt, F if driven else None)
    else:
        raise ValueError(f"unknown simulation method {method!r}")
    return op.E @ red + np.outer(prob.w, hh)


@dataclass(frozen=True)
class SimulationResult:
    grid: Grid
    modes: np.ndarray  # (J, nx, nt+1)
    method: str

    def field(self) -> Field:
        E = TransverseBasis(self.modes.shape[0]).matrix(self.grid.y_nodes)
        return Field(np.einsum("jxt,yj->xyt", self.modes, E), self.grid, "state")

    def at(self, k: int) -> Field:
        E = TransverseBasis(self.modes.shape[0]).matrix(self.grid.y_nodes)
        return Field(self.modes[:, :, k].T @ E.T, self.grid, "state")

    def terminal(self) -> Field:
        return self.at(-1)

    def norms(self) -> np.ndarray:
        """||u(., ., t_k)|| from the mode view (Parseval in y)."""
        from .domain import clenshaw_curtis_weights

        w = clenshaw_curtis_weights(self.grid.x_nodes.size)
        return np.sqrt(np.einsum("x,jxt->t", w, self.modes**2))


def simulate_controlled(u0: Field | None, h: ControlSignal, p: Params, *, method: str = "split",
                        operators: list | None = None, forcing: Callable | None = None) -> SimulationResult:
    """Simulate the controlled system for the boundary input ``h``.

    ``forcing(j, t)`` optionally adds a nodal source to mode j.
    """
    grid = Grid.from_params(p) if u0 is None else u0.grid
    if grid.x_kind != "chebyshev":
        raise ValueError("the simulator needs a Chebyshev x grid")
    t = np.linspace(0.0, p.T, p.nt + 1)
    if h.t.size != t.size or not np.allclose(h.t, t, atol=1e-12):
        raise ValueError("control lacks the time resolution of the simulation grid")
    J = p.J_max
    if h.modes.shape[0] < J:
        raise ValueError("control has fewer modes than J_max")
    basis = TransverseBasis(J)
    if u0 is None:
        u0m = np.zeros((J, grid.x_nodes.size))
    else:
        u0m = sine_analyze(u0.values, grid.y_nodes, basis).T
    dh = control_derivative(h)
    mismatch = float(np.max(np.abs(u0m[:, 0] - h.modes[:J, 0])))
    if mismatch > COMPAT_TOL:
        warnings.warn(f"h(0) differs from the initial trace at x=-1 by {mismatch:.3g}", stacklevel=2)
    ops = operators or [build_mode_operator(j, p, grid.x_nodes) for j in range(1, J + 1)]
    out = np.empty((J, grid.x_nodes.size, t.size))
    for j, op in enumerate(ops):
        fj = None if forcing is None else (lambda tk, jj=j + 1: forcing(jj, tk))
        out[j] = simulate_mode(op, u0m[j], h.modes[j], dh[j], p, method=method, forcing=fj)
    return SimulationResult(grid, out, method)


def zero_control(p: Params, grid: Grid | None = None) -> ControlSignal:
    grid = grid or Grid.from_params(p)
    z = np.zeros((p.J_max, p.nt + 1))
    return ControlSignal(grid.t_nodes, grid.y_nodes, z, z.copy(), p.tau, "zero")


# ---------------------------------------------------------------- residuals


def _fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the derivative of ``order`` on integer offsets."""
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    A = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


def time_derivative(U: np.ndarray, dt: float, k_idx: np.ndarray, order: int = T_ORDER) -> np.ndarray:
    """d/dt on the last axis at the requested node indices, accurate to O(dt^order).

    Centered stencils in the interior, shifted ones near the ends.
    """
    width = order + 1
    nt1 = U.shape[-1]
    if order % 2 or nt1 < width:
        raise ValueError(f"need an even order and at least {width} time nodes")
    out = np.empty(U.shape[:-1] + (k_idx.size,))
    cache = {}
    for n, k in enumerate(k_idx):
        lo = min(max(k - order // 2, 0), nt1 - width)
        key = lo - k
        if key not in cache:
            cache[key] = _fd_weights(np.arange(width) + key, 1)
        out[..., n] = U[..., lo : lo + width] @ cache[key] / dt
    return out


def pde_residual(u: Field, p: Params, *, t_window: tuple | None = None, t_order: int = T_ORDER,
                 chunk: int = 256) -> float:
    """max over interior nodes of |u_t + u_xxx + u_xyy + a u_x|.

    x derivatives are spectral (Chebyshev), y derivatives use the sine
    transform on the uniform y grid, t derivatives finite differences of
    order ``t_order``.
    """
    g = u.grid
    if not u.is_3d:
        raise ValueError("pde_residual expects a time-dependent field")
    if g.x_kind != "chebyshev":
        raise ValueError("pde_residual needs a Chebyshev x grid")
    y = g.y_nodes
    if not np.allclose(np.diff(y), y[1] - y[0], rtol=1e-10):
        raise ValueError("pde_residual needs a uniform y grid")
    _, D1 = cheb_diff(g.x_nodes.size)
    D3 = D1 @ D1 @ D1
    ny = y.size
    k = np.arange(1, ny - 1)
    t = g.t_nodes
    dt = t[1] - t[0]
    lo, hi = (t[0], t[-1]) if t_window is None else t_window
    idx = np.flatnonzero((t >= lo - 1e-12) & (t <= hi + 1e-12))
    worst = 0.0
    for s in range(0, idx.size, chunk):
        kk = idx[s : s + chunk]
        U = u.values[:, :, kk]
        ut = time_derivative(u.values, dt, kk, t_order)
        ux = np.einsum("ab,byt->ayt", D1, U)
        uxxx = np.einsum("ab,byt->ayt", D3, U)
        c = sfft.dst(ux[:, 1:-1, :], type=1, axis=1)
        uxyy = sfft.idst(-((k * math.pi) ** 2)[None, :, None] * c, type=1, axis=1)
        r = ut[1:-1, 1:-1] + uxxx[1:-1, 1:-1] + uxyy[1:-1] + p.a * ux[1:-1, 1:-1]
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def field_scale(u: Field) -> float:
    return float(np.max(np.abs(u.values)))


def compare_fields(u: Field, v: Field) -> dict:
    """Errors of u against the reference v; relative uses ||v||."""
    if u.values.shape != v.values.shape or not (
        np.array_equal(u.grid.x_nodes, v.grid.x_nodes) and np.array_equal(u.grid.y_nodes, v.grid.y_nodes)
    ):
        raise ValueError("fields live on different grids")
    d = Field(u.values - v.values, u.grid, "difference")
    l2 = l2_norm(d)
    ref = l2_norm(v)
    return {
        "l2_error": l2,
        "sup_error": float(np.max(np.abs(d.values))),
        "relative_l2": l2 / ref if ref > 0 else (0.0 if l2 == 0 else math.inf),
    }


# ---------------------------------------------------------------- I/O


def write_field_csv(path, f: Field, header_comment: str | None = None) -> None:
    """Terminal-state export with columns (x, y, value)."""
    if f.is_3d:
        raise ValueError("export a 2D slice")
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value"])
        for i, x in enumerate(f.grid.x_nodes):
            for m, y in enumerate(f.grid.y_nodes):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(f.values[i, m]))])


def read_field_csv(path, grid: Grid) -> Field:
    vals = np.full((grid.x_nodes.size, grid.y_nodes.size), np.nan)
    with open(path, newline="") as fh:
        for r in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
            i = int(np.argmin(np.abs(grid.x_nodes - float(r["x"]))))
            m = int(np.argmin(np.abs(grid.y_nodes - float(r["y"]))))
            vals[i, m] = float(r["value"])
    if np.any(np.isnan(vals)):
        raise ValueError("field CSV does not cover the grid")
    return Field(vals, grid, "initial")


def run_summary(result: SimulationResult, p: Params, **extra) -> str:
    norms = result.norms()
    doc = {
        "params": {k: getattr(p, k) for k in p.__dataclass_fields__},
        "method": result.method,
        "norms": {"initial": float(norms[0]), "terminal": float(norms[-1]),
                  "history": norms.tolist()},
    }
    doc.update(extra)
    return json.dumps(doc, sort_keys=True, indent=1)
