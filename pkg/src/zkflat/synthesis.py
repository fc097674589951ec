"""Flat-output synthesis of boundary controls.

A trajectory is parametrized by per-mode flat outputs z_j(t):

    u(x, y, t) = sum_j sum_i g_{i,j}(x) z_j^(i)(t) e_j(y),
    h(y, t)    = sum_j sum_i g_{i,j}(-1) z_j^(i)(t) e_j(y).

Null control takes z_j = phi_s((t - tau)/(T - tau)) f_j(t) with f_j the trace
of the free evolution; reachability takes z_j = h_j(t) (1 - phi_s(...)) with
h_j interpolating the prescribed derivatives b_{i,j} at t = T.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as npoly

from .domain import Field, Grid, Params, TransverseBasis, simpson_weights
from .freeflow import ModeEvolution, trace_f_derivs
from .genfun import GenFunTable
from .gevrey import E_INV_E, BumpParams, GevreyInterpolant, borel_interpolate, step_taylor

R_FACTOR_DEFAULT = 1.1
H_TILDE_MARGIN = 1.25


def r0(a: float) -> float:
    """Critical radius (9(a+2))^{1/3} e^{1/(3e)} of the reachable class."""
    return (9.0 * (a + 2.0)) ** (1.0 / 3.0) * math.exp(1.0 / (3.0 * math.e))


def leibniz(A: np.ndarray, B: np.ndarray, order: int) -> np.ndarray:
    """Derivatives of a*b up to ``order`` from derivative stacks A[k], B[k] (axis 0)."""
    out = np.zeros((order + 1,) + np.broadcast_shapes(A.shape[1:], B.shape[1:]))
    for i in range(order + 1):
        for n in range(i + 1):
            out[i] += math.comb(i, n) * A[i - n] * B[n]
    return out


def _step_derivs(bump: BumpParams, t: np.ndarray, order: int) -> np.ndarray:
    fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
    return step_taylor(bump, t, order) * fact.reshape((-1,) + (1,) * t.ndim)


@dataclass(frozen=True)
class FlatOutput:
    """Per-mode flat outputs z_j and their time derivatives.

    ``sources`` holds one ModeEvolution per mode for null synthesis and one
    GevreyInterpolant (or None for an identically zero mode) for reachability.
    """

    kind: str
    I_max: int
    J_max: int
    bump: BumpParams
    sources: tuple
    bounds: dict = field(default_factory=dict)

    def derivs(self, t, order: int | None = None) -> np.ndarray:
        """z_j^(i)(t) for i = 0..order, shape (order+1, J_max) + shape(t)."""
        order = self.I_max if order is None else order
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((order + 1, self.J_max) + t.shape)
        T = self.bump.T
        if self.kind == "null":
            live = t < T
            if not np.any(live):
                return out
            S = _step_derivs(self.bump, t[live], order)
            for j, ev in enumerate(self.sources):
                F = trace_f_derivs(ev, t[live], order)
                out[:, j, live] = leibniz(S, F, order)
        elif self.kind == "reach":
            G = -_step_derivs(self.bump, t, order)
            G[0] += 1.0
            fact = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)[:, None]
            for j, f in enumerate(self.sources):
                if f is None:
                    continue
                Hd = f.taylor(t, order) * fact
                out[:, j] = leibniz(G, Hd, order)
        else:
            raise ValueError(f"unknown flat output kind {self.kind!r}")
        return out

    def to_json(self, t_samples, order: int | None = None) -> str:
        order = self.I_max if order is None else order
        t_samples = np.asarray(t_samples, dtype=float)
        Z = self.derivs(t_samples, order)
        doc = {
            "kind": self.kind,
            "t": t_samples.tolist(),
            "bounds": _jsonable(self.bounds),
            "series": [
                {"j": j + 1, "i": i, "samples": Z[i, j].tolist()}
                for j in range(self.J_max) for i in range(order + 1)
            ],
        }
        return json.dumps(doc, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def null_flat_output(evs: list[ModeEvolution], p: Params) -> FlatOutput:
    """z_j = phi_s((t - tau)/(T - tau)) f_j(t) from the free evolutions."""
    if len(evs) != p.J_max:
        raise ValueError("need one free evolution per mode")
    for ev in evs:
        if abs(ev.t[-1] - p.T) > 1e-12:
            raise ValueError("free evolutions must cover [0, T]")
    bump = BumpParams(s=p.s, M=p.M, tau=p.tau, T=p.T)
    return FlatOutput("null", p.I_max, p.J_max, bump, tuple(evs))


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class TargetSpec:
    """Reachability target u_1.

    Either an exact combination ``terms`` = ((i, j, beta), ...) meaning
    u_1 = sum beta g_{i,j}(x) e_j(y), or a callable ``derivs(p, q, X, Y)``
    returning the mixed partial d_x^p d_y^q u_1 at the sample arrays.
    """

    terms: tuple = ()
    derivs: Callable | None = None
    max_order: tuple = (math.inf, math.inf)
    description: str = ""

    def __post_init__(self):
        if self.derivs is not None and self.terms:
            raise ValueError("give either terms or derivs, not both")
        for t in self.terms:
            if len(t) != 3 or t[0] < 0 or t[1] < 1:
                raise ValueError(f"bad target term {t!r}")

    @property
    def kind(self) -> str:
        return "callable" if self.derivs is not None else "combination"

    def validate(self, table: GenFunTable) -> None:
        for i, j, _ in self.terms:
            if i > table.I_max or j > table.J_max:
                raise ValueError(f"target term ({i},{j}) outside table range")

    def mode_polynomials(self, table: GenFunTable) -> dict:
        """{j: power-series coefficients in x} for a combination target."""
        polys: dict = {}
        for i, j, beta in self.terms:
            c = beta * table[(i, j)].coeffs
            polys[j] = npoly.polyadd(polys.get(j, np.zeros(1)), c)
        return polys

    def evaluate(self, x, y, table: GenFunTable | None = None) -> np.ndarray:
        X, Y = np.meshgrid(np.asarray(x, float), np.asarray(y, float), indexing="ij")
        if self.derivs is not None:
            return np.asarray(self.derivs(0, 0, X, Y), dtype=float)
        if table is None:
            raise ValueError("combination targets need the generating-function table")
        self.validate(table)
        out = np.zeros_like(X)
        for j, c in self.mode_polynomials(table).items():
            out += npoly.polyval(X, c) * math.sqrt(2.0) * np.sin(j * math.pi * Y)
        return out


def combination_derivs(target: TargetSpec, table: GenFunTable) -> Callable:
    """Mixed-partial oracle d_x^p d_y^q for a combination target, by series differentiation."""
    target.validate(table)
    polys = target.mode_polynomials(table)

    def derivs(p: int, q: int, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        out = np.zeros(np.broadcast_shapes(X.shape, Y.shape))
        for j, c in polys.items():
            dc = npoly.polyder(c, p) if p else c
            k = j * math.pi
            ey = math.sqrt(2.0) * k**q * np.sin(k * Y + q * math.pi / 2.0)
            out = out + npoly.polyval(X, dc) * ey
        return out

    return derivs


def _p_power_terms(n: int, a: float):
    """P^n = d_x^n (d_x^2 + d_y^2 + a)^n as (weight, x order, y order) triples."""
    out = []
    for k in range(n + 1):
        for l in range(n - k + 1):
            m = n - k - l
            w = math.factorial(n) / (math.factorial(k) * math.factorial(l) * math.factorial(m))
            out.append((w * a**m, n + 2 * k, 2 * l))
    return out


def apply_p_power(derivs: Callable, n: int, a: float, X, Y, extra_x: int = 0) -> np.ndarray:
    """d_x^extra_x P^n u evaluated from the mixed-partial oracle."""
    total = 0.0
    for w, px, qy in _p_power_terms(n, a):
        total = total + w * np.asarray(derivs(px + extra_x, qy, X, Y), dtype=float)
    return total


@dataclass(frozen=True)
class ReachCoefficients:
    b: dict
    I_max: int
    J_max: int
    source: str = ""
    conditioning: dict = field(default_factory=dict)

    def array(self) -> np.ndarray:
        """b as an array B[i, j-1]."""
        out = np.zeros((self.I_max + 1, self.J_max))
        for (i, j), v in self.b.items():
            out[i, j - 1] = v
        return out

    def to_json(self) -> str:
        doc = {
            "source": self.source,
            "I_max": self.I_max,
            "J_max": self.J_max,
            "b": [{"i": i, "j": j, "value": v} for (i, j), v in sorted(self.b.items())],
        }
        return json.dumps(doc, sort_keys=True)


def reach_coefficients(target: TargetSpec, table: GenFunTable, basis: TransverseBasis,
                       y_nodes: np.ndarray | None = None) -> ReachCoefficients:
    """b_{i,j} = (-1)^i int_0^1 e_j(y) d_x^2 P^i u_1(0, y) dy.

    Exact for combination targets (b = beta); callable targets are expanded
    through the multinomial form of P^i and integrated with Simpson's rule in y.
    """
    I, J = table.I_max, min(table.J_max, basis.J_max)
    if target.kind == "combination":
        target.validate(table)
        b = {(i, j): 0.0 for i in range(I + 1) for j in range(1, J + 1)}
        for i, j, beta in target.terms:
            b[(i, j)] += float(beta)
        return ReachCoefficients(b, I, J, target.description or "combination")
    need_x, need_y = 3 * I + 2, 2 * I
    if target.max_order[0] < need_x or target.max_order[1] < need_y:
        raise ValueError(f"callable target must supply d_x^{need_x} and d_y^{need_y}")
    y = np.linspace(0.0, 1.0, 129) if y_nodes is None else np.asarray(y_nodes, dtype=float)
    wy = simpson_weights(y)
    E = basis.matrix(y)[:, :J]
    X = np.zeros_like(y)
    b, cond = {}, {}
    for i in range(I + 1):
        total = np.zeros_like(y)
        size = np.zeros_like(y)
        for w, px, qy in _p_power_terms(i, table.a):
            term = w * np.asarray(target.derivs(px + 2, qy, X, y), dtype=float)
            total += term
            size += np.abs(term)
        proj = (-1.0) ** i * ((total * wy) @ E)
        scale = (size * wy) @ np.abs(E)
        for j in range(1, J + 1):
            b[(i, j)] = float(proj[j - 1])
            cond[(i, j)] = float(scale[j - 1])
    return ReachCoefficients(b, I, J, target.description or "callable", cond)


def growth_constants(b: ReachCoefficients, a: float, R: float) -> np.ndarray:
    """Fitted M_j with |b_{i,j}| <= M_j [9(2+a)]^i (2i)! / R^{3i}."""
    B = np.abs(b.array())
    i = np.arange(B.shape[0])
    logw = i * math.log(9.0 * (2.0 + a)) + np.array([math.lgamma(2 * k + 1) for k in i]) - 3 * i * math.log(R)
    with np.errstate(divide="ignore"):
        ratios = np.exp(np.log(B) - logw[:, None])
    return ratios.max(axis=0)


def reach_flat_output(b: ReachCoefficients, p: Params, *, R_factor: float = R_FACTOR_DEFAULT,
                      margin: float = H_TILDE_MARGIN) -> FlatOutput:
    """z_j = h_j(t)(1 - phi_s((t - tau)/(T - tau))) with h_j^(q)(T) = b_{q,j}."""
    if not R_factor > 1.0:
        raise ValueError("R must exceed the critical radius (R_factor > 1)")
    if not margin > 1.0:
        raise ValueError("margin must exceed 1")
    B = b.array()
    if not np.all(np.isfinite(B)):
        raise ValueError("reach coefficients are not finite")
    R = R_factor * r0(p.a)
    H = 9.0 * (2.0 + p.a) / R**3
    H_tilde = H * E_INV_E * margin
    bump = BumpParams(s=p.s, M=p.M, tau=p.tau, T=p.T)
    Q = min(p.I_max, B.shape[0] - 1)
    sources = []
    for j in range(p.J_max):
        d = np.zeros(p.I_max + 1)
        if j < B.shape[1]:
            d[: Q + 1] = B[: Q + 1, j]
        sources.append(borel_interpolate(d, H, H_tilde, anchor=p.T) if np.any(d) else None)
    M = growth_constants(b, p.a, R)
    bounds = {"R": R, "R0": r0(p.a), "H": H, "H_tilde": H_tilde, "M_j": M.tolist(),
              "provenance": "fitted: M_j = max_i |b_ij| R^{3i} / ([9(2+a)]^i (2i)!)"}
    return FlatOutput("reach", p.I_max, p.J_max, bump, tuple(sources), bounds)


def flat_growth_fit(z: FlatOutput, t_samples, R_tilde: float) -> dict:
    """Fitted C M_j with |z_j^(i)(t)| <= C M_j (2i)! / R_tilde^{2i} over the samples."""
    Z = np.abs(z.derivs(np.asarray(t_samples, dtype=float)))
    sup = Z.max(axis=2)
    i = np.arange(sup.shape[0])
    logw = np.array([math.lgamma(2 * k + 1) for k in i]) - 2 * i * math.log(R_tilde)
    with np.errstate(divide="ignore"):
        CM = np.exp(np.log(sup) - logw[:, None]).max(axis=0)
    return {"R_tilde": R_tilde, "CM_j": CM.tolist(),
            "provenance": "fitted: max over i, t of |z_j^(i)(t)| R~^{2i} / (2i)!"}


# ---------------------------------------------------------------- assembly


@dataclass(frozen=True)
class ControlSignal:
    """Boundary control h(y, t) sampled on a grid, with its mode view."""

    t: np.ndarray
    y: np.ndarray
    modes: np.ndarray  # (J, nt+1)
    dmodes: np.ndarray | None = None  # analytic time derivative, when known
    tau: float = 0.0
    kind: str = ""

    @property
    def samples(self) -> np.ndarray:
        """h(y_m, t_k), shape (ny, nt+1)."""
        J = self.modes.shape[0]
        return TransverseBasis(J).matrix(self.y) @ self.modes

    def to_csv(self, path, header_comment: str | None = None) -> None:
        H = self.samples
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "h"])
            for k, tk in enumerate(self.t):
                for m, ym in enumerate(self.y):
                    w.writerow([repr(float(tk)), repr(float(ym)), repr(float(H[m, k]))])

    def to_json(self) -> str:
        doc = {"kind": self.kind, "tau": self.tau, "t": self.t.tolist(),
               "modes": [{"j": j + 1, "values": self.modes[j].tolist()} for j in range(self.modes.shape[0])]}
        return json.dumps(doc, sort_keys=True)


def read_control_csv(path, J_max: int) -> ControlSignal:
    """Import a (t, y, h) CSV on a tensor grid; modes by sine analysis."""
    from .domain import sine_analyze

    rows = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        for r in csv.DictReader(lines):
            rows.append((float(r["t"]), float(r["y"]), float(r["h"])))
    if not rows:
        raise ValueError("empty control file")
    arr = np.asarray(rows)
    t = np.unique(arr[:, 0])
    y = np.unique(arr[:, 1])
    if arr.shape[0] != t.size * y.size:
        raise ValueError("control samples do not form a tensor grid")
    H = np.full((y.size, t.size), np.nan)
    H[np.searchsorted(y, arr[:, 1]), np.searchsorted(t, arr[:, 0])] = arr[:, 2]
    if np.any(np.isnan(H)):
        raise ValueError("control samples do not form a tensor grid")
    modes = sine_analyze(H.T, y, TransverseBasis(J_max)).T
    return ControlSignal(t, y, modes, None, 0.0, "imported")


def _check_table(table: GenFunTable, z: FlatOutput) -> None:
    if table.I_max < z.I_max or table.J_max < z.J_max:
        raise ValueError("table does not cover the flat output's (I_max, J_max)")


def series_modes(table: GenFunTable, z: FlatOutput, x, t) -> np.ndarray:
    """Mode profiles sum_i g_{i,j}(x) z_j^(i)(t), shape (J, nx, nt)."""
    _check_table(table, z)
    G = table.values_at(np.asarray(x, dtype=float))[: z.I_max + 1, : z.J_max]
    Z = z.derivs(t)
    return np.einsum("ijx,ijt->jxt", G, Z)


def assemble_control(table: GenFunTable, z: FlatOutput, grid: Grid) -> ControlSignal:
    """h(y, t) = sum g_{i,j}(-1) z_j^(i)(t) e_j(y); exactly zero before tau for null synthesis."""
    _check_table(table, z)
    t = grid.t_nodes
    gI = table.values_at(-1.0)[: z.I_max + 1, : z.J_max]
    active = np.ones(t.shape, bool) if z.kind != "null" else t >= z.bump.tau
    modes = np.zeros((z.J_max, t.size))
    dmodes = np.zeros((z.J_max, t.size))
    if np.any(active):
        Z = z.derivs(t[active], z.I_max + 1)
        modes[:, active] = np.einsum("ij,ijt->jt", gI, Z[:-1])
        dmodes[:, active] = np.einsum("ij,ijt->jt", gI, Z[1:])
    return ControlSignal(t, grid.y_nodes, modes, dmodes, z.bump.tau, z.kind)


@dataclass(frozen=True)
class StateAssembly:
    field: Field
    truncation: dict
    spliced_before: float = 0.0


def assemble_state(table: GenFunTable, z: FlatOutput, grid: Grid, *,
                   free: list[ModeEvolution] | None = None, splice_time: float | None = None,
                   truncation: dict | None = None) -> StateAssembly:
    """u = sum_j sum_i g_{i,j}(x) z_j^(i)(t) e_j(y) on the tensor grid.

    With ``free`` the field for t < ``splice_time`` (default tau) is taken from
    the free evolutions, which the series reproduces there.
    """
    t = grid.t_nodes
    cut = 0.0
    if free is not None:
        cut = z.bump.tau if splice_time is None else splice_time
    series_t = t >= cut
    modes = np.zeros((z.J_max, grid.x_nodes.size, t.size))
    if np.any(series_t):
        modes[:, :, series_t] = series_modes(table, z, grid.x_nodes, t[series_t])
    if free is not None and np.any(~series_t):
        for j, ev in enumerate(free):
            if not np.allclose(ev.op.x, grid.x_nodes, atol=1e-14) or ev.t.size != t.size:
                raise ValueError("free evolutions must share the assembly grid")
            modes[j][:, ~series_t] = ev.snapshots[:, ~series_t]
    E = TransverseBasis(z.J_max).matrix(grid.y_nodes)
    values = np.einsum("jxt,yj->xyt", modes, E)
    return StateAssembly(Field(values, grid, z.kind), truncation or {}, cut)


def splice_gap(table: GenFunTable, z: FlatOutput, free: list[ModeEvolution], grid: Grid,
               t: float) -> float:
    """Sup-norm gap between the series and the free evolution at time node t."""
    k = free[0].index_of(t)
    series = series_modes(table, z, grid.x_nodes, np.array([t]))[:, :, 0]
    E = TransverseBasis(z.J_max).matrix(grid.y_nodes)
    diff = np.stack([series[j] - free[j].snapshots[:, k] for j in range(z.J_max)])
    return float(np.max(np.abs(E @ diff.reshape(z.J_max, -1)))) if diff.size else 0.0


# ---------------------------------------------------------------- bounds


def fit_series_decay(table: GenFunTable, z: FlatOutput, t_samples, factorial_C: float,
                     x: float | None = None, window: int = 3) -> dict:
    """Fit a_{i,j} = sup|g_{i,j}| sup_t|z_j^(i)(t)| <= C M_j e^{sqrt(lambda_j)} R^{-2i}.

    R comes from the secant of log a_{i,j} over the last ``window`` orders (the
    terms decay faster than geometrically, so the secant extrapolates upward);
    M_j is then the smallest constant covering every computed order.
    """
    _check_table(table, z)
    I = z.I_max
    Z = np.abs(z.derivs(np.asarray(t_samples, dtype=float))).max(axis=2)  # (I+1, J)
    if x is None:
        gs = np.array([[table[(i, j)].sup_bound() for j in range(1, z.J_max + 1)] for i in range(I + 1)])
    else:
        gs = np.abs(table.values_at(x))[: I + 1, : z.J_max]
    A = gs * Z
    lam = np.array([table.lam(j) for j in range(1, z.J_max + 1)])
    Rs = []
    lo = max(0, I - window)
    for j in range(z.J_max):
        if A[lo, j] > 0 and A[I, j] > 0 and I > lo:
            slope = (math.log(A[I, j]) - math.log(A[lo, j])) / (I - lo)
            Rs.append(math.exp(-slope / 2.0))
    R = min(Rs) if Rs else math.inf
    i = np.arange(I + 1)[:, None]
    if math.isfinite(R):
        K = (A * R ** (2.0 * i)).max(axis=0)
    else:
        K = np.zeros(z.J_max)
    C = factorial_C if factorial_C > 0 else 1.0
    M = K / (C * np.exp(np.sqrt(lam)))
    return {"R": R, "M_j": M.tolist(), "C": C, "terms": A.tolist(),
            "provenance": "fitted: secant of log(sup|g_ij| sup|z_j^(i)|) over the last orders"}


def truncation_bound(p: Params, M, R: float, C: float, *, lambdas=None,
                     M_tail: Callable | None = None, j_extra: int = 200) -> dict:
    """Bound on the dropped tail of the series in the sup norm on the grid.

    i-tail: sqrt(2) sum_{j <= J} C M_j e^{sqrt(lambda_j)} R^{-2(I+1)} / (1 - R^{-2}).
    j-tail: the same summand over all i for j > J, from ``M_tail(j)``; summed
    explicitly for ``j_extra`` modes with a ratio-test bound on the rest.
    """
    M = np.asarray(M, dtype=float)
    J = M.size
    lam = np.asarray(lambdas if lambdas is not None else [(j * math.pi) ** 2 for j in range(1, J + 1)])
    amp = math.sqrt(2.0) * C * M * np.exp(np.sqrt(lam))
    if not R > 1.0:
        i_tail = math.inf if np.any(amp > 0) else 0.0
        geo_all = math.inf
    else:
        q = R ** -2.0
        i_tail = float(np.sum(amp) * q ** (p.I_max + 1) / (1.0 - q))
        geo_all = 1.0 / (1.0 - q)
    j_tail = 0.0
    if M_tail is not None:
        terms = np.array([math.sqrt(2.0) * C * M_tail(j) * math.exp(j * math.pi)
                          for j in range(J + 1, J + j_extra + 1)])
        j_tail = float(terms.sum())
        if terms[-1] > 0:
            r = terms[-1] / terms[-2] if terms[-2] > 0 else math.inf
            j_tail = j_tail + terms[-1] * r / (1.0 - r) if r < 1.0 else math.inf
        j_tail *= geo_all
    return {"i_tail": i_tail, "j_tail": j_tail, "total": i_tail + j_tail, "R": R,
            "I_max": p.I_max, "J_max": J}


# ---------------------------------------------------------------- compatibility


def _mode_p_power(polys: dict, n: int, a: float) -> tuple[dict, dict]:
    """P^n on a combination target, per mode: c -> c''' - (lambda_j - a) c'.

    Also returns, per mode, |P|^n applied to |c| coefficientwise: the size of
    all terms that enter P^n c before cancellation.
    """
    def step(c, mu):
        d3 = npoly.polyder(c, 3) if c.size > 3 else np.zeros(1)
        d1 = mu * npoly.polyder(c, 1) if c.size > 1 else np.zeros(1)
        return d3, d1

    out, size = {}, {}
    for j, c in polys.items():
        mu = (j * math.pi) ** 2 - a
        s = np.abs(c)
        for _ in range(n):
            d3, d1 = step(c, mu)
            c = npoly.polysub(d3, d1)
            s3, s1 = step(s, abs(mu))
            s = npoly.polyadd(s3, s1)
        out[j], size[j] = c, s
    return out, size


def _gevrey_combination(polys: dict, R: float, xs: np.ndarray) -> dict:
    """max_{p,q} |d_x^p d_y^q u_1| R^{p+q} / (p! q!)^{2/3}, bounded mode by mode."""
    total, argp, argq, inside = 0.0, 0, 0, True
    for j, c in polys.items():
        best_p, bp = -math.inf, 0
        for p in range(c.size):
            s = float(np.max(np.abs(npoly.polyval(xs, npoly.polyder(c, p) if p else c))))
            if s > 0:
                v = math.log(s) + p * math.log(R) - (2.0 / 3.0) * math.lgamma(p + 1)
                if v > best_p:
                    best_p, bp = v, p
        k = j * math.pi
        q = np.arange(0, 4000)
        vq = q * math.log(k * R) - (2.0 / 3.0) * np.array([math.lgamma(v + 1) for v in q])
        bq = int(np.argmax(vq))
        if math.isfinite(best_p):
            total += math.sqrt(2.0) * math.exp(best_p + vq[bq])
        inside = inside and bp < c.size - 10
        argp, argq = max(argp, bp), max(argq, bq)
    return {"C": total, "argmax": [argp, argq], "max_inside_samples": inside}


def check_compatibility(target: TargetSpec, n_max: int, table: GenFunTable, basis: TransverseBasis,
                        *, nx: int = 21, ny: int = 21, p_max: int = 12, q_max: int = 12,
                        R_test: float | None = None) -> dict:
    """Structural compatibility conditions and a Gevrey-2/3 check of u_1.

    Checks P^n u_1(0,y) = d_x P^n u_1(0,y) = 0 and P^n u_1(x,0) = P^n u_1(x,1) = 0
    for n <= n_max, relative to the size of the terms that cancel in P^n u_1.
    Combination targets apply P exactly on their power series; callable targets
    go through the multinomial expansion of P^n.  The class check reports
    C = max |d_x^p d_y^q u_1| R^{p+q} / (p! q!)^{2/3} at R = R_test (default
    1.1 R0) and whether the maximum lies inside the sampled orders.
    """
    a = table.a
    xs = np.linspace(-1.0, 0.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    combo = target.kind == "combination"
    derivs = target.derivs if not combo else combination_derivs(target, table)
    polys = target.mode_polynomials(table) if combo else None
    scale = max(float(np.max(np.abs(derivs(0, 0, X, Y)))), 1e-300)

    def p_power(n, XX, YY, extra_x=0):
        """(value, size of cancelling terms) of d_x^extra_x P^n u_1."""
        if not combo:
            val, size = 0.0, 0.0
            for w, px, qy in _p_power_terms(n, a):
                term = w * np.asarray(derivs(px + extra_x, qy, XX, YY), dtype=float)
                val, size = val + term, size + np.abs(term)
            return val, size
        shape = np.broadcast_shapes(np.shape(XX), np.shape(YY))
        val, size = np.zeros(shape), np.zeros(shape)
        res, mag = _mode_p_power(polys, n, a)
        for j, c in res.items():
            ey = math.sqrt(2.0) * np.sin(j * math.pi * np.asarray(YY))
            dc = npoly.polyder(c, extra_x) if extra_x else c
            ds = npoly.polyder(mag[j], extra_x) if extra_x else mag[j]
            val = val + npoly.polyval(XX, dc) * ey
            size = size + npoly.polyval(np.abs(XX), np.abs(ds)) * np.abs(ey)
        return val, size

    rows = []
    worst = 0.0
    for n in range(n_max + 1):
        zx = np.zeros_like(ys)
        entry = {"n": n}
        ref = scale
        for key, args in (("x0", (n, zx, ys)), ("dx_x0", (n, zx, ys, 1)),
                          ("y0", (n, xs, np.zeros_like(xs))), ("y1", (n, xs, np.ones_like(xs)))):
            val, size = p_power(*args)
            entry[key] = float(np.max(np.abs(val)))
            ref = max(ref, float(np.max(size)))
        _, size = p_power(n, X, Y)
        entry["scale"] = max(ref, float(np.max(size)))
        entry["relative"] = max(entry["x0"], entry["dx_x0"], entry["y0"], entry["y1"]) / entry["scale"]
        worst = max(worst, entry["relative"])
        rows.append(entry)
    R0 = r0(a)
    R = 1.1 * R0 if R_test is None else R_test
    if combo:
        gev = _gevrey_combination(polys, R, xs)
    else:
        best, arg = -math.inf, (0, 0)
        for pp in range(p_max + 1):
            for qq in range(q_max + 1):
                s = float(np.max(np.abs(derivs(pp, qq, X, Y))))
                if s > 0:
                    v = math.log(s) + (pp + qq) * math.log(R) - (2.0 / 3.0) * (math.lgamma(pp + 1) + math.lgamma(qq + 1))
                    if v > best:
                        best, arg = v, (pp, qq)
        gev = {"C": math.exp(best) if math.isfinite(best) else 0.0, "argmax": list(arg),
               "max_inside_samples": arg[0] < p_max and arg[1] < q_max}
    gev["R"] = R
    return {
        "structural": rows,
        "max_relative_violation": worst,
        "gevrey": gev,
        "R0": R0,
        "R_exceeds_R0": R > R0,
        "provenance": "fitted: C = max over sampled (p, q) of |d_x^p d_y^q u1| R^(p+q) / (p! q!)^(2/3)",
    }
