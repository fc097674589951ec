"""Free evolution of each transverse mode on x in (-1, 0).

Mode j obeys d/dt u + u''' + (a - lambda_j) u' = 0 with u(-1) = u(0) = u'(0) = 0.
Space is discretized by Chebyshev collocation.  The three boundary values
(x = -1, x = 0 and the node next to x = 0, fixed by u'(0) = 0) are eliminated
and the collocation equation at the node next to x = -1 is dropped; this
choice keeps the discrete spectrum in the right half plane.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .domain import Params, TransverseBasis, chebyshev_nodes, clenshaw_curtis_weights, simpson_weights

N_DERIV_DEFAULT = 12


class SmoothingWindowError(ValueError):
    """Derivative extraction requested too close to t = 0."""


def cheb_diff(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on [-1, 0] (ascending) and the first-derivative collocation matrix."""
    N = n - 1
    xi = -np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    X = np.tile(xi, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    # d/dx = 2 d/dxi on x = (xi - 1)/2
    return chebyshev_nodes(n), 2.0 * D


@dataclass
class ModeOperator:
    j: int
    a: float
    lam: float
    x: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    L: np.ndarray
    E: np.ndarray
    K: np.ndarray
    keep: np.ndarray

    @property
    def mu(self) -> float:
        return self.lam - self.a

    @property
    def n(self) -> int:
        return self.x.size

    def expand(self, v: np.ndarray) -> np.ndarray:
        """Full nodal vector (boundary values included) from reduced unknowns."""
        return self.E @ v

    def restrict(self, u: np.ndarray) -> np.ndarray:
        """Reduced unknowns from nodal samples; boundary rows are discarded."""
        return np.asarray(u, dtype=float)[self.keep, ...]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """u''' + (a - lambda_j) u' at every node."""
        return self.L @ u

    @cached_property
    def weights(self) -> np.ndarray:
        return clenshaw_curtis_weights(self.n)

    @cached_property
    def spectrum(self):
        """Eigenvalues sorted by real part with right/left eigenvectors of K."""
        w, vl, vr = sla.eig(self.K, left=True, right=True)
        order = np.argsort(w.real)
        w, vl, vr = w[order], vl[:, order], vr[:, order]
        scal = np.sum(vl.conj() * vr, axis=0)
        kappa = np.linalg.norm(vl, axis=0) * np.linalg.norm(vr, axis=0) / np.abs(scal)
        return w, vl, vr, scal, kappa

    def propagator(self, dt: float) -> np.ndarray:
        return sla.expm(-self.K * dt)


def build_mode_operator(j: int, p: Params, x_nodes: np.ndarray | None = None,
                        lam: float | None = None) -> ModeOperator:
    n = p.nx if x_nodes is None else len(x_nodes)
    if n < 16:
        raise ValueError("nx must be >= 16 for the spectral operator")
    x, D1 = cheb_diff(n)
    if x_nodes is not None and not np.allclose(x, x_nodes, atol=1e-14):
        raise ValueError("mode operators require Chebyshev x nodes")
    D2 = D1 @ D1
    D3 = D2 @ D1
    lam = (j * math.pi) ** 2 if lam is None else lam
    L = D3 + (p.a - lam) * D1
    N = n - 1
    keep = np.arange(1, N - 1)
    E = np.zeros((n, keep.size))
    E[keep, np.arange(keep.size)] = 1.0
    E[N - 1, :] = -D1[N, keep] / D1[N, N - 1]
    rows = np.arange(2, N)
    B = E[rows]
    A = (L @ E)[rows]
    K = np.linalg.solve(B, A)
    return ModeOperator(j, p.a, lam, x, D1, D2, D3, L, E, K, keep)


@dataclass
class ModeEvolution:
    """Nodal snapshots of one free mode plus what is needed to differentiate in time."""

    op: ModeOperator
    t: np.ndarray
    snapshots: np.ndarray  # (nx, nt+1)
    v0: np.ndarray
    method: str
    dt: float
    t_min: float
    n_max: int = N_DERIV_DEFAULT
    _modal: dict = field(default_factory=dict, repr=False)

    @property
    def j(self) -> int:
        return self.op.j

    def norms(self) -> np.ndarray:
        """L2(-1,0) norm of the snapshot at every time node."""
        return np.sqrt(np.maximum(self.op.weights @ self.snapshots**2, 0.0))

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a time node")
        return k

    def modal_expansion(self):
        """(nu_k, trace weights alpha_k, state coefficients) over the active modes.

        Modes that are numerically dead for every t >= t_min even after n_max
        time derivatives are dropped; the remaining expansion gives
        f^(n)(t) = sum_k alpha_k (-nu_k)^n e^{-nu_k t}.
        """
        if "nu" in self._modal:
            return self._modal["nu"], self._modal["alpha"], self._modal["coef"], self._modal["vr"]
        nu, vl, vr, scal, _ = self.op.spectrum
        coef = (vl.conj().T @ self.v0) / scal
        re = nu.real
        logamp = self.n_max * np.log(np.maximum(np.abs(nu), 1e-300)) - re * self.t_min
        logamp = np.maximum(logamp, -re * self.t_min)
        active = logamp >= logamp.max() - 80.0
        trace_row = self.op.D2[-1] @ self.op.E
        alpha = (trace_row @ vr[:, active]) * coef[active]
        self._modal.update(nu=nu[active], alpha=alpha, coef=coef[active], vr=vr[:, active])
        return nu[active], alpha, coef[active], vr[:, active]


def _expm_snapshots(op: ModeOperator, v0: np.ndarray, nt: int, dt: float) -> np.ndarray:
    P = op.propagator(dt)
    out = np.empty((v0.size, nt + 1))
    out[:, 0] = v0
    for k in range(nt):
        out[:, k + 1] = P @ out[:, k]
    return out


def crank_nicolson(op: ModeOperator, v0: np.ndarray, nt: int, dt: float,
                   forcing=None) -> np.ndarray:
    """Crank-Nicolson for dv/dt = -K v + F(t); ``forcing(k)`` gives F at node k."""
    I = np.eye(op.K.shape[0])
    lhs = sla.lu_factor(I + 0.5 * dt * op.K)
    rhs_op = I - 0.5 * dt * op.K
    out = np.empty((v0.size, nt + 1))
    out[:, 0] = v0
    f_prev = forcing(0) if forcing is not None else None
    for k in range(nt):
        rhs = rhs_op @ out[:, k]
        if forcing is not None:
            f_next = forcing(k + 1)
            rhs += 0.5 * dt * (f_prev + f_next)
            f_prev = f_next
        out[:, k + 1] = sla.lu_solve(lhs, rhs)
    return out


def evolve_mode(op: ModeOperator, u0: np.ndarray, p: Params, method: str = "exact",
                t_min: float | None = None, n_max: int | None = None) -> ModeEvolution:
    """Evolve one mode from nodal initial samples ``u0`` (boundary rows projected out)."""
    dt = p.dt
    t = np.linspace(0.0, p.T, p.nt + 1)
    v0 = op.restrict(u0)
    if method == "exact":
        red = _expm_snapshots(op, v0, p.nt, dt)
    elif method == "cn":
        red = crank_nicolson(op, v0, p.nt, dt)
    else:
        raise ValueError(f"unknown time integration method {method!r}")
    snaps = op.E @ red
    return ModeEvolution(op, t, snaps, v0, method, dt,
                         t_min=10 * dt if t_min is None else t_min,
                         n_max=max(N_DERIV_DEFAULT, p.I_max + 1) if n_max is None else n_max)


def evolve_free(u0_modes: np.ndarray, p: Params, method: str = "exact",
                operators: list | None = None, **kw) -> list[ModeEvolution]:
    """Evolve every mode j = 1..J_max; ``u0_modes`` has shape (J_max, nx)."""
    u0_modes = np.asarray(u0_modes, dtype=float)
    if u0_modes.shape[0] != p.J_max:
        raise ValueError("need one initial trace per mode")
    ops = operators or [build_mode_operator(j, p) for j in range(1, p.J_max + 1)]
    return [evolve_mode(op, u0_modes[j], p, method, **kw) for j, op in enumerate(ops)]


def trace_f(ev: ModeEvolution, t: float) -> float:
    """f_j(t) = second x-derivative of the mode at x = 0, from the stored snapshot."""
    k = ev.index_of(t)
    return float(ev.op.D2[-1] @ ev.snapshots[:, k])


def trace_f_derivs(ev: ModeEvolution, t, n_max: int) -> np.ndarray:
    """f_j^(n)(t) for n = 0..n_max, shape (n_max+1,) + shape(t).

    Uses d/dt = -K on the semi-discrete system through its modal expansion, which
    avoids applying the differentiation matrices n times.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < ev.t_min - 1e-14):
        raise SmoothingWindowError(f"time derivatives need t >= t_min = {ev.t_min:g}")
    if n_max > ev.n_max:
        raise ValueError(f"n_max={n_max} exceeds the configured limit {ev.n_max}")
    if not np.any(ev.v0):
        return np.zeros((n_max + 1,) + t.shape)
    nu, alpha, _, _ = ev.modal_expansion()
    decay = np.exp(-np.multiply.outer(t, nu))  # (..., modes)
    out = np.empty((n_max + 1,) + t.shape)
    powk = np.ones_like(nu)
    for n in range(n_max + 1):
        out[n] = np.real(decay @ (alpha * powk))
        powk = powk * (-nu)
    return out


def state_derivative(ev: ModeEvolution, t: float, n: int) -> np.ndarray:
    """Nodal samples of d^n/dt^n of the mode at time t (modal expansion)."""
    if t < ev.t_min - 1e-14:
        raise SmoothingWindowError(f"time derivatives need t >= t_min = {ev.t_min:g}")
    nu, _, coef, vr = ev.modal_expansion()
    return ev.op.E @ np.real(vr @ (coef * (-nu) ** n * np.exp(-nu * t)))


def lyapunov_gramian(K: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """W = int_0^inf e^{-K^T s} Q e^{-K s} ds, i.e. the solution of K^T W + W K = Q."""
    W = sla.solve_continuous_lyapunov(K.T, Q)
    return 0.5 * (W + W.T)


def time_integral(ev: ModeEvolution, Q: np.ndarray) -> float:
    """int_0^T v^T Q v dt for reduced states v(t).

    Exact along the semi-discrete flow when the snapshots come from the exact
    propagator (v0^T W v0 - vT^T W vT with the infinite-horizon gramian W);
    composite Simpson otherwise.
    """
    red = ev.snapshots[ev.op.keep]
    if ev.method == "exact":
        W = lyapunov_gramian(ev.op.K, Q)
        v0, vT = red[:, 0], red[:, -1]
        return float(v0 @ W @ v0 - vT @ W @ vT)
    vals = np.einsum("ik,ij,jk->k", red, Q, red)
    return float(simpson_weights(ev.t) @ vals)


def energy_balance(ev: ModeEvolution) -> dict:
    """Terms of the per-mode energy identity and its weighted variant.

    ||u(T)||^2 + int_0^T |u'(-1,t)|^2 dt = ||u^0||^2 and
    int (x+1)|u(T)|^2 + 3 int int |u'|^2 + (lambda-a) int int |u|^2 = int (x+1)|u^0|^2.
    """
    op = ev.op
    w = op.weights
    u = ev.snapshots
    DE = op.D1 @ op.E
    e0 = float(w @ u[:, 0] ** 2)
    eT = float(w @ u[:, -1] ** 2)
    flux = time_integral(ev, np.outer(DE[0], DE[0]))
    grad = time_integral(ev, DE.T @ (w[:, None] * DE))
    mass = time_integral(ev, op.E.T @ (w[:, None] * op.E))
    xw = w * (op.x + 1.0)
    lhs5 = float(xw @ u[:, -1] ** 2 + 3.0 * grad + op.mu * mass)
    rhs5 = float(xw @ u[:, 0] ** 2)
    return {
        "initial": e0,
        "terminal": eT,
        "boundary_flux": flux,
        "residual": eT + flux - e0,
        "relative_residual": (eT + flux - e0) / e0 if e0 > 0 else 0.0,
        "weighted_lhs": lhs5,
        "weighted_rhs": rhs5,
        "weighted_residual": lhs5 - rhs5,
    }


def smoothing_diagnostic(ev: ModeEvolution, times, n_max: int) -> dict:
    """Measured growth of ||K^n u(t)|| in n and t (reported, never asserted).

    Fits log ||K^n u(t)|| - log ||u0|| ~ n log C + 1.5 n log n - 1.5 n log t.
    """
    w = ev.op.weights
    nrm0 = math.sqrt(float(w @ (ev.op.E @ ev.v0) ** 2)) or 1.0
    rows, ys = [], []
    table = []
    for t in times:
        for n in range(1, n_max + 1):
            v = state_derivative(ev, t, n)
            val = math.sqrt(float(w @ v**2)) / nrm0
            table.append({"t": float(t), "n": n, "norm_ratio": val})
            if val > 0:
                rows.append(n)
                ys.append(math.log(val) - 1.5 * n * math.log(n) + 1.5 * n * math.log(t))
    logC = float(np.max(np.asarray(ys) / np.asarray(rows))) if rows else float("-inf")
    return {"C_fit": math.exp(logC) if rows else 0.0, "samples": table,
            "provenance": "fitted: max over (n,t) of (||A^n u(t)|| t^{1.5n} / (n^{1.5n}||u0||))^{1/n}"}


def trace_bound_diagnostic(ev: ModeEvolution, times, n_max: int) -> dict:
    """Scaled trace derivatives |f^(n)(t)| t^{1.5(n + [j/2] + 3)} / (n!)^{1.5} (reported)."""
    j = ev.j
    out = []
    vals = trace_f_derivs(ev, np.asarray(times, dtype=float), n_max)
    for ti, t in enumerate(times):
        for n in range(n_max + 1):
            scaled = abs(vals[n, ti]) * t ** (1.5 * (n + j // 2 + 3)) / math.factorial(n) ** 1.5
            out.append({"t": float(t), "n": n, "value": float(vals[n, ti]), "scaled": scaled})
    return {"j": j, "max_scaled": max(o["scaled"] for o in out), "samples": out}


def modes_from_field(values: np.ndarray, y_nodes: np.ndarray, basis: TransverseBasis) -> np.ndarray:
    """(J, nx) initial traces from 2D samples with axes (x, y)."""
    from .domain import sine_analyze

    return sine_analyze(values, y_nodes, basis).T


def write_snapshots_csv(path, evs: list[ModeEvolution], header_comment: str | None = None,
                        stride: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "t", "x", "value"])
        for ev in evs:
            for k in range(0, ev.t.size, stride):
                for i, x in enumerate(ev.op.x):
                    w.writerow([ev.j, repr(float(ev.t[k])), repr(float(x)), repr(float(ev.snapshots[i, k]))])
