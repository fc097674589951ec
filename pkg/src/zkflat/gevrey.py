"""Gevrey-class switching functions and derivative interpolation.

The bump phi_s is 1 for rho <= 0, 0 for rho >= 1 and in between

    phi_s(rho) = e^{-M/(1-rho)^sigma} / (e^{-M/rho^sigma} + e^{-M/(1-rho)^sigma}),

with sigma = 1/(s-1).  It is evaluated as a logistic function of
A(rho) = M((1-rho)^-sigma - rho^-sigma) so that no exponential overflows.
All derivatives are computed with Taylor-mode arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .jets import Jet, JetOverflowError

P_MAX = 40
PLATEAU_A = 1000.0
E_INV_E = math.exp(1.0 / math.e)


@dataclass(frozen=True)
class BumpParams:
    s: float = 1.6
    M: float = 1.0
    tau: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if not 1 < self.s < 2:
            raise ValueError(f"Gevrey order s must lie in (1, 2), got {self.s}")
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.T > self.tau:
            raise ValueError("need T > tau")

    @property
    def sigma(self) -> float:
        return 1.0 / (self.s - 1.0)


def bump(p: BumpParams, rho):
    """phi_s(rho), vectorized."""
    return bump_taylor(p, rho, 0)[0] if np.ndim(rho) else float(bump_taylor(p, rho, 0)[0])


def bump_taylor(p: BumpParams, rho, order: int) -> np.ndarray:
    """Normalized Taylor coefficients phi^(k)(rho)/k!, shape (order+1,) + shape(rho)."""
    if order > P_MAX:
        raise ValueError(f"order {order} exceeds P_MAX={P_MAX}")
    rho = np.asarray(rho, dtype=float)
    out = np.zeros((order + 1,) + rho.shape)
    inside = np.atleast_1d((rho > 0.0) & (rho < 1.0)).reshape(rho.shape)
    sig = p.sigma
    with np.errstate(over="ignore"):
        A0 = p.M * ((1.0 - rho[inside]) ** -sig - rho[inside] ** -sig)
    # beyond |A| = PLATEAU_A every derivative up to P_MAX underflows: exact plateau values
    out[0] = np.where(rho < 0.5, 1.0, 0.0)
    inside[inside] = np.abs(A0) <= PLATEAU_A
    if not np.any(inside):
        return out
    r = rho[inside]
    A = p.M * (jets.power_series_shift(1.0 - r, -sig, order, sign=-1.0)
               - jets.power_series_shift(r, -sig, order))
    pos = A.c[0] > 0
    coef = np.empty((order + 1, r.size))
    try:
        with np.errstate(under="ignore"):
            if np.any(pos):
                E = jets.exp(-Jet(A.c[:, pos]))
                coef[:, pos] = (E / (E + 1.0)).c
            if np.any(~pos):
                E = jets.exp(Jet(A.c[:, ~pos]))
                coef[:, ~pos] = (1.0 / (E + 1.0)).c
    except JetOverflowError as exc:
        raise JetOverflowError(f"bump derivative of order {order} overflowed near rho in {{0, 1}}") from exc
    if not np.all(np.isfinite(coef)):
        raise JetOverflowError(f"bump derivative of order {order} overflowed near rho in {{0, 1}}")
    out[:, inside] = coef
    return out


def bump_deriv(p: BumpParams, rho, order: int):
    """order-th derivative of phi_s at rho (exactly zero outside (0, 1) for order >= 1)."""
    c = bump_taylor(p, rho, order)[order] * math.factorial(order)
    return c if np.ndim(rho) else float(c)


def step_taylor(p: BumpParams, t, order: int) -> np.ndarray:
    """Normalized t-Taylor coefficients of phi_s((t - tau)/(T - tau))."""
    width = p.T - p.tau
    rho = (np.asarray(t, dtype=float) - p.tau) / width
    return Jet(bump_taylor(p, rho, order)).scale_argument(1.0 / width).c


def step_deriv(p: BumpParams, t, order: int):
    """order-th t-derivative of phi_s((t - tau)/(T - tau))."""
    width = p.T - p.tau
    c = bump_deriv(p, (np.asarray(t, dtype=float) - p.tau) / width, order)
    return c * width ** (-order)


def _cutoff_taylor(cut: BumpParams, u, order: int, slope: float) -> np.ndarray:
    """Taylor coefficients in t of chi(u(t)) with u = slope*(t - anchor).

    chi(u) = phi(2|u| - 1): identically 1 on |u| <= 1/2 and 0 on |u| >= 1.
    """
    u = np.asarray(u, dtype=float)
    sgn = np.where(u >= 0.0, 1.0, -1.0)
    base = bump_taylor(cut, 2.0 * np.abs(u) - 1.0, order)
    k = np.arange(order + 1).reshape((-1,) + (1,) * u.ndim)
    return base * (2.0 * slope * sgn) ** k


@dataclass(frozen=True)
class GevreyInterpolant:
    """Smooth function with prescribed derivatives d_q at ``anchor``.

    f(t) = sum_q d_q (t - anchor)^q / q! * chi((t - anchor)/rho_q); every cutoff is
    identically one near the anchor, so f^(q)(anchor) = d_q exactly.
    """

    anchor: float
    d: np.ndarray
    H: float
    H_tilde: float
    C: float
    rho: np.ndarray
    cutoff: BumpParams = field(default_factory=lambda: BumpParams(s=1.5, M=1.0))

    @property
    def Q(self) -> int:
        return self.d.size - 1

    def support_radius(self) -> float:
        nz = np.flatnonzero(self.d)
        return float(self.rho[nz].max()) if nz.size else 0.0

    def taylor(self, t, order: int) -> np.ndarray:
        """Normalized Taylor coefficients of f at each t, shape (order+1,) + shape(t)."""
        t = np.asarray(t, dtype=float)
        h = t - self.anchor
        out = np.zeros((order + 1,) + t.shape)
        for q in np.flatnonzero(self.d):
            # poly part: d_q (h + e)^q / q!  -> coefficient of e^k is d_q h^{q-k} / (k!(q-k)!)
            poly = np.zeros((order + 1,) + t.shape)
            for k in range(min(q, order) + 1):
                poly[k] = h ** (q - k) / (math.factorial(k) * math.factorial(q - k))
            cut = _cutoff_taylor(self.cutoff, h / self.rho[q], order, 1.0 / self.rho[q])
            out += self.d[q] * (Jet(poly) * Jet(cut)).c
        return out

    def __call__(self, t):
        return self.taylor(t, 0)[0]


def fit_growth_constant(d: np.ndarray, H: float) -> float:
    """Smallest C with |d_q| <= C H^q (2q)! over the provided terms."""
    q = np.arange(d.size)
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(d)) - q * math.log(H) - np.array([math.lgamma(2 * k + 1) for k in q])
    if np.any(np.isnan(logs)) or np.any(np.isposinf(logs)):
        raise ValueError("derivative sequence is not finite")
    m = logs.max()
    return float(math.exp(m)) if np.isfinite(m) else 0.0


def borel_interpolate(d, H: float, H_tilde: float, *, anchor: float = 0.0,
                      r: float = 1.0 / math.e, cutoff_s: float = 1.5) -> GevreyInterpolant:
    """Build a smooth f with f^(q)(anchor) = d_q, q = 0..Q.

    Requires H_tilde > e^{1/e} H.  Term q is localized on |t - anchor| < rho_q
    with rho_q = r / (H_tilde (q + 1)).
    """
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("derivative sequence is not finite")
    if not H > 0:
        raise ValueError("H must be positive")
    if not H_tilde > E_INV_E * H:
        raise ValueError(f"need H_tilde > e^(1/e) H = {E_INV_E * H:g}, got {H_tilde:g}")
    C = fit_growth_constant(d, H)
    rho = r / (H_tilde * (np.arange(d.size) + 1.0))
    return GevreyInterpolant(anchor, d, H, H_tilde, C, rho, BumpParams(s=cutoff_s, M=1.0))


def interpolant_deriv(f: GevreyInterpolant, t, order: int):
    """order-th derivative of the interpolant at t."""
    c = f.taylor(t, order)[order] * math.factorial(order)
    return c if np.ndim(t) else float(c)


def fitted_growth(f: GevreyInterpolant, samples, q_max: int) -> float:
    """C' such that |f^(q)(t)| <= C' H_tilde^q (2q)! at every sample for q <= q_max."""
    coef = f.taylor(np.asarray(samples, dtype=float), q_max)
    best = 0.0
    for q in range(q_max + 1):
        v = np.max(np.abs(coef[q])) * math.factorial(q)
        best = max(best, v / (f.H_tilde**q * math.factorial(2 * q)))
    return best


def gevrey_fit(p: BumpParams, orders, samples) -> dict:
    """Fit log sup|phi^(p)| ~ log C + s log p! - p log R by least squares."""
    orders = np.asarray(list(orders))
    sup = np.array([np.max(np.abs(bump_deriv(p, samples, int(k)))) for k in orders])
    lf = np.array([math.lgamma(k + 1) for k in orders])
    # y - s log p! = log C - p log R
    y = np.log(sup) - p.s * lf
    A = np.vstack([np.ones_like(orders, dtype=float), -orders.astype(float)]).T
    (logC, logR), *_ = np.linalg.lstsq(A, y, rcond=None)
    return {"C": float(math.exp(logC)), "R": float(math.exp(logR)), "orders": orders.tolist(),
            "sup": sup.tolist()}
