"""Generating functions g_{i,j} as exact power series in x.

g_{0,j} solves g''' - (lambda_j - a) g' = 0 with g(0) = g'(0) = 0, g''(0) = 1 and
g_{i,j} solves the same operator with right-hand side -g_{i-1,j} and zero
Cauchy data at x = 0.  Both are entire, so they are stored as Taylor
coefficients about x = 0 produced by the three-term coefficient recursion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .domain import Params, TransverseBasis

SERIES_TOL = 1e-14
DEGREE_CAP = 400
FORMAT_VERSION = 1
# lambda_j beyond this makes e^{sqrt(lambda_j)} growth exceed what plain doubles
# resolve at SERIES_TOL on [-1, 0]
MAX_SAFE_J = 25


class SeriesTruncationError(RuntimeError):
    """Raised when the tail of a series cannot be pushed below tolerance."""


@dataclass(frozen=True)
class PowerSeries:
    """Truncated power series sum_n coeffs[n] x^n with a tail bound on [-1, 0]."""

    coeffs: np.ndarray
    tail_bound: float = 0.0

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x, deriv_order: int = 0):
        return eval_series(self, x, deriv_order)

    def sup_bound(self) -> float:
        """Upper bound of |g| on [-1, 0] (sum of |c_n| plus tail)."""
        return float(np.sum(np.abs(self.coeffs)) + self.tail_bound)


def _tail_from_ratio(c: np.ndarray, mu: float, start: int) -> float:
    """Geometric bound for sum_{n > N}|c_n| once the source has been exhausted.

    Past the source degree the recursion is c_{n+2} = mu c_n / ((n+2)(n+1)),
    so the tail is dominated by a geometric series in the even/odd chains.
    """
    N = c.size - 1
    rho = abs(mu) / ((N + 2) * (N + 1))
    if N < start or rho >= 0.5:
        return math.inf
    last_two = abs(c[N]) + abs(c[N - 1])
    return last_two * rho / (1.0 - rho)


def _solve_series(source: np.ndarray, mu: float, c2: float, tol: float, cap: int) -> np.ndarray:
    """Coefficients of the solution of g''' - mu g' = -source, g(0)=g'(0)=0, g''(0)=c2."""
    src_deg = source.size - 1
    c = [0.0, 0.0, c2]
    scale = abs(c2)
    n = 0
    while True:
        d_n = source[n] if n <= src_deg else 0.0
        c.append((mu * (n + 1) * c[n + 1] - d_n) / ((n + 3) * (n + 2) * (n + 1)))
        scale = max(scale, abs(c[-1]))
        n += 1
        N = len(c) - 1
        if N > max(src_deg + 3, 8):
            # tiny entries (e.g. high i) are resolved relative to their own size
            thr = tol * min(1.0, scale)
            if all(abs(v) <= thr for v in c[-6:]):
                arr = np.asarray(c)
                if _tail_from_ratio(arr, mu, src_deg + 3) <= thr:
                    return arr
        if N >= cap:
            raise SeriesTruncationError(
                f"series tail did not reach {tol:g} within degree cap {cap} (mu={mu:g})"
            )


def _trim(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else c[:1] * 0.0


def g0(j: int, a: float, *, tol: float = SERIES_TOL, cap: int = DEGREE_CAP) -> PowerSeries:
    """g_{0,j}: (cosh(sqrt(mu) x) - 1)/mu with mu = lambda_j - a (cos branch for mu < 0)."""
    if j < 1 or not a > 0:
        raise ValueError("need j >= 1 and a > 0")
    mu = (j * math.pi) ** 2 - a
    c = _trim(_solve_series(np.zeros(1), mu, 0.5, tol, cap))
    tail = _tail_from_ratio(c, mu, 3) if c.size > 3 else 0.0
    return PowerSeries(c, tail if math.isfinite(tail) else 0.0)


def g_next(prev: PowerSeries, mu: float, *, tol: float = SERIES_TOL,
           cap: int = DEGREE_CAP) -> PowerSeries:
    """g_{i,j} from g_{i-1,j} with mu = lambda_j - a.

    ``tail_bound`` covers the coefficients dropped from this recursion, taking
    the stored coefficients of ``prev`` as the exact source.
    """
    if not np.any(prev.coeffs):
        return PowerSeries(np.zeros(1), 0.0)
    c = _trim(_solve_series(prev.coeffs, mu, 0.0, tol, cap))
    tail = _tail_from_ratio(c, mu, prev.degree + 3)
    return PowerSeries(c, tail if math.isfinite(tail) else 0.0)


def eval_series(ps: PowerSeries, x, deriv_order: int = 0):
    """Horner evaluation of the series (or one of its first three derivatives)."""
    if not 0 <= deriv_order <= 3:
        raise ValueError("deriv_order must be 0..3")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-15):
        raise ValueError("series evaluation is certified only on |x| <= 1")
    c = npoly.polyder(ps.coeffs, deriv_order) if deriv_order else ps.coeffs
    out = npoly.polyval(x, c)
    return float(out) if out.ndim == 0 else out


def closed_form_g0(j: int, a: float, x):
    """Closed form of g_{0,j} in each of the lambda_j vs a branches."""
    x = np.asarray(x, dtype=float)
    lam = (j * math.pi) ** 2
    if lam < a:
        k = math.sqrt(a - lam)
        return (1.0 - np.cos(k * x)) / (a - lam)
    if lam == a:
        return 0.5 * x**2
    k = math.sqrt(lam - a)
    return (np.cosh(k * x) - 1.0) / (lam - a)


@dataclass(frozen=True)
class GenFunTable:
    a: float
    I_max: int
    J_max: int
    entries: dict = field(repr=False)
    lambdas: tuple = ()

    def __getitem__(self, key) -> PowerSeries:
        return self.entries[key]

    def lam(self, j: int) -> float:
        return self.lambdas[j - 1] if self.lambdas else (j * math.pi) ** 2

    def values_at(self, x, deriv_order: int = 0) -> np.ndarray:
        """Array G[i, j-1, ...] of g_{i,j}^{(deriv_order)} evaluated at ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.empty((self.I_max + 1, self.J_max) + x.shape)
        for (i, j), ps in self.entries.items():
            out[i, j - 1] = eval_series(ps, x, deriv_order)
        return out

    def to_json(self) -> str:
        doc = {
            "version": FORMAT_VERSION,
            "a": self.a,
            "I_max": self.I_max,
            "J_max": self.J_max,
            "entries": [
                {
                    "i": i,
                    "j": j,
                    "degree": ps.degree,
                    "tail_bound": ps.tail_bound,
                    "coeffs": [float(v) for v in ps.coeffs],
                }
                for (i, j), ps in sorted(self.entries.items())
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GenFunTable":
        doc = json.loads(text)
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported table version {doc.get('version')!r}")
        entries = {
            (e["i"], e["j"]): PowerSeries(np.asarray(e["coeffs"], dtype=float), e["tail_bound"])
            for e in doc["entries"]
        }
        J = doc["J_max"]
        return cls(doc["a"], doc["I_max"], J, entries,
                   tuple((j * math.pi) ** 2 for j in range(1, J + 1)))


def build_table(p: Params, basis: TransverseBasis, *, tol: float = SERIES_TOL,
                cap: int = DEGREE_CAP) -> GenFunTable:
    if basis.J_max < p.J_max:
        raise ValueError("basis has fewer modes than Params.J_max")
    if p.J_max > MAX_SAFE_J:
        raise ValueError(f"J_max={p.J_max} exceeds the double-precision limit {MAX_SAFE_J}")
    entries = {}
    for j in range(1, p.J_max + 1):
        mu = float(basis.lambdas[j - 1]) - p.a
        g = g0(j, p.a, tol=tol, cap=cap)
        entries[(0, j)] = g
        for i in range(1, p.I_max + 1):
            g = g_next(g, mu, tol=tol, cap=cap)
            entries[(i, j)] = g
    lambdas = tuple(float(v) for v in basis.lambdas[: p.J_max])
    return GenFunTable(p.a, p.I_max, p.J_max, entries, lambdas)


def prop_bound(i: int, lam: float) -> float:
    """e^{sqrt(lambda)} 3^i i! / (3i+2)!, evaluated through log-gamma."""
    return math.exp(math.sqrt(lam) + i * math.log(3.0) + math.lgamma(i + 1) - math.lgamma(3 * i + 3))


@dataclass
class BoundReport:
    max_ratio: float
    violations: list
    factorial_C: float
    ratios: dict

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "max_ratio": self.max_ratio,
            "violations": self.violations,
            "factorial_C": self.factorial_C,
            "factorial_C_provenance": "fitted: max |g_ij(x)| (2i)! / e^sqrt(lambda_j) over samples",
            "entries": [
                {"i": i, "j": j, "max_abs": v["max_abs"], "bound": v["bound"], "ratio": v["ratio"]}
                for (i, j), v in sorted(self.ratios.items())
            ],
        }


def check_bound(table: GenFunTable, samples) -> BoundReport:
    """Check |g_{i,j}(x)| <= e^{sqrt(lambda_j)} 3^i i!/(3i+2)! at every sample.

    Also fits the constant C of the weaker form C e^{sqrt(lambda_j)}/(2i)!.
    """
    xs = np.asarray(samples, dtype=float)
    violations, ratios = [], {}
    max_ratio, C = 0.0, 0.0
    for (i, j), ps in sorted(table.entries.items()):
        lam = table.lam(j)
        vals = np.abs(eval_series(ps, xs))
        vals = np.atleast_1d(vals)
        bound = prop_bound(i, lam)
        r = float(vals.max() / bound)
        ratios[(i, j)] = {"max_abs": float(vals.max()), "bound": bound, "ratio": r}
        max_ratio = max(max_ratio, r)
        for x, v in zip(np.atleast_1d(xs), vals):
            if v > bound:
                violations.append({"i": i, "j": j, "x": float(x), "value": float(v), "bound": bound})
        C = max(C, float(vals.max()) * math.exp(math.lgamma(2 * i + 1) - math.sqrt(lam)))
    return BoundReport(max_ratio, violations, C, ratios)


def ode_residual(table: GenFunTable, i: int, j: int, xs, relative: bool = True) -> float:
    """max |g''' - mu g' + g_{i-1}| over ``xs`` (with g_{-1} = 0).

    With ``relative`` the residual is divided by sup(|g'''| + |mu g'| + |g_{i-1}|),
    the size of the terms that cancel.
    """
    mu = table.lam(j) - table.a
    ps = table[(i, j)]
    d3 = np.atleast_1d(eval_series(ps, xs, 3))
    d1 = mu * np.atleast_1d(eval_series(ps, xs, 1))
    src = np.atleast_1d(eval_series(table[(i - 1, j)], xs)) if i > 0 else np.zeros_like(d3)
    r = float(np.max(np.abs(d3 - d1 + src)))
    if not relative:
        return r
    scale = float(np.max(np.abs(d3) + np.abs(d1) + np.abs(src)))
    return r / scale if scale > 0 else r
