"""Parameters, grids, the transverse sine basis and quadrature on Omega = (-1,0) x (0,1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson


@dataclass(frozen=True)
class Params:
    """Physical and synthesis parameters.

    ``s`` is the Gevrey order of the switching bump, ``M`` its steepness.
    ``I_max``/``J_max`` truncate the flat series in the time-derivative
    index and in the transverse mode index respectively.
    """

    a: float = 1.0
    T: float = 1.0
    tau: float = 0.4
    s: float = 1.6
    M: float = 1.0
    I_max: int = 15
    J_max: int = 4
    nx: int = 32
    ny: int = 65
    nt: int = 2000

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 < self.tau < self.T:
            raise ValueError(f"tau must lie in (0, T), got tau={self.tau}, T={self.T}")
        if not 1 < self.s < 2:
            raise ValueError(f"s must lie in (1, 2), got {self.s}")
        if not self.M > 0:
            raise ValueError(f"M must be positive, got {self.M}")
        if self.I_max < 0:
            raise ValueError("I_max must be >= 0")
        if self.J_max < 1:
            raise ValueError("J_max must be >= 1")
        if min(self.nx, self.ny, self.nt) < 2:
            raise ValueError("nx, ny, nt must all be >= 2")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    def replace(self, **changes) -> "Params":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return Params(**kw)


def chebyshev_nodes(n: int) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto points mapped to [-1, 0], ascending, endpoints exact."""
    N = n - 1
    xi = np.sin(np.pi * np.arange(-N, N + 1, 2) / (2 * N))
    x = (xi - 1.0) / 2.0
    x[0], x[-1] = -1.0, 0.0
    return x


def clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Clenshaw-Curtis weights for ``chebyshev_nodes(n)`` on an interval of length 1."""
    N = n - 1
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    v = np.ones(N - 1)
    interior = slice(1, N)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
        v -= np.cos(N * theta[interior]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
    w[interior] = 2.0 * v / N
    # reference interval [-1, 1] has length 2; ordering is symmetric
    return w / 2.0


def simpson_weights(nodes: np.ndarray) -> np.ndarray:
    """Composite Simpson weights for arbitrary (typically uniform) nodes."""
    nodes = np.asarray(nodes, dtype=float)
    return simpson(np.eye(nodes.size), x=nodes, axis=-1)


@dataclass(frozen=True)
class Grid:
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    t_nodes: np.ndarray
    x_kind: str = "chebyshev"

    def __post_init__(self):
        for name, nodes, lo, hi in (
            ("x", self.x_nodes, -1.0, 0.0),
            ("y", self.y_nodes, 0.0, 1.0),
        ):
            if nodes[0] != lo or nodes[-1] != hi:
                raise ValueError(f"{name} nodes must span [{lo}, {hi}] exactly")
        for name, nodes in (("x", self.x_nodes), ("y", self.y_nodes), ("t", self.t_nodes)):
            if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
                raise ValueError(f"{name} nodes must be strictly increasing with >= 2 entries")
        if self.t_nodes[0] != 0.0:
            raise ValueError("t nodes must start at 0")
        if self.x_kind not in ("chebyshev", "uniform"):
            raise ValueError(f"unknown x_kind {self.x_kind!r}")

    @classmethod
    def from_params(cls, p: Params, x_kind: str = "chebyshev") -> "Grid":
        x = chebyshev_nodes(p.nx) if x_kind == "chebyshev" else np.linspace(-1.0, 0.0, p.nx)
        return cls(
            x_nodes=x,
            y_nodes=np.linspace(0.0, 1.0, p.ny),
            t_nodes=np.linspace(0.0, p.T, p.nt + 1),
            x_kind=x_kind,
        )

    @property
    def x_weights(self) -> np.ndarray:
        if self.x_kind == "chebyshev":
            return clenshaw_curtis_weights(self.x_nodes.size)
        return simpson_weights(self.x_nodes)

    @property
    def y_weights(self) -> np.ndarray:
        return simpson_weights(self.y_nodes)

    @property
    def t_weights(self) -> np.ndarray:
        return simpson_weights(self.t_nodes)


@dataclass(frozen=True)
class TransverseBasis:
    """Dirichlet eigenbasis e_j(y) = sqrt(2) sin(j pi y), lambda_j = (j pi)^2."""

    J_max: int
    lambdas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.J_max < 1:
            raise ValueError("J_max must be >= 1")
        j = np.arange(1, self.J_max + 1)
        object.__setattr__(self, "lambdas", (j * np.pi) ** 2)

    def lam(self, j: int) -> float:
        return (j * math.pi) ** 2

    def e(self, j: int, y):
        return math.sqrt(2.0) * np.sin(j * np.pi * np.asarray(y, dtype=float))

    def matrix(self, y_nodes: np.ndarray) -> np.ndarray:
        """Samples ``E[m, j-1] = e_j(y_m)``."""
        j = np.arange(1, self.J_max + 1)
        return math.sqrt(2.0) * np.sin(np.pi * np.outer(y_nodes, j))


def make_basis(J_max: int) -> TransverseBasis:
    return TransverseBasis(J_max)


def _check_aliasing(ny: int, J_max: int) -> None:
    if ny < 2 * J_max + 1:
        raise ValueError(f"ny={ny} too small for J_max={J_max}: need ny >= 2*J_max+1")


def sine_analyze(f: np.ndarray, y_nodes: np.ndarray, basis: TransverseBasis) -> np.ndarray:
    """Mode coefficients c_j = int_0^1 f(y) e_j(y) dy along the last axis of ``f``."""
    y_nodes = np.asarray(y_nodes, dtype=float)
    _check_aliasing(y_nodes.size, basis.J_max)
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != y_nodes.size:
        raise ValueError("last axis of f must match y_nodes")
    E = basis.matrix(y_nodes)
    return (f * simpson_weights(y_nodes)) @ E


def sine_synthesize(c: np.ndarray, y_nodes: np.ndarray, basis: TransverseBasis) -> np.ndarray:
    """Inverse of :func:`sine_analyze` on span(e_1..e_J); modes on the last axis."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != basis.J_max:
        raise ValueError(f"expected {basis.J_max} coefficients on the last axis")
    return c @ basis.matrix(np.asarray(y_nodes, dtype=float)).T


@dataclass(frozen=True)
class Field:
    """Samples on an x-y (2D) or x-y-t (3D) tensor grid, axis order (x, y[, t])."""

    values: np.ndarray
    grid: Grid
    tag: str = "state"

    def __post_init__(self):
        g = self.grid
        shape2 = (g.x_nodes.size, g.y_nodes.size)
        if self.values.shape not in (shape2, shape2 + (g.t_nodes.size,)):
            raise ValueError(f"field shape {self.values.shape} does not match grid {shape2}")

    @property
    def is_3d(self) -> bool:
        return self.values.ndim == 3

    def at(self, k: int) -> "Field":
        """2D slice at time node ``k``."""
        if not self.is_3d:
            raise ValueError("not a time-dependent field")
        return Field(self.values[:, :, k], self.grid, self.tag)

    def modes(self, basis: TransverseBasis) -> np.ndarray:
        """Sine coefficients, shape (nx, J[, nt])."""
        v = np.moveaxis(self.values, 1, -1)
        c = sine_analyze(v, self.grid.y_nodes, basis)
        return np.moveaxis(c, -1, 1)


def l2_norm(f: Field) -> float:
    """Tensor-product quadrature approximation of the L2(Omega) norm of a 2D field."""
    if f.is_3d:
        raise ValueError("l2_norm expects a 2D field")
    wx, wy = f.grid.x_weights, f.grid.y_weights
    s = float(np.max(np.abs(f.values)))
    if s == 0.0 or not math.isfinite(s):
        return s
    v = f.values / s
    sq = np.einsum("i,ij,j->", wx, v * v, wy)
    return s * float(math.sqrt(max(sq, 0.0)))


def sample_function(fn, grid: Grid, tag: str = "initial") -> Field:
    """Evaluate ``fn(x, y)`` on the grid's x-y tensor product."""
    X, Y = np.meshgrid(grid.x_nodes, grid.y_nodes, indexing="ij")
    return Field(np.asarray(fn(X, Y), dtype=float) * np.ones_like(X), grid, tag)
