"""Truncated univariate Taylor arithmetic (jets), vectorized over sample points.

A jet stores normalized coefficients c[k] = f^(k)(t0) / k! along axis 0; any
trailing axes index independent expansion points.
"""

from __future__ import annotations

import math

import numpy as np


class JetOverflowError(FloatingPointError):
    pass


class Jet:
    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    @classmethod
    def constant(cls, value, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, order: int, slope=1.0) -> "Jet":
        """The jet of t -> value + slope * (t - t0)."""
        j = cls.constant(value, order)
        if order >= 1:
            j.c[1] = slope
        return j

    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    def derivatives(self) -> np.ndarray:
        fact = np.array([math.factorial(k) for k in range(self.order + 1)], dtype=float)
        return self.c * fact.reshape((-1,) + (1,) * (self.c.ndim - 1))

    def _coerce(self, other):
        if isinstance(other, Jet):
            return other.c
        other = np.asarray(other, dtype=float)
        c = np.zeros_like(self.c * other)
        c[0] = other
        return c

    def __add__(self, other):
        return Jet(self.c + self._coerce(other))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return Jet(self.c - self._coerce(other))

    def __rsub__(self, other):
        return Jet(self._coerce(other) - self.c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float))
        a, b = np.broadcast_arrays(self.c, other.c)
        out = np.zeros_like(a)
        for k in range(a.shape[0]):
            out[k] = np.einsum("m...,m...->...", a[: k + 1], b[k::-1])
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other, dtype=float))
        a, b = np.broadcast_arrays(self.c, other.c)
        q = np.zeros_like(a)
        for k in range(a.shape[0]):
            acc = a[k] - np.einsum("m...,m...->...", b[1 : k + 1], q[k - 1 :: -1][:k]) if k else a[0]
            q[k] = acc / b[0]
        return Jet(q)

    def __rtruediv__(self, other):
        return Jet(self._coerce(other)) / self

    def scale_argument(self, alpha) -> "Jet":
        """Jet of t -> f(alpha * t) given the jet of f."""
        k = np.arange(self.order + 1).reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c * np.asarray(alpha, dtype=float) ** k)


def exp(f: Jet) -> Jet:
    c = f.c
    g = np.zeros_like(c)
    with np.errstate(over="ignore", invalid="ignore"):
        g[0] = np.exp(c[0])
        for k in range(1, c.shape[0]):
            m = np.arange(1, k + 1).reshape((-1,) + (1,) * (c.ndim - 1))
            g[k] = np.sum(m * c[1 : k + 1] * g[k - 1 :: -1][:k], axis=0) / k
    if not np.all(np.isfinite(g)):
        raise JetOverflowError("jet exponential overflowed")
    return Jet(g)


def log(f: Jet) -> Jet:
    c = f.c
    g = np.zeros_like(c)
    g[0] = np.log(c[0])
    for k in range(1, c.shape[0]):
        m = np.arange(1, k).reshape((-1,) + (1,) * (c.ndim - 1))
        acc = np.sum(m * g[1:k] * c[k - 1 : 0 : -1], axis=0) if k > 1 else 0.0
        g[k] = (c[k] - acc / k) / c[0]
    return Jet(g)


def power_series_shift(x0, exponent: float, order: int, sign: float = 1.0) -> Jet:
    """Jet of h -> (x0 + sign*h)^exponent at x0 > 0, from the binomial series."""
    x0 = np.asarray(x0, dtype=float)
    c = np.zeros((order + 1,) + x0.shape)
    c[0] = x0**exponent
    coef = 1.0
    for k in range(1, order + 1):
        coef *= (exponent - k + 1) / k
        c[k] = coef * (sign / x0) ** k * c[0]
    return Jet(c)
