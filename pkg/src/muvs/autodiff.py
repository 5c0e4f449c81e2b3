"""Forward-mode automatic differentiation with vectorized dual numbers.

A ``Dual`` carries values of shape ``S`` and tangents of shape ``S + (n,)``,
one tangent direction per input coordinate, so a single evaluation of a
residual function yields its full Jacobian.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __array_priority__ = 1000

    def __init__(self, value, tangent):
        self.value = np.asarray(value, dtype=float)
        self.tangent = np.asarray(tangent, dtype=float)

    @classmethod
    def variables(cls, x) -> "Dual":
        x = np.asarray(x, dtype=float).ravel()
        return cls(x, np.eye(x.size))

    @property
    def n(self) -> int:
        return self.tangent.shape[-1]

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __getitem__(self, idx):
        return Dual(self.value[idx], self.tangent[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"Dual({self.value!r}, tangent shape {self.tangent.shape})"

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        v = np.asarray(other, dtype=float)
        return Dual(v, np.zeros(v.shape + (self.n,)))

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.value + o.value, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.value - o.value, self.tangent - o.tangent)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(
            self.value * o.value,
            self.tangent * o.value[..., None] + o.tangent * self.value[..., None],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return Dual(
            self.value / o.value,
            (self.tangent * o.value[..., None] - o.tangent * self.value[..., None]) / (o.value**2)[..., None],
        )

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k):
        if isinstance(k, Dual):
            return exp(k * log(self))
        k = float(k)
        return Dual(self.value**k, (k * self.value ** (k - 1))[..., None] * self.tangent)

    def _chain(self, value, deriv):
        return Dual(value, np.asarray(deriv)[..., None] * self.tangent)

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.value.sum(), self.tangent.reshape(-1, self.n).sum(axis=0))
        return Dual(self.value.sum(axis=axis), self.tangent.sum(axis=axis))

    # numpy ufunc dispatch -------------------------------------------------
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            return NotImplemented
        binary = {
            np.add: lambda a, b: a + b,
            np.subtract: lambda a, b: a - b,
            np.multiply: lambda a, b: a * b,
            np.true_divide: lambda a, b: a / b,
            np.power: lambda a, b: a**b,
        }
        if ufunc in binary:
            a, b = inputs
            if not isinstance(a, Dual):
                a = b._lift(a)
            return binary[ufunc](a, b)
        unary = {
            np.negative: lambda d: -d,
            np.sin: sin,
            np.cos: cos,
            np.exp: exp,
            np.log: log,
            np.sqrt: sqrt,
            np.square: lambda d: d * d,
            np.tanh: tanh,
            np.arctan: arctan,
            np.absolute: absolute,
        }
        if ufunc in unary:
            return unary[ufunc](inputs[0])
        return NotImplemented


def sin(d: Dual) -> Dual:
    return d._chain(np.sin(d.value), np.cos(d.value))


def cos(d: Dual) -> Dual:
    return d._chain(np.cos(d.value), -np.sin(d.value))


def exp(d: Dual) -> Dual:
    v = np.exp(d.value)
    return d._chain(v, v)


def log(d: Dual) -> Dual:
    return d._chain(np.log(d.value), 1.0 / d.value)


def sqrt(d: Dual) -> Dual:
    v = np.sqrt(d.value)
    return d._chain(v, 0.5 / v)


def tanh(d: Dual) -> Dual:
    v = np.tanh(d.value)
    return d._chain(v, 1 - v * v)


def arctan(d: Dual) -> Dual:
    return d._chain(np.arctan(d.value), 1.0 / (1 + d.value**2))


def absolute(d: Dual) -> Dual:
    return d._chain(np.abs(d.value), np.sign(d.value))


def stack(items) -> Dual:
    """Stack scalars/duals into a 1-D dual vector."""
    items = list(items)
    n = next(i.n for i in items if isinstance(i, Dual))
    vals, tans = [], []
    for it in items:
        if isinstance(it, Dual):
            vals.append(np.atleast_1d(it.value))
            tans.append(it.tangent.reshape(-1, n))
        else:
            v = np.atleast_1d(np.asarray(it, dtype=float))
            vals.append(v)
            tans.append(np.zeros((v.size, n)))
    return Dual(np.concatenate(vals), np.concatenate(tans))


def jacobian(fn, x) -> tuple[np.ndarray, np.ndarray]:
    """Value and Jacobian of a vector function by one forward-mode pass."""
    out = fn(Dual.variables(x))
    if not isinstance(out, Dual):
        out = stack(out)
    n = np.asarray(x).size
    return out.value.ravel(), out.tangent.reshape(-1, n)
