"""Per-fiber observables ``psi_omega`` and potentials ``phi_omega``.

Both depend on the driving path only through the current symbol, so they are
evaluated as ``values(path, s, x)`` with ``s`` the symbol id.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def potential(path, s, x):
    """``phi_omega(x) = -log d + eps cos(2 pi x)``."""
    return -np.log(path.d[s]) + path.eps[s] * np.cos(TWO_PI * np.asarray(x))


def potential_lipschitz(path, s):
    return TWO_PI * float(path.eps[s])


class Observable:
    """Base class; subclasses implement ``values`` and ``lipschitz``."""

    def values(self, path, s, x):
        raise NotImplementedError

    def lipschitz(self, path, s):
        raise NotImplementedError

    def at(self, path, j, x):
        """Value at time offset ``j`` of ``path``."""
        return self.values(path, path.symbol_at(j), x)

    def __mul__(self, k):
        return ScaledObservable(self, float(k))

    __rmul__ = __mul__


class TrigObservable(Observable):
    """``a cos(2 pi x) + c sin(4 pi x)`` with ``(a, c)`` read from the symbol."""

    def values(self, path, s, x):
        x = np.asarray(x)
        return path.a[s] * np.cos(TWO_PI * x) + path.c[s] * np.sin(2 * TWO_PI * x)

    def lipschitz(self, path, s):
        return TWO_PI * abs(path.a[s]) + 2 * TWO_PI * abs(path.c[s])

    def __repr__(self):
        return "TrigObservable()"


class FunctionObservable(Observable):
    """The same function on every fiber."""

    def __init__(self, func, lipschitz):
        self.func = func
        self._lip = float(lipschitz)

    def values(self, path, s, x):
        return np.broadcast_to(self.func(np.asarray(x, dtype=float)), np.shape(x)).astype(float)

    def lipschitz(self, path, s):
        return self._lip

    def __repr__(self):
        return f"FunctionObservable({self.func!r})"


class CoboundaryObservable(Observable):
    """``phi - phi o f_omega`` for a fixed transfer function ``phi``."""

    def __init__(self, func=None, lipschitz=TWO_PI):
        self.func = func if func is not None else (lambda x: np.cos(TWO_PI * x))
        self._lip = float(lipschitz)

    def values(self, path, s, x):
        x = np.asarray(x, dtype=float)
        return self.func(x) - self.func(np.mod(path.d[s] * x + path.b[s], 1.0))

    def lipschitz(self, path, s):
        return self._lip * (1 + path.d[s])

    def __repr__(self):
        return "CoboundaryObservable()"


class ScaledObservable(Observable):
    def __init__(self, base, k):
        self.base = base
        self.k = k

    def values(self, path, s, x):
        return self.k * self.base.values(path, s, x)

    def lipschitz(self, path, s):
        return abs(self.k) * self.base.lipschitz(path, s)

    def __repr__(self):
        return f"{self.k!r} * {self.base!r}"


def zero_observable():
    return FunctionObservable(np.zeros_like, 0.0)


def cosine_observable():
    return FunctionObservable(lambda x: np.cos(TWO_PI * x), TWO_PI)


def required_holder_bound(path, s, params, observable=None):
    """Smallest ``H`` putting both the potential and ``observable`` in the Hoelder class.

    For a Lipschitz function with constant ``K``, ``v_{alpha,xi} <= K xi^(1-alpha)``.
    """
    lip = potential_lipschitz(path, s)
    if observable is not None:
        lip = max(lip, observable.lipschitz(path, s))
    return max(1.0, lip * params.xi ** (1.0 - params.alpha))
