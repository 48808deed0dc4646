"""Grid-sampled Hoelder functions on the circle and the distortion series.

Functions are stored by their values on ``x_k = k / M`` and evaluated by
periodic piecewise-linear interpolation.
"""

from dataclasses import dataclass
import csv
import io

import numpy as np

from ._validation import ConfigurationError, PreconditionError, check_positive_int
from .fiber import branch_orbits, circle_dist


@dataclass(frozen=True)
class HolderParams:
    alpha: float = 1.0
    xi: float = 0.25

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0 < self.xi <= 0.25:
            raise ConfigurationError(f"xi must lie in (0, 1/4], got {self.xi}")


def grid(M):
    return np.arange(M) / M


def interp_weights(y, M):
    """Left cell index and right weight for periodic linear interpolation at ``y``."""
    u = np.mod(np.asarray(y, dtype=float), 1.0) * M
    k = np.floor(u).astype(np.int64)
    theta = u - k
    k %= M
    return k, theta


def interpolate(values, y):
    """Evaluate the periodic piecewise-linear interpolant of ``values`` at ``y``."""
    values = np.asarray(values)
    M = values.shape[0]
    k, theta = interp_weights(y, M)
    return (1.0 - theta) * values[k] + theta * values[(k + 1) % M]


class HolderFunction:
    """A function on the circle known through its samples on a uniform grid.

    Parameters
    ----------
    values : array_like, shape (M,)
        Samples at ``k / M``; may be complex.
    """

    __array_priority__ = 10

    def __init__(self, values):
        v = np.asarray(values)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("values must be a 1-d array with at least two samples")
        if not np.iscomplexobj(v):
            v = v.astype(float)
        self.values = v

    @classmethod
    def from_callable(cls, func, M=1024):
        M = check_positive_int(M, "M", minimum=2)
        return cls(func(grid(M)))

    @classmethod
    def constant(cls, c, M=1024):
        return cls(np.full(M, c, dtype=complex if np.iscomplexobj(c) else float))

    @property
    def M(self):
        return self.values.size

    @property
    def x(self):
        return grid(self.M)

    def __call__(self, y):
        return interpolate(self.values, y)

    def _other(self, other):
        if isinstance(other, HolderFunction):
            if other.M != self.M:
                raise ValueError(f"grid mismatch: {self.M} vs {other.M}")
            return other.values
        return other

    def __add__(self, other):
        return HolderFunction(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return HolderFunction(self.values - self._other(other))

    def __rsub__(self, other):
        return HolderFunction(self._other(other) - self.values)

    def __mul__(self, other):
        return HolderFunction(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return HolderFunction(self.values / self._other(other))

    def __neg__(self):
        return HolderFunction(-self.values)

    def __repr__(self):
        return f"HolderFunction(M={self.M}, dtype={self.values.dtype})"

    def to_csv(self, params=None):
        """Single-column CSV with a header row ``M,alpha,xi`` then the samples."""
        params = params or HolderParams()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["M", "alpha", "xi"])
        w.writerow([self.M, repr(params.alpha), repr(params.xi)])
        w.writerow(["value"])
        for v in np.real_if_close(self.values):
            w.writerow([repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["M", "alpha", "xi"] or rows[2] != ["value"]:
            raise ValueError("not a HolderFunction CSV")
        M = int(rows[1][0])
        params = HolderParams(float(rows[1][1]), float(rows[1][2]))
        vals = np.array([float(r[0]) for r in rows[3:]])
        if vals.size != M:
            raise ValueError(f"header says M={M} but {vals.size} samples follow")
        return cls(vals), params


def _values(g):
    return g.values if isinstance(g, HolderFunction) else np.asarray(g)


def sup_norm(g):
    v = _values(g)
    return float(np.max(np.abs(v))) if v.size else 0.0


def holder_seminorm(g, params=HolderParams()):
    """Grid estimate of ``v_{alpha,xi}(g)``.

    Maximises ``|g(x) - g(x')| / rho(x, x')**alpha`` over grid pairs with
    ``rho < xi``. For ``alpha = 1`` this equals the Lipschitz constant of the
    piecewise-linear interpolant, which is attained on adjacent grid points.
    For ``alpha < 1`` it is a lower estimate of the interpolant's seminorm.
    """
    v = _values(g)
    M = v.shape[0]
    if 1.0 / M >= params.xi:
        raise ConfigurationError(f"grid spacing 1/{M} is not below xi = {params.xi}")
    if params.alpha == 1.0:
        return float(np.max(np.abs(np.roll(v, -1, axis=0) - v)) * M)
    s_max = int(np.ceil(params.xi * M)) - 1
    best = 0.0
    for s in range(1, s_max + 1):
        rho = s / M
        diff = np.max(np.abs(np.roll(v, -s, axis=0) - v))
        best = max(best, diff / rho**params.alpha)
    return float(best)


def holder_norm(g, params=HolderParams()):
    return sup_norm(g) + holder_seminorm(g, params)


@dataclass
class QEstimate:
    value: float
    terms_used: int
    tail_bound: float


def q_series(path, params=HolderParams(), tol=1e-10, max_terms=100_000):
    """Truncated ``Q_omega(H) = sum_j H_{sigma^-j} gamma_{sigma^-j omega, j}^-alpha``.

    Terms are summed until the worst-case geometric tail (largest ``H``,
    smallest expansion in the alphabet) drops below ``tol`` times the partial
    sum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    alpha = params.alpha
    h_max = float(path.H.max())
    r = float(path.d.min()) ** (-alpha)
    partial, log_gamma, j = 0.0, 0.0, 0
    chunk = 64
    while True:
        syms = path.symbols(-(j + chunk), -j)[::-1]   # indices -(j+1) ... -(j+chunk)
        for s in syms:
            j += 1
            log_gamma += np.log(path.d[s])
            partial += path.H[s] * np.exp(-alpha * log_gamma)
            tail = h_max * r**j / (1.0 - r)
            if tail <= tol * partial or j >= max_terms:
                return QEstimate(value=partial, terms_used=j, tail_bound=tail)


def q_window(path, lo, hi, params=HolderParams(), tol=1e-12):
    """``Q_{sigma^j omega}`` for ``j = lo..hi`` via ``Q_{sigma w} = gamma_w^-a (H_w + Q_w)``."""
    out = np.empty(hi - lo + 1)
    out[0] = q_series(path.shifted(lo), params, tol).value
    syms = path.symbols(lo, hi)
    for i, s in enumerate(syms):
        out[i + 1] = path.d[s] ** (-params.alpha) * (path.H[s] + out[i])
    return out


@dataclass
class DistortionReport:
    worst_ratio: float
    max_difference: float
    bound: float

    @property
    def ok(self):
        return self.worst_ratio <= 1.0 + 1e-9


def distortion_check(path, n, phis, x, x_prime, params=HolderParams(), slack=1e-12):
    """Compare ``|S_n phi(y_i) - S_n phi(y_i')|`` with ``rho^alpha Q_{sigma^n omega}(H)``.

    ``phis[j]`` is the function summed at time ``j``; each must satisfy
    ``v_{alpha,xi}(phis[j]) <= H`` of the symbol at index ``j``.
    """
    n = check_positive_int(n, "n")
    if len(phis) != n:
        raise ValueError(f"expected {n} functions, got {len(phis)}")
    syms = path.symbols(0, n)
    for j, (phi, s) in enumerate(zip(phis, syms)):
        v = holder_seminorm(phi, params)
        if v > path.H[s] * (1 + 1e-12):
            raise PreconditionError(
                f"phis[{j}] has seminorm {v:.6g} above H = {path.H[s]:.6g} of its fiber"
            )
    rho = float(circle_dist(x, x_prime))
    if rho >= params.xi:
        raise PreconditionError(f"rho(x, x') = {rho} must be < xi = {params.xi}")
    orb = branch_orbits(path, x, n)
    orb_p = branch_orbits(path, x_prime, n, lift_to=x)
    s_n = sum(interpolate(_values(phis[j]), orb[:, j]) for j in range(n))
    s_np = sum(interpolate(_values(phis[j]), orb_p[:, j]) for j in range(n))
    diff = float(np.max(np.abs(s_n - s_np)))
    bound = rho**params.alpha * q_series(path.shifted(n), params).value
    if bound == 0.0:
        ratio = 0.0 if diff <= slack else np.inf
    else:
        ratio = max(diff - slack, 0.0) / bound
    return DistortionReport(worst_ratio=float(ratio), max_difference=diff, bound=bound)
