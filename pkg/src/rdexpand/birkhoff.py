"""Birkhoff sums, trajectory ensembles and two estimators of the asymptotic variance.

Trajectories are generated backwards. A terminal point ``x_n ~ mu_n`` is drawn by
inverse CDF and the orbit is pulled back one step at a time, choosing the
preimage ``y`` of ``x_{j+1}`` with probability proportional to
``exp(phi_j(y)) h_j(y)``. The resulting ``(x_0, ..., x_n)`` has the law of a
``mu_0``-distributed forward orbit, but no point is ever obtained by forward
multiplication, which in floating point would collapse the doubling map onto 0
after about 53 steps.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import PreconditionError, StateError, check_positive_int
from .fiber import canon
from .measures import MeasureStack, sample_density
from .observables import TWO_PI, Observable, TrigObservable

CHUNK = 4096
DEFAULT_CHECKPOINTS = tuple(2**k for k in range(5, 15))


def _offset(path, stack):
    if stack is None:
        raise StateError("an equivariant measure stack is required; build one first")
    if not path.same_realisation(stack.path):
        raise StateError("the stack was built on a different driving path")
    return path.origin_shift - stack.path.origin_shift


def _grid_values(observable, stack, j):
    x = np.arange(stack.M) / stack.M
    return observable.at(stack.path, j, x)


class CenteredObservable(Observable):
    """``psi_j - int psi_j d mu_j`` with means taken from a measure stack.

    Unlike plain observables this one depends on the time offset, not only on
    the symbol, so it is evaluated through ``at(path, j, x)``.
    """

    def __init__(self, base, stack):
        self.base = base.base if isinstance(base, CenteredObservable) else base
        self.stack = stack
        x = np.arange(stack.M) / stack.M
        offs = np.arange(stack.lo, stack.hi + 2)
        self.means = np.array([
            stack.integrate(self.base.values(stack.path, stack.symbols[i], x), j)
            for i, j in enumerate(offs)
        ])

    def mean(self, j):
        return self.means[self.stack._idx(j)]

    def at(self, path, j, x):
        k = _offset(path, self.stack) + j
        s = self.stack.symbols[self.stack._idx(k)]
        return self.base.values(path, s, x) - self.means[k - self.stack.lo]

    def values(self, path, s, x):
        raise PreconditionError("a centred observable depends on the time offset; use at()")

    def lipschitz(self, path, s):
        return self.base.lipschitz(path, s)

    def __repr__(self):
        return f"CenteredObservable({self.base!r})"


def center_observable(psi, stack):
    return CenteredObservable(psi, stack)


def birkhoff_sum(path, x, n, observable=None):
    """``S_n psi(x) = sum_{i<n} psi_i(f^i x)`` by forward iteration."""
    if n < 0:
        raise ValueError("n must be >= 0")
    observable = observable if observable is not None else TrigObservable()
    x = canon(np.asarray(x, dtype=float))
    total = np.zeros(x.shape)
    syms = path.symbols(0, n)
    for j, s in enumerate(syms):
        total = total + observable.at(path, j, x)
        x = canon(path.d[s] * x + path.b[s])
    return total if total.ndim else float(total)


def _backward_chunk(path, stack, observable, j0, n, record, N, seed, chunk):
    """One chunk of backward-sampled trajectories; returns tail sums at ``record``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk])))
    M = stack.M
    grid = np.arange(M + 1) / M
    x = sample_density(stack.mu(j0 + n), rng.random(N))
    tails = np.zeros(N)
    out = np.empty((len(record), N))
    pos = {r: i for i, r in enumerate(record)}
    if n in pos:
        out[pos[n]] = tails
    rows = np.arange(N)
    for j in range(n - 1, -1, -1):
        k = j0 + j
        s = stack.symbols[k - stack.lo]
        d, b, eps = int(path.d[s]), path.b[s], path.eps[s]
        # branch weights exp(phi) h up to the constant 1/d, tabulated then interpolated
        g = np.append(stack.h(k), stack.h(k)[0]) * np.exp(eps * np.cos(TWO_PI * grid))
        xs = x - b
        xs += xs < 0
        y = (xs[:, None] + np.arange(d)[None, :]) / d
        u = y * M
        cell = np.minimum(u.astype(np.int64), M - 1)
        theta = u - cell
        w = g[cell] + theta * (g[cell + 1] - g[cell])
        c = np.cumsum(w, axis=1)
        r = rng.random(N) * c[:, -1]
        pick = (c[:, :-1] <= r[:, None]).sum(axis=1)
        x = y[rows, pick]
        tails += observable.at(path, j, x)
        if j in pos:
            out[pos[j]] = tails
    return out, x


class TrajectoryEnsemble:
    """``N`` orbits of length ``n_max`` started from ``mu_omega`` at the path origin.

    Only the tail sums ``T_j = sum_{u >= j} psi_u(x_u)`` at the recorded indices
    are kept, so the partial sum over ``[a, b)`` is ``T_a - T_b``.

    Parameters
    ----------
    path : OmegaPath
    stack : MeasureStack
        Must cover offsets ``0..n_max`` of ``path``.
    observable : Observable, optional
        Default is the trig observable read from the symbols.
    N, n_max : int
    seed : int
    record : iterable of int, optional
        Extra indices to keep besides 0, ``n_max`` and the checkpoints.
    checkpoints : iterable of int
    workers : int
        Thread count; results do not depend on it.
    """

    def __init__(self, path, stack, observable=None, N=1000, n_max=None, seed=0,
                 record=(), checkpoints=DEFAULT_CHECKPOINTS, workers=1):
        self.path = path
        self.stack = stack
        self.observable = observable if observable is not None else TrigObservable()
        self.N = check_positive_int(N, "N")
        self.checkpoints = tuple(int(c) for c in checkpoints)
        if n_max is None:
            n_max = max(self.checkpoints + tuple(record) + (1,))
        self.n_max = check_positive_int(n_max, "n_max")
        self.seed = int(seed)
        j0 = _offset(path, stack)
        if not stack.covers(j0, j0 + self.n_max):
            raise PreconditionError(
                f"stack window [{stack.lo}, {stack.hi + 1}] does not cover offsets "
                f"{j0}..{j0 + self.n_max}"
            )
        idx = {0, self.n_max} | {c for c in self.checkpoints if c <= self.n_max}
        idx |= {int(r) for r in record}
        if max(idx) > self.n_max or min(idx) < 0:
            raise ValueError("recorded indices must lie in [0, n_max]")
        self.record = tuple(sorted(idx))
        self._pos = {r: i for i, r in enumerate(self.record)}
        sizes = [min(CHUNK, self.N - s) for s in range(0, self.N, CHUNK)]

        def run(c):
            return _backward_chunk(path, stack, self.observable, j0, self.n_max,
                                   self.record, sizes[c], self.seed, c)

        if workers > 1 and len(sizes) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, range(len(sizes))))
        else:
            parts = [run(c) for c in range(len(sizes))]
        self.tails = np.concatenate([p[0] for p in parts], axis=1)
        self.x0 = np.concatenate([p[1] for p in parts])

    def tail(self, j):
        try:
            return self.tails[self._pos[int(j)]]
        except KeyError:
            raise ValueError(f"index {j} was not recorded") from None

    def partial_sum(self, a, b):
        """``sum_{a <= u < b} psi_u(x_u)`` for every trajectory."""
        if a > b:
            raise ValueError("a must be <= b")
        return self.tail(a) - self.tail(b)

    def S(self, n):
        return self.partial_sum(0, n)


def variance_mc(path, n, N, seed, stack, observable=None, ensemble=None, workers=1):
    """``(1/n) mean(S_n^2)`` over ``N`` trajectories and its standard error."""
    n = check_positive_int(n, "n")
    if ensemble is None:
        ensemble = TrajectoryEnsemble(path, stack, observable, N=N, n_max=n, seed=seed,
                                      checkpoints=(n,), workers=workers)
    s2 = ensemble.S(n) ** 2
    return float(s2.mean() / n), float(s2.std(ddof=1) / np.sqrt(s2.size) / n)


def pair_correlation(path, j, k, stack, observable=None):
    """``E_mu[psi_j(f^j x) psi_k(f^k x)]`` via ``int v hat L^{k-j} u d mu_k``."""
    if j > k:
        raise ValueError(f"need j <= k, got j={j}, k={k}")
    observable = observable if observable is not None else TrigObservable()
    j0 = _offset(path, stack)
    u = _grid_values(observable, stack, j0 + j)
    v = _grid_values(observable, stack, j0 + k)
    lu = stack.transfer_normalized(u, j0 + j, k - j)
    return float(stack.integrate(v * lu, j0 + k))


class CorrelationTable:
    """Lag correlations ``C_l(j)`` for all offsets of a window.

    ``C_l(j) = E_mu[psi_j(x_j) psi_{j+l}(x_{j+l})]`` is computed for every
    ``j`` at once by pushing the stack of ``psi_j h_j`` through one operator per
    lag, grouped by symbol. Lags stop at ``k_cut``, the first lag whose
    largest summand falls below ``cut_tol``; ``truncated`` is set if
    ``max_lag`` is hit first.
    """

    def __init__(self, stack, observable=None, lo=None, hi=None, cut_tol=1e-12, max_lag=256):
        observable = observable if observable is not None else TrigObservable()
        self.lo = stack.lo if lo is None else lo
        self.hi = stack.hi if hi is None else hi
        js = np.arange(self.lo, self.hi + 1)
        psi = np.stack([_grid_values(observable, stack, j) for j in js])
        wts = np.stack([stack.nu(j) for j in js])
        V = psi * np.stack([stack.h(j) for j in js])
        lags = [np.einsum("ij,ij->i", wts * psi, V)]
        self.truncated = False
        for lag in range(1, max_lag + 1):
            n_rows = js.size - lag
            if n_rows <= 0:
                break
            V = V[:n_rows]
            step = js[:n_rows] + lag - 1
            syms = stack.symbols[step - stack.lo]
            lam = np.array([stack.lam(int(j)) for j in step]) if stack.normalized else 1.0
            new = np.empty_like(V)
            for s in np.unique(syms):
                sel = syms == s
                new[sel] = (stack.family.matrix(int(s)) @ V[sel].T).T
            V = new / (lam[:, None] if stack.normalized else 1.0)
            c = np.einsum("ij,ij->i", wts[lag:lag + n_rows] * psi[lag:lag + n_rows], V)
            lags.append(c)
            if np.max(np.abs(c)) < cut_tol:
                break
        else:
            self.truncated = True
        self.k_cut = len(lags) - 1
        self.lags = lags
        self._prefix = [np.concatenate([[0.0], np.cumsum(c)]) for c in lags]

    def corr(self, j, lag):
        if lag > self.k_cut:
            return 0.0
        return float(self.lags[lag][j - self.lo])

    def second_moment(self, a, n):
        """``E_mu(S_n^2)`` for a sum starting at offset ``a``; ``n`` may be an array."""
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if a < self.lo or np.any(a + n - 1 > self.hi):
            raise ValueError("requested sums leave the correlation window")
        out = np.zeros(n.shape)
        i0 = a - self.lo
        for lag, pre in enumerate(self._prefix):
            m = n - lag
            ok = m > 0
            contrib = np.where(ok, pre[np.clip(i0 + m, 0, pre.size - 1)] - pre[i0], 0.0)
            out += contrib if lag == 0 else 2.0 * contrib
        return out


def variance_operator(path, n, stack, observable=None, table=None):
    """``(1/n) E(S_n^2)`` from the correlation table (exact up to truncation)."""
    n = check_positive_int(n, "n")
    if table is None:
        j0 = _offset(path, stack)
        table = CorrelationTable(stack, observable, lo=j0, hi=j0 + n - 1)
    return float(table.second_moment(_offset(path, stack), n)[0] / n)


def sigma_n(path, n, stack, observable=None, table=None):
    return float(np.sqrt(max(n * variance_operator(path, n, stack, observable, table), 0.0)))


POSITIVE = "positive-variance"
COBOUNDARY = "coboundary-suspected"
INCONCLUSIVE = "inconclusive"


@dataclass
class CoboundaryVerdict:
    verdict: str
    slope: float
    tail_slope: float
    last_value: float
    threshold: float


def coboundary_test(ns, values, stderr=None, slope_cut=-0.8, se_factor=10.0, zero_tol=1e-12):
    """Classify ``(1/n) E(S_n^2)`` along a dyadic grid.

    Coboundary: log-log slope at most ``slope_cut`` (decay like ``C/n``) or all
    values numerically zero. Positive variance: the last value exceeds
    ``se_factor`` standard errors and the upper half of the grid is flat
    (slope above -0.3). Anything else is reported as inconclusive.
    """
    ns = np.asarray(ns, dtype=float)
    v = np.asarray(values, dtype=float)
    se = np.zeros_like(v) if stderr is None else np.asarray(stderr, dtype=float)
    thr = se_factor * se[-1] + zero_tol
    if np.all(np.abs(v) <= zero_tol):
        return CoboundaryVerdict(COBOUNDARY, -np.inf, -np.inf, float(v[-1]), thr)
    pos = v > 0
    slope = np.polyfit(np.log(ns[pos]), np.log(v[pos]), 1)[0] if pos.sum() >= 2 else np.nan
    half = ns >= np.sqrt(ns[0] * ns[-1])
    sel = half & pos
    tail = np.polyfit(np.log(ns[sel]), np.log(v[sel]), 1)[0] if sel.sum() >= 2 else np.nan
    if np.isfinite(slope) and slope <= slope_cut:
        verdict = COBOUNDARY
    elif v[-1] > thr and np.isfinite(tail) and tail > -0.3:
        verdict = POSITIVE
    else:
        verdict = INCONCLUSIVE
    return CoboundaryVerdict(verdict, float(slope), float(tail), float(v[-1]), float(thr))


@dataclass
class VarianceReport:
    sigma2_mc: float
    sigma2_op: float
    stderr: float
    checkpoints: list = field(default_factory=list)
    verdict: str = INCONCLUSIVE
    slope: float = float("nan")
    k_cut: int = 0
    truncated: bool = False

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def variance_report(path, stack, observable=None, N=10_000, seed=0,
                    checkpoints=DEFAULT_CHECKPOINTS, workers=1, use_mc=True):
    """Both estimators on a checkpoint grid plus the coboundary verdict.

    ``observable`` is centred against ``stack`` first.
    """
    base = observable if observable is not None else TrigObservable()
    obs = center_observable(base, stack)
    j0 = _offset(path, stack)
    n_top = max(checkpoints)
    table = CorrelationTable(stack, obs, lo=j0, hi=j0 + n_top - 1)
    ns = np.array(sorted(checkpoints))
    var_op = table.second_moment(j0, ns) / ns
    if use_mc:
        ens = TrajectoryEnsemble(path, stack, obs, N=N, n_max=n_top, seed=seed,
                                 checkpoints=ns, workers=workers)
        s2 = np.stack([ens.S(int(n)) ** 2 for n in ns])
        var_mc = s2.mean(axis=1) / ns
        se_mc = s2.std(axis=1, ddof=1) / np.sqrt(N) / ns
    else:
        var_mc = np.full(ns.size, np.nan)
        se_mc = np.zeros(ns.size)
    verdict = coboundary_test(ns, var_op, se_mc if use_mc else None)
    rows = [
        {"n": int(n), "var": float(vo), "var_mc": float(vm), "stderr_mc": float(se),
         "sigma_n": float(np.sqrt(max(n * vo, 0.0)))}
        for n, vo, vm, se in zip(ns, var_op, var_mc, se_mc)
    ]
    return VarianceReport(
        sigma2_mc=float(var_mc[-1]), sigma2_op=float(var_op[-1]), stderr=float(se_mc[-1]),
        checkpoints=rows, verdict=verdict.verdict, slope=verdict.slope,
        k_cut=table.k_cut, truncated=table.truncated,
    )


class VarianceEstimator(BaseEstimator):
    """Estimate the asymptotic variance of Birkhoff sums along one driving path.

    Parameters
    ----------
    observable : Observable or None
        Centred internally; default is the trig observable.
    N : int
        Monte Carlo trajectories.
    checkpoints : tuple of int
    M, n_relax : int
        Grid size and relaxation length of the measure stack.
    seed : int
    use_mc : bool
        Skip the Monte Carlo estimator when False.

    Attributes
    ----------
    report_ : VarianceReport
    sigma2_ : float
        Operator-route estimate at the largest checkpoint.
    stack_ : MeasureStack
    """

    def __init__(self, observable=None, N=10_000, checkpoints=DEFAULT_CHECKPOINTS, M=1024,
                 n_relax=40, seed=0, use_mc=True, workers=1):
        self.observable = observable
        self.N = N
        self.checkpoints = checkpoints
        self.M = M
        self.n_relax = n_relax
        self.seed = seed
        self.use_mc = use_mc
        self.workers = workers

    def fit(self, path, y=None):
        self.stack_ = MeasureStack(path, 0, max(self.checkpoints), M=self.M,
                                   n_relax=self.n_relax)
        self.report_ = variance_report(path, self.stack_, self.observable, N=self.N,
                                       seed=self.seed, checkpoints=self.checkpoints,
                                       workers=self.workers, use_mc=self.use_mc)
        self.sigma2_ = self.report_.sigma2_op
        self.sigma2_mc_ = self.report_.sigma2_mc
        self.verdict_ = self.report_.verdict
        return self

    def transform(self, X):
        """Map lengths ``n`` to ``sigma_n = sqrt(n * sigma2_)``."""
        check_is_fitted(self, "report_")
        n = np.asarray(X, dtype=float)
        return np.sqrt(n * max(self.sigma2_, 0.0))
