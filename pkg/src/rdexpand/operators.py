"""Discretised twisted transfer operators and their cocycles.

On the grid ``x_r = r / M`` the operator

    L^{it} g(x) = sum_{y : f(y) = x} exp(phi(y) + i t psi(y)) g(y)

becomes a sparse matrix: each exact inverse branch ``y`` contributes its
weight, evaluated in closed form, split over the two grid cells that the
piecewise-linear interpolant of ``g`` uses at ``y``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ._validation import PreconditionError, StateError, check_grid_compatible, check_twists
from .holder import (
    HolderFunction, HolderParams, holder_norm, holder_seminorm, interp_weights, q_series,
    sup_norm,
)
from .observables import TrigObservable, potential, required_holder_bound


def operator_matrix(path, s, M, t=0.0, observable=None):
    """Sparse ``M x M`` matrix of ``L^{it}`` for symbol ``s``."""
    d, b = int(path.d[s]), float(path.b[s])
    x = np.arange(M) / M
    y = np.mod((x[:, None] - b + np.arange(d)[None, :]) / d, 1.0)
    logw = potential(path, s, y)
    if t != 0.0:
        if observable is None:
            observable = TrigObservable()
        w = np.exp(logw + 1j * t * observable.values(path, s, y))
    else:
        w = np.exp(logw)
    k, theta = interp_weights(y, M)
    rows = np.repeat(np.arange(M), d)
    rows = np.concatenate([rows, rows])
    cols = np.concatenate([k.ravel(), ((k + 1) % M).ravel()])
    vals = np.concatenate([(w * (1.0 - theta)).ravel(), (w * theta).ravel()])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(M, M))


class OperatorFamily:
    """Cache of operator matrices keyed by ``(symbol, t)`` for one alphabet.

    The observable fixes the twist direction; ``M`` the grid.
    """

    def __init__(self, path, M=1024, observable=None):
        self.path = path
        self.M = int(M)
        self.observable = observable if observable is not None else TrigObservable()
        self._cache = {}

    def matrix(self, s, t=0.0):
        key = (int(s), float(t))
        mat = self._cache.get(key)
        if mat is None:
            mat = operator_matrix(self.path, int(s), self.M, float(t), self.observable)
            if len(self._cache) < 4096:
                self._cache[key] = mat
        return mat

    def at(self, j, t=0.0):
        return self.matrix(self.path.symbol_at(j), t)


@dataclass
class TransferOperator:
    omega_index: int
    symbol: int
    t: float
    matrix: sparse.csr_matrix = field(repr=False)

    @property
    def M(self):
        return self.matrix.shape[0]

    def __matmul__(self, v):
        return self.matrix @ v


def build_operator(path, step=0, t=0.0, M=1024, observable=None):
    check_twists(t)
    s = path.symbol_at(step)
    return TransferOperator(step, s, float(t), operator_matrix(path, s, M, t, observable))


def apply(op, g):
    v = g.values if isinstance(g, HolderFunction) else np.asarray(g)
    if v.shape[0] != op.M:
        raise ValueError(f"grid mismatch: operator has M={op.M}, function has M={v.shape[0]}")
    return HolderFunction(op.matrix @ v)


class OperatorCocycle:
    """``L^{it_{n-1}}_{sigma^{n-1} omega} o ... o L^{it_0}_omega``, applied lazily."""

    def __init__(self, path, twists, M=1024, observable=None, family=None):
        self.path = path
        self.twists = check_twists(twists)
        self.family = family if family is not None else OperatorFamily(path, M, observable)
        self.n = self.twists.size
        self.symbols = path.symbols(0, self.n)

    @property
    def M(self):
        return self.family.M

    def operators(self):
        return [
            TransferOperator(j, int(s), float(t), self.family.matrix(s, t))
            for j, (s, t) in enumerate(zip(self.symbols, self.twists))
        ]

    def apply_values(self, v):
        v = np.asarray(v)
        for s, t in zip(self.symbols, self.twists):
            v = self.family.matrix(s, t) @ v
        return v

    def apply(self, g):
        v = g.values if isinstance(g, HolderFunction) else np.asarray(g)
        if v.shape[0] != self.M:
            raise ValueError(f"grid mismatch: cocycle has M={self.M}, function has M={v.shape[0]}")
        return HolderFunction(self.apply_values(v))

    __call__ = apply


def compose_cocycle(path, twists, n=None, M=1024, observable=None, family=None):
    twists = np.atleast_1d(np.asarray(twists, dtype=float))
    if n is not None and twists.size != n:
        raise ValueError(f"expected {n} twists, got {twists.size}")
    return OperatorCocycle(path, twists, M=M, observable=observable, family=family)


def _check_holder_class(path, n, params, observable):
    for s in np.unique(path.symbols(0, n)):
        need = required_holder_bound(path, s, params, observable)
        if path.H[s] < need * (1 - 1e-12):
            raise PreconditionError(
                f"symbol {s}: H = {path.H[s]:.6g} is below the Hoelder bound {need:.6g} "
                "required by the potential and observable"
            )


@dataclass
class LYReport:
    lhs: float
    rhs: float
    satisfied: bool
    slack: float
    n: int
    T: float


def ly_check(path, n, T, g, params=HolderParams(), twists=None, rng=None, M=None,
             observable=None, family=None):
    """Evaluate both sides of the Lasota-Yorke inequality for one cocycle.

    ``twists`` default to i.i.d. uniform draws from ``[-T, T]``.
    """
    g = g if isinstance(g, HolderFunction) else HolderFunction(g)
    M = g.M if M is None else M
    observable = observable if observable is not None else TrigObservable()
    _check_holder_class(path, n, params, observable)
    if twists is None:
        rng = np.random.default_rng(rng)
        twists = rng.uniform(-T, T, size=n)
    twists = np.asarray(twists, dtype=float)
    if twists.size != n or np.any(np.abs(twists) > T + 1e-15):
        raise ValueError("twists must have length n and lie in [-T, T]")
    if family is None:
        family = OperatorFamily(path, M, observable)
    coc = OperatorCocycle(path, twists, family=family)
    lhs = holder_norm(coc.apply(g), params)
    untwisted = OperatorCocycle(path, np.zeros(n), family=family)
    l1 = sup_norm(untwisted.apply_values(np.ones(M)))
    gamma_n = float(np.prod(path.d[path.symbols(0, n)].astype(float)))
    q = q_series(path.shifted(n), params).value
    rhs = l1 * (
        holder_seminorm(g, params) * gamma_n ** (-params.alpha)
        + (1 + 2 * q) * (1 + T) * sup_norm(g)
    )
    return LYReport(lhs=lhs, rhs=rhs, satisfied=lhs <= rhs * (1 + 1e-8), slack=rhs - lhs,
                    n=n, T=float(T))


def probe_dictionary(M=1024, params=HolderParams(), n_random=8, seed=0, max_freq=4):
    """Unit-norm probe functions: a constant, low trig modes and smoothed noise."""
    x = np.arange(M) / M
    funcs = [np.ones(M)]
    for k in range(1, max_freq + 1):
        funcs.append(np.cos(2 * np.pi * k * x))
        funcs.append(np.sin(2 * np.pi * k * x))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        raw = rng.standard_normal(M)
        width = rng.integers(2, 64)
        kernel = np.ones(width) / width
        smooth = np.real(np.fft.ifft(np.fft.fft(raw) * np.fft.fft(kernel, M)))
        funcs.append(smooth)
    return [HolderFunction(f / holder_norm(f, params)) for f in funcs]


@dataclass
class NormBoundReport:
    estimate: float
    bound: float
    certified: bool
    q: float


def norm_bound_check(path, n, twists, params=HolderParams(), M=1024, dictionary=None,
                     observable=None, family=None):
    """Dictionary estimate of ``||L^{t,n}||_{alpha,xi}`` against ``4 (1 + Q) ||L^n 1||``.

    The dictionary maximum under-estimates the operator norm, so passing is
    a necessary-condition check only.
    """
    twists = check_twists(twists)
    if twists.size != n:
        raise ValueError(f"expected {n} twists, got {twists.size}")
    observable = observable if observable is not None else TrigObservable()
    _check_holder_class(path, n, params, observable)
    if family is None:
        family = OperatorFamily(path, M, observable)
    if dictionary is None:
        dictionary = probe_dictionary(family.M, params)
    coc = OperatorCocycle(path, twists, family=family)
    est = max(holder_norm(coc.apply(g), params) / holder_norm(g, params) for g in dictionary)
    l1 = sup_norm(OperatorCocycle(path, np.zeros(n), family=family).apply_values(np.ones(family.M)))
    q = q_series(path.shifted(n), params).value
    bound = 4 * (1 + q) * l1
    return NormBoundReport(estimate=est, bound=bound, certified=est <= bound * (1 + 1e-8), q=q)


def _stack_offset(path, stack):
    if stack is None:
        raise StateError("an equivariant measure stack is required; build one first")
    if not path.same_realisation(stack.path):
        raise StateError("the stack was built on a different driving path")
    return path.origin_shift - stack.path.origin_shift


def normalized_apply(path, g, n, stack):
    """``hat L^n g = L^n (g h_omega) / (lambda-products * h_{sigma^n omega})``."""
    j0 = _stack_offset(path, stack)
    v = g.values if isinstance(g, HolderFunction) else np.asarray(g)
    check_grid_compatible(v, stack.h(j0))
    return HolderFunction(stack.transfer_normalized(v, j0, n))


@dataclass
class DecayFit:
    lambda_hat: float
    K_hat: float
    r2: float
    norms: np.ndarray
    instant_decay: bool
    n_fit: int


def decay_rate(path, g, n_max, stack, params=HolderParams(), zero_tol=1e-9, mean_tol=1e-9):
    """Fit ``log ||hat L^n g||_inf ~ log K' - lambda n`` for a mu-centred ``g``.

    Norms at or below ``zero_tol * ||g||_inf`` count as exact zeros; if one is
    reached the fit stops there and ``instant_decay`` is set. With fewer than
    three usable points ``lambda_hat`` is ``inf``.
    """
    j0 = _stack_offset(path, stack)
    v = g.values if isinstance(g, HolderFunction) else np.asarray(g)
    mean = stack.integrate(v, j0)
    if abs(mean) > mean_tol * max(1.0, sup_norm(v)):
        raise PreconditionError(f"g is not mu-centred: mean {mean:.3e}")
    q = q_series(path, params).value
    scale = max(1.0, 1.0 / q) * holder_norm(v, params)
    norms = [sup_norm(v)]
    cur = v
    for k in range(n_max):
        cur = stack.transfer_normalized(cur, j0 + k, 1)
        norms.append(sup_norm(cur))
    norms = np.array(norms)
    floor = zero_tol * max(norms[0], np.finfo(float).tiny)
    zero_at = np.flatnonzero(norms <= floor)
    stop = int(zero_at[0]) if zero_at.size else norms.size
    instant = zero_at.size > 0
    ns = np.arange(stop)
    if stop >= 3:
        y = np.log(norms[:stop])
        slope, intercept = np.polyfit(ns, y, 1)
        resid = y - (slope * ns + intercept)
        ss_tot = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
        lam = -slope
        K = float(np.max(norms[:stop] * np.exp(lam * ns)) / scale)
    else:
        lam, r2 = np.inf, 1.0
        K = float(np.max(norms[:stop]) / scale) if stop else 0.0
    return DecayFit(lambda_hat=float(lam), K_hat=K, r2=float(r2), norms=norms,
                    instant_decay=instant, n_fit=stop)
