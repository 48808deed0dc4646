"""Equivariant triplets, fiber measures ``mu_omega`` and sampling from them."""

from dataclasses import dataclass, field
import csv
import io

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConvergenceError, PreconditionError, check_positive_int
from .holder import HolderFunction, interpolate, sup_norm
from .operators import OperatorFamily


@dataclass
class EquivariantTriplet:
    """``(lambda_omega, h_omega, nu_omega)`` on the grid.

    ``nu_weights`` are grid weights summing to one, so
    ``nu(g) = sum_k nu_weights[k] g(x_k)``.
    """

    lambda_: float
    h: HolderFunction
    nu_weights: np.ndarray = field(repr=False)
    normalization_residual: float
    n_relax: int

    @property
    def mu_density(self):
        M = self.h.M
        return HolderFunction(M * self.nu_weights * self.h.values)


def _pull_forward(family, path, start, stop, v=None):
    """Sup-normalised ``L_{stop-1} ... L_start v``; ``v`` defaults to 1."""
    v = np.ones(family.M) if v is None else v
    for s in path.symbols(start, stop):
        v = family.matrix(s) @ v
        v /= v.max()
    return v


def _pull_back(family, path, start, stop, w=None):
    """Probability-normalised ``L_start^T ... L_{stop-1}^T w``; ``w`` defaults to uniform."""
    w = np.full(family.M, 1.0 / family.M) if w is None else w
    for s in path.symbols(start, stop)[::-1]:
        w = family.matrix(s).T @ w
        w /= w.sum()
    return w


def estimate_triplet(path, n_relax=8, tol=1e-10, M=1024, family=None, n_cap=4096):
    """Triplet at index 0 of ``path`` by pull-forward / adjoint relaxation.

    ``n_relax`` doubles until two successive ``h`` and ``nu`` estimates differ
    by less than ``tol`` in sup norm; exceeding ``n_cap`` raises
    :class:`ConvergenceError`.
    """
    n = check_positive_int(n_relax, "n_relax")
    family = family if family is not None else OperatorFamily(path, M)
    h_prev = _pull_forward(family, path, -n, 0)
    w1_prev = _pull_back(family, path, 1, 1 + n)
    while True:
        n2 = 2 * n
        h_new = _pull_forward(family, path, -n2, 0)
        w1_new = _pull_back(family, path, 1, 1 + n2)
        dh = sup_norm(h_new - h_prev)
        dw = sup_norm(w1_new - w1_prev) * family.M
        n = n2
        if max(dh, dw) < tol:
            break
        if n >= n_cap:
            raise ConvergenceError(
                f"triplet did not converge by n_relax={n}", residual=max(dh, dw)
            )
        h_prev, w1_prev = h_new, w1_new
    L0 = family.matrix(path.symbol_at(0))
    w0 = L0.T @ w1_new
    lam = float(w0.sum())          # nu_{sigma omega}(L_omega 1)
    w0 = w0 / lam
    h = h_new / float(w0 @ h_new)
    return EquivariantTriplet(
        lambda_=lam, h=HolderFunction(h), nu_weights=w0,
        normalization_residual=abs(float(w0 @ h) - 1.0), n_relax=n,
    )


class MeasureStack:
    """Triplets for every offset of a working window ``[lo, hi]`` of one path.

    The stack also carries everything needed to apply the normalised operator
    ``hat L_j v = L_j (v h_j) / (lambda_j h_{j+1})`` inside the window.

    Parameters
    ----------
    path : OmegaPath
    lo, hi : int
        Window, relative to the path origin.
    M : int
        Grid size.
    n_relax : int
        Relaxation length used on both sides of the window.
    normalized : bool
        Whether operators are divided by ``lambda_j`` (``lambda == 1`` convention).
    """

    def __init__(self, path, lo, hi, M=1024, n_relax=40, normalized=True, family=None):
        if hi < lo:
            raise ValueError("empty window")
        self.path = path
        self.lo, self.hi = int(lo), int(hi)
        self.n_relax = check_positive_int(n_relax, "n_relax")
        self.family = family if family is not None else OperatorFamily(path, M)
        self.M = self.family.M
        self.normalized = normalized
        self._build()

    def _build(self):
        lo, hi, n = self.lo, self.hi, self.n_relax
        fam, path = self.family, self.path
        size = hi - lo + 2          # indices lo .. hi + 1
        hh = np.empty((size, self.M))
        v = _pull_forward(fam, path, lo - n, lo)
        syms = path.symbols(lo, hi + 1)
        hh[0] = v
        for i, s in enumerate(syms):
            v = fam.matrix(s) @ v
            v /= v.max()
            hh[i + 1] = v
        ww = np.empty((size, self.M))
        w = _pull_back(fam, path, hi + 1, hi + 1 + n)
        ww[-1] = w
        for i in range(size - 2, -1, -1):
            w = fam.matrix(syms[i]).T @ w
            w /= w.sum()
            ww[i] = w
        hh /= np.einsum("ij,ij->i", ww, hh)[:, None]
        lam = np.empty(size - 1)
        for i, s in enumerate(syms):
            lam[i] = ww[i + 1] @ (fam.matrix(s) @ hh[i])
        self._h, self._w, self._lam = hh, ww, lam
        self.symbols = np.concatenate([syms, path.symbols(hi + 1, hi + 2)])

    def _idx(self, j):
        i = j - self.lo
        if not 0 <= i < self._h.shape[0]:
            raise IndexError(f"offset {j} outside stack window [{self.lo}, {self.hi + 1}]")
        return i

    def covers(self, j0, j1):
        return self.lo <= j0 and j1 <= self.hi + 1

    def h(self, j):
        return self._h[self._idx(j)]

    def nu(self, j):
        return self._w[self._idx(j)]

    def lam(self, j):
        if not self.lo <= j <= self.hi:
            raise IndexError(f"lambda at offset {j} outside [{self.lo}, {self.hi}]")
        return self._lam[j - self.lo]

    def mu(self, j):
        """Density of ``mu_j`` against Lebesgue on the grid."""
        i = self._idx(j)
        return self.M * self._w[i] * self._h[i]

    def triplet(self, j):
        i = self._idx(j)
        return EquivariantTriplet(
            lambda_=float(self._lam[i]) if i < self._lam.size else np.nan,
            h=HolderFunction(self._h[i].copy()), nu_weights=self._w[i].copy(),
            normalization_residual=abs(float(self._w[i] @ self._h[i]) - 1.0),
            n_relax=self.n_relax,
        )

    def integrate(self, v, j):
        """``int v d mu_j`` by grid quadrature; ``v`` may carry extra trailing axes."""
        i = self._idx(j)
        return np.tensordot(self._w[i] * self._h[i], v, axes=(0, 0))

    def step(self, v, j, t=0.0):
        """``L^{it}_j v``, divided by ``lambda_j`` when the stack is normalised."""
        out = self.family.matrix(self.symbols[self._idx(j)], t) @ v
        if self.normalized:
            out = out / self._lam[j - self.lo]
        return out

    def transfer(self, v, j, n, twists=None):
        for k in range(n):
            t = 0.0 if twists is None else float(twists[k])
            v = self.step(v, j + k, t)
        return v

    def transfer_normalized(self, v, j, n):
        """``hat L^n_j v = L^n_j (v h_j) / h_{j+n}`` (with lambda normalisation)."""
        v = np.asarray(v)
        hj = self.h(j) if v.ndim == 1 else self.h(j)[:, None]
        out = v * hj
        for k in range(n):
            out = self.family.matrix(self.symbols[self._idx(j + k)]) @ out
            out = out / self._lam[j + k - self.lo]
        hn = self.h(j + n) if v.ndim == 1 else self.h(j + n)[:, None]
        return out / hn

    def residuals(self):
        """Per-offset eigen residuals ``||L h_j - lambda_j h_{j+1}||`` and adjoint residuals."""
        eig, adj = [], []
        for j in range(self.lo, self.hi + 1):
            i = j - self.lo
            L = self.family.matrix(self.symbols[i])
            eig.append(sup_norm(L @ self._h[i] - self._lam[i] * self._h[i + 1]))
            adj.append(sup_norm(L.T @ self._w[i + 1] - self._lam[i] * self._w[i]) * self.M)
        return np.array(eig), np.array(adj)

    def with_normalization(self, normalized):
        other = object.__new__(MeasureStack)
        other.__dict__.update(self.__dict__)
        other.normalized = normalized
        return other


def build_stack(path, lo, hi, M=1024, n_relax=40, normalized=True, family=None):
    return MeasureStack(path, lo, hi, M=M, n_relax=n_relax, normalized=normalized, family=family)


def normalize_lambda(stack):
    """Switch to the ``lambda_omega = 1`` convention by dividing each ``L_j`` by ``lambda_j``."""
    return stack.with_normalization(True)


def equivariance_check(path, g, stack):
    """``|int g o f_omega d mu_omega - int g d mu_{sigma omega}|`` at the path origin.

    ``g`` is a callable or a :class:`HolderFunction` (interpolated).
    """
    j = path.origin_shift - stack.path.origin_shift
    if not path.same_realisation(stack.path):
        raise PreconditionError("the stack was built on a different driving path")
    x = np.arange(stack.M) / stack.M
    s = stack.symbols[stack._idx(j)]
    fx = np.mod(path.d[s] * x + path.b[s], 1.0)
    ev = (lambda y: interpolate(g.values, y)) if isinstance(g, HolderFunction) else g
    lhs = stack.integrate(ev(fx), j)
    rhs = stack.integrate(ev(x), j + 1)
    return float(abs(lhs - rhs))


def trig_dictionary(max_freq=2):
    """``1, cos 2 pi k x, sin 2 pi k x`` for ``k <= max_freq`` as callables.

    The default stops at the modes present in the default observable; the
    grid quadrature error of the residual grows like ``k^2 / M^2``.
    """
    out = [np.ones_like]
    for k in range(1, max_freq + 1):
        out.append(lambda y, k=k: np.cos(2 * np.pi * k * y))
        out.append(lambda y, k=k: np.sin(2 * np.pi * k * y))
    return out


def equivariance_residuals(stack, offsets, dictionary=None):
    """Largest equivariance residual over ``dictionary`` at each stack offset."""
    dictionary = trig_dictionary() if dictionary is None else dictionary
    return np.array([max(equivariance_check(stack.path.shifted(j), g, stack) for g in dictionary)
                     for j in offsets])


def mu_density(path, stack):
    j = path.origin_shift - stack.path.origin_shift
    return HolderFunction(stack.mu(j))


def sample_density(density, u):
    """Inverse CDF of the periodic piecewise-linear density with grid ``values``.

    ``density`` must integrate to one under the trapezoid rule.
    """
    rho = np.asarray(density, dtype=float)
    M = rho.size
    nxt = np.roll(rho, -1)
    cell = (rho + nxt) / (2 * M)
    cdf = np.concatenate([[0.0], np.cumsum(cell)])
    total = cdf[-1]
    target = np.asarray(u, dtype=float) * total
    k = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, M - 1)
    rem = (target - cdf[k]) * M
    a = 0.5 * (nxt[k] - rho[k])
    b = rho[k]
    disc = np.maximum(b * b + 4 * a * rem, 0.0)
    denom = b + np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, 2 * rem / denom, 0.0)
    s = np.clip(s, 0.0, np.nextafter(1.0, 0.0))
    x = (k + s) / M
    return np.where(x >= 1.0, 0.0, x)


def sample_mu(path, N, seed, stack, stratified=False):
    """``N`` points distributed according to ``mu_omega`` at the path origin."""
    N = check_positive_int(N, "N")
    j = path.origin_shift - stack.path.origin_shift
    rng = np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 64) - 1)))
    u = rng.random(N)
    if stratified:
        u = rng.permutation((np.arange(N) + u) / N)
    return sample_density(stack.mu(j), u)


class EquivariantMeasure(BaseEstimator):
    """Estimator wrapper building a :class:`MeasureStack` over a window.

    Parameters
    ----------
    window : tuple of int
        ``(lo, hi)`` offsets relative to the fitted path's origin.
    M, n_relax, normalized
        Forwarded to :class:`MeasureStack`.

    Attributes
    ----------
    stack_ : MeasureStack
    lambda_ : ndarray
        ``lambda_j`` for ``j = lo..hi``.
    eigen_residual_ : float
        Worst ``||L h_j - lambda_j h_{j+1}||_inf`` over the window.
    """

    def __init__(self, window=(0, 64), M=1024, n_relax=40, normalized=True):
        self.window = window
        self.M = M
        self.n_relax = n_relax
        self.normalized = normalized

    def fit(self, path, y=None):
        lo, hi = self.window
        self.stack_ = MeasureStack(path, lo, hi, M=self.M, n_relax=self.n_relax,
                                   normalized=self.normalized)
        self.lambda_ = self.stack_._lam.copy()
        eig, adj = self.stack_.residuals()
        self.eigen_residual_ = float(eig.max())
        self.adjoint_residual_ = float(adj.max())
        return self

    def transform(self, X):
        """Map offsets to ``mu`` densities, one row per offset."""
        check_is_fitted(self, "stack_")
        return np.stack([self.stack_.mu(int(j)) for j in np.atleast_1d(X)])


def triplets_csv(stack, offsets):
    """CSV rows ``offset, k, x, lambda, h, nu`` for each requested offset."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["offset", "k", "x", "lambda", "h", "nu"])
    x = np.arange(stack.M) / stack.M
    for j in offsets:
        lam = stack.lam(j) if stack.lo <= j <= stack.hi else float("nan")
        for k, (xk, hk, wk) in enumerate(zip(x, stack.h(j), stack.nu(j))):
            w.writerow([j, k, repr(float(xk)), repr(float(lam)), repr(float(hk)), repr(float(wk))])
    return buf.getvalue()
