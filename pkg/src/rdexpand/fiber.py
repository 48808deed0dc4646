"""Affine full-branch expanding maps on the circle ``x -> d x + b (mod 1)``."""

from dataclasses import dataclass

import numpy as np

from ._validation import PreconditionError, check_positive_int


def canon(x):
    """Canonicalise to [0, 1)."""
    y = np.mod(x, 1.0)
    # np.mod can return 1.0 for tiny negative inputs
    return np.where(y >= 1.0, 0.0, y)


def circle_dist(x, y):
    """rho(x, y) = min(|x - y|, 1 - |x - y|) on the unit circle."""
    d = np.abs(np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0))
    return np.minimum(d, 1.0 - d)


def signed_delta(x, y):
    """Shortest signed displacement from ``x`` to ``y`` on the circle."""
    d = np.mod(np.asarray(y, dtype=float) - np.asarray(x, dtype=float) + 0.5, 1.0) - 0.5
    return d


def apply_map(path, x, step=0):
    s = path.symbol_at(step)
    return canon(path.d[s] * np.asarray(x, dtype=float) + path.b[s])


def iterate(path, x, n):
    """Orbit ``(x, f x, ..., f^n x)`` along the path; vectorised over ``x``.

    Returns an array with a leading axis of length ``n + 1``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    x = canon(np.asarray(x, dtype=float))
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    if n == 0:
        return out
    syms = path.symbols(0, n)
    for j, s in enumerate(syms):
        out[j + 1] = canon(path.d[s] * out[j] + path.b[s])
    return out


def inverse_branches(path, x, step=0):
    """The ``d`` preimages of ``x`` under the map at ``step``, in branch order."""
    s = path.symbol_at(step)
    d, b = path.d[s], path.b[s]
    x = np.asarray(x, dtype=float)
    i = np.arange(d).reshape((d,) + (1,) * x.ndim)
    return canon((x - b + i) / d)


def _lifted_preimages(d, b, x):
    i = np.arange(d)
    return (x[:, None] - b + i[None, :]) / d


def branch_orbits(path, x, n, lift_to=None):
    """All ``n``-step inverse branches of ``x`` with their forward orbits.

    Row ``q`` holds ``(y_q, f y_q, ..., f^n y_q = x)``; rows are ordered
    lexicographically by branch index with the last step's branch outermost. ``lift_to``
    replaces ``x`` by its lift nearest that point so branches of two nearby
    points pair up by row.
    """
    n = check_positive_int(n, "n")
    xx = float(x) if lift_to is None else float(lift_to) + float(signed_delta(lift_to, x))
    syms = path.symbols(0, n)
    cur = np.array([xx])
    levels = [cur]
    for j in range(n - 1, -1, -1):
        s = syms[j]
        pre = _lifted_preimages(path.d[s], path.b[s], cur)
        # parents repeat d times so column j stays aligned with its branch
        levels = [np.repeat(lv, path.d[s]) for lv in levels]
        cur = pre.ravel()
        levels.insert(0, cur)
    return canon(np.stack(levels, axis=1))


@dataclass
class PairingReport:
    n_pairs: int
    max_ratio: float
    min_slack: float
    violations: int

    @property
    def ok(self):
        return self.violations == 0


def pairing_check(path, x, x_prime, n, xi=0.25, atol=1e-12):
    """Verify the n-step pairing contraction for every branch pair and level.

    ``max_ratio`` is the largest observed distance divided by its bound;
    ``min_slack`` is the smallest ``bound - distance``.
    """
    rho = float(circle_dist(x, x_prime))
    if rho >= xi:
        raise PreconditionError(f"rho(x, x') = {rho} must be < xi = {xi}")
    orb = branch_orbits(path, x, n)
    orb_p = branch_orbits(path, x_prime, n, lift_to=x)
    d = path.d[path.symbols(0, n)].astype(float)
    # gamma_{sigma^j omega, n-j} for j = 0..n-1
    tail_gamma = np.cumprod(d[::-1])[::-1]
    dist = circle_dist(orb[:, :n], orb_p[:, :n])
    bound = rho / tail_gamma[None, :]
    slack = bound - dist
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(bound > 0, dist / np.where(bound > 0, bound, 1.0), 0.0)
    return PairingReport(
        n_pairs=orb.shape[0],
        max_ratio=float(ratio.max()),
        min_slack=float(slack.min()),
        violations=int(np.count_nonzero(slack < -atol)),
    )


def exactness_time(path, xi=0.25):
    """Smallest ``n`` with ``gamma_{omega,n} * 2 xi >= 1``."""
    if not 0 < xi <= 0.25:
        raise PreconditionError(f"xi must lie in (0, 1/4], got {xi}")
    length = 2.0 * xi
    n, j = 0, 0
    while length < 1.0:
        length *= path.d[path.symbol_at(j)]
        j += 1
        n += 1
    return n
