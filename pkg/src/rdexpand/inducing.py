"""Inducing on a good set ``E`` of driving states: return times, induced
observables and the checks that the induced process behaves.

Two membership rules are provided. :class:`FullCriterion` evaluates the
computable surrogates (operator-norm constant, fitted decay constant, bounds
on ``h`` and ``1/h``, ``1/Q``) plus a variance floor over a finite horizon.
:class:`WindowCriterion` looks only at a finite window of symbols, which makes
return times i.i.d. geometric and is meant for tests.

Induced indices: with ``m_0 = 0`` and ``m_1 < m_2 < ...`` the return times,
induced step ``l`` covers underlying times ``[m_l, m_{l+1})``.
"""

from dataclasses import asdict, dataclass, field, replace
import json
import warnings

import numpy as np

from ._validation import PreconditionError, StateError, check_positive_int
from .birkhoff import CorrelationTable, TrajectoryEnsemble, birkhoff_sum, center_observable
from .fiber import canon
from .holder import HolderParams, holder_norm, q_window, sup_norm
from .observables import TrigObservable
from .operators import decay_rate


@dataclass(frozen=True)
class ECriteria:
    """Thresholds of the full membership rule.

    ``sigma2`` is the asymptotic variance the floor is measured against; it
    must be estimated before the rule can be evaluated.
    """

    C0: float = 100.0
    L: int = 8
    N_check: int = 1024
    params: HolderParams = HolderParams()
    n_decay: int = 30
    sigma2: float | None = None

    def __post_init__(self):
        if self.C0 <= 0:
            raise ValueError("C0 must be positive")
        check_positive_int(self.L, "L")
        check_positive_int(self.N_check, "N_check")
        if self.N_check < self.L:
            raise ValueError("N_check must be >= L")

    def with_sigma2(self, sigma2):
        return replace(self, sigma2=float(sigma2))

    def bind(self, stack, observable=None, table=None):
        return FullCriterion(self, stack, observable, table)


@dataclass
class SurrogateRow:
    C: float
    K_hat: float
    h_sup: float
    inv_h_norm: float
    inv_q: float
    floor_ratio: float

    def worst(self):
        return max(self.C, self.K_hat, self.h_sup, self.inv_h_norm, self.inv_q)


class FullCriterion:
    """Membership by surrogates computed from a measure stack.

    The decay constant ``K`` is not computable; ``K_hat`` from a log-linear
    fit of normalised-operator decay on the centred observable stands in for
    it. The variance floor ``(1/n) E(S_n^2) >= sigma2 / 2`` is checked only for
    ``L <= n <= N_check``.
    """

    def __init__(self, crit, stack, observable=None, table=None):
        self.crit = crit
        self.stack = stack
        base = observable if observable is not None else TrigObservable()
        self.observable = center_observable(base, stack)
        self.table = table
        self._rows = {}
        self._q = None

    def _q_at(self, k):
        if self._q is None:
            s = self.stack
            self._q = q_window(s.path, s.lo, s.hi + 1, self.crit.params)
        return self._q[k - self.stack.lo]

    def _table(self):
        if self.table is None:
            s = self.stack
            self.table = CorrelationTable(s, self.observable)
        return self.table

    def surrogates(self, k):
        """Surrogate values at stack offset ``k``."""
        row = self._rows.get(k)
        if row is not None:
            return row
        crit, s = self.crit, self.stack
        if crit.sigma2 is None:
            raise StateError("the asymptotic variance has not been estimated yet")
        if not s.covers(k, k + max(crit.N_check, crit.n_decay)):
            raise PreconditionError(f"stack does not cover offset {k} plus the check horizon")
        q = self._q_at(k)
        h = s.h(k)
        x = np.arange(s.M) / s.M
        g = self.observable.at(s.path, k, x)
        fit = decay_rate(s.path.shifted(k), g, crit.n_decay, s, crit.params)
        ns = np.arange(crit.L, crit.N_check + 1)
        var = self._table().second_moment(k, ns) / ns
        floor = 0.5 * crit.sigma2
        ratio = float(var.min() / floor) if floor > 0 else np.inf
        row = SurrogateRow(
            C=4.0 * (1.0 + q), K_hat=fit.K_hat, h_sup=sup_norm(h),
            inv_h_norm=holder_norm(1.0 / h, crit.params), inv_q=1.0 / q, floor_ratio=ratio,
        )
        self._rows[k] = row
        return row

    def members(self, path, lo, hi):
        j0 = path.origin_shift - self.stack.path.origin_shift
        out = np.empty(hi - lo + 1, dtype=bool)
        for i, j in enumerate(range(lo, hi + 1)):
            row = self.surrogates(j0 + j)
            out[i] = row.worst() <= self.crit.C0 and row.floor_ratio >= 1.0
        return out


class WindowCriterion:
    """Test-mode rule: ``sigma^j omega`` is in ``E`` iff the symbols at
    ``j + offset, ..., j + offset + len(pattern) - 1`` equal ``pattern``."""

    def __init__(self, pattern=(0,), offset=0):
        self.pattern = np.asarray(pattern, dtype=np.int64)
        if self.pattern.ndim != 1 or self.pattern.size == 0:
            raise ValueError("pattern must be a non-empty 1-d sequence")
        self.offset = int(offset)

    def members(self, path, lo, hi):
        w = self.pattern.size
        syms = path.symbols(lo + self.offset, hi + self.offset + w)
        hit = np.ones(hi - lo + 1, dtype=bool)
        for i, s in enumerate(self.pattern):
            hit &= syms[i:i + hi - lo + 1] == s
        return hit

    def probability(self, path):
        return float(np.prod(path.probabilities[self.pattern]))


def _members(path, crit, lo, hi):
    if isinstance(crit, ECriteria):
        raise StateError("bind the criteria to a measure stack first (ECriteria.bind)")
    return crit.members(path, lo, hi)


def membership_E(path, crit):
    """Whether the path's current state (index 0) lies in ``E``."""
    return bool(_members(path, crit, 0, 0)[0])


def estimate_p_E(path, crit, n_draws=1000, start=1_000_000, stride=None):
    """Fraction of ``n_draws`` sampled states in ``E``.

    States are taken at ``start, start + stride, ...``, far from the scanned
    range, so the estimate is independent of it. With a window rule and
    ``stride`` at least the window length the draws are independent.
    """
    if stride is None:
        stride = getattr(crit, "pattern", np.zeros(1)).size + abs(getattr(crit, "offset", 0))
    hits = [membership_E(path.shifted(start + i * stride), crit) for i in range(n_draws)]
    return float(np.mean(hits))


@dataclass
class InducedSystem:
    m: np.ndarray
    n_max: int
    base_in_E: bool
    truncated: bool = False
    notes: list = field(default_factory=list)

    @property
    def p_hat(self):
        return self.m.size / self.n_max

    @property
    def starts(self):
        return np.concatenate([[0], self.m])

    @property
    def n_blocks(self):
        return int(self.m.size)

    def k_n(self, n):
        """``#{k >= 1 : m_k <= n}``."""
        return int(np.searchsorted(self.m, n, side="right"))

    def block(self, k):
        """Underlying interval ``[m_k, m_{k+1})`` of induced step ``k``."""
        if not 0 <= k < self.m.size:
            raise ValueError(f"block {k} out of range (0..{self.m.size - 1})")
        st = self.starts
        return int(st[k]), int(st[k + 1])

    def underlying(self, ell):
        """Underlying time ``m_ell`` at which induced step ``ell`` starts."""
        st = self.starts
        ell = np.asarray(ell)
        if np.any(ell < 0) or np.any(ell >= st.size):
            raise ValueError("induced index beyond the scanned returns")
        return st[ell]

    @classmethod
    def identity(cls, n_max):
        return cls(m=np.arange(1, n_max + 1), n_max=n_max, base_in_E=True)


def return_times(path, crit, n_max):
    """Scan ``1..n_max`` for returns to ``E``."""
    n_max = check_positive_int(n_max, "n_max")
    hit = _members(path, crit, 0, n_max)
    m = np.flatnonzero(hit[1:]) + 1
    notes = []
    if not hit[0]:
        notes.append("base state is not in E")
    truncated = m.size == 0
    if truncated:
        notes.append(f"no return to E before n_max={n_max}")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    # every index strictly between returns is outside E by construction
    return InducedSystem(m=m, n_max=n_max, base_in_E=bool(hit[0]), truncated=truncated,
                         notes=notes)


@dataclass
class InducedObservable:
    """``Psi`` over one induced step, evaluated by orbit sums.

    ``A`` is the sup of ``|Psi|`` over the grid ``k / M``: a lower estimate of
    the true sup norm.
    """

    path: object
    observable: object
    start: int
    stop: int
    A: float

    def __call__(self, x):
        return birkhoff_sum(self.path.shifted(self.start), x, self.stop - self.start,
                            self.observable)


def _grid_sup(path, observable, start, stop, M):
    return float(np.max(np.abs(birkhoff_sum(path.shifted(start), np.arange(M) / M,
                                            stop - start, observable))))


def induced_observable(path, sys, block, observable=None, M=1024):
    observable = observable if observable is not None else TrigObservable()
    a, b = sys.block(block)
    return InducedObservable(path, observable, a, b, _grid_sup(path, observable, a, b, M))


def block_sups(path, sys, observable=None, M=1024, n_blocks=None):
    """``A`` for the first ``n_blocks`` induced steps."""
    observable = observable if observable is not None else TrigObservable()
    n_blocks = sys.n_blocks if n_blocks is None else min(n_blocks, sys.n_blocks)
    return np.array([_grid_sup(path, observable, *sys.block(k), M) for k in range(n_blocks)])


@dataclass
class KacReport:
    n: int
    n_returns: int
    p_ref: float
    mean_gap: float
    gap_error: float
    count_ratio: float
    count_error: float
    consistent: bool
    enough_returns: bool

    @property
    def ok(self):
        return self.enough_returns and self.consistent and self.gap_error <= 0.1 / self.p_ref


def kac_check(sys, p_ref=None):
    """Compare the mean return gap with ``1 / P(E)`` and ``k_n / n`` with ``P(E)``."""
    n = sys.n_max
    k = sys.k_n(n)
    p = sys.p_hat if p_ref is None else float(p_ref)
    if p <= 0:
        raise PreconditionError("P(E) must be positive")
    mean_gap = float(sys.m[k - 1] / k) if k else np.inf
    st = sys.starts
    consistent = st[k] <= n and (k + 1 >= st.size or n < st[k + 1])
    return KacReport(
        n=n, n_returns=k, p_ref=p, mean_gap=mean_gap, gap_error=abs(mean_gap - 1.0 / p),
        count_ratio=k / n, count_error=abs(k / n - p), consistent=bool(consistent),
        enough_returns=k >= 100,
    )


@dataclass
class MomentReport:
    p: float
    moment: float
    moment_half: float
    stabilization: float
    growth_exponent: float
    tail_index: float
    ok: bool


def moment_check(A, p=6.0):
    """Empirical ``E A^p`` and growth of ``max_{k <= n} A_k`` against ``n^(1/p)``.

    ``stabilization`` is the moment on the first half of the draws divided by
    the moment on all of them. The tail index is a Hill estimate over the top
    tenth (``inf`` for bounded-looking samples).
    """
    A = np.abs(np.asarray(A, dtype=float))
    if A.size < 4:
        raise ValueError("need at least four draws")
    mom = float(np.mean(A**p))
    half = float(np.mean(A[: A.size // 2] ** p))
    stab = half / mom if mom > 0 else 1.0
    run = np.maximum.accumulate(A)
    ns = 2 ** np.arange(1, int(np.log2(A.size)) + 1)
    vals = run[ns - 1]
    if np.all(vals > 0) and ns.size >= 2:
        expo = float(np.polyfit(np.log(ns), np.log(vals), 1)[0])
    else:
        expo = 0.0
    top = np.sort(A)[::-1][: max(A.size // 10, 2)]
    if top[-1] > 0 and np.any(top > top[-1]):
        tail = float(1.0 / np.mean(np.log(top[:-1] / top[-1])))
    else:
        tail = np.inf
    return MomentReport(p=p, moment=mom, moment_half=half, stabilization=stab,
                        growth_exponent=expo, tail_index=tail, ok=expo <= 1.0 / p + 0.1)


@dataclass
class GoReport:
    n_grid: list
    offsets: list
    variances: list
    u_hat: list
    u_stderr: list
    threshold: float
    go1_ok: bool
    offsets_consistent: bool
    go2_ok: bool | None = None

    @property
    def ok(self):
        return self.go1_ok and self.go2_ok is not False


def go_conditions_check(path, stack, sys, sigma2, observable=None, n_grid=(8, 16, 32, 64, 128),
                        offsets=(0, 10, 100), N=2000, seed=0, moments=None, workers=1):
    """Variance growth of induced block sums and the moment growth condition.

    For each offset ``k`` the variance of ``sum_{j=k+1}^{k+m} A_j`` is fitted
    by ``u m`` through the origin. Linear growth passes when every ``u`` is
    at least ``sigma2 / 4`` (the nominal ``sigma2 / 2`` with a factor-2 slack
    for Monte Carlo noise).
    """
    obs = observable if observable is not None else center_observable(TrigObservable(), stack)
    need = max(offsets) + max(n_grid) + 1
    if sys.n_blocks < need:
        raise PreconditionError(f"need at least {need} returns, have {sys.n_blocks}")
    st = sys.starts
    rec = {int(st[k + 1]) for k in offsets} | {int(st[k + m + 1]) for k in offsets for m in n_grid}
    ens = TrajectoryEnsemble(path, stack, obs, N=N, n_max=max(rec), seed=seed, record=rec,
                             checkpoints=(), workers=workers)
    ms = np.asarray(n_grid, dtype=float)
    variances, us, ses = [], [], []
    for k in offsets:
        v = np.array([ens.partial_sum(st[k + 1], st[k + m + 1]).var(ddof=1) for m in n_grid])
        se = v * np.sqrt(2.0 / (N - 1))
        u = float(ms @ v / (ms @ ms))
        variances.append(v.tolist())
        us.append(u)
        ses.append(float(np.sqrt(np.sum(ms**2 * se**2)) / (ms @ ms)))
    thr = 0.25 * sigma2
    u0, s0 = us[0], ses[0]
    consistent = all(abs(u - u0) <= 3 * np.hypot(s, s0) for u, s in zip(us, ses))
    return GoReport(
        n_grid=list(n_grid), offsets=list(offsets), variances=variances, u_hat=us, u_stderr=ses,
        threshold=thr, go1_ok=bool(sigma2 > 0 and min(us) >= thr),
        offsets_consistent=bool(consistent), go2_ok=None if moments is None else moments.ok,
    )


@dataclass
class TailReport:
    n_grid: list
    discrepancy: list
    exponent: float
    bound: float
    ok: bool


def tail_bound_check(path, sys, n_grid=None, observable=None, p=6.0, M=256):
    """Boundary discrepancy between underlying and induced sums along ``n_grid``.

    At each ``n`` the surrogate is ``sup|Psi_{k_n}| + sup|sum_{n <= u < m_{k_n+1}} psi_u|``,
    and zero when ``n`` is itself a return time. The growth exponent of its
    running maximum is compared with ``1/p + 0.1``.
    """
    observable = observable if observable is not None else TrigObservable()
    st = sys.starts
    if n_grid is None:
        top = int(st[-1]) - 1
        n_grid = [n for n in 2 ** np.arange(6, 31) if n <= top] or [top]
    disc = []
    for n in n_grid:
        k = sys.k_n(n)
        if k + 1 >= st.size:
            raise PreconditionError(f"no return after n={n}; scan further")
        if st[k] == n:
            disc.append(0.0)
            continue
        a = _grid_sup(path, observable, int(st[k]), int(st[k + 1]), M)
        b = _grid_sup(path, observable, int(n), int(st[k + 1]), M)
        disc.append(a + b)
    disc = np.array(disc)
    run = np.maximum.accumulate(disc)
    pos = run > 0
    ns = np.asarray(n_grid, dtype=float)
    if pos.sum() >= 2:
        expo = float(np.polyfit(np.log(ns[pos]), np.log(run[pos]), 1)[0])
    else:
        expo = 0.0
    bound = 1.0 / p + 0.1
    return TailReport(n_grid=[int(n) for n in n_grid], discrepancy=disc.tolist(),
                      exponent=expo, bound=bound, ok=expo <= bound)


def resummation(path, x, n, sys, observable=None):
    """Both sides of the boundary identity for one ``(x, n)``.

    Left: ``S_n(x) - sum_{l < k_n} Psi_l(x_{m_l})``. Right:
    ``Psi_{k_n}(x_{m_{k_n}}) - sum_{n <= u < m_{k_n+1}} psi_u(x_u)``.
    """
    observable = observable if observable is not None else TrigObservable()
    st = sys.starts
    k = sys.k_n(n)
    if k + 1 >= st.size:
        raise PreconditionError(f"no return after n={n}; scan further")
    end = int(st[k + 1])
    x = float(canon(x))
    orbit = np.empty(end + 1)
    orbit[0] = x
    syms = path.symbols(0, end)
    for j, s in enumerate(syms):
        orbit[j + 1] = canon(path.d[s] * orbit[j] + path.b[s])
    vals = np.array([observable.at(path, j, orbit[j]) for j in range(end)])
    induced = sum(
        birkhoff_sum(path.shifted(int(st[l])), orbit[st[l]], int(st[l + 1] - st[l]), observable)
        for l in range(k)
    )
    lhs = float(vals[:n].sum() - induced)
    psi_k = birkhoff_sum(path.shifted(int(st[k])), orbit[st[k]], int(st[k + 1] - st[k]), observable)
    rhs = float(psi_k - vals[n:end].sum())
    return lhs, rhs


@dataclass
class InducedReport:
    P_hat: float
    m: list
    k_n: list
    A_moments: dict
    go1: dict
    go2: dict
    flags: dict

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def induced_report(sys, moments=None, go=None, n_table=None, flags=None):
    """JSON-ready summary of an induced system and its checks."""
    if n_table is None:
        n_table = [int(n) for n in 2 ** np.arange(0, 31) if n <= sys.n_max]
    return InducedReport(
        P_hat=sys.p_hat, m=[int(v) for v in sys.m],
        k_n=[{"n": int(n), "k_n": sys.k_n(n)} for n in n_table],
        A_moments={} if moments is None else asdict(moments),
        go1={} if go is None else {"u_hat": go.u_hat, "threshold": go.threshold,
                                   "ok": go.go1_ok},
        go2={} if moments is None else {"ok": moments.ok,
                                        "growth_exponent": moments.growth_exponent},
        flags=flags or {},
    )
