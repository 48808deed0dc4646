"""Big/small block decomposition of dyadic windows and the statistical checks
built on it: characteristic-function factorisation across gaps, normality of
normalised sums, and Gaussian surrogates with matched block variances.
"""

from dataclasses import asdict, dataclass, field
from fractions import Fraction
import csv
import io
import warnings

import numpy as np
from scipy import stats

from ._validation import FeasibilityError, OutOfScopeWarning, PreconditionError, check_positive_int
from .birkhoff import COBOUNDARY


def default_beta(p):
    """``p / (2p - 2)``: the block exponent that balances the error terms."""
    if p <= 2:
        raise ValueError(f"p must exceed 2, got {p}")
    return p / (2.0 * p - 2.0)


def rate_exponent(p):
    """``p / (4(p - 1)) + 1/p``; only defined here for ``p >= 6``."""
    if p < 6:
        warnings.warn(f"rate exponent is not computed for p={p} < 6", OutOfScopeWarning,
                      stacklevel=2)
        return float("nan")
    return p / (4.0 * (p - 1.0)) + 1.0 / p


@dataclass(frozen=True)
class RateParams:
    p: float = 6.0
    delta: float = 0.05
    beta: float | None = None

    def __post_init__(self):
        if self.p < 6:
            raise ValueError(f"p must be >= 6, got {self.p}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.beta is None:
            object.__setattr__(self, "beta", default_beta(self.p))
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")

    @property
    def a_p(self):
        return rate_exponent(self.p)


def lowest_set_bit(j):
    j = int(j)
    if j <= 0:
        raise ValueError("j must be positive")
    return (j & -j).bit_length() - 1


@dataclass
class BlockScheme:
    """Tiling of ``[2^n, 2^(n+1))`` by gaps ``J_j`` and big blocks ``I_j``.

    Tiles alternate ``J_0, I_0, J_1, I_1, ...``; each is ``(start, length)``.
    """

    n: int
    beta: float
    eps: float
    f: int
    F: int
    block_length: int
    blocks: list
    gaps: list

    def tiles(self):
        out = []
        for g, b in zip(self.gaps, self.blocks):
            out.append(("J", *g))
            out.append(("I", *b))
        return out

    @property
    def start(self):
        return 2**self.n

    @property
    def gap_total(self):
        return sum(length for _, length in self.gaps)

    def to_rows(self):
        return [{"kind": k, "index": i // 2, "start": s, "length": length}
                for i, (k, s, length) in enumerate(self.tiles())]


def block_decomposition(n, beta, eps):
    """Exact tiling of ``[2^n, 2^(n+1))`` with ``F = 2^floor(beta n)`` big blocks.

    Raises :class:`FeasibilityError` when the big-block length
    ``2^(n-f) - (f+2) 2^(floor(eps n) - 1)`` is not a positive integer.
    """
    n = check_positive_int(n, "n", minimum=0)
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not 0 < eps < 1 - beta:
        raise ValueError(f"eps must lie in (0, 1 - beta) = (0, {1 - beta}), got {eps}")
    f = int(np.floor(beta * n))
    e = int(np.floor(eps * n))
    length = Fraction(2) ** (n - f) - (f + 2) * Fraction(2) ** (e - 1)
    if length <= 0 or length.denominator != 1:
        raise FeasibilityError(
            f"n={n}: big-block length 2^(n-f) - (f+2) 2^(floor(eps n)-1) = {length} "
            f"with f={f} is not a positive integer"
        )
    length = int(length)
    F = 2**f
    pos = 2**n
    blocks, gaps = [], []
    for j in range(F):
        g = 2 ** (e + f) if j == 0 else 2 ** (e + lowest_set_bit(j))
        gaps.append((pos, g))
        pos += g
        blocks.append((pos, length))
        pos += length
    if pos != 2 ** (n + 1):
        raise FeasibilityError(f"tiling of window n={n} ends at {pos}, not {2 ** (n + 1)}")
    return BlockScheme(n=n, beta=beta, eps=eps, f=f, F=F, block_length=length,
                       blocks=blocks, gaps=gaps)


def dyadic_tiling(n_top, beta, eps):
    """Schemes for windows ``0..n_top``; infeasible windows map to ``None``
    and are treated as a single gap."""
    out = {}
    for n in range(n_top + 1):
        try:
            out[n] = block_decomposition(n, beta, eps)
        except FeasibilityError:
            out[n] = None
    return out


def window_tiles(n, scheme):
    """``(kind, start, length)`` tiles of window ``n``; one gap when infeasible."""
    if scheme is None:
        return [("J", 2**n, 2**n)]
    return scheme.tiles()


@dataclass
class BlockSums:
    X: np.ndarray
    gaps: np.ndarray
    total: np.ndarray

    @property
    def consistency_error(self):
        return float(np.max(np.abs(self.X.sum(axis=1) + self.gaps.sum(axis=1) - self.total)))


def _underlying(induced, ell):
    if induced is None:
        return np.asarray(ell)
    return induced.underlying(ell)


def required_indices(tiles, induced=None):
    """Underlying indices an ensemble must record to sum over ``tiles``."""
    ends = set()
    for _, s, length in tiles:
        ends.add(int(_underlying(induced, s)))
        ends.add(int(_underlying(induced, s + length)))
    return ends


def block_sums(ensemble, scheme, induced=None):
    """Per-trajectory ``X_j = sum_{l in I_j} A_l`` and the gap sums.

    ``induced=None`` uses ``A_l = psi_l(x_l)`` (every state returns).
    """
    tiles = scheme.tiles() if isinstance(scheme, BlockScheme) else list(scheme)
    need = max(int(_underlying(induced, s + length)) for _, s, length in tiles)
    if need > ensemble.n_max:
        raise ValueError(f"ensemble covers {ensemble.n_max} steps, scheme needs {need}")

    def tsum(s, length):
        return ensemble.partial_sum(int(_underlying(induced, s)),
                                    int(_underlying(induced, s + length)))

    X = np.stack([tsum(s, length) for k, s, length in tiles if k == "I"], axis=1)
    G = [tsum(s, length) for k, s, length in tiles if k == "J"]
    G = np.stack(G, axis=1) if G else np.zeros((ensemble.N, 0))
    lo = tiles[0][1]
    hi = tiles[-1][1] + tiles[-1][2]
    return BlockSums(X=X, gaps=G, total=tsum(lo, hi - lo))


# condition (H) probe

@dataclass
class HReport:
    k_values: list
    errors: list
    c_hat: float
    r2: float
    n_fit: int
    passed: bool
    method: str
    stderr: list = field(default_factory=list)
    widened: bool = False


DEFAULT_SHAPES = ((8, 8), (4, 4, 4, 4), (16, 8))


def _twist_vector(edges_pre, edges_post, k, tvec, induced):
    """Per-underlying-step twists for pre blocks, a gap of ``k`` induced steps,
    then post blocks; also returns the step count."""
    pre_len = edges_pre[-1]
    post = [pre_len + k + e for e in edges_post]
    total = post[-1]
    starts = _underlying(induced, np.arange(total + 1))
    tw = np.zeros(int(starts[-1]))
    mask_pre = np.zeros_like(tw, dtype=bool)
    blocks = [(edges_pre[i], edges_pre[i + 1]) for i in range(len(edges_pre) - 1)]
    blocks += [(post[i], post[i + 1]) for i in range(len(post) - 1)]
    for i, (a, b) in enumerate(blocks):
        tw[starts[a]:starts[b]] = tvec[i]
        if i < len(edges_pre) - 1:
            mask_pre[starts[a]:starts[b]] = True
    return tw, mask_pre


def _char_fn(stack, j0, twists):
    """``E_mu exp(i sum_u t_u psi_u(x_u))`` over ``len(twists)`` steps from ``j0``."""
    v = stack.h(j0).astype(complex)
    n = twists.size
    for u in range(n):
        v = stack.step(v, j0 + u, float(twists[u]))
    return complex(stack.nu(j0 + n) @ v)


def h_condition_probe(path, stack, k_values=(1, 2, 4, 8, 16), shapes=DEFAULT_SHAPES,
                      t_vectors=None, n_t=5, eps0=1.0, seed=0, induced=None, method="operator",
                      ensemble_factory=None, N=10_000, floor=1e-14, r2_min=0.8):
    """Factorisation error of joint characteristic functions across a gap of ``k``.

    For each gap ``k`` the error is the largest
    ``|E e^{i(P+Q)} - E e^{iP} E e^{iQ}|`` over block shapes and twist vectors,
    with ``P`` and ``Q`` the twisted sums before and after the gap. The
    ``operator`` method evaluates each expectation exactly on the grid as
    ``nu(L^{t} h)``; ``mc`` averages over ``N`` trajectories. A log-linear fit
    of error against ``k`` gives the decay rate; values at or below ``floor``
    are excluded as round-off.
    """
    j0 = path.origin_shift - stack.path.origin_shift
    if t_vectors is None:
        rng = np.random.default_rng(seed)
        width = max(len(s) for s in shapes) * 2
        t_vectors = [rng.uniform(-eps0, eps0, size=width) for _ in range(n_t)]
    t_vectors = [np.asarray(t, dtype=float) for t in t_vectors]
    if any(np.any(np.abs(t) > eps0) for t in t_vectors):
        raise ValueError(f"twists must lie in [-{eps0}, {eps0}]")
    errors, ses = [], []
    for k in k_values:
        worst, worst_se = 0.0, 0.0
        for shape in shapes:
            edges = np.concatenate([[0], np.cumsum(shape)])
            for tvec in t_vectors:
                tv = np.resize(tvec, 2 * len(shape))
                tw, pre = _twist_vector(edges, edges, k, tv, induced)
                if method == "operator":
                    joint = _char_fn(stack, j0, tw)
                    a = _char_fn(stack, j0, np.where(pre, tw, 0.0))
                    b = _char_fn(stack, j0, np.where(pre, 0.0, tw))
                    err, se = abs(joint - a * b), 0.0
                elif method == "mc":
                    if ensemble_factory is None:
                        raise PreconditionError("the mc method needs an ensemble_factory")
                    err, se = _mc_factorisation(ensemble_factory, tw, pre, N, seed)
                else:
                    raise ValueError(f"unknown method {method!r}")
                if err > worst:
                    worst, worst_se = err, se
        errors.append(worst)
        ses.append(worst_se)
    e = np.array(errors)
    ks = np.asarray(k_values, dtype=float)
    use = e > max(floor, 0.0)
    if method == "mc":
        use &= e > 2 * np.array(ses)
    if use.sum() >= 2:
        y = np.log(e[use])
        slope, icpt = np.polyfit(ks[use], y, 1)
        resid = y - (slope * ks[use] + icpt)
        sst = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else 1.0
        c_hat = -slope
    else:
        c_hat, r2 = (np.inf, 1.0) if np.all(e <= floor) else (np.nan, 0.0)
    passed = bool(c_hat > 0 and r2 >= r2_min)
    return HReport(k_values=list(map(int, k_values)), errors=e.tolist(), c_hat=float(c_hat),
                   r2=float(r2), n_fit=int(use.sum()), passed=passed, method=method,
                   stderr=list(ses), widened=bool(method == "mc" and np.any(e <= 2 * np.array(ses))))


def _mc_factorisation(ensemble_factory, tw, pre, N, seed):
    """Monte Carlo factorisation error with a delta-method standard error."""
    n = tw.size
    ens = ensemble_factory(n, N, seed)
    psi = np.stack([ens.partial_sum(u, u + 1) for u in range(n)], axis=1)
    P = psi[:, pre] @ tw[pre]
    Q = psi[:, ~pre] @ tw[~pre]
    ej, ea, eb = np.exp(1j * (P + Q)), np.exp(1j * P), np.exp(1j * Q)
    mj, ma, mb = ej.mean(), ea.mean(), eb.mean()
    d = mj - ma * mb
    # influence function of the error statistic
    infl = ej - mj - mb * (ea - ma) - ma * (eb - mb)
    proj = np.real(np.conj(d) * infl) / max(abs(d), 1e-300)
    return float(abs(d)), float(proj.std(ddof=1) / np.sqrt(N))


def per_step_recorder(stack, path, observable):
    """Factory for the ``mc`` probe: an ensemble recording every step."""
    from .birkhoff import TrajectoryEnsemble

    def make(n, N, seed):
        return TrajectoryEnsemble(path, stack, observable, N=N, n_max=n, seed=seed,
                                  record=range(n + 1), checkpoints=())
    return make


# normality and Gaussian surrogates

@dataclass
class KSResult:
    n: int
    statistic: float
    pvalue: float
    sigma: float
    suppressed: bool = False
    reason: str = ""


def clt_test(ensemble, n, sigma=None, verdict=None, sigma_tol=1e-12):
    """KS distance between ``S_n / sigma_n`` over the ensemble and ``N(0, 1)``.

    ``sigma`` defaults to the ensemble root mean square. The test is suppressed
    for a coboundary verdict or a vanishing ``sigma``.
    """
    s = ensemble.S(n)
    if sigma is None:
        sigma = float(np.sqrt(np.mean(s**2)))
    if verdict == COBOUNDARY or sigma <= sigma_tol:
        reason = "coboundary" if verdict == COBOUNDARY else "sigma_n vanishes"
        return KSResult(n=int(n), statistic=float("nan"), pvalue=float("nan"), sigma=sigma,
                        suppressed=True, reason=reason)
    res = stats.kstest(s / sigma, "norm")
    return KSResult(n=int(n), statistic=float(res.statistic), pvalue=float(res.pvalue),
                    sigma=float(sigma))


def ks_from_samples(samples):
    res = stats.kstest(np.asarray(samples, dtype=float), "norm")
    return float(res.statistic), float(res.pvalue)


@dataclass
class VarianceMatch:
    ns: list
    sigma_empirical: list
    sigma_surrogate: list
    sigma_blocks_only: list
    discrepancy: list
    exponent: float
    bound: float
    ratio: float
    ratio_blocks_only: float
    max_pair_corr: float
    corr_bound: float
    ok: bool


def _fit_exponent(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    use = y > 0
    if use.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(x[use]), np.log(y[use]), 1)[0])


def variance_match(ensemble, rate, n_top, eps=0.1, induced=None, seed=0, include_gaps=True,
                   n_min=1):
    """Compare ``sigma`` of partial sums with a Gaussian surrogate built tile by tile.

    Every tile of windows ``0..n_top`` (big blocks, and gaps unless
    ``include_gaps`` is False) gets an independent normal with the empirical
    variance of the matching tile sum. Sums run over induced indices
    ``[1, 2^(m+1))`` for each ``m``. The discrepancy
    ``|sigma_surrogate - sigma_empirical|`` is fitted against ``2^(m+1)`` and
    compared with ``a_p + delta + 0.1``. The big-blocks-only ratio is kept as a
    diagnostic.
    """
    schemes = dyadic_tiling(n_top, rate.beta, eps)
    tiles = [t for n in range(n_top + 1) for t in window_tiles(n, schemes[n])]
    cum_all, cum_big = 0.0, 0.0
    var_by_window = []
    for n in range(n_top + 1):
        va, vb = 0.0, 0.0
        for kind, s, length in window_tiles(n, schemes[n]):
            a = int(_underlying(induced, s))
            b = int(_underlying(induced, s + length))
            v = float(ensemble.partial_sum(a, b).var(ddof=1))
            va += v
            if kind == "I":
                vb += v
        var_by_window.append((va, vb))
    ns, emp, sur, big, disc = [], [], [], [], []
    for n in range(n_top + 1):
        cum_all += var_by_window[n][0]
        cum_big += var_by_window[n][1]
        if n < n_min:
            continue
        end = int(_underlying(induced, 2 ** (n + 1)))
        start = int(_underlying(induced, 1))
        se = float(np.sqrt(np.mean(ensemble.partial_sum(start, end) ** 2)))
        ss = float(np.sqrt(cum_all if include_gaps else cum_big))
        ns.append(2 ** (n + 1))
        emp.append(se)
        sur.append(ss)
        big.append(float(np.sqrt(cum_big)))
        disc.append(abs(ss - se))
    # independence of the surrogate: pairwise correlations of drawn blocks
    rng = np.random.default_rng(seed)
    n_draw = min(ensemble.N, 4096)
    n_pairs = min(len(tiles), 16)
    B = rng.standard_normal((n_draw, n_pairs))
    C = np.corrcoef(B, rowvar=False)
    max_corr = float(np.max(np.abs(C[np.triu_indices(n_pairs, 1)]))) if n_pairs > 1 else 0.0
    corr_bound = 3.0 / np.sqrt(n_draw)
    expo = _fit_exponent(ns, disc)
    bound = rate.a_p + rate.delta + 0.1
    ratio = sur[-1] / emp[-1] if emp[-1] > 0 else (1.0 if sur[-1] == 0 else np.inf)
    ratio_big = big[-1] / emp[-1] if emp[-1] > 0 else np.nan
    return VarianceMatch(
        ns=ns, sigma_empirical=emp, sigma_surrogate=sur, sigma_blocks_only=big,
        discrepancy=disc, exponent=expo, bound=bound, ratio=float(ratio),
        ratio_blocks_only=float(ratio_big), max_pair_corr=max_corr, corr_bound=corr_bound,
        ok=bool(expo <= bound and abs(ratio - 1.0) <= 0.05),
    )


@dataclass
class GapCardinality:
    n: int
    ns: list
    counts: list
    exponent: float
    bound: float
    ok: bool


def gap_cardinality_check(n, beta, eps):
    """Cumulative gap-index count up to ``2^(m+1)`` for feasible windows ``m <= n``.

    The growth exponent against ``2^(m+1)`` is fitted over feasible windows and
    compared with ``beta + 1.5 eps + 0.1``.
    """
    schemes = dyadic_tiling(n, beta, eps)
    total, ns, counts = 0, [], []
    for m in range(n + 1):
        sc = schemes[m]
        if sc is None:
            continue
        total += sc.gap_total
        ns.append(2 ** (m + 1))
        counts.append(total)
    expo = _fit_exponent(ns, counts) if len(ns) >= 2 else 0.0
    bound = beta + 1.5 * eps + 0.1
    return GapCardinality(n=n, ns=ns, counts=counts, exponent=expo, bound=bound,
                          ok=expo <= bound)


@dataclass
class ASIPReport:
    checkpoints: list
    ks: list
    sigma_n: list
    sigma_surrogate: list
    discrepancy: list
    rate: dict
    variance_match: dict
    hprobe: dict | None = None
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "KS", "sigma_n", "sigma_surrogate", "discrepancy"])
        for row in zip(self.checkpoints, self.ks, self.sigma_n, self.sigma_surrogate,
                       self.discrepancy):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()
