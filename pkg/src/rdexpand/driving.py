"""Driving system: a two-sided i.i.d. symbol shift realised lazily.

The symbol sitting at absolute index ``i`` is a pure function of ``(seed, i)``.
It is produced by numpy's counter-based Philox generator, one block of
``BLOCK`` symbols per counter value, so shifting a path or querying indices in
any order never resamples anything.
"""

from dataclasses import dataclass
import threading

import numpy as np

from ._validation import ConfigurationError, check_positive_int, check_probabilities

BLOCK = 4096
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class SymbolParams:
    """Dynamical parameters attached to one symbol of the alphabet.

    Attributes
    ----------
    d : int
        Branch count of the fiber map ``x -> d x + b mod 1``; also its
        expansion factor and degree.
    b : float
        Offset in [0, 1).
    eps : float
        Amplitude of the potential ``-log d + eps cos(2 pi x)``.
    H : float
        Hoelder bound for this fiber, at least 1.
    a, c : float
        Coefficients of the default observable ``a cos(2 pi x) + c sin(4 pi x)``.
    """

    d: int = 2
    b: float = 0.0
    eps: float = 0.0
    H: float = 1.0
    a: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ConfigurationError(f"branch count d must be an integer >= 2, got {self.d}")
        if not 0.0 <= self.b < 1.0:
            raise ConfigurationError(f"offset b must lie in [0, 1), got {self.b}")
        if self.eps < 0:
            raise ConfigurationError(f"potential amplitude eps must be >= 0, got {self.eps}")
        if self.H < 1:
            raise ConfigurationError(f"holder bound H must be >= 1, got {self.H}")
        object.__setattr__(self, "d", int(self.d))

    @property
    def gamma(self):
        return float(self.d)


@dataclass(frozen=True)
class CocycleProducts:
    gamma_n: float
    D_n: int


class _SymbolSource:
    """Memoised counter-based symbol generator shared by all shifts of a path."""

    def __init__(self, seed, cumulative, pattern=None):
        self.seed = int(seed) & _U64
        self.cumulative = cumulative
        self.pattern = None if pattern is None else np.asarray(pattern, dtype=np.int64)
        self._blocks = {}
        self._lock = threading.Lock()

    def _block(self, k):
        blk = self._blocks.get(k)
        if blk is not None:
            return blk
        counter = np.array([k & _U64, 0, 0, 0], dtype=np.uint64)
        bitgen = np.random.Philox(key=self.seed, counter=counter)
        u = np.random.Generator(bitgen).random(BLOCK)
        blk = np.searchsorted(self.cumulative, u, side="right")
        np.minimum(blk, len(self.cumulative) - 1, out=blk)
        blk = blk.astype(np.int64)
        blk.setflags(write=False)
        # a racing writer stores an identical array, so the fill is idempotent
        with self._lock:
            return self._blocks.setdefault(k, blk)

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if self.pattern is not None:
            return self.pattern[np.mod(idx, self.pattern.size)]
        if len(self.cumulative) == 1:
            return np.zeros(idx.shape, dtype=np.int64)
        out = np.empty(idx.shape, dtype=np.int64)
        flat = idx.ravel()
        res = out.ravel()
        blocks = np.floor_divide(flat, BLOCK)
        for k in np.unique(blocks):
            sel = blocks == k
            res[sel] = self._block(int(k))[flat[sel] - int(k) * BLOCK]
        return out


class OmegaPath:
    """A realised two-sided driving sequence.

    Index 0 of a path is the "current" time; ``shift`` moves the origin without
    touching the underlying symbols. Per-symbol parameter arrays (``d``, ``b``,
    ``eps``, ``H``, ``a``, ``c``) are exposed for vectorised lookups.
    """

    def __init__(self, seed, alphabet, probabilities, origin_shift=0, pattern=None, _source=None):
        alphabet = tuple(alphabet)
        if not alphabet:
            raise ConfigurationError("alphabet must be non-empty")
        p = check_probabilities(probabilities, len(alphabet))
        self.seed = int(seed)
        self.alphabet = alphabet
        self.probabilities = p
        self.origin_shift = int(origin_shift)
        if _source is None:
            if pattern is not None:
                pattern = np.asarray(pattern, dtype=np.int64)
                if pattern.ndim != 1 or pattern.size == 0:
                    raise ConfigurationError("pattern must be a non-empty 1-d sequence")
                if pattern.min() < 0 or pattern.max() >= len(alphabet):
                    raise ConfigurationError("pattern refers to symbols outside the alphabet")
            cumulative = np.cumsum(p)
            cumulative[-1] = 1.0
            _source = _SymbolSource(seed, cumulative, pattern)
        self._source = _source
        self.d = np.array([s.d for s in alphabet], dtype=np.int64)
        self.b = np.array([s.b for s in alphabet])
        self.eps = np.array([s.eps for s in alphabet])
        self.H = np.array([s.H for s in alphabet])
        self.a = np.array([s.a for s in alphabet])
        self.c = np.array([s.c for s in alphabet])

    @property
    def n_symbols(self):
        return len(self.alphabet)

    @property
    def is_deterministic(self):
        return self.n_symbols == 1 or (
            self._source.pattern is not None and np.unique(self._source.pattern).size == 1
        )

    def symbol_at(self, i):
        return int(self._source.take(np.array([i + self.origin_shift]))[0])

    def symbols(self, start, stop):
        """Symbol ids at relative indices ``start, ..., stop - 1``."""
        return self._source.take(np.arange(start, stop) + self.origin_shift)

    def take(self, idx):
        return self._source.take(np.asarray(idx, dtype=np.int64) + self.origin_shift)

    def params_at(self, i):
        return self.alphabet[self.symbol_at(i)]

    def shifted(self, k):
        return OmegaPath(
            self.seed, self.alphabet, self.probabilities,
            origin_shift=self.origin_shift + int(k), _source=self._source,
        )

    def same_realisation(self, other):
        return self._source is other._source or (
            self.seed == other.seed
            and self.alphabet == other.alphabet
            and np.array_equal(self.probabilities, other.probabilities)
            and _same_pattern(self._source.pattern, other._source.pattern)
        )

    def __repr__(self):
        return (
            f"OmegaPath(seed={self.seed}, n_symbols={self.n_symbols}, "
            f"origin_shift={self.origin_shift})"
        )


def _same_pattern(p, q):
    if p is None or q is None:
        return p is q
    return np.array_equal(p, q)


def sample_path(seed, alphabet, probabilities):
    """Build a path whose symbol at index ``i`` depends only on ``(seed, i)``."""
    return OmegaPath(seed, alphabet, probabilities)


def periodic_path(alphabet, pattern):
    """Deterministic path repeating ``pattern`` (index 0 holds ``pattern[0]``).

    Probabilities are set to the pattern frequencies so downstream code that
    reads them still sees a valid vector.
    """
    pattern = np.asarray(pattern, dtype=np.int64)
    counts = np.bincount(pattern, minlength=len(alphabet)).astype(float)
    return OmegaPath(0, alphabet, counts / counts.sum(), pattern=pattern)


def shift(path, k):
    """Return ``sigma^k`` of the path; ``k`` may be negative."""
    return path.shifted(k)


def cocycle_products(path, n):
    """Products of expansion factors and degrees over indices ``0..n-1``."""
    n = check_positive_int(n, "n")
    d = path.d[path.symbols(0, n)]
    gamma = float(np.prod(d.astype(float)))
    return CocycleProducts(gamma_n=gamma, D_n=int(np.prod([int(v) for v in d])))
