"""Experiment configuration: a TOML file validated in one pass.

All violations are collected and raised together in a single
:class:`ConfigurationError` whose ``errors`` attribute lists them with their
field paths.
"""

from dataclasses import asdict, dataclass, field
import hashlib
import json
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._validation import ConfigurationError
from .blocks import RateParams, default_beta
from .driving import SymbolParams, sample_path
from .holder import HolderParams
from .inducing import ECriteria, WindowCriterion
from .observables import (
    CoboundaryObservable, TrigObservable, cosine_observable, required_holder_bound,
    zero_observable,
)

SEED_ENV = "RDEXPAND_SEED"
OBSERVABLES = ("trig", "cosine", "coboundary", "zero")

DEFAULT_TOML = """
seed = 20240601

[observable]
kind = "trig"

[holder]
alpha = 1.0
xi = 0.25

[grid]
M = 1024
n_relax = 40

[[alphabet]]
d = 2
b = 0.0
eps = 0.05
a = 1.0
c = 0.0
prob = 0.5

[[alphabet]]
d = 3
b = 0.1
eps = 0.05
a = 0.5
c = 0.3
prob = 0.5

[rates]
p = 6.0
delta = 0.05
eps_blocks = 0.1

[inducing]
C0 = 100.0
L = 8
N_check = 1024
test_mode_window = [0]

[monte_carlo]
N = 10000
checkpoints = [32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384]
workers = 1

[output]
dir = "out"
"""


@dataclass
class ExperimentConfig:
    seed: int
    observable: str
    alpha: float
    xi: float
    M: int
    n_relax: int
    symbols: list
    probabilities: list
    p: float
    delta: float
    beta: float
    eps_blocks: float
    C0: float
    L: int
    N_check: int
    test_mode_window: list | None
    N: int
    checkpoints: list
    workers: int
    out_dir: str
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def holder(self):
        return HolderParams(self.alpha, self.xi)

    @property
    def rate(self):
        return RateParams(p=self.p, delta=self.delta, beta=self.beta)

    def make_observable(self):
        return make_observable(self.observable)

    def alphabet(self):
        return [SymbolParams(**s) for s in self.symbols]

    def path(self, seed=None):
        seed = self.seed if seed is None else seed
        return sample_path(seed, self.alphabet(), self.probabilities)

    def criteria(self):
        if self.test_mode_window:
            return WindowCriterion(self.test_mode_window)
        return ECriteria(C0=self.C0, L=self.L, N_check=self.N_check, params=self.holder)

    def canonical(self):
        d = asdict(self)
        d.pop("raw")
        d.pop("out_dir")
        d.pop("workers")
        return d

    def digest(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def make_observable(kind):
    return {
        "trig": TrigObservable, "cosine": cosine_observable,
        "coboundary": CoboundaryObservable, "zero": zero_observable,
    }[kind]()


def _get(section, key, default, kind, errors, where):
    v = section.get(key, default)
    try:
        if kind is int and (isinstance(v, bool) or int(v) != v):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        errors.append(f"{where}.{key}: expected {kind.__name__}, got {v!r}")
        return default


def from_dict(raw):
    """Validate a parsed TOML document and fill defaults."""
    errors = []
    seed = _get(raw, "seed", 0, int, errors, "")
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            errors.append(f"environment {SEED_ENV}: not an integer: {env!r}")
    obs = raw.get("observable", {}).get("kind", "trig")
    if obs not in OBSERVABLES:
        errors.append(f"observable.kind: must be one of {OBSERVABLES}, got {obs!r}")
    hol = raw.get("holder", {})
    alpha = _get(hol, "alpha", 1.0, float, errors, "holder")
    xi = _get(hol, "xi", 0.25, float, errors, "holder")
    if not 0 < alpha <= 1:
        errors.append(f"holder.alpha: must lie in (0, 1], got {alpha}")
    if not 0 < xi <= 0.25:
        errors.append(f"holder.xi: must lie in (0, 1/4], got {xi}")
    grid = raw.get("grid", {})
    M = _get(grid, "M", 1024, int, errors, "grid")
    n_relax = _get(grid, "n_relax", 40, int, errors, "grid")
    if M < 8:
        errors.append(f"grid.M: must be >= 8, got {M}")
    elif 0 < xi <= 0.25 and 1.0 / M >= xi:
        errors.append(f"grid.M: spacing 1/{M} must be below holder.xi = {xi}")
    if n_relax < 1:
        errors.append(f"grid.n_relax: must be >= 1, got {n_relax}")

    alpha_list = raw.get("alphabet")
    symbols, probs = [], []
    if not alpha_list:
        errors.append("alphabet: at least one symbol is required")
        alpha_list = []
    for i, s in enumerate(alpha_list):
        where = f"alphabet[{i}]"
        sym = {
            "d": _get(s, "d", 2, int, errors, where),
            "b": _get(s, "b", 0.0, float, errors, where),
            "eps": _get(s, "eps", 0.0, float, errors, where),
            "a": _get(s, "a", 1.0, float, errors, where),
            "c": _get(s, "c", 0.0, float, errors, where),
        }
        if "H" in s:
            sym["H"] = _get(s, "H", 1.0, float, errors, where)
        probs.append(_get(s, "prob", 1.0 if len(alpha_list) == 1 else 0.0, float, errors, where))
        if sym["d"] < 2:
            errors.append(f"{where}.d: must be an integer >= 2, got {sym['d']}")
        if not 0 <= sym["b"] < 1:
            errors.append(f"{where}.b: must lie in [0, 1), got {sym['b']}")
        if sym["eps"] < 0:
            errors.append(f"{where}.eps: must be >= 0, got {sym['eps']}")
        if "H" in sym and sym["H"] < 1:
            errors.append(f"{where}.H: must be >= 1, got {sym['H']}")
        symbols.append(sym)
    if probs and (min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12):
        errors.append(f"alphabet.prob: probabilities must be non-negative and sum to 1, "
                      f"got {probs}")

    rates = raw.get("rates", {})
    p = _get(rates, "p", 6.0, float, errors, "rates")
    delta = _get(rates, "delta", 0.05, float, errors, "rates")
    eps_b = _get(rates, "eps_blocks", 0.1, float, errors, "rates")
    beta = None
    if p < 6:
        errors.append(f"rates.p: must be >= 6, got {p}")
    else:
        beta = _get(rates, "beta", default_beta(p), float, errors, "rates")
        if not 0 < beta < 1:
            errors.append(f"rates.beta: must lie in (0, 1), got {beta}")
        elif p <= 2 + 2 / beta:
            errors.append(f"rates.p: must exceed 2 + 2/beta = {2 + 2 / beta}")
        if not 0 < eps_b < 1 - beta:
            errors.append(f"rates.eps_blocks: must lie in (0, 1 - beta), got {eps_b}")
    if delta <= 0:
        errors.append(f"rates.delta: must be positive, got {delta}")

    ind = raw.get("inducing", {})
    C0 = _get(ind, "C0", 100.0, float, errors, "inducing")
    L = _get(ind, "L", 8, int, errors, "inducing")
    N_check = _get(ind, "N_check", 1024, int, errors, "inducing")
    window = ind.get("test_mode_window")
    if C0 < 1:
        errors.append(f"inducing.C0: must be >= 1, got {C0}")
    if L < 1:
        errors.append(f"inducing.L: must be >= 1, got {L}")
    if N_check < L:
        errors.append(f"inducing.N_check: must be >= L, got {N_check}")
    if window is not None:
        if not isinstance(window, list) or not window or any(
            not isinstance(w, int) or not 0 <= w < max(len(symbols), 1) for w in window
        ):
            errors.append("inducing.test_mode_window: must be a non-empty list of symbol ids")
            window = None

    mc = raw.get("monte_carlo", {})
    N = _get(mc, "N", 10_000, int, errors, "monte_carlo")
    workers = _get(mc, "workers", 1, int, errors, "monte_carlo")
    cps = mc.get("checkpoints", [2**k for k in range(5, 15)])
    if N < 2:
        errors.append(f"monte_carlo.N: must be >= 2, got {N}")
    if workers < 1:
        errors.append(f"monte_carlo.workers: must be >= 1, got {workers}")
    if not isinstance(cps, list) or not cps or any(
        not isinstance(c, int) or c < 1 for c in cps
    ):
        errors.append("monte_carlo.checkpoints: must be a non-empty list of positive integers")
        cps = [2**k for k in range(5, 15)]
    out_dir = str(raw.get("output", {}).get("dir", "out"))

    if errors:
        raise ConfigurationError("; ".join(errors), errors)

    holder = HolderParams(alpha, xi)
    probe = sample_path(0, [SymbolParams(**{k: v for k, v in s.items() if k != "H"})
                            for s in symbols], probs)
    observable = make_observable(obs)
    for i, s in enumerate(symbols):
        need = required_holder_bound(probe, i, holder, observable)
        if "H" not in s:
            s["H"] = float(need)
        elif s["H"] < need:
            errors.append(f"alphabet[{i}].H: {s['H']} is below the bound {need} required by "
                          "the potential and observable")
    if errors:
        raise ConfigurationError("; ".join(errors), errors)
    return ExperimentConfig(
        seed=seed, observable=obs, alpha=alpha, xi=xi, M=M, n_relax=n_relax, symbols=symbols,
        probabilities=probs, p=p, delta=delta, beta=beta, eps_blocks=eps_b, C0=C0, L=L,
        N_check=N_check, test_mode_window=window, N=N, checkpoints=sorted(cps),
        workers=workers, out_dir=out_dir, raw=raw,
    )


def parse_config(path=None):
    """Read and validate a TOML config; ``None`` gives the built-in default."""
    if path is None:
        return from_dict(tomllib.loads(DEFAULT_TOML))
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}", [str(exc)]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid TOML: {exc}", [str(exc)]) from exc
    return from_dict(raw)


def default_config():
    return parse_config(None)


def doubling_config(**overrides):
    """Single-symbol doubling map with ``psi = cos 2 pi x`` (closed-form variance 1/2)."""
    raw = tomllib.loads(DEFAULT_TOML)
    raw["alphabet"] = [{"d": 2, "b": 0.0, "eps": 0.0, "a": 1.0, "c": 0.0, "prob": 1.0}]
    raw["observable"] = {"kind": "cosine"}
    raw["inducing"].pop("test_mode_window", None)
    for key, value in overrides.items():
        raw[key] = value
    return from_dict(raw)
