import numpy as np
import pytest

from rdexpand._validation import PreconditionError, StateError
from rdexpand.birkhoff import center_observable, birkhoff_sum
from rdexpand.driving import SymbolParams, sample_path
from rdexpand.inducing import (
    ECriteria, InducedSystem, WindowCriterion, block_sups, estimate_p_E, go_conditions_check,
    induced_observable, induced_report, kac_check, membership_E, moment_check, resummation,
    return_times, tail_bound_check,
)
from rdexpand.observables import CoboundaryObservable, cosine_observable, zero_observable



class FixedMembers:
    """Membership given by an explicit set of indices."""

    def __init__(self, hits):
        self.hits = set(hits)

    def members(self, path, lo, hi):
        return np.array([j in self.hits for j in range(lo, hi + 1)])


COIN = sample_path(31, [SymbolParams(d=2), SymbolParams(d=3, b=0.1, a=0.5, c=0.3)], [0.5, 0.5])


def test_full_rule_single_symbol(doubling, doubling_stack):
    cfg, path = doubling
    crit = ECriteria(C0=1e3, L=8, sigma2=0.5).bind(doubling_stack, cosine_observable())
    assert crit.members(path, 0, 20).all()
    rows = {crit.surrogates(k).worst() for k in range(5)}
    assert len({round(r, 9) for r in rows}) == 1
    none = ECriteria(C0=0.5, sigma2=0.5).bind(doubling_stack, cosine_observable())
    assert not none.members(path, 0, 20).any()
    assert none.surrogates(0).C >= 4


def test_full_rule_median_threshold(default, default_stack):
    cfg, path = default
    probe = ECriteria(C0=1e3, sigma2=0.0).bind(default_stack, cfg.make_observable())
    worst = np.array([probe.surrogates(k).worst() for k in range(200)])
    crit = ECriteria(C0=float(np.median(worst)), sigma2=0.0).bind(default_stack,
                                                                  cfg.make_observable())
    p = crit.members(path, 0, 199).mean()
    assert 0 < p < 1


def test_full_rule_needs_variance_and_binding(default_stack, default):
    _, path = default
    with pytest.raises(StateError):
        ECriteria().bind(default_stack).surrogates(0)
    with pytest.raises(StateError):
        membership_E(path, ECriteria())
    with pytest.raises(PreconditionError):
        ECriteria(sigma2=0.3).bind(default_stack).surrogates(default_stack.hi - 10)
    with pytest.raises(ValueError):
        ECriteria(L=10, N_check=5)


def test_return_times_patterns():
    all_e = return_times(COIN, FixedMembers(range(0, 100)), 50)
    np.testing.assert_array_equal(all_e.m, np.arange(1, 51))
    sys = return_times(COIN, FixedMembers({0, 2, 5, 9}), 10)
    assert sys.m.tolist() == [2, 5, 9]
    assert sys.k_n(7) == 2
    assert sys.block(1) == (2, 5)
    assert sys.underlying(0) == 0 and sys.underlying(3) == 9
    with pytest.raises(ValueError):
        sys.underlying(4)
    with pytest.warns(RuntimeWarning):
        empty = return_times(COIN, FixedMembers(set()), 10)
    assert empty.truncated and not empty.base_in_E


def test_window_rule_and_kac():
    crit = WindowCriterion([0])
    assert crit.probability(COIN) == 0.5
    sys = return_times(COIN, crit, 10_000)
    syms = COIN.symbols(1, 10_001)
    np.testing.assert_array_equal(sys.m, np.flatnonzero(syms == 0) + 1)
    rep = kac_check(sys, estimate_p_E(COIN, crit, n_draws=1000))
    assert rep.ok
    assert rep.mean_gap == pytest.approx(2.0, abs=0.1)
    assert rep.consistent and rep.enough_returns


def test_kac_all_returns():
    sys = InducedSystem.identity(1000)
    rep = kac_check(sys)
    assert rep.mean_gap == 1.0 and rep.count_ratio == 1.0 and rep.ok


def test_induced_observable(doubling):
    _, path = doubling
    sys = InducedSystem.identity(100)
    io = induced_observable(path, sys, 4, cosine_observable(), M=64)
    assert (io.start, io.stop) == (4, 5)
    assert io(0.3) == pytest.approx(np.cos(2 * np.pi * 0.3))
    assert io.A == pytest.approx(1.0)
    zero = induced_observable(path, sys, 4, zero_observable(), M=64)
    assert zero.A == 0.0 and zero(0.7) == 0.0
    sysw = return_times(COIN, WindowCriterion([0]), 200)
    blk = induced_observable(COIN, sysw, 3)
    a, b = sysw.block(3)
    assert blk(0.41) == pytest.approx(birkhoff_sum(COIN.shifted(a), 0.41, b - a))


def test_resummation_identity():
    sys = return_times(COIN, WindowCriterion([0]), 2000)
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 1500))
        lhs, rhs = resummation(COIN, rng.random(), n, sys)
        assert abs(lhs - rhs) <= 1e-9


def test_moment_check():
    zero = moment_check(np.zeros(64))
    assert zero.moment == 0.0 and zero.growth_exponent == 0.0
    const = moment_check(np.ones(256))
    assert const.growth_exponent == 0.0 and const.ok
    rng = np.random.default_rng(0)
    gaps = rng.geometric(0.5, size=4096).astype(float)
    rep = moment_check(gaps, 6)
    exact = sum(k**6 * 0.5**k for k in range(1, 200))
    assert rep.moment == pytest.approx(exact, rel=0.3)
    assert rep.stabilization == pytest.approx(1.0, abs=0.3)
    assert rep.ok
    with pytest.raises(ValueError):
        moment_check(np.ones(3))


def test_block_sups_bounded_by_gap():
    sys = return_times(COIN, WindowCriterion([0]), 2000)
    A = block_sups(COIN, sys, n_blocks=200, M=64)
    gaps = np.diff(sys.starts)[:200]
    amp = np.maximum(COIN.a, 0) + np.abs(COIN.c)
    assert np.all(A <= gaps * amp.max() + 1e-12)


def test_tail_bound():
    sys = InducedSystem.identity(5000)
    rep = tail_bound_check(COIN, sys, n_grid=[64, 128, 1024])
    assert rep.discrepancy == [0.0, 0.0, 0.0] and rep.exponent == 0.0 and rep.ok
    sysw = return_times(COIN, WindowCriterion([0]), 10_000)
    hit = int(sysw.m[40])
    assert tail_bound_check(COIN, sysw, n_grid=[hit]).discrepancy == [0.0]
    rep = tail_bound_check(COIN, sysw, M=64)
    assert rep.exponent <= 1 / 6 + 0.1


def test_go_conditions_doubling(doubling, doubling_stack):
    _, path = doubling
    sys = InducedSystem.identity(4000)
    rep = go_conditions_check(path, doubling_stack, sys, 0.5, cosine_observable(), N=2000,
                              moments=moment_check(np.ones(64)))
    for u, se in zip(rep.u_hat, rep.u_stderr):
        assert abs(u - 0.5) < 4 * se
    assert rep.go1_ok and rep.offsets_consistent and rep.ok


def test_go_conditions_coboundary(default, default_stack):
    cfg, path = default
    sys = InducedSystem.identity(2000)
    cob = center_observable(CoboundaryObservable(), default_stack)
    rep = go_conditions_check(path, default_stack, sys, 0.35, cob, N=1000)
    assert not rep.go1_ok and not rep.ok


def test_go_needs_returns(doubling, doubling_stack):
    _, path = doubling
    with pytest.raises(PreconditionError):
        go_conditions_check(path, doubling_stack, InducedSystem.identity(50), 0.5)


def test_induced_report_json():
    sys = return_times(COIN, WindowCriterion([0]), 1000)
    rep = induced_report(sys, moment_check(np.ones(16)), flags={"test_mode": True})
    assert rep.P_hat == sys.p_hat
    assert '"test_mode": true' in rep.to_json()
    assert rep.k_n[0] == {"n": 1, "k_n": sys.k_n(1)}
