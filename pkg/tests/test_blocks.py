import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdexpand._validation import FeasibilityError, OutOfScopeWarning
from rdexpand.birkhoff import COBOUNDARY, TrajectoryEnsemble, center_observable
from rdexpand.blocks import (
    RateParams, block_decomposition, block_sums, clt_test, default_beta, dyadic_tiling,
    gap_cardinality_check, h_condition_probe, ks_from_samples, lowest_set_bit, per_step_recorder,
    rate_exponent, required_indices, variance_match, window_tiles, ASIPReport,
)
from rdexpand.inducing import InducedSystem, WindowCriterion, return_times
from rdexpand.observables import cosine_observable, zero_observable


def test_worked_example_n10():
    sc = block_decomposition(10, 0.6, 0.1)
    assert (sc.f, sc.F, sc.block_length) == (6, 64, 8)
    assert sc.gaps[0] == (1024, 128)
    assert sc.gap_total == 512
    assert sc.F * sc.block_length + sc.gap_total == 1024


def test_infeasible_window():
    with pytest.raises(FeasibilityError, match="not a positive integer"):
        block_decomposition(6, 0.6, 0.1)


def test_lowest_set_bit():
    assert [lowest_set_bit(j) for j in range(1, 8)] == [0, 1, 0, 2, 0, 1, 0]


def feasible(n, beta=0.6, eps=0.1):
    try:
        return block_decomposition(n, beta, eps)
    except FeasibilityError:
        return None


@pytest.mark.parametrize("n", range(0, 21))
def test_tiling_exact(n):
    sc = feasible(n)
    if sc is None:
        return
    pos = 2**n
    for kind, s, length in sc.tiles():
        assert s == pos and length > 0
        pos += length
    assert pos == 2 ** (n + 1)
    kinds = [k for k, _, _ in sc.tiles()]
    assert kinds == ["J", "I"] * sc.F


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 22), st.floats(0.3, 0.8), st.floats(0.01, 0.19))
def test_tiling_property(n, beta, eps):
    try:
        sc = block_decomposition(n, beta, eps)
    except FeasibilityError:
        return
    lengths = [length for _, _, length in sc.tiles()]
    assert sum(lengths) == 2**n
    assert len({length for k, _, length in sc.tiles() if k == "I"}) == 1


def test_dyadic_tiling_marks_infeasible():
    sch = dyadic_tiling(12, 0.6, 0.1)
    assert sch[6] is None and sch[10] is not None
    assert window_tiles(6, None) == [("J", 64, 64)]


def test_rate_arithmetic():
    assert default_beta(6) == pytest.approx(0.6)
    assert default_beta(12) == pytest.approx(12 / 22)
    assert rate_exponent(6) == pytest.approx(6 / 20 + 1 / 6, abs=1e-12)
    assert rate_exponent(12) == pytest.approx(12 / 44 + 1 / 12, abs=1e-12)
    ps = [6, 8, 12, 24, 100, 10_000]
    a = [rate_exponent(p) for p in ps]
    b = [default_beta(p) for p in ps]
    assert all(x > y for x, y in zip(a, a[1:])) and a[-1] == pytest.approx(0.25, abs=1e-3)
    assert all(x > y for x, y in zip(b, b[1:])) and b[-1] == pytest.approx(0.5, abs=1e-3)
    with pytest.warns(OutOfScopeWarning):
        assert np.isnan(rate_exponent(4))
    with pytest.raises(ValueError):
        RateParams(p=4)
    assert RateParams().beta == pytest.approx(0.6)


def test_gap_cardinality_counts():
    rep = gap_cardinality_check(10, 0.6, 0.1)
    sch = dyadic_tiling(10, 0.6, 0.1)
    expect = np.cumsum([sch[m].gap_total for m in range(11) if sch[m] is not None])
    assert rep.counts == expect.tolist()
    assert rep.counts[-1] - rep.counts[-2] == 512
    single = gap_cardinality_check(10, 0.6, 0.1)
    assert single.ns[-1] == 2048


def test_gap_cardinality_small_eps_approaches_beta():
    lo = gap_cardinality_check(20, 0.6, 0.01).exponent
    hi = gap_cardinality_check(20, 0.6, 0.1).exponent
    assert lo < hi
    assert abs(lo - 0.6) < abs(hi - 0.6)


@pytest.fixture(scope="module")
def doubling_ensemble(doubling, doubling_stack):
    _, path = doubling
    sch = dyadic_tiling(10, 0.6, 0.1)
    rec = set()
    for n, s in sch.items():
        rec |= required_indices(window_tiles(n, s))
    return TrajectoryEnsemble(path, doubling_stack, cosine_observable(), N=4000,
                              n_max=2048, seed=1, record=rec, checkpoints=(256, 1024))


def test_block_sums_consistency(doubling_ensemble):
    sc = block_decomposition(10, 0.6, 0.1)
    bs = block_sums(doubling_ensemble, sc)
    assert bs.X.shape == (4000, 64)
    assert bs.consistency_error <= 1e-9
    one = block_sums(doubling_ensemble, [("I", 1024, 1024)])
    np.testing.assert_allclose(one.X[:, 0], doubling_ensemble.partial_sum(1024, 2048))


def test_block_sums_zero(doubling, doubling_stack):
    _, path = doubling
    ens = TrajectoryEnsemble(path, doubling_stack, zero_observable(), N=10, n_max=2048,
                             record=required_indices(block_decomposition(10, 0.6, 0.1).tiles()))
    assert np.all(block_sums(ens, block_decomposition(10, 0.6, 0.1)).X == 0)


def test_block_sums_with_induced_indices(default, default_stack):
    _, path = default
    sys = return_times(path, WindowCriterion([0]), 1500)
    sc = block_decomposition(8, 0.6, 0.1) if False else None
    sch = dyadic_tiling(8, 0.6, 0.1)
    rec = set()
    for n, s in sch.items():
        rec |= required_indices(window_tiles(n, s), sys)
    ens = TrajectoryEnsemble(path, default_stack, N=200, n_max=max(rec), record=rec)
    for s in sch.values():
        if s is not None:
            assert block_sums(ens, s, sys).consistency_error <= 1e-9
    assert sc is None


def test_h_probe_degenerate(default, default_stack):
    _, path = default
    zero = h_condition_probe(path, default_stack, k_values=(1, 2), t_vectors=[np.zeros(4)])
    assert max(zero.errors) < 1e-13


def test_h_probe_default_config(default, default_stack):
    _, path = default
    rep = h_condition_probe(path, default_stack, seed=0)
    assert rep.c_hat > 0 and rep.r2 >= 0.8 and rep.passed


def test_h_probe_doubling_decays_past_grid_floor(doubling, doubling_stack):
    """Decay is faster than exponential; later gaps sit on the grid round-off floor."""
    _, path = doubling
    rep = h_condition_probe(path, doubling_stack, seed=0)
    assert rep.c_hat > 0
    assert rep.errors[0] > 1e-5 and max(rep.errors[1:]) < 1e-7


def test_h_probe_mc_route(doubling, doubling_stack):
    _, path = doubling
    fac = per_step_recorder(doubling_stack, path, cosine_observable())
    rep = h_condition_probe(path, doubling_stack, k_values=(1, 2), shapes=((4, 4),), n_t=1,
                            method="mc", ensemble_factory=fac, N=2000)
    assert all(e < 5 * s + 0.02 for e, s in zip(rep.errors, rep.stderr))
    with pytest.raises(ValueError):
        h_condition_probe(path, doubling_stack, t_vectors=[np.full(4, 2.0)])


def test_clt_reference_and_suppression(doubling_ensemble):
    rng = np.random.default_rng(0)
    assert ks_from_samples(rng.standard_normal(10_000))[0] <= 0.0163
    res = clt_test(doubling_ensemble, 1024, sigma=np.sqrt(512))
    assert res.statistic < 0.03 and not res.suppressed
    sup = clt_test(doubling_ensemble, 1024, verdict=COBOUNDARY)
    assert sup.suppressed and np.isnan(sup.statistic)
    assert clt_test(doubling_ensemble, 1024, sigma=0.0).suppressed


def test_variance_match_zero(doubling, doubling_stack):
    _, path = doubling
    sch = dyadic_tiling(8, 0.6, 0.1)
    rec = set()
    for n, s in sch.items():
        rec |= required_indices(window_tiles(n, s))
    ens = TrajectoryEnsemble(path, doubling_stack, zero_observable(), N=50, n_max=512,
                             record=rec)
    vm = variance_match(ens, RateParams(), 8)
    assert vm.sigma_empirical[-1] == 0.0 and vm.sigma_surrogate[-1] == 0.0 and vm.ratio == 1.0


def test_variance_match_small(doubling_ensemble):
    vm = variance_match(doubling_ensemble, RateParams(), 10, n_min=4)
    assert vm.ns[0] == 32 and vm.ns[-1] == 2048
    assert abs(vm.ratio - 1) < 0.1
    assert vm.ok
    assert vm.bound == pytest.approx(rate_exponent(6) + 0.15)


def test_asip_report_csv():
    rep = ASIPReport(checkpoints=[32, 64], ks=[0.01, 0.02], sigma_n=[1.0, 2.0],
                     sigma_surrogate=[1.1, 2.1], discrepancy=[0.1, 0.1], rate={},
                     variance_match={})
    lines = rep.to_csv().splitlines()
    assert lines[0] == "n,KS,sigma_n,sigma_surrogate,discrepancy"
    assert lines[1].startswith("32,0.01,1.0")


def test_gap_cardinality_bound_at_n10():
    rep = gap_cardinality_check(10, 0.6, 0.1)
    assert rep.bound == pytest.approx(0.85)
    assert rep.exponent > rep.bound and not rep.ok
