import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdexpand._validation import ConfigurationError
from rdexpand.driving import (
    SymbolParams, cocycle_products, periodic_path, sample_path, shift,
)

A2 = [SymbolParams(d=2), SymbolParams(d=3, b=0.1)]


def test_single_symbol_path_is_constant():
    path = sample_path(7, [SymbolParams(d=2)], [1.0])
    assert np.all(path.symbols(-500, 500) == 0)
    assert path.is_deterministic


def test_symbol_is_a_function_of_seed_and_index():
    p = sample_path(11, A2, [0.5, 0.5])
    q = sample_path(11, A2, [0.5, 0.5])
    idx = np.array([10**9, -3, 5, 4097, 5])
    assert np.array_equal(p.take(idx), q.take(idx[::-1])[::-1])
    assert p.symbol_at(123) == p.symbol_at(123)


@pytest.mark.parametrize("seed", [1, 2])
def test_fair_coin_frequency(seed):
    syms = sample_path(seed, A2, [0.5, 0.5]).symbols(0, 10_000)
    assert 0.48 <= np.mean(syms == 0) <= 0.52


def test_seeds_give_different_paths():
    a = sample_path(1, A2, [0.5, 0.5]).symbols(0, 256)
    b = sample_path(2, A2, [0.5, 0.5]).symbols(0, 256)
    assert not np.array_equal(a, b)


def test_shift_identity_and_inverse():
    p = sample_path(3, A2, [0.3, 0.7])
    assert np.array_equal(shift(p, 0).symbols(-50, 50), p.symbols(-50, 50))
    assert np.array_equal(shift(shift(p, 3), -3).symbols(-50, 50), p.symbols(-50, 50))


@settings(max_examples=50, deadline=None)
@given(st.integers(-10**6, 10**6), st.integers(-10**6, 10**6), st.integers(-10**4, 10**4))
def test_shift_flow(a, b, i):
    p = sample_path(5, A2, [0.5, 0.5])
    assert shift(shift(p, a), b).symbol_at(i) == shift(p, a + b).symbol_at(i)


def test_cocycle_products():
    p = periodic_path([SymbolParams(d=2)], [0])
    assert cocycle_products(p, 5).gamma_n == 32 and cocycle_products(p, 5).D_n == 32
    q = periodic_path([SymbolParams(d=2), SymbolParams(d=3)], [0, 1, 0])
    c = cocycle_products(q, 3)
    assert c.gamma_n == 12 and c.D_n == 12
    c1 = cocycle_products(q.shifted(1), 1)
    assert (c1.gamma_n, c1.D_n) == (3.0, 3)


@pytest.mark.parametrize("kwargs", [{"d": 1}, {"d": 2.5}, {"b": 1.0}, {"eps": -0.1}, {"H": 0.5}])
def test_bad_symbol_params(kwargs):
    with pytest.raises(ConfigurationError):
        SymbolParams(**kwargs)


def test_bad_probabilities():
    with pytest.raises(ConfigurationError, match="sum"):
        sample_path(0, A2, [0.5, 0.6])
    with pytest.raises(ConfigurationError):
        sample_path(0, A2, [1.0])
    with pytest.raises(ConfigurationError):
        sample_path(0, A2, [-0.5, 1.5])


def test_concurrent_queries_agree():
    from concurrent.futures import ThreadPoolExecutor
    p = sample_path(9, A2, [0.5, 0.5])
    ref = sample_path(9, A2, [0.5, 0.5]).symbols(0, 40_000)
    with ThreadPoolExecutor(4) as pool:
        parts = list(pool.map(lambda k: p.symbols(k * 10_000, (k + 1) * 10_000), range(4)))
    assert np.array_equal(np.concatenate(parts), ref)
