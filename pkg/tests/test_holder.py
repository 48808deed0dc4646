import numpy as np
import pytest

from rdexpand._validation import ConfigurationError, PreconditionError
from rdexpand.driving import SymbolParams, periodic_path, sample_path
from rdexpand.holder import (
    HolderFunction, HolderParams, distortion_check, holder_norm, holder_seminorm, q_series,
    q_window, sup_norm,
)
from rdexpand.observables import TrigObservable

TWO_PI = 2 * np.pi


def cos_fn(M=1024, k=1):
    return HolderFunction.from_callable(lambda x: np.cos(TWO_PI * k * x), M)


def test_sup_norm():
    assert sup_norm(HolderFunction.constant(0.0)) == 0.0
    assert sup_norm(cos_fn()) == 1.0
    assert sup_norm(HolderFunction.constant(-3.0)) == 3.0


def test_seminorm_values():
    assert holder_seminorm(HolderFunction.constant(2.0)) == 0.0
    v = holder_seminorm(cos_fn(), HolderParams(1.0))
    assert TWO_PI - 0.01 <= v <= TWO_PI
    M = 1024
    step = np.where(np.arange(M) < M // 2, 0.0, 1.0)
    assert holder_seminorm(HolderFunction(step)) == pytest.approx(M)


def test_seminorm_alpha_below_one():
    g = cos_fn()
    v = holder_seminorm(g, HolderParams(0.5, 0.25))
    # Lipschitz bound 2 pi rho^(1 - alpha) at rho < 1/4
    assert 0 < v <= TWO_PI * 0.25**0.5 + 1e-9


def test_seminorm_grid_refinement():
    g1 = TrigObservable()
    path = periodic_path([SymbolParams(d=2, a=1.0, c=0.3)], [0])
    vals = [holder_seminorm(HolderFunction(g1.values(path, 0, np.arange(M) / M)))
            for M in (1024, 2048)]
    assert abs(vals[1] - vals[0]) / vals[1] < 0.01


def test_grid_must_resolve_xi():
    with pytest.raises(ConfigurationError):
        holder_seminorm(HolderFunction(np.ones(4)), HolderParams(1.0, 0.25))


def test_arithmetic_and_csv_roundtrip():
    g = cos_fn(64)
    h = 2 * g + 1 - g / 2
    np.testing.assert_allclose(h.values, 1.5 * g.values + 1)
    back, params = HolderFunction.from_csv(g.to_csv(HolderParams(0.5, 0.1)))
    np.testing.assert_array_equal(back.values, g.values)
    assert params == HolderParams(0.5, 0.1)
    with pytest.raises(ValueError, match="grid mismatch"):
        g + cos_fn(128)
    assert holder_norm(g) == pytest.approx(1 + holder_seminorm(g))


def test_interpolation_is_exact_on_grid_and_linear_between():
    g = HolderFunction(np.array([0.0, 1.0, 0.0, -1.0]))
    np.testing.assert_allclose(g(np.array([0.0, 0.125, 0.25, 0.875])), [0.0, 0.5, 1.0, -0.5])


@pytest.mark.parametrize("H,d,alpha,expected", [
    (1.0, 2, 1.0, 1.0),
    (1.0, 2, 0.5, 1 / (np.sqrt(2) - 1)),
    (2.0, 3, 1.0, 1.0),
])
def test_q_series_geometric(H, d, alpha, expected):
    path = periodic_path([SymbolParams(d=d, H=H)], [0])
    q = q_series(path, HolderParams(alpha), tol=1e-12)
    assert q.value == pytest.approx(expected, rel=1e-10)


def test_q_window_recursion_matches_direct():
    path = sample_path(3, [SymbolParams(d=2, H=1.5), SymbolParams(d=3, H=2.0)], [0.5, 0.5])
    qs = q_window(path, 0, 30)
    direct = [q_series(path.shifted(j), tol=1e-13).value for j in (0, 7, 30)]
    np.testing.assert_allclose(qs[[0, 7, 30]], direct, rtol=1e-10)


def test_distortion_constant_and_diagonal():
    path = periodic_path([SymbolParams(d=2, H=TWO_PI)], [0])
    consts = [HolderFunction.constant(1.0)] * 4
    r = distortion_check(path, 4, consts, 0.1, 0.15)
    assert r.max_difference == 0.0 and r.ok
    cos = [cos_fn()] * 4
    r = distortion_check(path, 4, cos, 0.3, 0.3)
    assert r.max_difference == 0.0 and r.bound == 0.0


def test_distortion_random_cos():
    path = periodic_path([SymbolParams(d=2, H=TWO_PI)], [0])
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.random()
        r = distortion_check(path, 6, [cos_fn()] * 6, x, x + rng.uniform(-0.2, 0.2))
        assert r.worst_ratio <= 1.0


def test_distortion_checks_holder_class():
    path = periodic_path([SymbolParams(d=2, H=1.0)], [0])
    with pytest.raises(PreconditionError):
        distortion_check(path, 2, [cos_fn()] * 2, 0.1, 0.12)
