import math

import numpy as np
import pytest

from infoclt.density import GridSpec, materialize, rescale
from infoclt.errors import DisconnectedSupport, EmptyWindow
from infoclt.families import DistributionSpec, validate_spec
from infoclt.poincare import (
    borovkov_utev_ratio,
    borovkov_utev_sides,
    poincare_constant,
    rayleigh_quotient,
    restricted_poincare,
    truncated_poincare,
)
from infoclt.projection import test_function_bank as bank


def test_normal_constants(normal):
    full = poincare_constant(normal)
    restricted = restricted_poincare(normal)
    assert full.value == pytest.approx(1.0, rel=1e-3)
    assert restricted.value == pytest.approx(0.5, rel=1e-3)
    assert full.constraint == "full"
    assert restricted.constraint == "restricted"
    assert len(full.window_trace) == 3


@pytest.mark.parametrize("variance", [0.25, 4.0])
def test_restricted_normal_scales_with_variance(normal, variance):
    d = rescale(normal, math.sqrt(variance))
    est = restricted_poincare(d)
    assert est.value == pytest.approx(variance / 2, rel=1e-3)
    g = est.extremal.values
    x = est.extremal.x
    target = x**2 - variance
    w = d.weights
    corr = abs(np.sum(w * g * target)) / math.sqrt(np.sum(w * g * g) * np.sum(w * target * target))
    assert corr > 0.999


def test_full_extremal_is_linear_for_normal(normal):
    est = poincare_constant(normal)
    g, x, w = est.extremal.values, est.extremal.x, normal.weights
    corr = abs(np.sum(w * g * x)) / math.sqrt(np.sum(w * g * g) * np.sum(w * x * x))
    assert corr > 0.999
    assert est.rayleigh_residual < 1e-3


def test_uniform_constant(uniform):
    est = poincare_constant(uniform)
    assert est.value == pytest.approx((est.support_length / math.pi) ** 2, rel=5e-3)


def test_exponential_constant(expo):
    est = poincare_constant(expo)
    assert est.value == pytest.approx(4.0, rel=1e-2)
    # one side ends on the support edge, the other is extended through the floor levels
    assert len(est.window_trace) == 3
    lengths = [L for L, _ in est.window_trace]
    assert lengths == sorted(lengths)


def test_restricted_never_exceeds_full(gamma5, mixture):
    for d in (gamma5, mixture):
        assert restricted_poincare(d).value <= poincare_constant(d).value * (1 + 1e-9)


def test_rayleigh_quotients_are_lower_bounds(normal, mixture):
    assert rayleigh_quotient(normal, lambda x: x) == pytest.approx(1.0, rel=1e-3)
    assert rayleigh_quotient(normal, lambda x: x**2 - 1) == pytest.approx(0.5, rel=1e-3)
    R = poincare_constant(mixture).value
    for f in bank(seed=1):
        assert rayleigh_quotient(mixture, f) <= R * (1 + 1e-6)


def test_rayleigh_of_constant_is_infinite(normal):
    assert math.isinf(rayleigh_quotient(normal, lambda x: np.ones_like(x)))


def test_truncated_constant_shrinks(normal):
    full = poincare_constant(normal).value
    t = truncated_poincare(normal, 1.0)
    assert t.constraint == "truncated(1)"
    assert t.value < full
    with pytest.raises(EmptyWindow):
        truncated_poincare(normal, 1e-4)


def test_borovkov_utev_uniform(uniform):
    T = math.sqrt(3.0)
    right, left = borovkov_utev_sides(uniform, T)
    assert right == pytest.approx(1.5, rel=1e-2)
    assert left == pytest.approx(1.5, rel=1e-2)
    assert borovkov_utev_ratio(uniform, T) == pytest.approx(1.5, rel=1e-2)


def test_disconnected_support_rejected(grid):
    spec = validate_spec(
        {"family": "gaussian_mixture", "params": {"weights": [0.5, 0.5], "means": [-20, 20], "variances": [0.5, 0.5]}}
    )
    d = materialize(spec, grid)
    with pytest.raises(DisconnectedSupport):
        poincare_constant(d)


def test_laplace_constant():
    d = materialize(DistributionSpec(family="laplace"))
    # Laplace(b=1): R = 4 b^2
    assert poincare_constant(d).value == pytest.approx(4.0, rel=1e-2)


def test_uniform_restricted_is_finite(uniform):
    full = poincare_constant(uniform)
    restricted = restricted_poincare(uniform)
    assert math.isfinite(restricted.value)
    assert 0 < restricted.value <= full.value * (1 + 1e-9)


def test_truncated_uniform_constant(uniform):
    est = truncated_poincare(uniform, 1.0)
    assert math.isfinite(est.value)
    assert est.value == pytest.approx((est.support_length / math.pi) ** 2, rel=1e-3)
    assert est.value == pytest.approx((2 / math.pi) ** 2, rel=5e-3)


@pytest.mark.parametrize("T", [1.0, 2.0])
def test_truncated_normal_is_finite(normal, T):
    est = truncated_poincare(normal, T)
    assert math.isfinite(est.value)
    assert est.value < 1.0


def test_wide_truncation_recovers_full_constant(normal):
    assert truncated_poincare(normal, 8.0).value == pytest.approx(1.0, abs=2e-3)


def test_truncated_gamma_grows_with_window(grid):
    d = materialize(DistributionSpec(family="gamma", params={"shape": 6}, center_and_scale=True), grid)
    values = [truncated_poincare(d, T).value for T in (2.0, 3.0, 4.0)]
    assert all(math.isfinite(v) for v in values)
    assert values[0] < values[1] < values[2]


@pytest.mark.parametrize(
    "spec",
    [
        DistributionSpec(family="normal"),
        DistributionSpec(family="gamma", params={"shape": 5}),
        DistributionSpec(family="uniform"),
        DistributionSpec(family="exponential", center_and_scale=True),
        DistributionSpec(family="laplace"),
        DistributionSpec(family="gaussian_mixture", params={"weights": [0.5, 0.5], "means": [-1, 1], "variances": [0.5, 0.5]}),
    ],
    ids=lambda s: s.family,
)
def test_grid_convergence(spec):
    coarse = poincare_constant(materialize(spec, GridSpec(points=4096))).value
    fine = poincare_constant(materialize(spec, GridSpec(points=8192))).value
    assert fine == pytest.approx(coarse, rel=2e-3)


@pytest.mark.parametrize("a", [0.5, 3.0])
def test_scaling_law_both_modes(gamma5, mixture, a):
    for d in (gamma5, mixture):
        scaled = rescale(d, a)
        assert poincare_constant(scaled).value == pytest.approx(a**2 * poincare_constant(d).value, rel=1e-3)
        assert restricted_poincare(scaled).value == pytest.approx(a**2 * restricted_poincare(d).value, rel=1e-3)
