import math

import numpy as np
import pytest

from infoclt import projection
from infoclt.density import standardize, subsample
from infoclt.errors import InfiniteFisher, InvalidParams, MemoryBudgetError
from infoclt.info import relative_entropy
from infoclt.projection import (
    additive_projection,
    debruijn_entropy,
    derivative_identity_check,
    fundamental_theorem_gap,
    prop_main_check,
    smoothed,
    telescoping_decomposition,
)


def bank(seed=0):
    return projection.test_function_bank(seed=seed)


def test_bank_is_seeded():
    names = [f.name for f in bank()]
    assert names == ["linear", "hermite2", "spline0", "spline1"]
    x = np.linspace(-4, 4, 81)
    assert np.allclose(bank(3)[2](x), bank(3)[2](x))
    assert not np.allclose(bank(3)[2](x), bank(4)[2](x))
    spline = bank()[2]
    assert spline(np.array([-3.5, 3.5])).tolist() == [0.0, 0.0]


def test_linear_function_is_additive(normal):
    proj = additive_projection(lambda x: x, normal, normal)
    assert proj.residual_norm_sq < 1e-12
    assert proj.mu == pytest.approx(1.0, rel=1e-6)
    assert np.allclose(proj.g1.values, proj.g1.x, atol=1e-9)


@pytest.mark.parametrize("which", range(4))
def test_pythagoras(mixture, which):
    z = standardize(mixture)
    f = bank()[which]
    proj = additive_projection(f, z, z)
    assert proj.pythagoras_gap <= 1e-9 * max(1.0, proj.f_norm_sq)
    assert proj.residual_norm_sq >= 0


def test_recentring_is_reported(normal):
    proj = additive_projection(lambda x: x + 3.0, normal, normal)
    assert proj.recentred
    assert proj.f_mean == pytest.approx(3.0, abs=1e-9)


@pytest.mark.parametrize("which", range(4))
def test_derivative_identity(normal, mixture, which):
    f = bank()[which]
    for d in (normal, standardize(mixture)):
        assert derivative_identity_check(f, d, d) < 1e-3


def test_projection_inequality_tight_for_linear(normal):
    report = prop_main_check(lambda x: x, normal, normal, beta=0.5)
    assert report.lhs == pytest.approx(2.0, rel=1e-6)
    assert report.slack == pytest.approx(0.0, abs=1e-6)
    assert report.passed
    assert not report.vacuous


@pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
def test_projection_inequality_bank(mixture, beta):
    z = standardize(mixture)
    for f in bank():
        report = prop_main_check(f, z, z, beta=beta)
        assert report.passed, f.name
        assert report.I_bar == pytest.approx((1 - beta) * report.I1 + beta * report.I2)


def test_projection_inequality_with_offsets(gamma5):
    z = standardize(gamma5)
    f = bank()[1]
    report = prop_main_check(f, z, z, h1=lambda x: 0.3 * x, h2=lambda x: -0.2 * x**2)
    assert report.passed


def test_projection_inequality_vacuous_for_jumps(expo):
    report = prop_main_check(bank()[2], expo, expo)
    assert report.vacuous
    assert math.isinf(report.I_bar)
    with pytest.raises(InvalidParams):
        prop_main_check(bank()[0], expo, expo, beta=1.5)


def test_hermite_telescoping_is_tight_for_normal(normal):
    n = 4
    report = telescoping_decomposition(bank()[1], normal, n)
    # s_n = 2(n-1)/n and t_i = 4(i-1)/n^2 for f(x) = x^2 - 1
    assert report.s[-1] == pytest.approx(2.0 * (n - 1) / n, rel=2e-3)
    for i, t in enumerate(report.t, start=1):
        assert t == pytest.approx(4.0 * (i - 1) / n**2, abs=2e-3)
    assert all(report.checks().values())


@pytest.mark.parametrize("n", [2, 4, 8])
def test_telescoping_bank(normal, mixture, n):
    for d in (normal, mixture):
        for f in bank():
            report = telescoping_decomposition(f, d, n)
            assert report.recursion_gap < 1e-6 * max(1.0, abs(report.s[-1]))
            assert sum(report.t) == pytest.approx(report.s[-1], abs=1e-5)
            failed = [k for k, ok in report.checks().items() if not ok]
            assert failed == [], (f.name, failed)


def test_telescoping_limits(normal, expo):
    with pytest.raises(MemoryBudgetError):
        telescoping_decomposition(bank()[0], normal, 9)
    with pytest.raises(InvalidParams):
        telescoping_decomposition(bank()[0], normal, 0)
    with pytest.raises(InfiniteFisher):
        telescoping_decomposition(bank()[0], expo, 2)


def test_smoothing_keeps_unit_variance(mixture):
    z = standardize(mixture)
    for t in (0.01, 0.5, 0.9):
        assert smoothed(z, t).variance == pytest.approx(1.0, rel=1e-6)


def test_debruijn_mixture(mixture):
    path = debruijn_entropy(mixture)
    assert path.relative_error < 1e-2
    assert path.D_direct == pytest.approx(relative_entropy(mixture), rel=1e-9)
    assert path.D_half is not None
    assert len(path.t_nodes) == 48
    assert list(path.to_frame().columns) == ["t", "J", "weight", "integrand"]


def test_debruijn_exponential(expo):
    path = debruijn_entropy(expo)
    assert path.relative_error < 1e-2
    assert path.D_tail >= 0


def test_debruijn_validation(normal):
    with pytest.raises(InvalidParams):
        debruijn_entropy(normal, nodes=2)
    with pytest.raises(InvalidParams):
        debruijn_entropy(normal, clip=0.7)


def test_projection_beats_random_additive_pairs(mixture):
    z = standardize(mixture)
    f = bank()[2]
    best = additive_projection(f, z, z).residual_norm_sq
    rng = np.random.default_rng(20)
    for _ in range(20):
        a, b = rng.normal(size=3), rng.normal(size=3)
        report = prop_main_check(
            f,
            z,
            z,
            h1=lambda x, a=a: a[0] + a[1] * x + a[2] * np.tanh(x),
            h2=lambda x, b=b: b[0] + b[1] * x**2 + b[2] * np.sin(x),
        )
        assert report.lhs >= best - 1e-8


@pytest.mark.parametrize("which", [0, 1])
def test_fundamental_theorem_exact_for_polynomials(mixture, which):
    z = standardize(mixture)
    assert fundamental_theorem_gap(bank()[which], z, z) < 1e-6


def test_fundamental_theorem_gap_shrinks_with_h(mixture):
    z = standardize(mixture)
    f = bank()[2]
    fine = fundamental_theorem_gap(f, z, z)
    coarse_grid = subsample(z, 2)
    coarse = fundamental_theorem_gap(f, coarse_grid, coarse_grid)
    assert fine < 1e-4
    assert fine < coarse / 3


def test_debruijn_fisher_decreases_along_path(mixture):
    J = debruijn_entropy(mixture, check_halving=False).J_path
    assert all(b <= a + 1e-6 for a, b in zip(J, J[1:]))
