import math

import numpy as np
import pytest

from infoclt.convolution import (
    common_step,
    convolve,
    fisher_drop,
    standardized_sums,
    sum_score_projection,
)
from infoclt.density import GridSpec, materialize, resample, standardize
from infoclt.errors import InfiniteFisher, InvalidParams
from infoclt.families import DistributionSpec
from infoclt.info import standardized_fisher


def test_convolve_normals(normal):
    s = convolve(normal, normal)
    assert s.variance == pytest.approx(2.0, rel=1e-8)
    assert s.mean == pytest.approx(0.0, abs=1e-8)
    assert s.check_invariants(boundary=False) == []


def test_common_step_resamples_coarser(normal):
    coarse = resample(normal, 2 * normal.h)
    a, b = common_step(coarse, normal)
    assert a.h == pytest.approx(b.h)
    assert b is normal


def test_exponential_sums_match_gamma(expo):
    sums = standardized_sums(expo, [1, 2, 4, 8, 16, 32, 64])
    assert math.isinf(standardized_fisher(sums[1]))
    assert math.isinf(standardized_fisher(sums[2]))
    for n in (4, 8, 16, 32, 64):
        # U_n is a standardized gamma(n), J = 2 / (n - 2)
        assert standardized_fisher(sums[n]) == pytest.approx(2.0 / (n - 2), rel=1e-3)


def test_uniform_pair_is_triangle(uniform):
    u = standardized_sums(uniform, [2])[2]
    # (X1 + X2) / sqrt(2) is triangular on [-sqrt(6), sqrt(6)]
    triangle = np.clip(math.sqrt(6.0) - np.abs(u.x), 0.0, None) / 6.0
    assert np.max(np.abs(u.values - triangle)) < 1e-6


def test_gamma_sums(gamma5):
    sums = standardized_sums(gamma5, [1, 2, 4], max_workers=2)
    for n in (1, 2, 4):
        u = sums[n]
        assert u.mean == pytest.approx(0.0, abs=1e-9)
        assert u.variance == pytest.approx(1.0, rel=1e-9)
        assert standardized_fisher(u) == pytest.approx(2.0 / (5 * n - 2), rel=2e-3)
    assert sums.doubling_index == [0, 1, 2]
    assert sums.doubling(2) is sums[4]


def test_standardized_sums_validation(normal):
    with pytest.raises(InvalidParams):
        standardized_sums(normal, [])
    with pytest.raises(InvalidParams):
        standardized_sums(normal, [4, 2])
    with pytest.raises(InvalidParams):
        standardized_sums(normal, [5000])


def test_sum_score_projection_normal(normal):
    s = sum_score_projection(normal, normal)
    x = s.score.x
    inside = s.valid_mask & (np.abs(x) < 6)
    # the sum is N(0, 2), score -x/2
    assert np.max(np.abs(s.score.values[inside] + x[inside] / 2)) < 1e-3


def test_sum_score_projection_matches_direct_score(mixture):
    from infoclt.info import score

    projected = sum_score_projection(mixture, mixture)
    direct = score(projected.density_ref)
    both = projected.valid_mask & direct.valid_mask & (np.abs(projected.score.x) < 6)
    assert np.max(np.abs(projected.score.values[both] - direct.score.values[both])) < 1e-3


def test_fisher_drop_identity(gamma5, mixture):
    for d in (gamma5, mixture):
        report = fisher_drop(d)
        assert report.drop > 0
        assert report.relative_gap < 1e-2
        assert report.intermediate_holds()


def test_fisher_drop_gamma3(grid):
    d = materialize(DistributionSpec(family="gamma", params={"shape": 3}), grid)
    report = fisher_drop(d)
    # J(U_1) - J(U_2) = 2/(3-2) - 2/(6-2)
    assert report.drop == pytest.approx(1.5, rel=1e-2)
    assert report.J_single == pytest.approx(2.0, rel=1e-2)
    assert report.J_pair == pytest.approx(0.5, rel=1e-2)
    assert report.lambda_opt == pytest.approx(0.25, rel=2e-2)


def test_identity_gap_shrinks_under_refinement():
    spec = DistributionSpec(family="gamma", params={"shape": 5})
    coarse = fisher_drop(materialize(spec, GridSpec(points=2048)))
    fine = fisher_drop(materialize(spec, GridSpec(points=4096)))
    assert fine.relative_gap < 1e-2
    assert fine.relative_gap <= 0.5 * coarse.relative_gap or fine.relative_gap < 1e-5


def test_fisher_drop_normal_is_zero(normal):
    report = fisher_drop(normal)
    assert abs(report.drop) < 1e-5
    assert report.lambda_opt == 0.0


def test_fisher_drop_requires_finite_information(expo):
    with pytest.raises(InfiniteFisher):
        fisher_drop(expo)


def test_sum_frame(gamma5):
    frame = standardized_sums(standardize(gamma5), [1, 2]).to_frame()
    assert set(frame["n"]) == {1, 2}
    assert list(frame.columns) == ["n", "x", "p"]
