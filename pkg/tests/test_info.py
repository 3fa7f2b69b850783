import math

import numpy as np
import pytest

from infoclt.density import materialize, rescale, standardize
from infoclt.errors import DegenerateDensity, InvalidParams
from infoclt.families import DistributionSpec
from infoclt.info import (
    SUP_CONSTANT,
    cramer_rao_family,
    distance_chain,
    fisher_information,
    fisher_trace,
    info_summary,
    relative_entropy,
    score,
    standardized_fisher,
    tail_score_mass,
)


def test_normal_is_fixed_point(normal):
    assert fisher_information(normal) == pytest.approx(1.0, rel=1e-6)
    assert abs(standardized_fisher(normal)) < 1e-6
    assert abs(relative_entropy(normal)) < 1e-8


def test_fisher_scales_inversely_with_variance(normal):
    wide = rescale(normal, 2.0)
    assert fisher_information(wide) == pytest.approx(0.25, rel=1e-6)
    assert standardized_fisher(wide) == pytest.approx(standardized_fisher(normal), abs=1e-9)


def test_gamma_closed_form(gamma5):
    # gamma(k): I = 1/(k-2) at unit scale, J = 2/(k-2)
    assert fisher_information(gamma5) == pytest.approx(1.0 / 3.0, rel=1e-3)
    assert standardized_fisher(gamma5) == pytest.approx(2.0 / 3.0, rel=1e-3)


def test_gamma3_onset_kink(grid):
    d = materialize(DistributionSpec(family="gamma", params={"shape": 3}, center_and_scale=True), grid)
    value, trace = fisher_trace(d)
    raw = trace[-1][1]
    # the raw sum converges at first order here
    assert abs(raw - 2.0) > 5e-3
    assert standardized_fisher(d) == pytest.approx(2.0, abs=2e-3)


def test_jump_families_have_infinite_fisher(expo, uniform):
    value, trace = fisher_trace(expo)
    assert math.isinf(value)
    assert len(trace) == 4
    assert math.isinf(fisher_information(uniform))
    assert math.isinf(info_summary(expo).standardized_J)


def test_laplace_kink_is_finite():
    d = materialize(DistributionSpec(family="laplace"))
    assert standardized_fisher(d) == pytest.approx(1.0, rel=2e-2)


def test_exponential_relative_entropy(expo):
    # D = log(sqrt(2 pi e)) - 1 for any exponential law
    assert relative_entropy(expo) == pytest.approx(0.5 * math.log(2 * math.pi * math.e) - 1.0, abs=1e-3)


def test_normal_score_is_linear(normal):
    s = score(normal)
    inside = s.valid_mask & (np.abs(normal.x) < 5)
    assert np.max(np.abs(s.score.values[inside] + normal.x[inside])) < 1e-4
    assert s.mean_score() == pytest.approx(0.0, abs=1e-8)
    assert s.centred_moment() == pytest.approx(-1.0, abs=1e-6)
    assert s.fisher() == pytest.approx(1.0, rel=1e-5)


def test_gamma_score_matches_analytic(grid):
    d = materialize(DistributionSpec(family="gamma", params={"shape": 5}, center_and_scale=True), grid)
    s = score(d)
    # back on the gamma(5) scale the score is 4/x - 1
    x = 5.0 + math.sqrt(5.0) * s.score.x
    inside = s.valid_mask & (x > 0.5)
    analytic = math.sqrt(5.0) * (4.0 / x[inside] - 1.0)
    assert np.max(np.abs(s.score.values[inside] - analytic)) < 1e-3


def test_exponential_interior_score(expo):
    s = score(expo)
    assert np.max(np.abs(s.score.values[s.valid_mask] + 1.0)) < 1e-4


def test_score_rescales(gamma5):
    base = score(gamma5)
    wide = score(rescale(gamma5, 2.0))
    assert np.array_equal(base.valid_mask, wide.valid_mask)
    inside = base.valid_mask
    assert np.max(np.abs(wide.score.values[inside] - base.score.values[inside] / 2.0)) < 1e-3


def test_density_bounded_by_root_fisher(normal, gamma5, mixture):
    for d in (normal, gamma5, mixture, rescale(gamma5, 0.2)):
        assert np.max(d.values) <= math.sqrt(fisher_information(d)) + 1e-3


def test_score_moments_on_smooth_families(gamma5, mixture):
    for d in (standardize(gamma5), standardize(mixture)):
        s = score(d)
        assert s.mean_score() == pytest.approx(0.0, abs=1e-4)
        assert s.centred_moment() == pytest.approx(-1.0, abs=1e-3)


def test_score_excludes_jump_neighbours(expo):
    s = score(expo)
    k = int(round((-1.0 - expo.x_min) / expo.h))
    assert not s.valid_mask[k]
    assert not s.valid_mask[k - 1]
    assert s.valid_mask[k + 5]


def test_score_floor_validation(normal):
    with pytest.raises(InvalidParams):
        score(normal, floor_rel=0.5)


def test_score_degenerate_density():
    from infoclt.density import GridDensity

    d = GridDensity.from_values(0.0, 1.0, [0.0, 1.0, 0.0])
    with pytest.raises(DegenerateDensity):
        score(d)


def test_distance_chain_gamma(gamma5):
    chain = distance_chain(gamma5)
    assert chain.holds()
    assert chain.sup_diff <= SUP_CONSTANT * math.sqrt(chain.J)
    assert chain.tv <= 2 * chain.hellinger
    assert chain.J >= chain.poincare_lower >= 2 * chain.hellinger**2
    assert 0 < chain.mu_affinity < 1


def test_distance_chain_infinite_J_skips_root_checks(expo):
    chain = distance_chain(expo)
    assert math.isinf(chain.J)
    assert "sup_le_sqrtJ" not in chain.checks()
    assert chain.holds()


def test_tail_profile_starts_at_sigma2_I(gamma5):
    profile = tail_score_mass(gamma5, [0.0, 1.0, 2.0, 4.0])
    assert profile.psi[0] == pytest.approx(1.0 + standardized_fisher(gamma5), rel=1e-9)
    assert profile.is_monotone()
    assert profile.psi[-1] < profile.psi[0]


def test_tail_profile_infinite(expo):
    profile = tail_score_mass(expo, [0.0, 1.0])
    assert all(math.isinf(v) for v in profile.psi)
    with pytest.raises(InvalidParams):
        tail_score_mass(expo, [-1.0])


def test_cramer_rao_family(normal, gamma5):
    assert cramer_rao_family(normal).optimal == pytest.approx(0.0, abs=1e-6)
    bounds = cramer_rao_family(standardize(gamma5), f=lambda x: x)
    J = standardized_fisher(gamma5)
    assert bounds.supplied == pytest.approx(0.0, abs=1e-4)
    assert bounds.skew_choice <= bounds.optimal + 1e-12
    assert bounds.optimal <= J


def test_summary_fields(gamma5):
    s = info_summary(gamma5)
    assert s.sigma2 == pytest.approx(5.0, rel=1e-6)
    assert s.standardized_J == pytest.approx(s.sigma2 * s.fisher_I - 1.0)
    assert list(s.trace_frame().columns) == ["h", "value"]
