import math

import numpy as np
import pytest

from infoclt.errors import InvalidParams
from infoclt.families import DistributionSpec, parse_params, standard_mixture, validate_spec


def test_parse_params_scalars_and_lists():
    p = parse_params("shape=5, weights=0.25/0.75")
    assert p == {"shape": 5.0, "weights": [0.25, 0.75]}
    assert parse_params(None) == {}


def test_parse_params_single_entry_lists():
    assert parse_params("weights=1,means=0,variances=2") == {"weights": [1.0], "means": [0.0], "variances": [2.0]}
    assert parse_params("shape=5/") == {"shape": [5.0]}
    spec = validate_spec({"family": "gaussian_mixture", "params": parse_params("weights=1/,means=0/,variances=2/")})
    assert spec.law().variance == pytest.approx(2.0)


def test_parse_params_rejects_malformed():
    with pytest.raises(InvalidParams):
        parse_params("shape")
    with pytest.raises(InvalidParams):
        parse_params("shape=five")


def test_gamma_shape_below_one_rejected():
    with pytest.raises(InvalidParams):
        validate_spec({"family": "gamma", "params": {"shape": 0.5}})


def test_gamma_requires_shape():
    with pytest.raises(InvalidParams):
        validate_spec({"family": "gamma"})


def test_mixture_weights_must_sum_to_one():
    with pytest.raises(InvalidParams):
        validate_spec(
            {"family": "gaussian_mixture", "params": {"weights": [0.5, 0.6], "means": [0, 1], "variances": [1, 1]}}
        )


def test_standard_mixture_moments():
    law = standard_mixture().law()
    assert law.mean == pytest.approx(0.0)
    assert law.variance == pytest.approx(1.5)
    assert law.pdf(np.array([0.0]))[0] > 0


def test_center_and_scale_exponential():
    law = DistributionSpec(family="exponential", center_and_scale=True).law()
    assert law.mean == pytest.approx(0.0)
    assert law.variance == pytest.approx(1.0)
    assert law.jumps == pytest.approx((-1.0,))
    assert law.hard_lower and not law.hard_upper
    assert law.jump_value(-1.0) == pytest.approx(0.5)


def test_uniform_support_is_hard_on_both_sides():
    law = DistributionSpec(family="uniform").law()
    assert law.hard_lower and law.hard_upper
    assert law.upper - law.lower == pytest.approx(2 * math.sqrt(3.0))


def test_table_law_normalizes():
    law = validate_spec({"family": "table", "params": {"x": [0, 1, 2], "p": [1, 2, 1]}}).law()
    assert law.cdf(2.0) == pytest.approx(1.0)
    assert law.mean == pytest.approx(1.0, abs=1e-12)
    assert law.variance == pytest.approx(5.0 / 18.0, abs=1e-12)
    assert law.cdf(1.0) == pytest.approx(0.5, abs=1e-12)
    # quadratic inside a segment: mass of [0, 0.5] is (1/3 + 1/2) / 2 * 0.5
    assert law.cdf(0.5) == pytest.approx(5.0 / 24.0, abs=1e-12)


def test_label():
    assert DistributionSpec(family="gamma", params={"shape": 5}).label == "gamma(shape=5)"
    assert DistributionSpec(family="normal").label == "normal"
