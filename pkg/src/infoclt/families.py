from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy import stats

from .errors import InvalidParams


FamilyLiteral = Literal[
    "normal",
    "exponential",
    "gamma",
    "uniform",
    "laplace",
    "gaussian_mixture",
    "table",
]

# quantile used to place one-sided grid ends for families with long tails
TAIL_QUANTILE = 1e-14
# parameters that are lists even with a single entry
LIST_KEYS = frozenset({"weights", "means", "variances", "x", "p"})


@dataclass(frozen=True)
class Law:
    """Analytic law on the real line, as far as grid construction needs it."""

    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[float], float]
    sf: Callable[[float], float]
    mean: float
    variance: float
    lower: float  # support edge or left tail quantile
    upper: float
    jumps: Tuple[float, ...] = ()
    hard_lower: bool = False  # lower is a support edge, not a tail quantile
    hard_upper: bool = False

    def tail_mass(self, x_min: float, x_max: float) -> float:
        return float(self.cdf(x_min)) + float(self.sf(x_max))

    def jump_value(self, a: float) -> float:
        """Average of the one-sided limits of the density at a jump."""
        d = 1e-12 * max(1.0, abs(a))
        lo, hi = self.pdf(np.array([a - d, a + d]))
        return 0.5 * (float(lo) + float(hi))

    def affine(self, loc: float, scale: float) -> "Law":
        """Law of (X - loc) / scale."""
        pdf = self.pdf
        cdf = self.cdf
        sf = self.sf
        return Law(
            pdf=lambda y: scale * pdf(loc + scale * np.asarray(y, dtype=float)),
            cdf=lambda a: cdf(loc + scale * a),
            sf=lambda b: sf(loc + scale * b),
            mean=(self.mean - loc) / scale,
            variance=self.variance / scale**2,
            lower=(self.lower - loc) / scale,
            upper=(self.upper - loc) / scale,
            jumps=tuple((j - loc) / scale for j in self.jumps),
            hard_lower=self.hard_lower,
            hard_upper=self.hard_upper,
        )


def _frozen_law(rv, jumps: Sequence[float] = ()) -> Law:
    lo, hi = rv.support()
    lower = float(lo) if math.isfinite(lo) else float(rv.ppf(TAIL_QUANTILE))
    upper = float(hi) if math.isfinite(hi) else float(rv.isf(TAIL_QUANTILE))
    return Law(
        pdf=rv.pdf,
        cdf=rv.cdf,
        sf=rv.sf,
        mean=float(rv.mean()),
        variance=float(rv.var()),
        lower=lower,
        upper=upper,
        jumps=tuple(float(j) for j in jumps),
        hard_lower=math.isfinite(lo),
        hard_upper=math.isfinite(hi),
    )


class NormalParams(BaseModel):
    mean: float = 0.0
    variance: float = 1.0

    @field_validator("variance")
    @classmethod
    def variance_positive(cls, v):
        if v <= 0:
            raise ValueError("variance must be > 0")
        return float(v)

    def law(self) -> Law:
        return _frozen_law(stats.norm(loc=self.mean, scale=math.sqrt(self.variance)))


class ExponentialParams(BaseModel):
    rate: float = 1.0

    @field_validator("rate")
    @classmethod
    def rate_positive(cls, v):
        if v <= 0:
            raise ValueError("rate must be > 0")
        return float(v)

    def law(self) -> Law:
        return _frozen_law(stats.expon(scale=1.0 / self.rate), jumps=(0.0,))


class GammaParams(BaseModel):
    shape: float
    scale: float = 1.0

    @field_validator("shape")
    @classmethod
    def shape_supported(cls, v):
        if v <= 0:
            raise ValueError("shape must be > 0")
        if v < 1:
            # density is unbounded at the origin and cannot be sampled on a grid
            raise ValueError("shape must be >= 1 for a grid representation")
        return float(v)

    @field_validator("scale")
    @classmethod
    def scale_positive(cls, v):
        if v <= 0:
            raise ValueError("scale must be > 0")
        return float(v)

    def law(self) -> Law:
        jumps = (0.0,) if self.shape == 1.0 else ()
        return _frozen_law(stats.gamma(self.shape, scale=self.scale), jumps=jumps)


class UniformParams(BaseModel):
    low: float = -math.sqrt(3.0)
    high: float = math.sqrt(3.0)

    @model_validator(mode="after")
    def ordered(self):
        if not self.high > self.low:
            raise ValueError("uniform requires high > low")
        return self

    def law(self) -> Law:
        return _frozen_law(stats.uniform(loc=self.low, scale=self.high - self.low), jumps=(self.low, self.high))


class LaplaceParams(BaseModel):
    loc: float = 0.0
    scale: float = 1.0

    @field_validator("scale")
    @classmethod
    def scale_positive(cls, v):
        if v <= 0:
            raise ValueError("scale must be > 0")
        return float(v)

    def law(self) -> Law:
        return _frozen_law(stats.laplace(loc=self.loc, scale=self.scale))


class MixtureParams(BaseModel):
    weights: List[float]
    means: List[float]
    variances: List[float]

    @model_validator(mode="after")
    def consistent(self):
        k = len(self.weights)
        if k == 0 or len(self.means) != k or len(self.variances) != k:
            raise ValueError("weights, means and variances must be non-empty and of equal length")
        if any(w < 0 for w in self.weights):
            raise ValueError("mixture weights must be >= 0")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if any(v <= 0 for v in self.variances):
            raise ValueError("component variances must be > 0")
        return self

    def law(self) -> Law:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        sd = np.sqrt(np.asarray(self.variances, dtype=float))

        def pdf(x):
            x = np.asarray(x, dtype=float)
            return np.sum(w[:, None] * stats.norm.pdf(x.reshape(1, -1), mu[:, None], sd[:, None]), axis=0).reshape(x.shape)

        def cdf(a):
            return float(np.sum(w * stats.norm.cdf(a, mu, sd)))

        def sf(b):
            return float(np.sum(w * stats.norm.sf(b, mu, sd)))

        mean = float(np.sum(w * mu))
        variance = float(np.sum(w * (sd**2 + mu**2)) - mean**2)
        lower = float(np.min(stats.norm.ppf(TAIL_QUANTILE, mu, sd)))
        upper = float(np.max(stats.norm.isf(TAIL_QUANTILE, mu, sd)))
        return Law(pdf=pdf, cdf=cdf, sf=sf, mean=mean, variance=variance, lower=lower, upper=upper)


class TableParams(BaseModel):
    x: List[float]
    p: List[float]

    @model_validator(mode="after")
    def consistent(self):
        if len(self.x) < 2 or len(self.x) != len(self.p):
            raise ValueError("table needs at least two (x, p) pairs of equal length")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValueError("table abscissae must be strictly increasing")
        if any(v < 0 for v in self.p):
            raise ValueError("table densities must be >= 0")
        if not any(v > 0 for v in self.p):
            raise ValueError("table density is identically zero")
        return self

    def law(self) -> Law:
        xs = np.asarray(self.x, dtype=float)
        ps = np.asarray(self.p, dtype=float)
        x0, x1, dx = xs[:-1], xs[1:], np.diff(xs)
        ps = ps / float(np.sum(0.5 * dx * (ps[:-1] + ps[1:])))
        p0, p1 = ps[:-1], ps[1:]

        def pdf(x):
            return np.interp(np.asarray(x, dtype=float), xs, ps, left=0.0, right=0.0)

        cum = np.concatenate([[0.0], np.cumsum(0.5 * dx * (p0 + p1))])

        def cdf(a):
            if a <= xs[0]:
                return 0.0
            if a >= xs[-1]:
                return 1.0
            k = int(np.searchsorted(xs, a, side="right")) - 1
            t = a - xs[k]
            slope = (ps[k + 1] - ps[k]) / dx[k]
            return float(cum[k] + ps[k] * t + 0.5 * slope * t * t)

        def sf(b):
            return 1.0 - cdf(b)

        # exact segment integrals of x p and x^2 p for linear p
        first = dx / 6.0 * (x0 * (2 * p0 + p1) + x1 * (p0 + 2 * p1))
        second = dx / 12.0 * (p0 * (3 * x0**2 + 2 * x0 * x1 + x1**2) + p1 * (x0**2 + 2 * x0 * x1 + 3 * x1**2))
        mean = float(np.sum(first))
        variance = float(np.sum(second)) - mean**2
        jumps = tuple(float(e) for e, v in ((xs[0], ps[0]), (xs[-1], ps[-1])) if v > 0)
        return Law(pdf=pdf, cdf=cdf, sf=sf, mean=mean, variance=variance, lower=float(xs[0]), upper=float(xs[-1]), jumps=jumps,
                   hard_lower=True, hard_upper=True)


PARAM_MODELS: Dict[str, type[BaseModel]] = {
    "normal": NormalParams,
    "exponential": ExponentialParams,
    "gamma": GammaParams,
    "uniform": UniformParams,
    "laplace": LaplaceParams,
    "gaussian_mixture": MixtureParams,
    "table": TableParams,
}


class DistributionSpec(BaseModel):
    family: FamilyLiteral
    params: Dict[str, Any] = Field(default_factory=dict)
    center_and_scale: bool = False

    @model_validator(mode="after")
    def params_valid(self):
        # surface family-specific problems at construction time
        PARAM_MODELS[self.family].model_validate(self.params)
        return self

    def typed_params(self):
        return PARAM_MODELS[self.family].model_validate(self.params)

    def law(self) -> Law:
        law = self.typed_params().law()
        if self.center_and_scale:
            law = law.affine(law.mean, math.sqrt(law.variance))
        return law

    @property
    def label(self) -> str:
        if not self.params:
            return self.family
        parts = []
        for k in sorted(self.params):
            v = self.params[k]
            parts.append(f"{k}={v}" if not isinstance(v, list) else f"{k}=" + "/".join(f"{x:g}" for x in v))
        return f"{self.family}({','.join(parts)})"


def validate_spec(spec_dict: dict) -> DistributionSpec:
    try:
        return DistributionSpec.model_validate(spec_dict)
    except ValidationError as e:
        raise InvalidParams(str(e)) from e


def parse_params(text: Optional[str]) -> Dict[str, Any]:
    """Parse `k=v,k2=v2` flags; list values are separated by '/' (weights=0.5/0.5).

    List-typed keys always parse to lists, and a trailing '/' forces a list for any key.
    """
    out: Dict[str, Any] = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise InvalidParams(f"malformed parameter '{item}', expected k=v")
        k, v = item.split("=", 1)
        k = k.strip()
        v = v.strip()
        try:
            if "/" in v or k in LIST_KEYS:
                out[k] = [float(x) for x in v.rstrip("/").split("/")]
            else:
                out[k] = float(v)
        except ValueError as e:
            raise InvalidParams(f"parameter {k} is not numeric: {v}") from e
    return out


def standard_mixture() -> DistributionSpec:
    """Two-component mixture 1/2 N(-1, 0.5) + 1/2 N(1, 0.5), variance 1.5."""
    return DistributionSpec(
        family="gaussian_mixture",
        params={"weights": [0.5, 0.5], "means": [-1.0, 1.0], "variances": [0.5, 0.5]},
    )
