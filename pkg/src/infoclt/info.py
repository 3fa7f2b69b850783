from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.ndimage import find_objects, label

from .density import (
    FunctionLike,
    GridDensity,
    GridFunction,
    edge_jumps,
    moments,
    refinement_offset,
    sample_function,
    standardize,
    subsample,
    trapezoid_weights,
)
from .errors import DegenerateDensity, InvalidParams


log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-12
DIVERGENCE_GROWTH = 0.10
# nested sub-grid strides, coarsest first
REFINE_STRIDES = (8, 4, 2, 1)
MIN_SUBGRID = 16
# observed convergence order is clamped here; second order when it cannot be read off
DEFAULT_ORDER = 2.0
ORDER_RANGE = (1.0, 4.0)
# log-density step between neighbours that marks a jump
JUMP_LOG_STEP = 0.5
SUP_CONSTANT = 1.0 + math.sqrt(6.0 / math.pi)


@dataclass(frozen=True)
class ScoreField:
    score: GridFunction
    valid_mask: np.ndarray = field(repr=False)
    density_ref: GridDensity = field(repr=False)
    floor: float

    def expect(self, g) -> float:
        """Expectation of g under the density, restricted to the mask."""
        w = self.density_ref.weights
        return float(np.sum(np.where(self.valid_mask, w * np.asarray(g, dtype=float), 0.0)))

    def fisher(self) -> float:
        return self.expect(self.score.values**2)

    def mean_score(self) -> float:
        return self.expect(self.score.values)

    def centred_moment(self) -> float:
        """E (X - mean) rho(X); equals -1 for weakly differentiable laws."""
        d = self.density_ref
        return self.expect((d.x - d.mean) * self.score.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.score.x, "rho": self.score.values, "valid": self.valid_mask})


@dataclass(frozen=True)
class InfoSummary:
    fisher_I: float
    standardized_J: float
    rel_entropy_D: float
    sigma2: float
    refinement_trace: List[Tuple[float, float]]
    growth_threshold: float = DIVERGENCE_GROWTH

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.refinement_trace, columns=["h", "value"])


@dataclass(frozen=True)
class DistanceChain:
    sup_diff: float
    tv: float
    hellinger: float
    J: float
    mu_affinity: float
    poincare_lower: float

    def checks(self, slack: float = 1e-6) -> Dict[str, bool]:
        out = {
            "tv_le_2hellinger": self.tv <= 2.0 * self.hellinger + slack,
            "affinity_bound_ge_hellinger": self.poincare_lower >= 2.0 * self.hellinger**2 - slack,
        }
        if math.isfinite(self.J):
            root = math.sqrt(max(self.J, 0.0))
            out["sup_le_sqrtJ"] = self.sup_diff <= SUP_CONSTANT * root + slack
            out["hellinger_le_sqrtJ"] = 2.0 * self.hellinger <= math.sqrt(2.0) * root + slack
            out["J_ge_affinity_bound"] = self.J >= self.poincare_lower - slack
        return out

    def holds(self, slack: float = 1e-6) -> bool:
        return all(self.checks(slack).values())


@dataclass(frozen=True)
class TailProfile:
    radii: List[float]
    psi: List[float]
    sigma2: float
    fisher_I: float

    def is_monotone(self, slack: float = 0.0) -> bool:
        return all(b <= a + slack for a, b in zip(self.psi, self.psi[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"R": self.radii, "psi": self.psi})


@dataclass(frozen=True)
class CramerRaoFamily:
    """Lower bounds on J from E rho^2 >= E(2f' - f^2), for several test functions f."""

    supplied: Optional[float]
    skew_choice: float
    optimal: float


def _check_floor(floor_rel: float):
    if not 0.0 < floor_rel <= 1e-2:
        raise InvalidParams(f"density floor {floor_rel!r} outside (0, 1e-2]")


def _slope(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central differences, second order on the two nodes at each end."""
    out = np.gradient(f, h, edge_order=2)
    if f.size >= 5:
        out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return out


def score(d: GridDensity, floor_rel: float = DEFAULT_FLOOR) -> ScoreField:
    _check_floor(floor_rel)
    p = np.asarray(d.values, dtype=float)
    above = p > floor_rel * p.max()
    logp = np.zeros(d.n)
    logp[above] = np.log(p[above])

    steep = above[:-1] & above[1:] & (np.abs(np.diff(logp)) > JUMP_LOG_STEP)
    zero = p == 0.0
    excluded = np.zeros(d.n, dtype=bool)
    excluded[:-1] |= steep | zero[1:]
    excluded[1:] |= steep | zero[:-1]

    mask = above & ~excluded
    rho = np.zeros(d.n)
    valid = np.zeros(d.n, dtype=bool)
    runs, _ = label(mask)
    for sl in find_objects(runs):
        if sl is None:
            continue
        sl = sl[0]
        if sl.stop - sl.start < 3:
            continue
        rho[sl] = _slope(logp[sl], d.h)
        valid[sl] = True
    if not valid.any():
        raise DegenerateDensity("density is below the floor everywhere; no score can be formed")
    return ScoreField(score=GridFunction.on(d, rho), valid_mask=valid, density_ref=d, floor=floor_rel)


def _fisher_terms(d: GridDensity, floor_rel: float) -> np.ndarray:
    """Per-node quadrature terms of the integral of (p')^2 / p over above-floor nodes."""
    p = np.asarray(d.values, dtype=float)
    above = p > floor_rel * p.max()
    dp = np.gradient(p, d.h)
    out = np.zeros(d.n)
    w = trapezoid_weights(d.n, d.h)
    out[above] = w[above] * dp[above] ** 2 / p[above]
    return out


def _richardson(values: Sequence[float]) -> float:
    """Extrapolate the finest level with the convergence order observed on the three finest."""
    if len(values) < 2:
        return values[-1]
    coarse, fine = values[-2], values[-1]
    order = DEFAULT_ORDER
    if len(values) >= 3:
        step_coarse, step_fine = coarse - values[-3], fine - coarse
        if step_fine != 0.0 and step_coarse / step_fine > 1.0:
            order = float(np.clip(math.log2(step_coarse / step_fine), *ORDER_RANGE))
    return fine + (fine - coarse) / (2.0**order - 1.0)


def fisher_trace(
    d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH
) -> Tuple[float, List[Tuple[float, float]]]:
    """Fisher information with its refinement trace; +inf when every refinement grows it by > growth."""
    _check_floor(floor_rel)
    trace: List[Tuple[float, float]] = []
    for stride in REFINE_STRIDES:
        if d.n // stride < MIN_SUBGRID:
            continue
        sub = subsample(d, stride, refinement_offset(d.values, stride))
        trace.append((sub.h, float(np.sum(_fisher_terms(sub, floor_rel)))))
    values = [v for _, v in trace]
    if len(values) == len(REFINE_STRIDES) and all(b > a * (1.0 + growth) for a, b in zip(values, values[1:])):
        log.warning("Fisher information diverges under refinement: %s", ", ".join(f"{v:.4g}" for v in values))
        return math.inf, trace
    return _richardson(values), trace


def fisher_information(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> float:
    return fisher_trace(d, floor_rel, growth)[0]


def standardized_fisher(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> float:
    fisher_I = fisher_information(d, floor_rel, growth)
    if math.isinf(fisher_I):
        return math.inf
    return d.variance * fisher_I - 1.0


def relative_entropy(d: GridDensity) -> float:
    """Relative entropy from d to the normal with d's mean and variance."""
    p = np.asarray(d.values, dtype=float)
    pos = p > 0
    log_p = np.zeros(d.n)
    log_p[pos] = np.log(p[pos])
    # a jump node holds half its one-sided limit
    left, right = edge_jumps(p)
    for k in left | right:
        log_p[k] = math.log(2.0 * p[k])
    log_phi = stats.norm.logpdf(d.x, loc=d.mean, scale=math.sqrt(d.variance))
    return float(np.sum(d.weights[pos] * (log_p[pos] - log_phi[pos])))


def info_summary(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> InfoSummary:
    fisher_I, trace = fisher_trace(d, floor_rel, growth)
    J = math.inf if math.isinf(fisher_I) else d.variance * fisher_I - 1.0
    return InfoSummary(
        fisher_I=fisher_I,
        standardized_J=J,
        rel_entropy_D=relative_entropy(d),
        sigma2=d.variance,
        refinement_trace=trace,
        growth_threshold=growth,
    )


def distance_chain(
    d: GridDensity,
    floor_rel: float = DEFAULT_FLOOR,
    growth: float = DIVERGENCE_GROWTH,
    J: Optional[float] = None,
) -> DistanceChain:
    z = standardize(d)
    if J is None:
        J = standardized_fisher(z, floor_rel, growth)
    p = np.asarray(z.values, dtype=float)
    phi = stats.norm.pdf(z.x)
    w = trapezoid_weights(z.n, z.h)
    diff = p - phi
    affinity = float(np.sum(w * np.sqrt(p * phi)))
    hellinger_sq = float(np.sum(w * (np.sqrt(p) - np.sqrt(phi)) ** 2))
    return DistanceChain(
        sup_diff=float(np.max(np.abs(diff))),
        tv=float(np.sum(w * np.abs(diff))),
        hellinger=math.sqrt(max(hellinger_sq, 0.0)),
        J=J,
        mu_affinity=affinity,
        poincare_lower=4.0 * (1.0 - affinity**2),
    )


def tail_score_mass(
    d: GridDensity,
    radii: Sequence[float],
    floor_rel: float = DEFAULT_FLOOR,
    growth: float = DIVERGENCE_GROWTH,
) -> TailProfile:
    if any(r < 0 for r in radii):
        raise InvalidParams("radii must be >= 0")
    radii = sorted(float(r) for r in radii)
    fisher_I = fisher_information(d, floor_rel, growth)
    sigma = math.sqrt(d.variance)
    if math.isinf(fisher_I):
        return TailProfile(radii=radii, psi=[math.inf] * len(radii), sigma2=d.variance, fisher_I=fisher_I)
    # tail shares of the raw integral carry the refined total
    terms = _fisher_terms(d, floor_rel)
    total = float(np.sum(terms))
    dist = np.abs(d.x - d.mean)
    psi = []
    for r in radii:
        share = float(np.sum(terms[dist >= sigma * r - 1e-12 * d.h])) / total
        psi.append(d.variance * fisher_I * share)
    return TailProfile(radii=radii, psi=psi, sigma2=d.variance, fisher_I=fisher_I)


def _j_bound(d: GridDensity, f: np.ndarray, fprime: np.ndarray) -> float:
    return d.variance * (2.0 * d.expect(fprime) - d.expect(f**2)) - 1.0


def cramer_rao_family(d: GridDensity, f: Optional[FunctionLike] = None) -> CramerRaoFamily:
    u = d.x - d.mean
    m2, m3, m4 = moments(d, 2), moments(d, 3), moments(d, 4)
    c = m3 / m4

    supplied = None
    if f is not None:
        values = sample_function(f, d.x_min, d.h, d.n)
        supplied = _j_bound(d, values, np.gradient(values, d.h, edge_order=2))

    skew_choice = _j_bound(d, (u - c * u**2) / m2, (1.0 - 2.0 * c * u) / m2)
    a = 1.0 / (m2 - m3 * c)
    optimal = _j_bound(d, a * (u - c * u**2), a * (1.0 - 2.0 * c * u))
    return CramerRaoFamily(supplied=supplied, skew_choice=skew_choice, optimal=optimal)
