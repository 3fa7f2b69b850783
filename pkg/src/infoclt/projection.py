from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import signal, stats
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import roots_legendre

from .convolution import common_step, convolve, linear_convolve, score_flux
from .density import (
    FunctionLike,
    GridDensity,
    GridFunction,
    crop,
    product_expectation,
    refine,
    refinement_offset,
    rescale,
    sample_function,
    standardize,
    subsample,
    trapezoid_weights,
)
from .errors import ConvergenceError, InfiniteFisher, InvalidParams, MemoryBudgetError
from .info import DEFAULT_FLOOR, DIVERGENCE_GROWTH, fisher_information, relative_entropy, score, standardized_fisher


log = logging.getLogger(__name__)

MAX_TELESCOPING_N = 8
MAX_TELESCOPING_NODES = 1024
# smoothing kernels are sampled with at least this many nodes per standard deviation
KERNEL_NODES_PER_SD = 4
MAX_REFINE = 64
HALVING_TOL = 5e-2


@dataclass(frozen=True)
class AdditiveProjection:
    g1: GridFunction
    g2: GridFunction
    mu: float
    residual_norm_sq: float
    recentred: bool
    f_mean: float
    f_norm_sq: float
    g1_norm_sq: float
    g2_norm_sq: float

    @property
    def pythagoras_gap(self) -> float:
        return abs(self.f_norm_sq - self.g1_norm_sq - self.g2_norm_sq - self.residual_norm_sq)


@dataclass(frozen=True)
class ProjectionInequalityReport:
    lhs: float
    rhs: float
    slack: float
    beta: float
    I1: float
    I2: float
    I_bar: float
    mu: float
    g1_term: float
    g2_term: float
    derivative_term: float
    vacuous: bool
    passed: bool


@dataclass(frozen=True)
class TelescopingReport:
    n: int
    f_seq: List[GridFunction] = field(repr=False)
    g: GridFunction = field(repr=False)
    t: List[float]
    s: List[float]
    mu: float
    lower_bound_lhs: float
    fisher_I: float
    g_deviation: float
    step_bounds: List[float]
    recursion_gap: float

    def checks(self, tol: float = 2e-3, recursion_tol: float = 1e-6) -> dict:
        scale = max(1.0, abs(self.s[-1]))
        out = {
            "t_nonnegative": all(ti >= -1e-12 * scale for ti in self.t),
            "recursion": self.recursion_gap <= recursion_tol * scale,
            "sum_form": _at_least(self.s[-1], self.lower_bound_lhs, tol),
        }
        for i, (ti, bound) in enumerate(zip(self.t, self.step_bounds), start=1):
            out[f"step_t{i}"] = _at_least(ti, bound, tol)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"i": range(1, self.n + 1), "t": self.t, "s": self.s, "step_bound": self.step_bounds}
        )


@dataclass(frozen=True)
class DeBruijnPath:
    t_nodes: List[float]
    J_path: List[float]
    weights: List[float]
    D_clipped: float
    D_tail: float
    D_integral: float
    D_direct: float
    D_half: Optional[float]
    clip: float

    @property
    def relative_error(self) -> float:
        return abs(self.D_integral - self.D_direct) / max(self.D_direct, 1e-8)

    def to_frame(self) -> pd.DataFrame:
        J = np.asarray(self.J_path)
        w = np.asarray(self.weights)
        return pd.DataFrame({"t": self.t_nodes, "J": J, "weight": w, "integrand": w * J})


@dataclass(frozen=True)
class BankFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(x, dtype=float))


def _at_least(lhs: float, rhs: float, tol: float) -> bool:
    return lhs >= rhs - tol * max(abs(rhs), 1e-9) - 1e-12


def _spline_bump(seed: int, support: float) -> Callable[[np.ndarray], np.ndarray]:
    rng = np.random.default_rng(seed)
    knots = np.linspace(-support, support, 9)
    heights = rng.normal(size=knots.size)
    heights[0] = heights[-1] = 0.0
    spline = CubicSpline(knots, heights, bc_type="clamped")

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= support, spline(np.clip(x, -support, support)), 0.0)

    return fn


def test_function_bank(seed: int = 0, splines: int = 2, support: float = 3.0) -> List[BankFunction]:
    """Linear, Hermite-2 and seeded compactly supported C1 cubic splines."""
    bank = [
        BankFunction("linear", lambda x: x),
        BankFunction("hermite2", lambda x: x**2 - 1.0),
    ]
    for k in range(splines):
        bank.append(BankFunction(f"spline{k}", _spline_bump(seed * 1000 + k, support)))
    return bank


test_function_bank.__test__ = False


@dataclass(frozen=True)
class _PairGrid:
    d1: GridDensity
    d2: GridDensity
    f_sum: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    flux_w2: np.ndarray  # trapezoid weight times p2 * rho2

    def sum_values(self, rows: np.ndarray) -> np.ndarray:
        return self.f_sum[rows[:, None] + np.arange(self.d2.n)[None, :]]


def _pair(f: FunctionLike, d1: GridDensity, d2: GridDensity, floor_rel: float) -> _PairGrid:
    d1, d2 = common_step(d1, d2)
    f_sum = sample_function(f, d1.x_min + d2.x_min, d1.h, d1.n + d2.n - 1)
    flux = score_flux(d2, score(d2, floor_rel))
    return _PairGrid(
        d1=d1,
        d2=d2,
        f_sum=f_sum,
        w1=d1.weights,
        w2=d2.weights,
        flux_w2=trapezoid_weights(d2.n, d2.h) * flux,
    )


def _project(pg: _PairGrid) -> Tuple[AdditiveProjection, _PairGrid]:
    g1 = signal.correlate(pg.f_sum, pg.w2, mode="valid")
    g2 = signal.correlate(pg.f_sum, pg.w1, mode="valid")
    mean = float(pg.w1 @ g1)
    scale = max(1.0, float(np.max(np.abs(pg.f_sum))))
    f_sum = pg.f_sum - mean
    g1 = g1 - mean
    g2 = g2 - mean
    pg = _PairGrid(d1=pg.d1, d2=pg.d2, f_sum=f_sum, w1=pg.w1, w2=pg.w2, flux_w2=pg.flux_w2)

    residual = product_expectation(
        pg.w1, pg.w2, lambda i: (pg.sum_values(i) - g1[i][:, None] - g2[None, :]) ** 2
    )
    weights_sum = linear_convolve(pg.w1, pg.w2)
    proj = AdditiveProjection(
        g1=GridFunction.on(pg.d1, g1),
        g2=GridFunction.on(pg.d2, g2),
        mu=-float(pg.flux_w2 @ g2),
        residual_norm_sq=residual,
        recentred=abs(mean) > 1e-14 * scale,
        f_mean=mean,
        f_norm_sq=float(weights_sum @ f_sum**2),
        g1_norm_sq=float(pg.w1 @ g1**2),
        g2_norm_sq=float(pg.w2 @ g2**2),
    )
    return proj, pg


def additive_projection(
    f: FunctionLike, d1: GridDensity, d2: GridDensity, floor_rel: float = DEFAULT_FLOOR
) -> AdditiveProjection:
    return _project(_pair(f, d1, d2, floor_rel))[0]


def derivative_identity_check(
    f: FunctionLike, d1: GridDensity, d2: GridDensity, floor_rel: float = DEFAULT_FLOOR
) -> float:
    """Masked sup of |g1'(u) + E f(u + Y2) rho2(Y2)| and of |r1(u) + g1'(u) - mu|."""
    proj, pg = _project(_pair(f, d1, d2, floor_rel))
    g1 = np.asarray(proj.g1.values)
    g1_prime = proj.g1.derivative()
    f_rho = signal.correlate(pg.f_sum, pg.flux_w2, mode="valid")
    # r1(u) = E[(f(u + Y2) - g1(u) - g2(Y2)) rho2(Y2)]
    r1 = f_rho - g1 * float(np.sum(pg.flux_w2)) + proj.mu

    p1 = np.asarray(pg.d1.values)
    mask = p1 > floor_rel * p1.max()
    mask[[0, -1]] = False
    identity = float(np.max(np.abs(g1_prime + f_rho)[mask]))
    remainder = float(np.max(np.abs(r1 + g1_prime - proj.mu)[mask]))
    return max(identity, remainder)


def fundamental_theorem_gap(
    f: FunctionLike, d1: GridDensity, d2: GridDensity, floor_rel: float = DEFAULT_FLOOR
) -> float:
    """Sup over the support of |integral of g1' from its left end to u - (g1(u) - g1(left end))|."""
    proj, pg = _project(_pair(f, d1, d2, floor_rel))
    p1 = np.asarray(pg.d1.values)
    inside = np.flatnonzero(p1 > floor_rel * p1.max())
    sl = slice(inside[0], inside[-1] + 1)
    g1 = np.asarray(proj.g1.values)[sl]
    integral = cumulative_trapezoid(proj.g1.derivative()[sl], dx=pg.d1.h, initial=0.0)
    return float(np.max(np.abs(integral - (g1 - g1[0]))))


def prop_main_check(
    f: FunctionLike,
    d1: GridDensity,
    d2: GridDensity,
    h1: Optional[FunctionLike] = None,
    h2: Optional[FunctionLike] = None,
    beta: float = 0.5,
    floor_rel: float = DEFAULT_FLOOR,
    growth: float = DIVERGENCE_GROWTH,
    tol: float = 1e-4,
) -> ProjectionInequalityReport:
    if not 0.0 <= beta <= 1.0:
        raise InvalidParams("beta must lie in [0, 1]")
    proj, pg = _project(_pair(f, d1, d2, floor_rel))
    d1, d2 = pg.d1, pg.d2
    I1 = fisher_information(d1, floor_rel, growth)
    I2 = fisher_information(d2, floor_rel, growth)
    vacuous = math.isinf(I1) or math.isinf(I2)

    h1v = np.zeros(d1.n) if h1 is None else sample_function(h1, d1.x_min, d1.h, d1.n)
    h2v = np.zeros(d2.n) if h2 is None else sample_function(h2, d2.x_min, d2.h, d2.n)
    lhs = product_expectation(pg.w1, pg.w2, lambda i: (pg.sum_values(i) - h1v[i][:, None] - h2v[None, :]) ** 2)

    g1 = np.asarray(proj.g1.values)
    g2 = np.asarray(proj.g2.values)
    g1_term = float(pg.w1 @ (g1 - h1v) ** 2)
    g2_term = float(pg.w2 @ (g2 - h2v) ** 2)
    g1_prime = proj.g1.derivative()
    g2_prime = proj.g2.derivative()
    derivative_term = beta * float(pg.w1 @ (g1_prime - proj.mu) ** 2) + (1.0 - beta) * float(
        pg.w2 @ (g2_prime - proj.mu) ** 2
    )
    I_bar = (1.0 - beta) * I1 + beta * I2
    rhs = g1_term + g2_term + (0.0 if math.isinf(I_bar) else derivative_term / I_bar)
    slack = lhs - rhs
    return ProjectionInequalityReport(
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        beta=beta,
        I1=I1,
        I2=I2,
        I_bar=I_bar,
        mu=proj.mu,
        g1_term=g1_term,
        g2_term=g2_term,
        derivative_term=derivative_term,
        vacuous=vacuous,
        passed=slack >= -tol,
    )


def _coarsen(d: GridDensity, max_nodes: int) -> GridDensity:
    z = standardize(d)
    z = crop(z.x_min, z.h, np.asarray(z.values))
    stride = math.ceil(z.n / max_nodes)
    if stride > 1:
        z = subsample(z, stride, refinement_offset(z.values, stride))
    return standardize(z)


def telescoping_decomposition(
    f: FunctionLike,
    d: GridDensity,
    n: int,
    floor_rel: float = DEFAULT_FLOOR,
    growth: float = DIVERGENCE_GROWTH,
    max_nodes: int = MAX_TELESCOPING_NODES,
) -> TelescopingReport:
    if n < 1:
        raise InvalidParams("n must be >= 1")
    if n > MAX_TELESCOPING_N:
        raise MemoryBudgetError(f"n={n} exceeds the two-dimensional quadrature budget (n <= {MAX_TELESCOPING_N})")
    fisher_I = fisher_information(standardize(d), floor_rel, growth)
    if math.isinf(fisher_I):
        raise InfiniteFisher("telescoping bounds need a finite Fisher information")

    x = _coarsen(d, max_nodes)
    w = x.weights
    rn = math.sqrt(n)
    step = x.h / rn

    # partial sums of m summands live on the lattice m * x_min / sqrt(n) + k * step
    W = [np.ones(1)]
    for _ in range(n):
        W.append(linear_convolve(W[-1], w))
    f_n = sample_function(f, n * x.x_min / rn, step, n * (x.n - 1) + 1)
    f_n = f_n - float(W[n] @ f_n)
    fs = [np.zeros(1)] * (n + 1)
    fs[n] = f_n
    for m in range(n - 1, -1, -1):
        fs[m] = signal.correlate(fs[m + 1], w, mode="valid")

    g = rn * signal.correlate(f_n, W[n - 1], mode="valid")
    g_sq = float(w @ g**2)
    mu = float(W[n] @ np.gradient(f_n, step, edge_order=2))
    g_deviation = float(w @ (np.gradient(g, x.h, edge_order=2) - mu) ** 2)

    s = [float(W[m] @ fs[m] ** 2) - m / n * g_sq for m in range(1, n + 1)]
    t = []
    for i in range(1, n + 1):
        upper, lower = fs[i], fs[i - 1]

        def integrand(rows, upper=upper, lower=lower):
            return (upper[rows[:, None] + np.arange(x.n)[None, :]] - lower[rows][:, None] - g[None, :] / rn) ** 2

        t.append(product_expectation(W[i - 1], w, integrand))

    previous = [0.0] + s[:-1]
    recursion_gap = max(abs(sm - sp - tm) for sm, sp, tm in zip(s, previous, t))
    step_bounds = [(i - 1) / (n * fisher_I) * g_deviation for i in range(1, n + 1)]
    f_seq = [GridFunction(x_min=m * x.x_min / rn, h=step, values=fs[m]) for m in range(1, n + 1)]
    log.debug("telescoping n=%d: s_n=%.6g, sum-form bound %.6g", n, s[-1], (n - 1) / (2 * fisher_I) * g_deviation)
    return TelescopingReport(
        n=n,
        f_seq=f_seq,
        g=GridFunction.on(x, g),
        t=t,
        s=s,
        mu=mu,
        lower_bound_lhs=(n - 1) / (2.0 * fisher_I) * g_deviation,
        fisher_I=fisher_I,
        g_deviation=g_deviation,
        step_bounds=step_bounds,
        recursion_gap=recursion_gap,
    )


def smoothed(z: GridDensity, t: float) -> GridDensity:
    """Density of sqrt(1 - t) X + sqrt(t) Z for X ~ z and an independent standard normal Z."""
    x = rescale(z, math.sqrt(1.0 - t))
    sd = math.sqrt(t)
    r = min(MAX_REFINE, max(1, math.ceil(KERNEL_NODES_PER_SD * x.h / sd)))
    x = refine(x, r)
    half = max(1, math.ceil(12.0 * sd / x.h))
    k = np.arange(-half, half + 1)
    kernel = GridDensity.from_values(-half * x.h, x.h, stats.norm.pdf(k * x.h, scale=sd))
    return convolve(x, kernel)


def _path(z: GridDensity, nodes: int, clip: float, floor_rel: float, growth: float, max_workers: int):
    roots, wts = roots_legendre(nodes)
    u = 0.5 * (roots + 1.0)
    # sin^2 clusters nodes at both ends of (0, 1 - clip)
    t = (1.0 - clip) * np.sin(0.5 * math.pi * u) ** 2
    dt = (1.0 - clip) * 0.5 * math.pi * np.sin(math.pi * u)
    weights = 0.5 * wts * dt / (2.0 * (1.0 - t))

    def J_at(ti: float) -> float:
        return standardized_fisher(smoothed(z, float(ti)), floor_rel, growth)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        J = list(pool.map(J_at, t))
    return t, np.asarray(J), weights


def _endpoint_tail(t: np.ndarray, J: np.ndarray, clip: float) -> float:
    """Power law J ~ c (1 - t)^a fitted on the last two nodes, integrated over (1 - clip, 1)."""
    (ta, tb), (Ja, Jb) = t[-2:], J[-2:]
    if not (Ja > 0 and Jb > 0) or Ja <= Jb:
        return 0.0
    a = math.log(Ja / Jb) / math.log((1.0 - ta) / (1.0 - tb))
    c = Jb / (1.0 - tb) ** a
    return c * clip**a / (2.0 * a)


def debruijn_entropy(
    d: GridDensity,
    nodes: int = 48,
    clip: float = 1e-4,
    floor_rel: float = DEFAULT_FLOOR,
    growth: float = DIVERGENCE_GROWTH,
    max_workers: int = 1,
    check_halving: bool = True,
) -> DeBruijnPath:
    if nodes < 4:
        raise InvalidParams("de Bruijn path needs at least 4 nodes")
    if not 0.0 < clip < 0.5:
        raise InvalidParams("clip must lie in (0, 0.5)")
    z = standardize(d)
    t, J, weights = _path(z, nodes, clip, floor_rel, growth, max_workers)
    D_clipped = float(weights @ J)
    D_tail = _endpoint_tail(t, J, clip)
    D_integral = D_clipped + D_tail

    D_half = None
    if check_halving:
        th, Jh, wh = _path(z, nodes // 2, clip, floor_rel, growth, max_workers)
        D_half = float(wh @ Jh) + _endpoint_tail(th, Jh, clip)
        if abs(D_half - D_integral) > HALVING_TOL * max(abs(D_integral), 1e-8) + 1e-8:
            raise ConvergenceError(
                f"de Bruijn quadrature unstable under node halving: {D_half:.6g} vs {D_integral:.6g}"
            )

    return DeBruijnPath(
        t_nodes=t.tolist(),
        J_path=J.tolist(),
        weights=weights.tolist(),
        D_clipped=D_clipped,
        D_tail=D_tail,
        D_integral=D_integral,
        D_direct=relative_entropy(z),
        D_half=D_half,
        clip=clip,
    )
