from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.ndimage import label

from .errors import DegenerateDensity, DomainTooNarrow, EmptyWindow, GridMismatch, InvalidParams
from .families import DistributionSpec, Law


log = logging.getLogger(__name__)

TAIL_MASS_MAX = 1e-12
BOUNDARY_MASS_MAX = 1e-10
# empty nodes kept outside a hard support edge
EDGE_MARGIN_NODES = 16


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h, dtype=float)
    if n > 1:
        w[0] = w[-1] = 0.5 * h
    return w


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridDensity:
    x_min: float
    h: float
    values: np.ndarray
    mean: float
    variance: float

    @classmethod
    def from_values(cls, x_min: float, h: float, values, renormalize: bool = True) -> "GridDensity":
        if h <= 0:
            raise InvalidParams("grid step must be > 0")
        v = np.clip(np.asarray(values, dtype=float), 0.0, None)
        if v.size < 3:
            raise DegenerateDensity("a grid density needs at least three nodes")
        if not np.all(np.isfinite(v)):
            raise DegenerateDensity("density samples must be finite")
        z = trapezoid(v, dx=h)
        if not z > 0:
            raise DegenerateDensity("density integrates to zero on the grid")
        if renormalize:
            v = v / z
        x = x_min + h * np.arange(v.size)
        w = trapezoid_weights(v.size, h) * v
        mean = float(np.sum(w * x))
        variance = float(np.sum(w * (x - mean) ** 2))
        return cls(x_min=float(x_min), h=float(h), values=_frozen(v), mean=mean, variance=variance)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    @property
    def x_max(self) -> float:
        return self.x_min + self.h * (self.n - 1)

    @property
    def weights(self) -> np.ndarray:
        """Probability weights of the nodes (trapezoid weight times density)."""
        return trapezoid_weights(self.n, self.h) * self.values

    def expect(self, g) -> float:
        return float(np.sum(self.weights * np.asarray(g, dtype=float)))

    def boundary_mass(self) -> float:
        return float((self.values[0] + self.values[-1]) * self.h)

    def check_invariants(self, boundary: bool = True) -> list[str]:
        problems = []
        z = trapezoid(self.values, dx=self.h)
        if abs(z - 1.0) > 1e-8:
            problems.append(f"integral {z!r} differs from 1")
        if boundary and self.boundary_mass() >= BOUNDARY_MASS_MAX:
            problems.append(f"boundary mass {self.boundary_mass():.3e} not negligible")
        x = self.x
        mean = float(np.sum(self.weights * x))
        var = float(np.sum(self.weights * (x - mean) ** 2))
        if abs(mean - self.mean) > 1e-10 or abs(var - self.variance) > 1e-10:
            problems.append("cached moments disagree with the grid")
        return problems

    def header(self) -> Dict[str, float]:
        return {"x_min": self.x_min, "h": self.h, "n": self.n, "mean": self.mean, "variance": self.variance}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "p": self.values})


@dataclass(frozen=True)
class GridFunction:
    x_min: float
    h: float
    values: np.ndarray = field(repr=False)

    @classmethod
    def sample(cls, fn: Callable[[np.ndarray], np.ndarray], x_min: float, h: float, n: int) -> "GridFunction":
        x = x_min + h * np.arange(n)
        return cls(x_min=float(x_min), h=float(h), values=_frozen(np.broadcast_to(fn(x), x.shape)))

    @classmethod
    def on(cls, d: GridDensity, values) -> "GridFunction":
        v = np.asarray(values, dtype=float)
        if v.shape != (d.n,):
            raise GridMismatch("function values do not match the density grid")
        return cls(x_min=d.x_min, h=d.h, values=_frozen(v))

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n)

    @property
    def x_max(self) -> float:
        return self.x_min + self.h * (self.n - 1)

    def on_grid(self, x_min: float, h: float, n: int) -> np.ndarray:
        """Values on another uniform grid; exact when the grids share nodes."""
        x_max = x_min + h * (n - 1)
        slack = 1e-9 * h
        if x_min < self.x_min - slack or x_max > self.x_max + slack:
            raise GridMismatch(
                f"function defined on [{self.x_min:.6g}, {self.x_max:.6g}] but [{x_min:.6g}, {x_max:.6g}] is required"
            )
        if math.isclose(h, self.h, rel_tol=1e-12):
            off = (x_min - self.x_min) / self.h
            k = int(round(off))
            if abs(off - k) < 1e-6:
                return np.asarray(self.values[k : k + n], dtype=float)
        return np.interp(x_min + h * np.arange(n), self.x, self.values)

    def derivative(self) -> np.ndarray:
        return np.gradient(np.asarray(self.values, dtype=float), self.h, edge_order=2)

    def to_frame(self, name: str = "g") -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, name: self.values})


@dataclass(frozen=True)
class GridSpec:
    points: int = 4096
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    halfwidth: float = 12.0  # in standard deviations

    def __post_init__(self):
        if self.points < 16:
            raise InvalidParams("grid needs at least 16 points")
        if self.halfwidth <= 0:
            raise InvalidParams("domain halfwidth must be > 0")
        if self.x_min is not None and self.x_max is not None and not self.x_max > self.x_min:
            raise InvalidParams("grid requires x_max > x_min")


def _domain(law: Law, grid: GridSpec) -> Tuple[float, float, float]:
    n = grid.points
    sd = math.sqrt(law.variance)
    lo = grid.x_min
    hi = grid.x_max
    hard_lo = lo is None and law.hard_lower
    hard_hi = hi is None and law.hard_upper
    if lo is None:
        lo = law.lower if law.hard_lower else min(law.mean - grid.halfwidth * sd, law.lower)
    if hi is None:
        hi = law.upper if law.hard_upper else max(law.mean + grid.halfwidth * sd, law.upper)
    m = EDGE_MARGIN_NODES
    free = n - 1 - m * (int(hard_lo) + int(hard_hi))
    h = (hi - lo) / free
    if hard_lo:
        lo -= m * h
    if hard_hi:
        hi += m * h

    jumps = [a for a in law.jumps if lo < a < hi]
    if len(jumps) >= 2:
        a, b = jumps[0], jumps[-1]
        lead = int(round((a - lo) / h))
        h = (b - a) / int(round((b - a) / h))
        lo = a - lead * h
    elif len(jumps) == 1:
        a = jumps[0]
        lo = a - round((a - lo) / h) * h
    return lo, lo + h * (n - 1), h


def materialize(spec: DistributionSpec, grid: Optional[GridSpec] = None) -> GridDensity:
    grid = grid or GridSpec()
    law = spec.law()
    x_min, x_max, h = _domain(law, grid)
    tail = law.tail_mass(x_min, x_max)
    if tail > TAIL_MASS_MAX:
        raise DomainTooNarrow(f"{spec.label}: mass {tail:.3e} outside [{x_min:.6g}, {x_max:.6g}]")
    x = x_min + h * np.arange(grid.points)
    values = np.asarray(law.pdf(x), dtype=float)
    for a in law.jumps:
        k = int(round((a - x_min) / h))
        if 0 <= k < grid.points and abs(x[k] - a) <= 1e-6 * h:
            values[k] = law.jump_value(a)
    d = GridDensity.from_values(x_min, h, values)
    if d.boundary_mass() >= BOUNDARY_MASS_MAX:
        raise DomainTooNarrow(f"{spec.label}: boundary mass {d.boundary_mass():.3e} on [{x_min:.6g}, {x_max:.6g}]")
    log.debug("materialized %s on [%.6g, %.6g] with %d points, h=%.3e", spec.label, x_min, x_max, grid.points, h)
    return d


def moments(d: GridDensity, r: int, allow_higher: bool = False) -> float:
    if r < 1 or (r > 4 and not allow_higher):
        raise InvalidParams(f"moment order {r} outside 1..4 (pass allow_higher for more)")
    if r == 2:
        return d.variance
    return d.expect((d.x - d.mean) ** r)


def standardize(d: GridDensity) -> GridDensity:
    if not d.variance > 0:
        raise DegenerateDensity("cannot standardize a density with zero variance")
    s = math.sqrt(d.variance)
    return GridDensity.from_values((d.x_min - d.mean) / s, d.h / s, d.values * s)


def rescale(d: GridDensity, a: float) -> GridDensity:
    """Law of aX for a > 0."""
    if not a > 0:
        raise InvalidParams("scale factor must be > 0")
    return GridDensity.from_values(a * d.x_min, a * d.h, d.values / a)


def conditional_truncate(d: GridDensity, T: float) -> GridDensity:
    if not T > 0:
        raise InvalidParams("truncation level must be > 0")
    keep = np.flatnonzero(np.abs(d.x) <= T + 1e-9 * d.h)
    if keep.size < 3 or not np.any(d.values[keep] > 0):
        raise EmptyWindow(f"no mass in [-{T:g}, {T:g}]")
    lo, hi = keep[0], keep[-1] + 1
    return GridDensity.from_values(d.x_min + lo * d.h, d.h, d.values[lo:hi])


def window_mass(d: GridDensity, T: float) -> float:
    inside = np.abs(d.x) <= T + 1e-9 * d.h
    return float(np.sum(d.weights[inside]))


def subsample(d: GridDensity, stride: int, offset: int = 0) -> GridDensity:
    if stride == 1 and offset == 0:
        return d
    return GridDensity.from_values(d.x_min + offset * d.h, d.h * stride, d.values[offset::stride])


def resample(d: GridDensity, h: float) -> GridDensity:
    """Monotone-interpolate d onto a grid of step h spanning the same range."""
    n = int(math.floor((d.x_max - d.x_min) / h + 1e-9)) + 1
    x = d.x_min + h * np.arange(n)
    values = PchipInterpolator(d.x, d.values, extrapolate=False)(x)
    return GridDensity.from_values(d.x_min, h, np.nan_to_num(values, nan=0.0))


def support_window(values: np.ndarray, rel: float = 1e-15, pad: int = 16) -> Tuple[int, int]:
    """Index range [lo, hi) of the above-threshold part of values, widened by pad nodes."""
    top = float(np.max(values))
    idx = np.flatnonzero(values > rel * top)
    if idx.size == 0:
        raise DegenerateDensity("density vanishes on the grid")
    return max(0, idx[0] - pad), min(values.size, idx[-1] + 1 + pad)


def crop(x_min: float, h: float, values: np.ndarray, rel: float = 1e-15, pad: int = 16) -> GridDensity:
    """Build a density from raw samples, dropping sub-threshold tails (numerical noise)."""
    v = np.where(values > rel * np.max(values), values, 0.0)
    lo, hi = support_window(v, rel, pad)
    return GridDensity.from_values(x_min + lo * h, h, v[lo:hi])


def refinement_offset(values: np.ndarray, stride: int) -> int:
    """Sub-grid offset that keeps the node just before the support start.

    Nested sub-grids then share the left support edge, so jumps and kinks
    sit at the same place at every stride.
    """
    pos = np.flatnonzero(values > 0)
    anchor = max(int(pos[0]) - 1, 0) if pos.size else 0
    return anchor % stride


def product_expectation(
    w1: np.ndarray,
    w2: np.ndarray,
    integrand: Callable[[np.ndarray], np.ndarray],
    rows: int = 256,
) -> float:
    """Sum of w1[i] * w2[j] * integrand(i)[., j] over the product grid, in row blocks.

    integrand receives an index block and returns an array of shape (len(block), len(w2)).
    """
    total = 0.0
    for start in range(0, w1.size, rows):
        i = np.arange(start, min(start + rows, w1.size))
        block = np.asarray(integrand(i), dtype=float)
        total += float(np.sum(w1[i] @ (block * w2[None, :])))
    return total


def edge_jumps(v: np.ndarray) -> Tuple[set, set]:
    # a support edge node is a jump when its neighbour is flat, not a ramp from zero
    left, right = set(), set()
    n = v.size
    for k in np.flatnonzero(v > 0):
        if k >= 1 and v[k - 1] == 0 and k + 2 < n:
            if abs(v[k + 2] - v[k + 1]) < 0.25 * abs(v[k + 1] - v[k]):
                left.add(int(k))
        if k + 1 < n and v[k + 1] == 0 and k >= 2:
            if abs(v[k - 2] - v[k - 1]) < 0.25 * abs(v[k - 1] - v[k]):
                right.add(int(k))
    return left, right


def one_sided_limits(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right limits at each node; they differ only on support-edge jumps."""
    v = np.asarray(v, dtype=float)
    lower, upper = v.copy(), v.copy()
    left, right = edge_jumps(v)
    for k in left:
        lower[k], upper[k] = 0.0, 2.0 * v[k]
    for k in right:
        lower[k], upper[k] = 2.0 * v[k], 0.0
    return lower, upper


def refine(d: GridDensity, r: int) -> GridDensity:
    """Cubic-spline refinement by an integer factor r, keeping support-edge jumps sharp.

    A jump node stores the average of its one-sided limits; the spline on the
    support side uses the full one-sided limit instead.
    """
    if r <= 1:
        return d
    v = np.asarray(d.values, dtype=float)
    fine_n = (d.n - 1) * r + 1
    out = np.zeros(fine_n)
    left, right = edge_jumps(v)
    pos = v > 0
    runs, count = label(pos)
    for run in range(1, count + 1):
        idx = np.flatnonzero(runs == run)
        lo, hi = int(idx[0]), int(idx[-1])
        xs = list(range(lo, hi + 1))
        ys = v[lo : hi + 1].copy()
        if lo in left:
            ys[0] = 2.0 * v[lo]
        elif lo > 0:
            xs.insert(0, lo - 1)
            ys = np.concatenate([[0.0], ys])
        if hi in right:
            ys[-1] = 2.0 * v[hi]
        elif hi < d.n - 1:
            xs.append(hi + 1)
            ys = np.concatenate([ys, [0.0]])
        xs = np.asarray(xs, dtype=float)
        a, b = int(xs[0]) * r, int(xs[-1]) * r
        t = np.arange(a, b + 1) / r
        if xs.size >= 4:
            out[a : b + 1] = CubicSpline(xs, ys)(t)
        else:
            out[a : b + 1] = np.interp(t, xs, ys)
        if lo in left:
            out[lo * r] = v[lo]
        if hi in right:
            out[hi * r] = v[hi]
    return GridDensity.from_values(d.x_min, d.h / r, out)


FunctionLike = Union[GridFunction, Callable[[np.ndarray], np.ndarray]]


def sample_function(f: FunctionLike, x_min: float, h: float, n: int) -> np.ndarray:
    """Values of f on a uniform grid; callables are evaluated, grid functions sliced or interpolated."""
    if isinstance(f, GridFunction):
        return f.on_grid(x_min, h, n)
    x = x_min + h * np.arange(n)
    return np.asarray(np.broadcast_to(f(x), x.shape), dtype=float)
