from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.ndimage import find_objects, label
from scipy.optimize import brentq
from tenacity import retry, retry_if_exception_type, stop_after_attempt

from .density import (
    FunctionLike,
    GridDensity,
    GridFunction,
    conditional_truncate,
    refinement_offset,
    sample_function,
    subsample,
    trapezoid_weights,
    window_mass,
)
from .errors import ConvergenceError, DegenerateDensity, DisconnectedSupport, EmptyWindow
from .info import DEFAULT_FLOOR, DIVERGENCE_GROWTH


log = logging.getLogger(__name__)

INITIAL_PAIRS = 8
FEASIBLE_TOL = 1e-8
# mass outside the largest above-floor block tolerated before the support counts as split
DISCONNECTED_MASS = 1e-6
MIN_WINDOW_MASS = 1e-3
REFINE_STRIDES = (4, 2)
# floor multiples for the domain-extension trace, innermost first
EXTENSION_LEVELS = (1e6, 1e3, 1.0)
MAX_EXTENSION_LEVEL = 1e-2
EXTRAPOLATION_CAP = 4.0
MIN_BLOCK = 8


@dataclass(frozen=True)
class PoincareEstimate:
    value: float
    extremal: GridFunction = field(repr=False)
    constraint: str
    rayleigh_residual: float
    refinement_trace: List[Tuple[float, float]]
    window_trace: List[Tuple[float, float]]
    support_length: float

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.refinement_trace, columns=["h", "value"])


@dataclass(frozen=True)
class _Operator:
    """Weighted Neumann form on one above-floor block, symmetrized by the mass matrix."""

    block: slice
    mass: np.ndarray
    stiff: np.ndarray
    p_mid: np.ndarray
    diag: np.ndarray
    off: np.ndarray

    @property
    def size(self) -> int:
        return int(self.mass.size)

    def shifted(self, lam: float) -> np.ndarray:
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.off
        ab[1, :] = self.diag - lam
        ab[2, :-1] = self.off
        return ab


@dataclass(frozen=True)
class _Solution:
    value: float
    y: np.ndarray
    op: _Operator


class _BracketError(Exception):
    """Too few eigenpairs to bracket the constrained minimum."""


def _runs(p: np.ndarray, level: float) -> Tuple[List[slice], np.ndarray]:
    runs, _ = label(p > level * p.max())
    blocks = [sl[0] for sl in find_objects(runs)]
    return blocks, np.array([p[sl].sum() for sl in blocks])


def _block(p: np.ndarray, floor_rel: float) -> slice:
    blocks, masses = _runs(p, floor_rel)
    best = int(np.argmax(masses))
    if masses.sum() - masses[best] > DISCONNECTED_MASS * masses.sum():
        raise DisconnectedSupport(f"density splits into {len(blocks)} separated blocks above the floor")
    sl = blocks[best]
    if sl.stop - sl.start < MIN_BLOCK:
        raise DegenerateDensity("too few nodes above the floor for an eigen-solve")
    return sl


def _assemble(d: GridDensity, block: slice) -> _Operator:
    p = np.asarray(d.values[block], dtype=float)
    mass = trapezoid_weights(d.n, d.h)[block] * p
    p_mid = 0.5 * (p[:-1] + p[1:])
    stiff = p_mid / d.h
    diag = np.zeros(p.size)
    diag[:-1] += stiff
    diag[1:] += stiff
    diag /= mass
    off = -stiff / np.sqrt(mass[:-1] * mass[1:])
    return _Operator(block=block, mass=mass, stiff=stiff, p_mid=p_mid, diag=diag, off=off)


def _lowest(op: _Operator, pairs: int) -> Tuple[np.ndarray, np.ndarray]:
    k = min(pairs, op.size)
    return eigh_tridiagonal(op.diag, op.off, select="i", select_range=(0, k - 1))


def _full(op: _Operator) -> _Solution:
    vals, vecs = _lowest(op, 2)
    return _Solution(value=float(vals[1]), y=vecs[:, 1], op=op)


def _constraint(op: _Operator) -> np.ndarray:
    """E g' = 0 in symmetrized coordinates, orthogonal to constants."""
    b = np.zeros(op.size)
    b[:-1] -= op.p_mid
    b[1:] += op.p_mid
    sq = np.sqrt(op.mass)
    c = b / sq
    v0 = sq / np.linalg.norm(sq)
    return c - (c @ v0) * v0


def _secular_root(op: _Operator, c: np.ndarray, a: float, b: float) -> float:
    def f(lam: float) -> float:
        return float(c @ solve_banded((1, 1), op.shifted(lam), c))

    delta = 1e-9 * (b - a)
    lo, hi = a + delta, b - delta
    if f(lo) >= 0.0:
        return lo
    if f(hi) <= 0.0:
        return hi
    try:
        return brentq(f, lo, hi, xtol=1e-14 * b, rtol=1e-12, maxiter=500)
    except RuntimeError as e:
        raise ConvergenceError(f"secular equation did not converge in ({a:.6g}, {b:.6g})") from e


def _restricted(op: _Operator, pairs: int) -> _Solution:
    c = _constraint(op)
    norm = np.linalg.norm(c)
    if norm < 1e-14 * math.sqrt(op.size):
        return _full(op)
    c = c / norm
    vals, vecs = _lowest(op, pairs)
    lam, vecs = vals[1:], vecs[:, 1:]
    coef = vecs.T @ c
    poles = lam[np.abs(coef) > FEASIBLE_TOL]
    feasible = np.flatnonzero(np.abs(coef) <= FEASIBLE_TOL)
    best_feasible = lam[feasible[0]] if feasible.size else math.inf
    leftover = 1.0 - float(coef @ coef)

    if poles.size == 0 or best_feasible < poles[0]:
        if not feasible.size:
            raise _BracketError("no feasible eigenvector among the computed pairs")
        return _Solution(value=float(best_feasible), y=vecs[:, feasible[0]], op=op)
    if poles.size >= 2:
        root = _secular_root(op, c, float(poles[0]), float(poles[1]))
        if best_feasible < root:
            return _Solution(value=float(best_feasible), y=vecs[:, feasible[0]], op=op)
        y = solve_banded((1, 1), op.shifted(root), c)
        return _Solution(value=float(root), y=y / np.linalg.norm(y), op=op)
    if leftover < 1e-14 and feasible.size:
        # the constraint lies along one computed eigenvector; every other one is feasible
        return _Solution(value=float(best_feasible), y=vecs[:, feasible[0]], op=op)
    raise _BracketError(f"only {poles.size} pole(s) among {lam.size} eigenpairs")


class _ConstrainedSolver:
    def __init__(self, op: _Operator):
        self.op = op
        self.pairs = INITIAL_PAIRS

    @retry(stop=stop_after_attempt(3), retry=retry_if_exception_type(_BracketError), reraise=True)
    def solve(self) -> _Solution:
        try:
            return _restricted(self.op, self.pairs)
        except _BracketError:
            log.debug("bracketing failed with %d eigenpairs, doubling", self.pairs)
            self.pairs *= 2
            raise


def _solve(d: GridDensity, block: slice, restricted: bool) -> _Solution:
    op = _assemble(d, block)
    if not restricted:
        return _full(op)
    try:
        return _ConstrainedSolver(op).solve()
    except _BracketError as e:
        raise ConvergenceError(f"restricted eigenproblem could not be bracketed: {e}") from e


def _extremal(d: GridDensity, sol: _Solution) -> Tuple[GridFunction, float]:
    op = sol.op
    g_block = sol.y / np.sqrt(op.mass)
    g_block = g_block / math.sqrt(float(np.sum(op.mass * g_block**2)))
    energy = float(np.sum(op.stiff * np.diff(g_block) ** 2))
    values = np.zeros(d.n)
    values[op.block] = g_block
    residual = abs(1.0 / sol.value - 1.0 / energy) if sol.value > 0 and energy > 0 else math.inf
    return GridFunction.on(d, values), residual


def _extended(p: np.ndarray, floor_rel: float) -> List[slice]:
    """Largest above-level block at each domain-extension level, outermost last."""
    blocks = []
    for scale in EXTENSION_LEVELS:
        level = floor_rel * scale
        if level >= MAX_EXTENSION_LEVEL:
            continue
        candidates, masses = _runs(p, level)
        sl = candidates[int(np.argmax(masses))]
        if sl.stop - sl.start >= MIN_BLOCK and (not blocks or sl != blocks[-1]):
            blocks.append(sl)
    return blocks


def _hard_sides(p: np.ndarray, block: slice) -> Tuple[bool, bool]:
    left = block.start == 0 or p[block.start - 1] <= 0.0
    right = block.stop == p.size or p[block.stop] <= 0.0
    return left, right


def _extrapolate(windows: List[Tuple[float, float]]) -> float:
    """Limit of the constant as the domain grows, from 1/R = a + b/L^2 + c/L^3.

    The correction is capped at EXTRAPOLATION_CAP times the last observed step.
    """
    lengths = np.array([w[0] for w in windows])
    inverse = 1.0 / np.array([w[1] for w in windows])
    last, step = windows[-1][1], windows[-1][1] - windows[-2][1]
    if step <= 0.0:
        return last
    A = np.stack([np.ones_like(lengths), lengths**-2, lengths**-3], axis=1)
    try:
        a = float(np.linalg.solve(A, inverse)[0])
    except np.linalg.LinAlgError:
        return last
    if a <= 0.0:
        return last
    return last + min(max(1.0 / a - last, 0.0), EXTRAPOLATION_CAP * step)


def _estimate(d: GridDensity, restricted: bool, constraint: str, floor_rel: float, growth: float) -> PoincareEstimate:
    p = np.asarray(d.values, dtype=float)
    block = _block(p, floor_rel)
    final = _solve(d, block, restricted)

    trace: List[Tuple[float, float]] = []
    for stride in REFINE_STRIDES:
        if d.n // stride < 4 * MIN_BLOCK:
            continue
        sub = subsample(d, stride, refinement_offset(d.values, stride))
        sol = _solve(sub, _block(np.asarray(sub.values), floor_rel), restricted)
        trace.append((sub.h, 1.0 / sol.value))
    trace.append((d.h, 1.0 / final.value))

    length = (block.stop - block.start - 1) * d.h
    windows: List[Tuple[float, float]] = []
    for sl in _extended(p, floor_rel)[:-1]:
        windows.append(((sl.stop - sl.start - 1) * d.h, 1.0 / _solve(d, sl, restricted).value))
    windows.append((length, 1.0 / final.value))

    value = 1.0 / final.value
    if all(_hard_sides(p, block)):
        log.debug("%s block ends on support edges, no domain extension", constraint)
    elif len(windows) == len(EXTENSION_LEVELS):
        grown = [v for _, v in windows]
        if all(b > a * (1.0 + growth) for a, b in zip(grown, grown[1:])):
            log.warning("%s Poincare constant grows with the domain: %s", constraint, ", ".join(f"{v:.4g}" for v in grown))
            value = math.inf
        else:
            value = _extrapolate(windows)

    extremal, residual = _extremal(d, final)
    return PoincareEstimate(
        value=value,
        extremal=extremal,
        constraint=constraint,
        rayleigh_residual=residual,
        refinement_trace=trace,
        window_trace=windows,
        support_length=length,
    )


def poincare_constant(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> PoincareEstimate:
    return _estimate(d, False, "full", floor_rel, growth)


def restricted_poincare(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> PoincareEstimate:
    return _estimate(d, True, "restricted", floor_rel, growth)


def truncated_poincare(
    d: GridDensity, T: float, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH
) -> PoincareEstimate:
    if window_mass(d, T) <= MIN_WINDOW_MASS:
        raise EmptyWindow(f"mass in [-{T:g}, {T:g}] is below {MIN_WINDOW_MASS:g}")
    return _estimate(conditional_truncate(d, T), False, f"truncated({T:g})", floor_rel, growth)


def borovkov_utev_sides(d: GridDensity, T: float, floor_rel: float = DEFAULT_FLOOR) -> Tuple[float, float]:
    """Right and left tail ratios: sup of the integral of |y| p(y) beyond x, over p(x)."""
    if window_mass(d, T) <= MIN_WINDOW_MASS:
        raise EmptyWindow(f"mass in [-{T:g}, {T:g}] is below {MIN_WINDOW_MASS:g}")
    x = d.x
    idx = np.flatnonzero(np.abs(x) <= T + 1e-9 * d.h)
    xs = x[idx]
    ps = np.asarray(d.values[idx], dtype=float)
    if np.any(ps <= floor_rel * float(np.max(d.values))):
        raise DegenerateDensity(f"density falls below the floor inside [-{T:g}, {T:g}]")
    cum = cumulative_trapezoid(xs * ps, xs, initial=0.0)
    right = xs >= 0
    left = xs <= 0
    right_stat = float(np.max((cum[-1] - cum[right]) / ps[right])) if right.any() else 0.0
    left_stat = float(np.max(-cum[left] / ps[left])) if left.any() else 0.0
    return right_stat, left_stat


def borovkov_utev_ratio(d: GridDensity, T: float, floor_rel: float = DEFAULT_FLOOR) -> float:
    return max(borovkov_utev_sides(d, T, floor_rel))


def rayleigh_quotient(d: GridDensity, g: FunctionLike) -> float:
    """E (g - E g)^2 / E g'^2 with the solver's midpoint discretization."""
    values = sample_function(g, d.x_min, d.h, d.n)
    centred = values - d.expect(values)
    p = np.asarray(d.values, dtype=float)
    energy = float(np.sum(0.5 * (p[:-1] + p[1:]) / d.h * np.diff(values) ** 2))
    if energy <= 0.0:
        return math.inf
    return d.expect(centred**2) / energy
