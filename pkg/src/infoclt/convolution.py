from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal
from scipy.fft import irfft, next_fast_len, rfft

from .density import GridDensity, GridFunction, crop, one_sided_limits, product_expectation, resample, standardize
from .errors import AliasingError, DegenerateDensity, InfiniteFisher, InvalidParams, MemoryBudgetError
from .info import DEFAULT_FLOOR, DIVERGENCE_GROWTH, ScoreField, fisher_information, score


log = logging.getLogger(__name__)

MAX_N = 4096
MAX_CONV_POINTS = 1 << 22
MAX_SPECTRAL_POINTS = 1 << 24
# size product below which convolution sums are formed directly (exact tails)
DIRECT_LIMIT = 1 << 26
ALIAS_EDGE_NODES = 8
ALIAS_MASS_MAX = 1e-9
# standardized Fisher values below this are treated as the Gaussian fixed point
J_ZERO = 1e-6


@dataclass(frozen=True)
class SumSequence:
    base: GridDensity
    entries: Dict[int, GridDensity]
    doubling_index: List[int]

    def __getitem__(self, n: int) -> GridDensity:
        return self.entries[n]

    def doubling(self, k: int) -> GridDensity:
        return self.entries[2**k]

    def to_frame(self) -> pd.DataFrame:
        frames = [pd.DataFrame({"n": n, "x": d.x, "p": d.values}) for n, d in self.entries.items()]
        return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class FisherDropReport:
    I_single: float
    I_pair_scaled: float
    drop: float
    residual_sq: float
    identity_gap: float
    lambda_opt: float
    J_single: float
    J_pair: float
    additive_score_sq: float

    @property
    def relative_gap(self) -> float:
        return self.identity_gap / max(self.drop, 1e-8)

    def intermediate_holds(self, tol: float = 1e-4) -> bool:
        """E(g(Y) + Y)^2 >= J'^2 / J, the Cauchy-Schwarz step behind the two-fold bound."""
        if self.J_single <= J_ZERO:
            return True
        return self.additive_score_sq >= self.J_pair**2 / self.J_single - tol


def common_step(d1: GridDensity, d2: GridDensity) -> Tuple[GridDensity, GridDensity]:
    if math.isclose(d1.h, d2.h, rel_tol=1e-9):
        return d1, d2
    if d1.h > d2.h:
        return resample(d1, d2.h), d2
    return d1, resample(d2, d1.h)


def linear_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    method = "direct" if a.size * b.size <= DIRECT_LIMIT else "fft"
    return signal.convolve(a, b, mode="full", method=method)


def score_flux(d: GridDensity, s: ScoreField) -> np.ndarray:
    """p * rho on the score mask, p' by central differences elsewhere."""
    p = np.asarray(d.values, dtype=float)
    return np.where(s.valid_mask, p * s.score.values, np.gradient(p, d.h))


def convolve(d1: GridDensity, d2: GridDensity) -> GridDensity:
    d1, d2 = common_step(d1, d2)
    if d1.n + d2.n - 1 > MAX_CONV_POINTS:
        raise MemoryBudgetError(f"convolution needs {d1.n + d2.n - 1} points, budget is {MAX_CONV_POINTS}")
    values = linear_convolve(d1.values, d2.values) * d1.h
    return crop(d1.x_min + d2.x_min, d1.h, values)


def _spectral_power(d: GridDensity, n: int, half_span: float) -> GridDensity:
    h = d.h
    size = next_fast_len(max(int(math.ceil(4.0 * math.sqrt(n) * half_span / h)), 2 * d.n))
    if size > MAX_SPECTRAL_POINTS:
        raise MemoryBudgetError(f"n={n} needs a spectral grid of {size} points")
    spectrum = rfft(np.asarray(d.values) * h, n=size)
    lower, upper = one_sided_limits(d.values)
    if n >= 2 and np.any(lower != upper):
        # pair left with right limits so coincident jumps meet at their average product
        paired = rfft(lower * h, n=size) * rfft(upper * h, n=size)
        powered = paired * spectrum ** (n - 2)
    else:
        powered = spectrum**n
    circular = irfft(powered, n=size) / h
    # the window is centred on the linear index of the sum's mean
    start = int(round(n * (d.mean - d.x_min) / h)) - size // 2
    window = circular[(start + np.arange(size)) % size]
    edge = ALIAS_EDGE_NODES
    edge_mass = h * float(np.sum(np.abs(window[:edge])) + np.sum(np.abs(window[-edge:])))
    if edge_mass >= ALIAS_MASS_MAX:
        raise AliasingError(f"n={n}: mass {edge_mass:.3e} at the spectral window edge")
    log.debug("n=%d on a spectral grid of %d points, edge mass %.2e", n, size, edge_mass)
    return standardize(crop(n * d.x_min + start * h, h, window))


def standardized_sums(d: GridDensity, n_set: Sequence[int], max_workers: int = 1) -> SumSequence:
    ns = [int(n) for n in n_set]
    if not ns or ns != sorted(set(ns)) or ns[0] < 1 or ns[-1] > MAX_N:
        raise InvalidParams(f"n_set must be sorted distinct integers in 1..{MAX_N}")
    entries: Dict[int, GridDensity] = {}
    if ns[0] == 1:
        entries[1] = standardize(d)
    powered = [n for n in ns if n > 1]
    if powered:
        half_span = max(d.mean - d.x_min, d.x_max - d.mean)
        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            results = list(pool.map(lambda n: _spectral_power(d, n, half_span), powered))
        entries.update(zip(powered, results))
    doubling = [k for k in range(13) if 2**k in entries]
    return SumSequence(base=d, entries=dict(sorted(entries.items())), doubling_index=doubling)


def sum_score_projection(d1: GridDensity, d2: GridDensity, floor_rel: float = DEFAULT_FLOOR) -> ScoreField:
    """Score of Y1 + Y2 as E[rho2(Y2) | Y1 + Y2]; only d2 needs a score."""
    d1, d2 = common_step(d1, d2)
    flux = score_flux(d2, score(d2, floor_rel))
    den = linear_convolve(d1.values, d2.values) * d1.h
    num = linear_convolve(d1.values, flux) * d1.h
    above = den > floor_rel * den.max()
    if not above.any():
        raise DegenerateDensity("density of the sum is below the floor everywhere")
    rho_bar = np.zeros_like(den)
    rho_bar[above] = num[above] / den[above]
    s = GridDensity.from_values(d1.x_min + d2.x_min, d1.h, den)
    return ScoreField(score=GridFunction.on(s, rho_bar), valid_mask=above, density_ref=s, floor=floor_rel)


def fisher_drop(d: GridDensity, floor_rel: float = DEFAULT_FLOOR, growth: float = DIVERGENCE_GROWTH) -> FisherDropReport:
    z = standardize(d)
    I_single = fisher_information(z, floor_rel, growth)
    if math.isinf(I_single):
        raise InfiniteFisher("the Fisher drop needs a finite Fisher information")

    s = score(z, floor_rel)
    p = np.asarray(z.values, dtype=float)
    h = z.h
    den = linear_convolve(p, p) * h
    num = linear_convolve(p, score_flux(z, s)) * h
    # sum density kept uncropped so node i + j of the sum grid is y_i + y_j
    pair = GridDensity.from_values(2.0 * z.x_min, h, den)
    I_pair_scaled = 2.0 * fisher_information(pair, floor_rel, growth)

    above = den > floor_rel * den.max()
    rho_bar = np.where(above, num / np.where(above, den, 1.0), 0.0)

    w = z.weights
    idx = np.flatnonzero(s.valid_mask)
    rho = s.score.values[idx]
    wm = w[idx]

    def integrand(rows: np.ndarray) -> np.ndarray:
        k = idx[rows][:, None] + idx[None, :]
        return np.where(above[k], (rho_bar[k] - 0.5 * (rho[rows][:, None] + rho[None, :])) ** 2, 0.0)

    residual_sq = 2.0 * product_expectation(wm, wm, integrand)
    drop = I_single - I_pair_scaled

    J_single = z.variance * I_single - 1.0
    J_pair = 0.5 * pair.variance * I_pair_scaled - 1.0
    lambda_opt = J_pair / J_single if J_single > J_ZERO else 0.0

    g = 2.0 * signal.correlate(rho_bar, w, mode="valid")
    additive_score_sq = z.expect((g + z.x) ** 2)

    log.debug("Fisher drop %.6g vs residual %.6g", drop, residual_sq)
    return FisherDropReport(
        I_single=I_single,
        I_pair_scaled=I_pair_scaled,
        drop=drop,
        residual_sq=residual_sq,
        identity_gap=abs(drop - residual_sq),
        lambda_opt=lambda_opt,
        J_single=J_single,
        J_pair=J_pair,
        additive_score_sq=additive_score_sq,
    )
