from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd

from .config import ToleranceConfig
from .convolution import fisher_drop, standardized_sums
from .density import GridDensity, GridSpec, materialize, moments, rescale
from .errors import InfiniteFisher, InvalidParams
from .families import DistributionSpec, validate_spec
from .info import (
    CramerRaoFamily,
    DistanceChain,
    cramer_rao_family,
    distance_chain,
    fisher_information,
    relative_entropy,
    standardized_fisher,
    tail_score_mass,
)
from .poincare import poincare_constant, restricted_poincare


log = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
VACUOUS = "vacuous"
# shown with its slack but neither passed nor failed
REPORTED = "reported"

SWEEP_COLUMNS = [
    "n",
    "J",
    "bound_J_sharp",
    "bound_J_thm",
    "D",
    "bound_D",
    "skew_floor",
    "nJ",
    "sup_diff",
    "tv",
    "hellinger",
    "flags",
]


@dataclass(frozen=True)
class Check:
    name: str
    status: str
    slack: float = math.nan

    @property
    def failed(self) -> bool:
        return self.status == FAIL


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _upper(value: float, bound: float, slack: float) -> str:
    """value <= bound; an infinite bound makes the check vacuous."""
    if math.isinf(bound):
        return VACUOUS
    if math.isinf(value):
        return FAIL
    return _status(value <= bound + slack)


@dataclass(frozen=True)
class SweepConstants:
    R: float
    R_star: float
    sigma2: float
    J_X: float
    D_X: float
    skewness_s: float


@dataclass(frozen=True)
class SweepRow:
    n: int
    J: float
    D: float
    bound_J_thm: float
    bound_J_sharp: float
    bound_D: float
    skew_floor: float
    nJ: float
    distances: DistanceChain
    flags: Dict[str, str]

    def csv_record(self) -> dict:
        return {
            "n": self.n,
            "J": self.J,
            "bound_J_sharp": self.bound_J_sharp,
            "bound_J_thm": self.bound_J_thm,
            "D": self.D,
            "bound_D": self.bound_D,
            "skew_floor": self.skew_floor,
            "nJ": self.nJ,
            "sup_diff": self.distances.sup_diff,
            "tv": self.distances.tv,
            "hellinger": self.distances.hellinger,
            "flags": ";".join(f"{k}={v}" for k, v in sorted(self.flags.items())),
        }


def row_flags(
    n: int,
    J: float,
    D: float,
    bound_J_sharp: float,
    bound_J_thm: float,
    bound_D: float,
    skew_floor: float,
    distances: DistanceChain,
    constants: SweepConstants,
    slack: float,
) -> Dict[str, str]:
    ordered = 2.0 * constants.R_star >= constants.sigma2
    J_thm = _upper(J, bound_J_thm, slack)
    flags = {
        "J_sharp": _upper(J, bound_J_sharp, slack),
        # the 1/n form follows from the sharp one only when 2R* >= sigma^2
        "J_thm": J_thm if ordered or J_thm == VACUOUS else REPORTED,
        "D": _upper(D, bound_D, slack),
        "skew_floor": VACUOUS if math.isinf(J) else _status(J >= skew_floor - slack),
        "distances": VACUOUS if math.isinf(J) else _status(distances.holds(slack)),
    }
    if math.isfinite(bound_J_thm) and ordered:
        flags["chain_order"] = _status(bound_J_sharp <= bound_J_thm + slack)
    return flags


@dataclass(frozen=True)
class SweepReport:
    family: DistributionSpec
    rows: List[SweepRow]
    constants: SweepConstants
    slack: float

    def checks(self) -> List[Check]:
        out = []
        for row in self.rows:
            for name, status in sorted(row.flags.items()):
                out.append(Check(f"o1n[n={row.n}].{name}", status))
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.csv_record() for r in self.rows], columns=SWEEP_COLUMNS)


@dataclass(frozen=True)
class TwoFoldReport:
    J_single: float
    J_pair: float
    bound: float
    R_star: float
    sigma2: float
    additive_score_sq: float
    lambda_opt: float
    vacuous: bool
    passed: bool
    intermediate_passed: bool

    @property
    def slack(self) -> float:
        return self.bound - self.J_pair

    def checks(self) -> List[Check]:
        if self.vacuous:
            return [Check("two_fold", VACUOUS), Check("two_fold.intermediate", VACUOUS)]
        return [
            Check("two_fold", _status(self.passed), self.slack),
            Check("two_fold.intermediate", _status(self.intermediate_passed)),
        ]


@dataclass(frozen=True)
class SkewnessRow:
    n: int
    J: float
    floor: float
    nJ: float
    bounds: CramerRaoFamily
    passed: bool


@dataclass(frozen=True)
class SkewnessReport:
    skewness_s: float
    asymptote: float
    rows: List[SkewnessRow]
    asymptote_holds: bool
    # the limit statement is only checked at finite n on the exponential law
    asymptote_asserted: bool = False

    def checks(self) -> List[Check]:
        out = []
        for r in self.rows:
            out.append(Check(f"skew_floor[n={r.n}]", VACUOUS if math.isinf(r.J) else _status(r.passed), r.J - r.floor))
        out.append(Check("skew_asymptote", _status(self.asymptote_holds) if self.asymptote_asserted else REPORTED))
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "n": [r.n for r in self.rows],
                "J": [r.J for r in self.rows],
                "floor": [r.floor for r in self.rows],
                "nJ": [r.nJ for r in self.rows],
                "cramer_rao_skew": [r.bounds.skew_choice for r in self.rows],
                "cramer_rao_optimal": [r.bounds.optimal for r in self.rows],
            }
        )


@dataclass(frozen=True)
class DoublingReport:
    ks: List[int]
    J: List[float]
    first_finite: Optional[int]
    differences: List[float]
    nonincreasing: bool
    differences_shrink: bool

    def checks(self) -> List[Check]:
        if self.first_finite is None:
            return [Check("doubling", VACUOUS)]
        return [
            Check("doubling.nonincreasing", _status(self.nonincreasing)),
            Check("doubling.differences_shrink", _status(self.differences_shrink)),
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": self.ks, "n": [2**k for k in self.ks], "J": self.J})


@dataclass(frozen=True)
class TailClassReport:
    n_set: List[int]
    radii: List[float]
    psi: List[List[float]]
    columns_monotone: List[bool]
    envelope: List[float]
    envelope_decays: bool

    def checks(self) -> List[Check]:
        out = [Check(f"tail_class[n={n}]", _status(ok)) for n, ok in zip(self.n_set, self.columns_monotone)]
        out.append(Check("tail_class.envelope", _status(self.envelope_decays)))
        return out

    def to_frame(self) -> pd.DataFrame:
        records = [
            {"n": n, "R": r, "psi": v} for n, row in zip(self.n_set, self.psi) for r, v in zip(self.radii, row)
        ]
        return pd.DataFrame(records, columns=["n", "R", "psi"])


@dataclass(frozen=True)
class AgreementReport:
    J_single: float
    J_pair_convolution: float
    J_pair_drop: float
    relative_gap: float
    vacuous: bool
    passed: bool

    def checks(self) -> List[Check]:
        return [Check("cross_module", VACUOUS if self.vacuous else _status(self.passed), self.relative_gap)]


@dataclass(frozen=True)
class ScaleRow:
    factor: float
    J: float
    D: float
    I_ratio: float


@dataclass(frozen=True)
class ScaleReport:
    J: float
    D: float
    rows: List[ScaleRow]
    passed: bool

    def checks(self) -> List[Check]:
        return [Check("scale_invariance", _status(self.passed))]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=["factor", "J", "D", "I_ratio"])


@dataclass
class VerifyReport:
    family: DistributionSpec
    sweep: SweepReport
    two_fold: TwoFoldReport
    skewness: SkewnessReport
    doubling: DoublingReport
    tail_class: TailClassReport
    agreement: AgreementReport
    scale: ScaleReport
    discrete: Optional[SweepReport] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def checks(self) -> List[Check]:
        out: List[Check] = []
        for part in (self.sweep, self.two_fold, self.skewness, self.doubling, self.tail_class, self.agreement, self.scale):
            out.extend(part.checks())
        if self.discrete is not None:
            out.extend(Check(f"discrete.{c.name}", c.status, c.slack) for c in self.discrete.checks())
        return out


def _tolerances(tol: Optional[ToleranceConfig]) -> ToleranceConfig:
    return tol or ToleranceConfig()


def sweep_constants(d: GridDensity, tol: ToleranceConfig) -> SweepConstants:
    R = poincare_constant(d, tol.floor_rel, tol.growth).value
    R_star = restricted_poincare(d, tol.floor_rel, tol.growth).value
    return SweepConstants(
        R=R,
        R_star=R_star,
        sigma2=d.variance,
        J_X=standardized_fisher(d, tol.floor_rel, tol.growth),
        D_X=relative_entropy(d),
        skewness_s=moments(d, 3) / d.variance**1.5,
    )


def _sweep_row(n: int, u: GridDensity, c: SweepConstants, tol: ToleranceConfig) -> SweepRow:
    J = standardized_fisher(u, tol.floor_rel, tol.growth)
    D = relative_entropy(u)
    if math.isinf(c.J_X) or math.isinf(c.R_star):
        bound_J_thm = bound_J_sharp = math.inf
    else:
        bound_J_thm = 2.0 * c.R_star * c.J_X / (n * c.sigma2)
        bound_J_sharp = 2.0 * c.R_star * c.J_X / (2.0 * c.R_star + (n - 1) * c.sigma2)
    bound_D = math.inf if math.isinf(c.R) else 2.0 * c.R * c.D_X / (n * c.sigma2)
    m2, m3, m4 = moments(u, 2), moments(u, 3), moments(u, 4)
    skew_floor = m3**2 / (m2 * m4)
    distances = distance_chain(u, tol.floor_rel, tol.growth, J=J)
    flags = row_flags(n, J, D, bound_J_sharp, bound_J_thm, bound_D, skew_floor, distances, c, tol.slack)
    return SweepRow(
        n=n,
        J=J,
        D=D,
        bound_J_thm=bound_J_thm,
        bound_J_sharp=bound_J_sharp,
        bound_D=bound_D,
        skew_floor=skew_floor,
        nJ=n * J,
        distances=distances,
        flags=flags,
    )


def verify_o1n(
    spec: DistributionSpec,
    n_set: Sequence[int],
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
) -> SweepReport:
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    constants = sweep_constants(d, tol)
    sums = standardized_sums(d, n_set, max_workers)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = {n: pool.submit(_sweep_row, n, sums[n], constants, tol) for n in sums.entries}
        rows = [futures[n].result() for n in sorted(futures)]
    log.info("%s: swept n=%s, R=%.6g, R*=%.6g", spec.label, ",".join(map(str, sorted(futures))), constants.R, constants.R_star)
    return SweepReport(family=spec, rows=rows, constants=constants, slack=tol.slack)


def verify_two_fold(spec: DistributionSpec, grid: Optional[GridSpec] = None, tol: Optional[ToleranceConfig] = None) -> TwoFoldReport:
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    R_star = restricted_poincare(d, tol.floor_rel, tol.growth).value
    try:
        drop = fisher_drop(d, tol.floor_rel, tol.growth)
    except InfiniteFisher:
        log.info("%s: infinite Fisher information, two-fold bound is vacuous", spec.label)
        return TwoFoldReport(
            J_single=math.inf,
            J_pair=math.nan,
            bound=math.inf,
            R_star=R_star,
            sigma2=d.variance,
            additive_score_sq=math.nan,
            lambda_opt=math.nan,
            vacuous=True,
            passed=True,
            intermediate_passed=True,
        )
    vacuous = math.isinf(R_star)
    ratio = 1.0 if vacuous else 2.0 * R_star / (d.variance + 2.0 * R_star)
    bound = drop.J_single * ratio
    return TwoFoldReport(
        J_single=drop.J_single,
        J_pair=drop.J_pair,
        bound=bound,
        R_star=R_star,
        sigma2=d.variance,
        additive_score_sq=drop.additive_score_sq,
        lambda_opt=drop.lambda_opt,
        vacuous=vacuous,
        passed=drop.J_pair <= bound + tol.slack,
        intermediate_passed=drop.intermediate_holds(tol.intermediate),
    )


def skewness_floor(
    spec: DistributionSpec,
    n_set: Sequence[int],
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
) -> SkewnessReport:
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    s = moments(d, 3) / d.variance**1.5
    sums = standardized_sums(d, n_set, max_workers)
    rows = []
    for n, u in sums.entries.items():
        J = standardized_fisher(u, tol.floor_rel, tol.growth)
        m2, m3, m4 = moments(u, 2), moments(u, 3), moments(u, 4)
        floor = m3**2 / (m2 * m4)
        bounds = cramer_rao_family(u)
        passed = math.isinf(J) or (J >= floor - tol.slack and J >= bounds.optimal - tol.slack)
        rows.append(SkewnessRow(n=n, J=J, floor=floor, nJ=n * J, bounds=bounds, passed=passed))
    asymptote = s**2 / 3.0
    finite = [r for r in rows if math.isfinite(r.J) and r.n > 1]
    asymptote_holds = all(r.nJ >= asymptote - tol.slack for r in finite)
    return SkewnessReport(
        skewness_s=s,
        asymptote=asymptote,
        rows=rows,
        asymptote_holds=asymptote_holds,
        asymptote_asserted=spec.family == "exponential",
    )


def monotone_doubling(
    spec: DistributionSpec,
    k_max: int,
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
) -> DoublingReport:
    if not 1 <= k_max <= 12:
        raise InvalidParams("k_max must lie in 1..12")
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    ks = list(range(k_max + 1))
    sums = standardized_sums(d, [2**k for k in ks], max_workers)
    J = [standardized_fisher(sums.doubling(k), tol.floor_rel, tol.growth) for k in ks]

    first = next((k for k in ks if k <= 2 and math.isfinite(J[k])), None)
    if first is None:
        return DoublingReport(ks=ks, J=J, first_finite=None, differences=[], nonincreasing=True, differences_shrink=True)
    tail = J[first:]
    differences = [a - b for a, b in zip(tail, tail[1:])]
    nonincreasing = all(math.isfinite(v) for v in tail) and all(dv >= -tol.slack for dv in differences)
    differences_shrink = all(b <= a + tol.slack for a, b in zip(differences, differences[1:]))
    return DoublingReport(
        ks=ks,
        J=J,
        first_finite=2**first,
        differences=differences,
        nonincreasing=nonincreasing,
        differences_shrink=differences_shrink,
    )


def tail_class_profile(
    spec: DistributionSpec,
    n_set: Sequence[int],
    radii: Sequence[float],
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
) -> TailClassReport:
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    sums = standardized_sums(d, n_set, max_workers)
    profiles = [tail_score_mass(u, radii, tol.floor_rel, tol.growth) for u in sums.entries.values()]
    psi = [p.psi for p in profiles]
    monotone = [p.is_monotone(tol.slack) for p in profiles]
    finite = [row for row in psi if all(math.isfinite(v) for v in row)]
    envelope = [max(col) for col in zip(*finite)] if finite else [math.inf] * len(profiles[0].radii)
    decays = bool(finite) and all(b <= a + tol.slack for a, b in zip(envelope, envelope[1:]))
    return TailClassReport(
        n_set=list(sums.entries),
        radii=profiles[0].radii,
        psi=psi,
        columns_monotone=monotone,
        envelope=envelope,
        envelope_decays=decays,
    )


def smoothed_discrete_spec(atoms: Sequence[float], weights: Sequence[float], tau: float) -> DistributionSpec:
    """Law of X + Z_tau for discrete X, a Gaussian mixture with common component variance tau."""
    if not tau > 0:
        raise InvalidParams("tau must be > 0")
    if not atoms or len(atoms) != len(weights):
        raise InvalidParams("atoms and weights must be non-empty and of equal length")
    total = float(sum(weights))
    if total <= 0 or any(w < 0 for w in weights):
        raise InvalidParams("atom weights must be >= 0 with a positive sum")
    return validate_spec(
        {
            "family": "gaussian_mixture",
            "params": {
                "weights": [w / total for w in weights],
                "means": [float(a) for a in atoms],
                "variances": [float(tau)] * len(atoms),
            },
        }
    )


def smoothed_discrete_demo(
    atoms: Sequence[float],
    weights: Sequence[float],
    tau: float,
    n_set: Sequence[int],
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
) -> SweepReport:
    return verify_o1n(smoothed_discrete_spec(atoms, weights, tau), n_set, grid, tol, max_workers)


def cross_module_agreement(spec: DistributionSpec, grid: Optional[GridSpec] = None, tol: Optional[ToleranceConfig] = None) -> AgreementReport:
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    J2 = standardized_fisher(standardized_sums(d, [2])[2], tol.floor_rel, tol.growth)
    try:
        drop = fisher_drop(d, tol.floor_rel, tol.growth)
    except InfiniteFisher:
        return AgreementReport(math.inf, J2, math.nan, math.nan, vacuous=True, passed=True)
    J2_drop = drop.J_single - drop.drop
    gap = abs(J2 - J2_drop) / max(abs(J2), 1e-3)
    return AgreementReport(
        J_single=drop.J_single,
        J_pair_convolution=J2,
        J_pair_drop=J2_drop,
        relative_gap=gap,
        vacuous=False,
        passed=gap <= tol.agreement,
    )


def scale_invariance(
    spec: DistributionSpec,
    factors: Sequence[float] = (0.5, 2.0, 3.0),
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
) -> ScaleReport:
    """J and D are unchanged under X -> aX while I picks up a factor 1/a^2."""
    tol = _tolerances(tol)
    d = materialize(spec, grid)
    J = standardized_fisher(d, tol.floor_rel, tol.growth)
    D = relative_entropy(d)
    I = fisher_information(d, tol.floor_rel, tol.growth)
    rows = []
    passed = True
    for a in factors:
        scaled = rescale(d, a)
        Ja = standardized_fisher(scaled, tol.floor_rel, tol.growth)
        Da = relative_entropy(scaled)
        Ia = fisher_information(scaled, tol.floor_rel, tol.growth)
        ratio = Ia * a**2 / I if math.isfinite(I) and I > 0 else math.nan
        rows.append(ScaleRow(factor=a, J=Ja, D=Da, I_ratio=ratio))
        if math.isfinite(J):
            passed &= abs(Ja - J) <= tol.scale * max(abs(J), 1e-3) and abs(ratio - 1.0) <= tol.scale
        else:
            passed &= math.isinf(Ja)
        passed &= abs(Da - D) <= tol.scale * max(abs(D), 1e-3)
    return ScaleReport(J=J, D=D, rows=rows, passed=bool(passed))


def verify_all(
    spec: DistributionSpec,
    n_set: Sequence[int],
    radii: Sequence[float],
    k_max: int,
    grid: Optional[GridSpec] = None,
    tol: Optional[ToleranceConfig] = None,
    max_workers: int = 1,
    discrete: Optional[dict] = None,
    tau: float = 0.25,
) -> VerifyReport:
    tol = _tolerances(tol)
    report = VerifyReport(
        family=spec,
        sweep=verify_o1n(spec, n_set, grid, tol, max_workers),
        two_fold=verify_two_fold(spec, grid, tol),
        skewness=skewness_floor(spec, n_set, grid, tol, max_workers),
        doubling=monotone_doubling(spec, k_max, grid, tol, max_workers),
        tail_class=tail_class_profile(spec, n_set, radii, grid, tol, max_workers),
        agreement=cross_module_agreement(spec, grid, tol),
        scale=scale_invariance(spec, grid=grid, tol=tol),
    )
    if discrete is not None:
        report.discrete = smoothed_discrete_demo(discrete["atoms"], discrete["weights"], tau, n_set, grid, tol, max_workers)
    return report
