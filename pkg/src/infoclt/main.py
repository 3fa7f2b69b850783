from __future__ import annotations

import logging
import math
from typing import Any, Callable, Dict, List, Optional

import pandas as pd
import typer

from .config import RunConfig, load_config
from .density import materialize, standardize
from .errors import InfiniteFisher, InfoCltError
from .families import parse_params, validate_spec
from .harness import FAIL, PASS, REPORTED, VACUOUS, Check, verify_all, verify_o1n
from .info import cramer_rao_family, distance_chain, info_summary, tail_score_mass
from .logs import console, err_console, setup_logging
from .metrics import record_check, runs_total, start_metrics_server_if_enabled
from .poincare import borovkov_utev_ratio, poincare_constant, restricted_poincare, rayleigh_quotient, truncated_poincare
from .projection import (
    additive_projection,
    debruijn_entropy,
    derivative_identity_check,
    fundamental_theorem_gap,
    prop_main_check,
    telescoping_decomposition,
    test_function_bank,
)
from .reporting import ReportWriter


app = typer.Typer(add_completion=False, no_args_is_help=True)
log = logging.getLogger("infoclt")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2

STATUS_STYLE = {PASS: "[green]PASS", FAIL: "[red]FAIL", VACUOUS: "[yellow]VACUOUS", REPORTED: "[cyan]REPORTED"}

ConfigOpt = typer.Option(None, "--config", help="YAML or JSON config file")
FamilyOpt = typer.Option(None, "--family", help="Distribution family")
ParamsOpt = typer.Option(None, "--params", help="Family parameters k=v,...; lists as a/b/c")
ShapeOpt = typer.Option(None, "--shape", help="Shorthand for --params shape=...")
CenterOpt = typer.Option(None, "--center/--no-center", help="Center and scale the law to mean 0, variance 1")
PointsOpt = typer.Option(None, "--grid-points", help="Grid points")
DomainOpt = typer.Option(None, "--domain", help="Grid half-width in standard deviations")
NOpt = typer.Option(None, "--n", help="Comma-separated sample sizes")
RadiiOpt = typer.Option(None, "--radii", help="Comma-separated radii / truncation levels")
TauOpt = typer.Option(None, "--tau", help="Gaussian smoothing variance for discrete laws")
BetaOpt = typer.Option(None, "--beta", help="Weight in the projection inequality")
TolOpt = typer.Option(None, "--tol", help="Tolerance override k=v (repeatable)")
OutOpt = typer.Option(None, "--out", help="Output directory")
FormatOpt = typer.Option(None, "--format", help="Comma-separated output formats (csv,json)")
ThreadsOpt = typer.Option(None, "--threads", help="Worker threads")
SeedOpt = typer.Option(None, "--seed", help="Seed of the spline test functions")
LogLevelOpt = typer.Option(None, "--log-level", help="Logging level")


def _split(text: str, cast: Callable[[str], Any]) -> list:
    try:
        return [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise typer.BadParameter(f"cannot parse list '{text}': {e}") from e


def _tolerance_overrides(items: Optional[List[str]]) -> Dict[str, float]:
    out: Dict[str, float] = {}
    for item in items or []:
        for pair in item.split(","):
            if "=" not in pair:
                raise typer.BadParameter(f"malformed tolerance '{pair}', expected k=v")
            k, v = pair.split("=", 1)
            try:
                out[k.strip()] = float(v)
            except ValueError as e:
                raise typer.BadParameter(f"tolerance {k} is not numeric: {v}") from e
    return out


def _overrides(
    grid_points: Optional[int],
    domain: Optional[float],
    n: Optional[str],
    radii: Optional[str],
    tau: Optional[float],
    beta: Optional[float],
    tol: Optional[List[str]],
    out: Optional[str],
    fmt: Optional[str],
    threads: Optional[int],
    seed: Optional[int],
    log_level: Optional[str],
) -> dict:
    o: Dict[str, Any] = {}
    if grid_points is not None:
        o.setdefault("grid", {})["points"] = grid_points
    if domain is not None:
        o.setdefault("grid", {})["domain_halfwidth"] = domain
    if n:
        o["n_set"] = _split(n, int)
    if radii:
        o["radii"] = _split(radii, float)
    if tau is not None:
        o["tau"] = tau
    if beta is not None:
        o["beta"] = beta
    if tol:
        o["tolerances"] = _tolerance_overrides(tol)
    if out:
        o.setdefault("output", {})["dir"] = out
    if fmt:
        o.setdefault("output", {})["formats"] = _split(fmt, str)
    if threads is not None:
        o.setdefault("runtime", {})["threads"] = threads
    if seed is not None:
        o.setdefault("runtime", {})["seed"] = seed
    if log_level:
        o.setdefault("logs", {})["level"] = log_level
    return o


def _with_spec(cfg: RunConfig, family: Optional[str], params: Optional[str], shape: Optional[float], center: Optional[bool]) -> RunConfig:
    """--family replaces the configured law; --params/--shape alone amend its parameters."""
    extra = parse_params(params)
    if shape is not None:
        extra["shape"] = shape
    if family is None and not extra and center is None:
        return cfg
    base = cfg.spec
    spec = {
        "family": family or base.family,
        "params": extra if family and family != base.family else {**base.params, **extra},
        "center_and_scale": base.center_and_scale if center is None else center,
    }
    cfg.spec = validate_spec(spec)
    return cfg


def _print_checks(checks: List[Check]) -> bool:
    failed = False
    for c in checks:
        if c.status in (PASS, FAIL):
            record_check(c.name.split("[")[0], c.status == PASS)
        slack = "" if math.isnan(c.slack) else f" slack={c.slack:.6g}"
        console.print(f"{STATUS_STYLE[c.status]}[/] {c.name}{slack}")
        failed |= c.failed
    return failed


def _grid_header(d) -> dict:
    return {"x_min": d.x_min, "h": d.h, "points": d.n, **d.header()}


def _info(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    tol = cfg.tolerances
    d = materialize(cfg.spec, cfg.grid.spec())
    summary = info_summary(d, tol.floor_rel, tol.growth)
    chain = distance_chain(d, tol.floor_rel, tol.growth, J=summary.standardized_J)
    tail = tail_score_mass(d, cfg.radii, tol.floor_rel, tol.growth)
    bounds = cramer_rao_family(d)
    console.print(
        f"[cyan]{cfg.spec.label}[/] I={summary.fisher_I:.8g} J={summary.standardized_J:.8g} "
        f"D={summary.rel_entropy_D:.8g} sigma2={summary.sigma2:.8g}"
    )
    writer.table("info_trace", summary.trace_frame())
    writer.table("info_tail", tail.to_frame())
    writer.document(
        "info",
        {"family": cfg.spec, "grid": _grid_header(d), "summary": summary, "distances": chain, "tail": tail, "cramer_rao": bounds},
    )
    checks = [Check(f"distance.{k}", PASS if ok else FAIL) for k, ok in chain.checks(tol.slack).items()]
    checks.append(Check("tail.monotone", PASS if tail.is_monotone(tol.slack) else FAIL))
    return checks


def _sweep(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    report = verify_o1n(cfg.spec, cfg.n_set, cfg.grid.spec(), cfg.tolerances, cfg.runtime.threads)
    writer.table("sweep", report.to_frame())
    writer.document("sweep", report)
    return report.checks()


def _poincare(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    tol = cfg.tolerances
    d = materialize(cfg.spec, cfg.grid.spec())
    full = poincare_constant(d, tol.floor_rel, tol.growth)
    restricted = restricted_poincare(d, tol.floor_rel, tol.growth)
    truncated = []
    for T in (r for r in cfg.radii if r > 0):
        est = truncated_poincare(d, T, tol.floor_rel, tol.growth)
        truncated.append({"T": T, "value": est.value, "borovkov_utev": borovkov_utev_ratio(d, T, tol.floor_rel)})
    console.print(f"[cyan]{cfg.spec.label}[/] R={full.value:.8g} R*={restricted.value:.8g}")

    frame = pd.DataFrame({"x": full.extremal.x, "g_full": full.extremal.values, "g_restricted": restricted.extremal.values})
    writer.table("poincare_extremal", frame)
    writer.table("poincare_trace", pd.concat([full.trace_frame().assign(constraint="full"), restricted.trace_frame().assign(constraint="restricted")]))
    writer.document("poincare", {"family": cfg.spec, "full": full, "restricted": restricted, "truncated": truncated})

    variance_bound = rayleigh_quotient(d, lambda x: x)
    return [
        Check("poincare.restricted_le_full", PASS if restricted.value <= full.value * (1.0 + tol.slack) else FAIL),
        Check("poincare.full_ge_linear", PASS if full.value >= variance_bound * (1.0 - tol.slack) else FAIL, full.value - variance_bound),
    ]


def _project(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    tol = cfg.tolerances
    z = standardize(materialize(cfg.spec, cfg.grid.spec()))
    checks: List[Check] = []
    rows, tele_frames, docs = [], [], {}
    for f in test_function_bank(seed=cfg.runtime.seed):
        proj = additive_projection(f, z, z, tol.floor_rel)
        derivative_gap = derivative_identity_check(f, z, z, tol.floor_rel)
        fundamental_gap = fundamental_theorem_gap(f, z, z, tol.floor_rel)
        prop = prop_main_check(f, z, z, beta=cfg.beta, floor_rel=tol.floor_rel, growth=tol.growth, tol=tol.prop)
        rows.append(
            {
                "function": f.name,
                "pythagoras_gap": proj.pythagoras_gap,
                "derivative_gap": derivative_gap,
                "fundamental_gap": fundamental_gap,
                "prop_lhs": prop.lhs,
                "prop_rhs": prop.rhs,
                "prop_slack": prop.slack,
            }
        )
        scale = max(1.0, proj.f_norm_sq)
        checks.append(Check(f"pythagoras[{f.name}]", PASS if proj.pythagoras_gap <= tol.identity * scale else FAIL, proj.pythagoras_gap))
        checks.append(Check(f"derivative_identity[{f.name}]", PASS if derivative_gap <= tol.identity * scale else FAIL, derivative_gap))
        checks.append(Check(f"fundamental_theorem[{f.name}]", PASS if fundamental_gap <= tol.identity * scale else FAIL, fundamental_gap))
        checks.append(Check(f"prop_main[{f.name}]", VACUOUS if prop.vacuous else (PASS if prop.passed else FAIL), prop.slack))
        docs[f.name] = {"projection": proj, "inequality": prop, "telescoping": {}}
        for n in cfg.telescoping_n:
            try:
                tele = telescoping_decomposition(f, z, n, tol.floor_rel, tol.growth)
            except InfiniteFisher:
                checks.append(Check(f"telescoping[{f.name},n={n}]", VACUOUS))
                continue
            tele_frames.append(tele.to_frame().assign(function=f.name, n=n))
            docs[f.name]["telescoping"][str(n)] = tele
            for k, ok in tele.checks(tol.telescoping).items():
                checks.append(Check(f"telescoping[{f.name},n={n}].{k}", PASS if ok else FAIL))
    writer.table("project", pd.DataFrame(rows))
    if tele_frames:
        writer.table("telescoping", pd.concat(tele_frames, ignore_index=True))
    writer.document("project", {"family": cfg.spec, "beta": cfg.beta, "functions": docs})
    return checks


def _debruijn(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    tol = cfg.tolerances
    d = materialize(cfg.spec, cfg.grid.spec())
    path = debruijn_entropy(d, cfg.debruijn_nodes, cfg.clip, tol.floor_rel, tol.growth, cfg.runtime.threads)
    console.print(f"[cyan]{cfg.spec.label}[/] D_integral={path.D_integral:.8g} D_direct={path.D_direct:.8g}")
    writer.table("debruijn", path.to_frame())
    writer.document("debruijn", {"family": cfg.spec, "path": path, "relative_error": path.relative_error})
    return [Check("debruijn", PASS if path.relative_error <= tol.debruijn else FAIL, path.relative_error)]


def _verify(cfg: RunConfig, writer: ReportWriter) -> List[Check]:
    report = verify_all(
        cfg.spec,
        cfg.n_set,
        cfg.radii,
        cfg.k_max,
        cfg.grid.spec(),
        cfg.tolerances,
        cfg.runtime.threads,
        discrete=cfg.discrete.model_dump(),
        tau=cfg.tau,
    )
    writer.table("verify_sweep", report.sweep.to_frame())
    writer.table("verify_skewness", report.skewness.to_frame())
    writer.table("verify_doubling", report.doubling.to_frame())
    writer.table("verify_tail_class", report.tail_class.to_frame())
    writer.table("verify_scale", report.scale.to_frame())
    if report.discrete is not None:
        writer.table("verify_discrete_sweep", report.discrete.to_frame())
    writer.document("verify", report)
    return report.checks()


COMMANDS: Dict[str, Callable[[RunConfig, ReportWriter], List[Check]]] = {
    "info": _info,
    "sweep": _sweep,
    "poincare": _poincare,
    "project": _project,
    "debruijn": _debruijn,
    "verify": _verify,
}


def run(cfg: RunConfig) -> int:
    """Execute cfg.command; 0 when every check passes, 1 on a failed check, 2 on errors."""
    setup_logging(cfg.logs.level)
    start_metrics_server_if_enabled(cfg.metrics.enabled, cfg.metrics.port)
    runs_total.labels(command=cfg.command).inc()
    writer = ReportWriter(cfg.output.dir, cfg.output.formats)
    try:
        writer.ensure_writable()
        checks = COMMANDS[cfg.command](cfg, writer)
        writer.commit()
    except InfoCltError as e:
        err_console.print(f"[red]{type(e).__name__}: {e}")
        return EXIT_ERROR
    except Exception:
        log.exception("%s stopped on an unexpected error", cfg.command)
        return EXIT_ERROR
    failed = _print_checks(checks)
    return EXIT_FAILED if failed else EXIT_OK


def _invoke(command: Optional[str], config: Optional[str], spec_args: tuple, overrides: dict):
    try:
        cfg = load_config(config, overrides)
        if command is not None:
            cfg.command = command
        cfg = _with_spec(cfg, *spec_args)
    except InfoCltError as e:
        err_console.print(f"[red]{type(e).__name__}: {e}")
        raise typer.Exit(EXIT_ERROR)
    raise typer.Exit(run(cfg))


def _command(name: Optional[str]):
    def handler(
        config: Optional[str] = ConfigOpt,
        family: Optional[str] = FamilyOpt,
        params: Optional[str] = ParamsOpt,
        shape: Optional[float] = ShapeOpt,
        center: Optional[bool] = CenterOpt,
        grid_points: Optional[int] = PointsOpt,
        domain: Optional[float] = DomainOpt,
        n: Optional[str] = NOpt,
        radii: Optional[str] = RadiiOpt,
        tau: Optional[float] = TauOpt,
        beta: Optional[float] = BetaOpt,
        tol: Optional[List[str]] = TolOpt,
        out: Optional[str] = OutOpt,
        fmt: Optional[str] = FormatOpt,
        threads: Optional[int] = ThreadsOpt,
        seed: Optional[int] = SeedOpt,
        log_level: Optional[str] = LogLevelOpt,
    ):
        overrides = _overrides(grid_points, domain, n, radii, tau, beta, tol, out, fmt, threads, seed, log_level)
        _invoke(name, config, (family, params, shape, center), overrides)

    return handler


app.command("info", help="Fisher information, relative entropy, distances and tail profile of one law")(_command("info"))
app.command("sweep", help="J and D of standardized sums against the Poincare-constant bounds")(_command("sweep"))
app.command("poincare", help="Full, restricted and truncated Poincare constants")(_command("poincare"))
app.command("project", help="Additive projections, the projection inequality and telescoping on the test bank")(_command("project"))
app.command("debruijn", help="Relative entropy by integrating J along the Gaussian smoothing path")(_command("debruijn"))
app.command("verify", help="Every bound check of the harness")(_command("verify"))
app.command("run", help="Run the command named in the config file")(_command(None))


def main():
    app()


if __name__ == "__main__":
    main()
