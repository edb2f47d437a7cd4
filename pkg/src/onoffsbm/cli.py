"""Experiment runner: validate a JSON config, run a named experiment, and emit
a manifest, a summary of pass/fail verdicts with the tolerances actually used,
and plot-ready CSV files.

Determinism contract: (config, seed) fully determines every emitted byte of
summary.json and the CSVs, independent of the worker count. Wall-clock time
lives only in manifest.json.

Exit codes: 0 all verdicts pass, 1 any verdict fails, 2 config/runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time as _time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import analytics, dual, feller, particle
from .core import (
    ACTIVE,
    BallIndicator,
    ConstantFunction,
    FiniteMeasure,
    GaussianBump,
    ModelParams,
    OnOffError,
    RandomSource,
    TentFunction,
)

EXPERIMENT_IDS = (
    "simulate-bbm",
    "simulate-feller",
    "solve-dual",
    "verify-duality",
    "eps-cascade",
    "extinction-stats",
    "decay-study",
    "certificate",
)


class ConfigInvalid(OnOffError):
    """Configuration failed validation; the message names the field path."""


@dataclass
class Verdict:
    name: str
    passed: bool
    tolerance: str
    observed: float | None = None
    expected: float | None = None
    details: str = ""


@dataclass
class ExperimentResult:
    verdicts: list
    tables: dict  # name -> (header, rows)
    extra: dict


# -- config access -------------------------------------------------------------

_REQUIRED = object()


def _get(cfg: dict, path: str, default=_REQUIRED):
    node = cfg
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            if default is _REQUIRED:
                raise ConfigInvalid(f"{path}: required field missing")
            return default
        node = node[key]
    return node


def _positive(cfg, path, default=_REQUIRED):
    value = _get(cfg, path, default)
    if not isinstance(value, (int, float)) or not value > 0:
        raise ConfigInvalid(f"{path}: must be a positive number, got {value!r}")
    return float(value)


def _positive_int(cfg, path, default=_REQUIRED):
    value = _get(cfg, path, default)
    if not isinstance(value, int) or value <= 0:
        raise ConfigInvalid(f"{path}: must be a positive integer, got {value!r}")
    return value


def params_from_config(cfg: dict) -> ModelParams:
    section = _get(cfg, "params")
    try:
        return ModelParams(
            gamma=float(_get(section, "gamma")),
            c=float(_get(section, "c")),
            c_tilde=float(_get(section, "c_tilde")),
            dim=int(_get(section, "dim", 1)),
        )
    except ConfigInvalid:
        raise
    except OnOffError as exc:
        raise ConfigInvalid(f"params: {exc}") from exc


def measure_from_config(cfg: dict, dim: int) -> FiniteMeasure:
    atoms = _get(cfg, "initial_measure")
    if not isinstance(atoms, list) or not atoms:
        raise ConfigInvalid("initial_measure: must be a non-empty list of [position, state, weight]")
    try:
        return FiniteMeasure.from_atoms([(a[0], int(a[1]), float(a[2])) for a in atoms], dim=dim)
    except (ValueError, IndexError, TypeError, OnOffError) as exc:
        raise ConfigInvalid(f"initial_measure: {exc}") from exc


_FUNCTION_KINDS = {
    "constant": lambda spec, dim: ConstantFunction(
        active_value=float(spec.get("active_amp", 1.0)),
        dormant_value=float(spec.get("dormant_amp", 1.0)),
        dim=dim,
    ),
    "gaussian": lambda spec, dim: GaussianBump(
        active_amp=float(spec.get("active_amp", 1.0)),
        dormant_amp=float(spec.get("dormant_amp", 0.5)),
        center=tuple(spec.get("center", [0.0] * dim)),
        width=float(spec.get("width", 0.5)),
        dim=dim,
    ),
    "tent": lambda spec, dim: TentFunction(
        active_amp=float(spec.get("active_amp", 1.0)),
        dormant_amp=float(spec.get("dormant_amp", 0.5)),
        center=tuple(spec.get("center", [0.0] * dim)),
        radius=float(spec.get("radius", 1.0)),
        dim=dim,
    ),
    "ball": lambda spec, dim: BallIndicator(
        active_amp=float(spec.get("active_amp", 1.0)),
        dormant_amp=float(spec.get("dormant_amp", 0.5)),
        center=tuple(spec.get("center", [0.0] * dim)),
        radius=float(spec.get("radius", 1.0)),
        dim=dim,
    ),
}


def test_function_from_config(cfg: dict, dim: int):
    spec = _get(cfg, "test_function")
    kind = _get(spec, "kind")
    if kind not in _FUNCTION_KINDS:
        raise ConfigInvalid(f"test_function.kind: unknown kind {kind!r}; choose from {sorted(_FUNCTION_KINDS)}")
    try:
        return _FUNCTION_KINDS[kind](spec, dim)
    except (ValueError, OnOffError) as exc:
        raise ConfigInvalid(f"test_function: {exc}") from exc


def scheme_from_config(cfg: dict) -> feller.SdeScheme:
    section = _get(cfg, "feller", {})
    try:
        return feller.SdeScheme(
            dt=float(section.get("dt", 1e-3)),
            variant=section.get("variant", feller.VARIANT_GENERATOR),
            p_floor=float(section.get("p_floor", 0.0)),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"feller: {exc}") from exc


# -- experiments -----------------------------------------------------------------


def _mass_conservation_verdicts(ens_times, means, stderrs, target) -> list:
    verdicts = []
    for t, m, s in zip(ens_times, means, stderrs):
        verdicts.append(
            Verdict(
                name=f"mass-conservation-t{t:g}",
                passed=bool(abs(m - target) <= 3.0 * s),
                tolerance="3*stderr",
                observed=float(m),
                expected=float(target),
                details=f"stderr={s:.3e}",
            )
        )
    return verdicts


def exp_simulate_bbm(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    mu = measure_from_config(cfg, params.dim)
    epsilon = _positive(cfg, "epsilon")
    n_reps = _positive_int(cfg, "n_reps")
    times = _get(cfg, "observation_times", [0.5, 1.0, 2.0])
    source = RandomSource(_get(cfg, "seed", 0))
    ens = particle.ensemble_total_masses(mu, epsilon, params, times, n_reps, source, workers=workers)
    means, stderrs = ens.mean_total()
    rows = [
        (t, float(ens.active[:, k].mean()), float(ens.dormant[:, k].mean()), float(means[k]), float(stderrs[k]))
        for k, t in enumerate(ens.times)
    ]
    tables = {"masses": (["time", "mean_active_mass", "mean_dormant_mass", "mean_total_mass", "stderr_total"], rows)}
    if _get(cfg, "output.per_replicate", False):
        rep_rows = []
        for rep in range(ens.active.shape[0]):
            for k, t in enumerate(ens.times):
                rep_rows.append((rep, t, ens.active[rep, k] / epsilon, ens.dormant[rep, k] / epsilon,
                                 ens.active[rep, k], ens.dormant[rep, k]))
        tables["replicates"] = (["rep", "time", "n_active", "n_dormant", "active_mass", "dormant_mass"], rep_rows)
    if _get(cfg, "output.particle_dump", False):
        dump_rows = []
        gen_source = source.child(0)
        system = particle.ParticleSystem.from_poisson(mu, epsilon, params, gen_source.generator())
        snaps = particle.simulate_until(system, float(ens.times[-1]), gen_source.generator(),
                                        observation_times=list(ens.times), keep_particles=True)
        for snap in snaps:
            for row in snap.active_positions:
                dump_rows.append((snap.time, *row, ACTIVE))
            for row in snap.dormant_positions:
                dump_rows.append((snap.time, *row, 0))
        header = ["time"] + [f"x_{i + 1}" for i in range(params.dim)] + ["state"]
        tables["particles"] = (header, dump_rows)
    verdicts = _mass_conservation_verdicts(ens.times, means, stderrs, mu.total_mass)
    return ExperimentResult(verdicts, tables, {"n_reps": n_reps, "epsilon": epsilon})


def exp_simulate_feller(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    scheme = scheme_from_config(cfg)
    section = _get(cfg, "feller")
    state0 = feller.FellerState(float(_get(section, "p0")), float(_get(section, "q0")))
    t_end = _positive(section, "t_end")
    n_paths = _positive_int(section, "n_paths")
    obs = _get(section, "observation_times", None) or [t_end * k / 4 for k in range(1, 5)]
    source = RandomSource(_get(cfg, "seed", 0))
    ens = feller.simulate_feller_ensemble(params, state0, scheme, t_end, n_paths, source,
                                          observation_times=obs, workers=workers)
    verdicts = []
    moment_rows = []
    mean_p, se_p = ens.mean_series("p")
    mean_q, se_q = ens.mean_series("q")
    for k, t in enumerate(ens.times):
        g, h = analytics.mean_solution(params, state0.p, state0.q, float(t))
        moment_rows.append((t, mean_p[k], se_p[k], g, mean_q[k], se_q[k], h))
        verdicts.append(Verdict(
            name=f"mean-active-t{t:g}", passed=bool(abs(mean_p[k] - g) <= 3 * se_p[k]),
            tolerance="3*stderr", observed=float(mean_p[k]), expected=float(g)))
        verdicts.append(Verdict(
            name=f"mean-dormant-t{t:g}", passed=bool(abs(mean_q[k] - h) <= 3 * se_q[k]),
            tolerance="3*stderr", observed=float(mean_q[k]), expected=float(h)))
    tables = {"moments": (["t", "mean_p", "stderr_p", "exact_p", "mean_q", "stderr_q", "exact_q"], moment_rows)}

    theta_table = _get(section, "theta_table", [])
    if theta_table:
        mgf_rows = []
        abs_tol = float(_get(cfg, "tolerances.mgf_abs", 0.01))
        for theta in theta_table:
            th1, th2 = float(theta[0]), float(theta[1])
            mc, se = ens.mgf(th1, th2)
            ode = dual.solve_total_mass_dual(params, th1, th2, t_end)
            u_end, v_end = ode.final
            exact = float(np.exp(-u_end * state0.p - v_end * state0.q))
            gap = abs(mc - exact)
            tol = max(3 * se, abs_tol)
            mgf_rows.append((th1, th2, mc, exact, gap, se))
            verdicts.append(Verdict(
                name=f"mgf-duality-theta({th1:g},{th2:g})", passed=bool(gap <= tol),
                tolerance=f"max(3*stderr, {abs_tol})", observed=mc, expected=exact,
                details=f"gap={gap:.3e}"))
        tables["mgf"] = (["theta1", "theta2", "mc", "dual", "gap", "stderr"], mgf_rows)

    if state0.q > 0:
        report = feller.persistence_report(ens, tol=float(_get(cfg, "tolerances.persistence", 1e-10)))
        verdicts.append(Verdict(
            name="persistence-lower-bound", passed=report.passed, tolerance="1e-10 pathwise",
            observed=float(report.n_violating_paths + report.n_zero_total_mass), expected=0.0))

    max_paths = int(_get(cfg, "output.max_csv_paths", 100))
    path_rows = []
    for pid in range(min(max_paths, ens.n_paths)):
        for k, t in enumerate(ens.times):
            path_rows.append((pid, t, ens.p[pid, k], ens.q[pid, k], ens.p[pid, k] + ens.q[pid, k]))
    tables["paths"] = (["path_id", "t", "p", "q", "r"], path_rows)

    hits = feller.hit_zero_stats(ens)
    extra = {
        "hit_fraction": hits.fraction, "wilson_low": hits.wilson_low, "wilson_high": hits.wilson_high,
        "scheme": {"dt": scheme.dt, "variant": scheme.variant, "p_floor": scheme.p_floor},
    }
    return ExperimentResult(verdicts, tables, extra)


def exp_solve_dual(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    phi = test_function_from_config(cfg, params.dim)
    t_end = _positive(cfg, "time")
    section = _get(cfg, "dual", {})
    variant = section.get("variant", dual.VARIANT_SBM)
    if variant not in (dual.VARIANT_SBM, dual.VARIANT_EPS, dual.VARIANT_BBM):
        raise ConfigInvalid(f"dual.variant: unknown variant {variant!r}")
    epsilon = _get(cfg, "epsilon", None)
    sol = dual.solve_spatial_dual_pde(
        params, phi, t_end, variant=variant,
        epsilon=float(epsilon) if epsilon is not None else None,
        dx=float(section.get("dx", 0.02)),
    )
    xs = sol.field.grid.xs
    rows = [(x, a, d, t_end) for x, a, d in zip(xs, sol.field.active, sol.field.dormant)]
    tables = {"field": (["x", "active", "dormant", "t"], rows)}
    verdicts = [
        Verdict(name="field-positive", passed=bool(min(sol.field.active.min(), sol.field.dormant.min()) >= -1e-12),
                tolerance="nodewise >= 0", observed=float(min(sol.field.active.min(), sol.field.dormant.min()))),
        Verdict(name="field-bounded", passed=bool(sol.field.sup() <= max(phi.sup_bound, 1.0) * (1 + 1e-10)),
                tolerance="<= sup of data", observed=sol.field.sup()),
    ]
    extra = {"dx": sol.dx, "dt": sol.dt, "n_steps": sol.n_steps,
             "richardson_error": sol.error_estimate, "boundary_values": list(sol.boundary_values)}
    if section.get("n_intervals"):
        from . import picard

        field, report = picard.glue_intervals(
            params, phi, float(section.get("horizon", t_end)), int(section["n_intervals"]),
            inner=section.get("inner", picard.INNER_PDE), dx=float(section.get("dx", 0.02)),
        )
        extra["picard"] = {
            "n_intervals": report.n_intervals, "max_ratio": report.max_ratio,
            "iterations": [rep.iterations for rep in report.intervals],
            "ball_radius": report.ball_radius, "lipschitz_bound": report.lipschitz_bound,
        }
        verdicts.append(Verdict(name="picard-contraction", passed=bool(report.max_ratio <= 0.55),
                                tolerance="ratio <= 0.55", observed=report.max_ratio))
    return ExperimentResult(verdicts, tables, extra)


def exp_verify_duality(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    mu = measure_from_config(cfg, params.dim)
    phi = test_function_from_config(cfg, params.dim)
    epsilon = _positive(cfg, "epsilon")
    t_end = _positive(cfg, "time")
    n_reps = _positive_int(cfg, "n_reps")
    rel_tol = float(_get(cfg, "tolerances.duality_rel", 0.02))
    source = RandomSource(_get(cfg, "seed", 0))
    mc = particle.laplace_functional_mc(mu, phi, t_end, epsilon, n_reps, source, params, workers=workers)
    sol = dual.solve_spatial_dual_pde(params, phi, t_end, variant=dual.VARIANT_EPS, epsilon=epsilon,
                                      dx=float(_get(cfg, "dual.dx", 0.02)))
    exact = float(np.exp(-sol.field.pair_with(mu)))
    gap = abs(mc.estimate - exact)
    tol = max(3 * mc.stderr, rel_tol * exact)
    verdict = Verdict(
        name="laplace-duality-fixed-epsilon", passed=bool(gap <= tol),
        tolerance=f"max(3*stderr, {rel_tol}*dual)", observed=mc.estimate, expected=exact,
        details=f"gap={gap:.3e} stderr={mc.stderr:.3e} pde_err={sol.error_estimate:.2e}")
    tables = {"duality": ((["t", "epsilon", "mc", "stderr", "dual", "gap"]),
                          [(t_end, epsilon, mc.estimate, mc.stderr, exact, gap)])}
    return ExperimentResult([verdict], tables, {"n_reps": n_reps})


def exp_eps_cascade(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    phi = test_function_from_config(cfg, params.dim)
    t_end = _positive(cfg, "time")
    eps_list = _get(cfg, "dual.eps_list", [0.4, 0.2, 0.1])
    mu = None
    if _get(cfg, "initial_measure", None):
        mu = measure_from_config(cfg, params.dim)
    report = dual.eps_cascade(params, phi, t_end, eps_list, dx=float(_get(cfg, "dual.dx", 0.02)), mu=mu)
    rows = [(r.epsilon, r.sup_gap, r.gap_over_eps, r.initial_sup_gap, r.paired_eps, r.paired_limit)
            for r in report.rows]
    tables = {"cascade": (["epsilon", "sup_gap", "gap_over_eps", "initial_sup_gap",
                           "paired_eps", "paired_limit"], rows)}
    last_frac = float(_get(cfg, "tolerances.cascade_final_gap_frac", 0.05))
    verdicts = [
        Verdict(name="cascade-gaps-decreasing", passed=report.gaps_strictly_decreasing,
                tolerance="strict ordering", observed=report.rows[-1].sup_gap),
        Verdict(name="cascade-final-gap", passed=bool(report.rows[-1].sup_gap <= last_frac * phi.sup_bound),
                tolerance=f"<= {last_frac}*sup(phi)", observed=report.rows[-1].sup_gap,
                expected=last_frac * phi.sup_bound),
    ]
    return ExperimentResult(verdicts, tables, {"richardson_error": report.limit.error_estimate})


def exp_extinction_stats(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    scheme = scheme_from_config(cfg)
    section = _get(cfg, "feller")
    starts = _get(section, "starts")
    if not isinstance(starts, list) or not starts:
        raise ConfigInvalid("feller.starts: need a non-empty list of start specs")
    n_paths = _positive_int(section, "n_paths")
    source = RandomSource(_get(cfg, "seed", 0))
    rows = []
    verdicts = []
    for k, spec in enumerate(starts):
        p0, q0 = float(spec["p0"]), float(spec["q0"])
        t_end = float(spec.get("t_end", _get(section, "t_end", 5.0)))
        ens = feller.simulate_feller_ensemble(
            params, feller.FellerState(p0, q0), scheme, t_end, n_paths, source.child(k), workers=workers)
        stats = feller.hit_zero_stats(ens)
        cert = analytics.boundary_certificate(params, q0)
        rows.append((p0, q0, t_end, stats.fraction, stats.wilson_low, stats.wilson_high,
                     stats.n_paths, cert.passed))
        if spec.get("expect_positive_lower", True):
            verdicts.append(Verdict(
                name=f"hit-lower-bound-start({p0:g},{q0:g})", passed=bool(stats.wilson_low > 0.0),
                tolerance="Wilson 95% lower > 0", observed=stats.wilson_low))
        if spec.get("expect_upper_below_one", False):
            verdicts.append(Verdict(
                name=f"hit-upper-bound-start({p0:g},{q0:g})", passed=bool(stats.wilson_high < 1.0),
                tolerance="Wilson 95% upper < 1", observed=stats.wilson_high))
    tables = {"hits": (["p0", "q0", "t_end", "fraction", "wilson_low", "wilson_high",
                        "n_paths", "certificate_pass"], rows)}
    return ExperimentResult(verdicts, tables, {})


def exp_decay_study(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    scheme = scheme_from_config(cfg)
    section = _get(cfg, "feller")
    state0 = feller.FellerState(float(_get(section, "p0", 1.0)), float(_get(section, "q0", 1.0)))
    checkpoints = [float(t) for t in _get(section, "checkpoints", [5.0, 10.0, 20.0, 50.0])]
    n_paths = _positive_int(section, "n_paths")
    lam = float(_get(section, "lambda", 0.01))
    source = RandomSource(_get(cfg, "seed", 0))
    ens = feller.simulate_feller_ensemble(
        params, state0, scheme, checkpoints[-1], n_paths, source, observation_times=checkpoints,
        workers=workers)
    ordering = analytics.band_ordering_report(ens.times, ens.r)
    decay_rows = [(t, m, s) for t, m, s in zip(ordering.times, ordering.means, ordering.stderrs)]
    tables = {"decay": (["t", "mean_r", "stderr_r"], decay_rows)}
    verdicts = [Verdict(
        name="total-mass-mean-ordering", passed=ordering.ok, tolerance="paired diff <= +3*stderr",
        observed=float(ordering.diff_means.max()))]
    sm_rows = []
    for j in (1, 2):
        for prefactor in (analytics.PREFACTOR_GROWING, analytics.PREFACTOR_DECAYING):
            rep = analytics.supermartingale_report(ens, params, lam, j, prefactor)
            for t, m, s in zip(rep.times, rep.means, rep.stderrs):
                sm_rows.append((j, prefactor, lam, t, m, s))
            verdicts.append(Verdict(
                name=f"weighted-mass-nonincreasing-j{j}-{prefactor}", passed=rep.ok,
                tolerance="paired diff <= +3*stderr", observed=float(rep.diff_means.max()),
                details="stated diagnostic form" if prefactor == analytics.PREFACTOR_GROWING
                else "sign-consistent supermartingale"))
    tables["supermartingale"] = (["j", "prefactor", "lambda", "t", "mean_W", "stderr_W"], sm_rows)
    return ExperimentResult(verdicts, tables, {"lambda": lam})


def exp_certificate(cfg: dict, workers: int) -> ExperimentResult:
    params = params_from_config(cfg)
    ys = _get(cfg, "certificate.y_values", None)
    if ys is None:
        threshold = 1.0 / (2.0 * params.c_tilde)
        ys = [0.0, 0.5 * threshold, 0.8 * threshold, threshold, 1.2 * threshold, 2.0 * threshold]
    rows = []
    for y in ys:
        cert = analytics.boundary_certificate(params, float(y))
        rows.append((cert.y, cert.drift_inward, cert.speed_bound, cert.passed, cert.margin,
                     cert.threshold, cert.generator_threshold))
    tables = {"certificate": (["y", "drift_inward", "speed_bound", "passed", "margin",
                               "threshold", "generator_threshold"], rows)}
    verdicts = [Verdict(name="certificate-threshold-positive",
                        passed=bool(1.0 / (2.0 * params.c_tilde) > 0), tolerance="exact",
                        observed=1.0 / (2.0 * params.c_tilde))]
    return ExperimentResult(verdicts, tables, {})


EXPERIMENTS = {
    "simulate-bbm": exp_simulate_bbm,
    "simulate-feller": exp_simulate_feller,
    "solve-dual": exp_solve_dual,
    "verify-duality": exp_verify_duality,
    "eps-cascade": exp_eps_cascade,
    "extinction-stats": exp_extinction_stats,
    "decay-study": exp_decay_study,
    "certificate": exp_certificate,
}


# -- emission --------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _format_cell(value) -> str:
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, bool):
        return str(value).lower()
    if value is None:
        return ""
    return str(value)


def config_hash(config: dict) -> str:
    payload = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def emit_report(out_dir: Path, run_name: str, manifest: dict, summary: dict, tables: dict) -> list[Path]:
    """Write manifest.json, summary.json, and one CSV per table. Deterministic
    naming and content: same config + seed produce byte-identical files."""
    target = Path(out_dir) / run_name
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for name, payload in (("manifest.json", manifest), ("summary.json", summary)):
        path = target / name
        path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")
        written.append(path)
    for name, (header, rows) in sorted(tables.items()):
        path = target / f"{name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format_cell(v) for v in row])
        written.append(path)
    return written


def validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigInvalid("config: must be a JSON object")
    experiment = _get(config, "experiment")
    if experiment not in EXPERIMENT_IDS:
        raise ConfigInvalid(f"experiment: unknown id {experiment!r}; choose from {list(EXPERIMENT_IDS)}")
    seed = _get(config, "seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigInvalid(f"seed: must be a nonnegative integer, got {seed!r}")
    n_reps = _get(config, "n_reps", None)
    if n_reps is not None and (not isinstance(n_reps, int) or n_reps <= 0):
        raise ConfigInvalid(f"n_reps: must be a positive integer, got {n_reps!r}")
    params_from_config(config)  # fail early with a field path
    return config


@dataclass
class RunResult:
    exit_code: int
    run_dir: Path
    summary: dict


def run(config: dict, out_dir, workers: int = 1) -> RunResult:
    """Validate, execute, and emit one experiment."""
    config = validate_config(config)
    experiment = config["experiment"]
    seed = _get(config, "seed", 0)
    digest = config_hash(config)
    started = _time.perf_counter()
    result = EXPERIMENTS[experiment](config, workers)
    wall = _time.perf_counter() - started
    all_passed = all(v.passed for v in result.verdicts)
    summary = {
        "experiment": experiment,
        "seed": seed,
        "config_hash": digest,
        "all_passed": all_passed,
        "verdicts": [asdict(v) for v in result.verdicts],
        "extra": result.extra,
    }
    manifest = {
        "config": config,
        "seed": seed,
        "config_hash": digest,
        "package_version": "0.1.0",
        "numpy_version": np.__version__,
        "workers": workers,
        "wall_time_s": wall,
    }
    run_name = f"{experiment}-seed{seed}-{digest}"
    emit_report(Path(out_dir), run_name, manifest, summary, result.tables)
    return RunResult(0 if all_passed else 1, Path(out_dir) / run_name, summary)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="onoffsbm", description="Run a named on/off branching experiment")
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config's seed")
    parser.add_argument("--experiment", default=None, help="override the config's experiment id")
    parser.add_argument("--workers", type=int, default=1, help="process-pool size (results are identical)")
    parser.add_argument("--out", default="out", help="output directory")
    args = parser.parse_args(argv)
    try:
        config = json.loads(Path(args.config).read_text())
        if args.seed is not None:
            config["seed"] = args.seed
        if args.experiment is not None:
            config["experiment"] = args.experiment
        result = run(config, args.out, workers=args.workers)
    except (ConfigInvalid, OnOffError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for verdict in result.summary["verdicts"]:
        status = "PASS" if verdict["passed"] else "FAIL"
        print(f"[{status}] {verdict['name']} (tolerance: {verdict['tolerance']})")
    print(f"artifacts: {result.run_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
