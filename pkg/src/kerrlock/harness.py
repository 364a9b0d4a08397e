"""Run orchestration: resolve a configuration into models, run the solver
routes, persist fields and observables, and keep an append-only run log.

Every public ``cmd_*`` function returns ``(exit_code, payload)`` so the CLI
layer only formats and exits.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .config import RunConfig, config_hash
from .errors import ConfigError, GuardError, KerrlockError, NotConverged, TrustRegionWarning
from .evolve import steady_state_direct
from .fock import FockSpace, LaserSpec, default_n_cut
from .fokker_planck import (
    LaserFp,
    default_grid,
    fp_moments,
    fp_negativity,
    fp_steady,
    radial_profile,
)
from .grids import CartesianLayout, PolarLayout, export_csv, save_grid
from .params import PhysicalInputs, estimate, estimate_decimal, polariton_bundle, to_model
from .wigner import default_layout, wigner_grid

log = logging.getLogger(__name__)

__all__ = [
    "resolve",
    "run_fock",
    "run_fp",
    "run_point",
    "cmd_simulate",
    "cmd_sweep",
    "cmd_crossvalidate",
    "cmd_params",
    "resample_polar",
    "ring_radius",
]

PSD_TOL = 1e-8
EDGE_TOL = 1e-6
DEFAULT_CROSS_TOL = 0.05


# --------------------------------------------------------------------------
# model resolution
# --------------------------------------------------------------------------


def _apply_axis(body: dict, kind: str, axis: str | None, value: float | None) -> dict:
    if axis is None:
        return body
    body = dict(body)
    if axis == "d2_over_d1":
        body["d2"] = value * body["d1"]
    else:
        body[axis] = value
    return body


def resolve(cfg: RunConfig, axis_value: float | None = None) -> dict:
    """Phase-space model, Fock-space spec and extra metadata for one point."""
    kind = cfg.model.kind
    body = cfg.model.body.model_dump()
    axis = cfg.sweep.axis if (cfg.sweep and axis_value is not None) else None
    body = _apply_axis(body, kind, axis, axis_value)
    variant = cfg.solver.drift_variant
    extra = {}
    if kind == "laser":
        fock = LaserSpec(**body)
        fp = LaserFp(**body, drift_variant=variant)
    elif kind == "polariton":
        bundle = polariton_bundle(body["g1"], body["g2"], body["d1"], body["d2"], kerr=body["kerr"],
                                  lock=body["lock"], gamma0_share=body["gamma0_share"], drift_variant=variant)
        fock, fp = bundle.fock, bundle.fp
        extra = bundle.summary()
    else:
        inputs = PhysicalInputs(**{k: body[k] for k in ("A_area", "T", "a_B", "eps", "m_exc", "X_hopfield",
                                                         "gamma0")})
        est = estimate(inputs)
        bundle = to_model(est, body["ratio1"], body["ratio2"], lock=body["lock"], drift_variant=variant)
        fock, fp = bundle.fock, bundle.fp
        extra = bundle.summary()
        extra["estimates"] = est.table(bundle.unit)
    return {"kind": kind, "fock": fock, "fp": fp, "extra": extra, "axis": axis, "axis_value": axis_value}


# --------------------------------------------------------------------------
# routes
# --------------------------------------------------------------------------


def run_fock(spec, n_cut: int | None = None, wigner_n: int = 256, half_width: float | None = None,
             layout=None) -> dict:
    """Steady state of the master equation and its Wigner grid.

    Raises :class:`GuardError` when the steady state is not a valid density
    matrix (negative eigenvalue below ``-PSD_TOL``) or populates the top two
    levels above ``EDGE_TOL``.
    """
    n_cut = int(n_cut) if n_cut else default_n_cut(spec)
    res = steady_state_direct(spec, FockSpace(n_cut))
    obs = res.observables
    info = {"n_cut": n_cut, "residual": res.residual, "converged": res.converged,
            "mean_n": obs["mean_n"], "purity": obs["purity"], "offdiag_l1": obs["offdiag_l1"],
            "edge_population": obs["edge_population"], "min_eigenvalue": obs["min_eigenvalue"]}
    if obs["min_eigenvalue"] < -PSD_TOL:
        raise GuardError(f"Fock steady state has eigenvalue {obs['min_eigenvalue']:.3g} < 0 at n_cut={n_cut}: "
                         "the generator does not preserve positivity for these parameters")
    if obs["edge_population"] > EDGE_TOL:
        raise GuardError(f"population {obs['edge_population']:.3g} in the top two Fock levels; raise n_cut "
                         f"(currently {n_cut})")
    if layout is None:
        layout = (CartesianLayout.square(half_width, wigner_n) if half_width
                  else default_layout(res.rho, wigner_n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TrustRegionWarning)
        grid = wigner_grid(res.rho, layout)
    info.update(negativity=grid.negativity(), mass=grid.mass(), layout=layout.kind, window=layout.window())
    return {"rho": res.rho, "grid": grid, "info": info, "converged": res.converged}


def run_fp(model, solver, layout: PolarLayout | None = None) -> dict:
    if layout is None:
        g = solver.grid
        layout = PolarLayout(g.r_max, g.nr, g.ntheta) if g else default_grid(model, solver.points_per_width)
    model.check(layout)
    res = fp_steady(model, layout=layout, method=solver.fp_method, tol=solver.tol, t_max=solver.t_max)
    mom = fp_moments(res.field)
    info = {"method": res.method, "residual": res.residual, "converged": res.converged,
            "iterations": res.iterations, "growth_rate": res.growth_rate, "negativity": fp_negativity(res.field),
            "mass": mom["mass"], "mean_r2": mom["mean_r2"], "mean_cos": mom["mean_cos"],
            "mean_x": mom["mean_alpha"].real, "mean_y": mom["mean_alpha"].imag,
            "layout": "polar", "window": layout.window(), "drift_variant": model.drift_variant}
    if res.history:
        info.update(res.history[-1])
    return {"field": res.field, "info": info, "converged": res.converged}


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default)


def _run_dir(cfg: RunConfig, out: Path) -> Path:
    d = Path(out) / f"{cfg.name}-{config_hash(cfg)[:12]}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _append_log(out: Path, record: dict):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.jsonl", "a") as fh:
        fh.write(_dump(record) + "\n")


def _write_observables(path: Path, rows: list[dict]):
    keys = sorted({k for r in rows for k, v in r.items() if not isinstance(v, (dict, list))})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _status(exc: BaseException | None, converged: bool = True) -> tuple[str, int]:
    if exc is None:
        return ("ok", 0) if converged else ("not_converged", NotConverged.exit_code)
    code = getattr(exc, "exit_code", 1)
    return type(exc).__name__, code


def run_point(cfg: RunConfig, out_dir: Path, tag: str = "point", axis_value: float | None = None) -> dict:
    """Run the configured route(s) for one parameter point and persist outputs.

    Solver failures are caught per route and recorded with their exit code;
    only configuration problems propagate.
    """
    t0 = time.perf_counter()
    point = resolve(cfg, axis_value)
    routes = ["fock", "fp"] if cfg.solver.route == "both" else [cfg.solver.route]
    formats = cfg.output.formats
    results, files, rows = {}, [], []
    code = 0
    for route in routes:
        exc, info, converged = None, {}, True
        try:
            if route == "fock":
                out = run_fock(point["fock"], cfg.solver.n_cut, cfg.solver.wigner_n, cfg.solver.wigner_half_width)
                layout, values = out["grid"].layout, out["grid"].values
            else:
                out = run_fp(point["fp"], cfg.solver)
                layout, values = out["field"].layout, out["field"].values
            info, converged = out["info"], out["converged"]
            stem = out_dir / f"{tag}_{route}"
            if "grid" in formats:
                files.append(str(save_grid(stem.with_suffix(".klgrid"), layout, values,
                                           {"route": route, "tag": tag})))
            if "csv" in formats:
                files.append(str(export_csv(stem.with_suffix(".csv"), layout, values)))
        except KerrlockError as e:
            exc = e
            log.error("%s route failed at %s: %s", route, tag, e)
        except (ValueError, FloatingPointError, MemoryError) as e:
            exc = e
            log.error("%s route failed at %s: %s", route, tag, e)
        status, rc = _status(exc, converged)
        info = dict(info, route=route, status=status, error=str(exc) if exc else "")
        results[route] = info
        rows.append(info)
        code = code or rc
    obs_path = out_dir / f"{tag}_observables.csv"
    _write_observables(obs_path, rows)
    files.append(str(obs_path))
    record = {
        "kind": "point",
        "tag": tag,
        "config_hash": config_hash(cfg),
        "config": cfg.resolved(),
        "version": __version__,
        "axis": point["axis"],
        "axis_value": axis_value,
        "models": {"fock": asdict(point["fock"]), "fp": asdict(point["fp"])},
        "resolved_parameters": point["extra"],
        "results": results,
        "exit_code": code,
        "files": files,
        "wall_time": time.perf_counter() - t0,
    }
    meta = out_dir / f"{tag}_meta.json"
    record["files"].append(str(meta))
    meta.write_text(_dump(record))
    return record


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out) -> tuple[int, dict]:
    out = Path(out)
    rec = run_point(cfg, _run_dir(cfg, out))
    _append_log(out, rec)
    return rec["exit_code"], rec


def _sweep_worker(args):
    cfg, out_dir, tag, value = args
    try:
        return run_point(cfg, Path(out_dir), tag, value)
    except KerrlockError as e:
        return {"kind": "point", "tag": tag, "axis_value": value, "exit_code": e.exit_code,
                "results": {}, "error": str(e), "files": []}
    except Exception as e:  # keep the sweep alive; the traceback goes into the record
        return {"kind": "point", "tag": tag, "axis_value": value, "exit_code": 1, "results": {},
                "error": f"{type(e).__name__}: {e}", "traceback": traceback.format_exc(), "files": []}


def cmd_sweep(cfg: RunConfig, out, workers: int | None = None) -> tuple[int, dict]:
    """One record per axis value and a summary CSV sorted by the axis.

    Points run independently; a failed point is recorded with its status and
    the sweep carries on. The exit code is that of the first failing point in
    axis order, or 0.
    """
    if cfg.sweep is None:
        raise ConfigError("sweep command needs a 'sweep' section in the config")
    out = Path(out)
    run_dir = _run_dir(cfg, out)
    values = list(cfg.sweep.values)
    jobs = [(cfg, str(run_dir), f"p{k:03d}", v) for k, v in enumerate(values)]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            records = list(pool.map(_sweep_worker, jobs))
    else:
        records = [_sweep_worker(j) for j in jobs]
    records.sort(key=lambda r: r["axis_value"])

    routes = ["fock", "fp"] if cfg.solver.route == "both" else [cfg.solver.route]
    summary = run_dir / "summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([cfg.sweep.axis, "route", "negativity", "status", "residual", "exit_code"])
        for rec in records:
            for route in routes:
                info = rec["results"].get(route, {})
                w.writerow([repr(float(rec["axis_value"])), route, repr(info.get("negativity", math.nan)),
                            info.get("status", "error"), repr(info.get("residual", math.nan)),
                            rec["exit_code"]])
    for rec in records:
        _append_log(out, rec)
    code = next((r["exit_code"] for r in records if r["exit_code"]), 0)
    sweep_rec = {"kind": "sweep", "config_hash": config_hash(cfg), "config": cfg.resolved(), "axis": cfg.sweep.axis,
                 "values": values, "summary": str(summary), "points": [r["tag"] for r in records],
                 "exit_code": code, "files": [str(summary)]}
    _append_log(out, sweep_rec)
    sweep_rec["records"] = records
    return code, sweep_rec


def resample_polar(values: np.ndarray, layout: PolarLayout, target: CartesianLayout, mirror: bool = False):
    """Bilinear interpolation of a polar field onto a Cartesian grid.

    The angle axis is padded periodically; inside the first ring the field is
    held at the first-ring value, and outside ``r_max`` it is zero.
    """
    th = layout.theta
    th_pad = np.concatenate([th[-1:] - 2 * np.pi, th, th[:1] + 2 * np.pi])
    vals = np.concatenate([values[:, -1:], values, values[:, :1]], axis=1)
    # the outer boundary value is zero at r_max
    r_pad = np.concatenate([layout.r, [layout.r_max]])
    vals = np.concatenate([vals, np.zeros((1, vals.shape[1]))], axis=0)
    interp = RegularGridInterpolator((r_pad, th_pad), vals, bounds_error=False, fill_value=0.0)
    X, Y = np.meshgrid(target.x, target.y, indexing="ij")
    R = np.hypot(X, Y)
    T = np.mod(np.arctan2(-Y if mirror else Y, X), 2 * np.pi)
    out = interp(np.column_stack([np.clip(R, layout.r[0], None).ravel(), T.ravel()])).reshape(R.shape)
    out[R > layout.r_max] = 0.0
    return out


def ring_radius(profile: np.ndarray, r: np.ndarray) -> float:
    """Radius of the maximum of a radial profile, refined by a parabola through three nodes."""
    k = int(np.argmax(profile))
    if 0 < k < len(r) - 1:
        y0, y1, y2 = profile[k - 1:k + 2]
        den = y0 - 2 * y1 + y2
        if den < 0:
            return float(r[k] + 0.5 * (y0 - y2) / den * (r[1] - r[0]))
    return float(r[k])


def _cross_point(cfg: RunConfig, axis_value, tag, run_dir: Path) -> dict:
    point = resolve(cfg, axis_value)
    model, spec = point["fp"], point["fock"]
    rep = {"tag": tag, "axis_value": axis_value, "notes": []}
    try:
        fp = run_fp(model, cfg.solver)
        fld = fp["field"]
        pl = fld.layout
        n_cut = cfg.solver.n_cut or default_n_cut(spec)
        fock = run_fock(spec, n_cut, layout=pl)
    except KerrlockError as e:
        rep.update(status=type(e).__name__, exit_code=e.exit_code, error=str(e))
        return rep
    half = cfg.solver.wigner_half_width or pl.r_max
    common = CartesianLayout.square(half, cfg.crossvalidate.grid_n)
    rep["notes"].append(f"Fock route evaluated on the phase-space polar grid {pl.window()}; both fields "
                        f"resampled to a common Cartesian grid {common.window()}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TrustRegionWarning)
        w_fock = wigner_grid(fock["rho"], common).values
    w_fp = resample_polar(fld.values, pl, common)
    w_fp_m = resample_polar(fld.values, pl, common, mirror=True)
    dA = common.dx * common.dy
    l1 = float(np.sum(np.abs(w_fock - w_fp)) * dA)
    l1_m = float(np.sum(np.abs(w_fock - w_fp_m)) * dA)
    r = pl.r
    prof_fp = radial_profile(fld)
    prof_fock = fock["grid"].values.mean(axis=1)
    tol = cfg.crossvalidate.tolerance
    if tol is None and model.kerr == 0 and model.lock == 0:
        tol = DEFAULT_CROSS_TOL
    rep.update(
        l1=l1, l1_mirrored=l1_m,
        ring_radius_fock=ring_radius(prof_fock, r), ring_radius_fp=ring_radius(prof_fp, r),
        negativity_fock=fock["info"]["negativity"], negativity_fp=fp["info"]["negativity"],
        mean_n_fock=fock["info"]["mean_n"], mean_r2_fp=fp["info"]["mean_r2"],
        n_cut=n_cut, fp_grid=pl.window(), common_grid=common.window(), tolerance=tol,
        passed=None if tol is None else bool(l1 <= tol),
    )
    rep["status"] = "ok" if rep["passed"] is not False else "failed"
    rep["exit_code"] = 0
    save_grid(run_dir / f"{tag}_cross_fock.klgrid", common, w_fock, {"route": "fock", "tag": tag})
    save_grid(run_dir / f"{tag}_cross_fp.klgrid", common, w_fp, {"route": "fp", "tag": tag})
    rep["files"] = [str(run_dir / f"{tag}_cross_fock.klgrid"), str(run_dir / f"{tag}_cross_fp.klgrid")]
    return rep


def cmd_crossvalidate(cfg: RunConfig, out) -> tuple[int, dict]:
    """Compare Fock-route and phase-space steady states on a common grid.

    Exit code 0 when every point with a tolerance passes, 1 when a point
    fails its tolerance, or the solver code of the first point that could
    not be computed.
    """
    out = Path(out)
    run_dir = _run_dir(cfg, out)
    values = list(cfg.sweep.values) if cfg.sweep else [None]
    reports = [_cross_point(cfg, v, f"x{k:03d}", run_dir) for k, v in enumerate(values)]
    path = run_dir / "crossvalidate.json"
    path.write_text(_dump(reports))
    code = next((r["exit_code"] for r in reports if r.get("exit_code")), 0)
    if code == 0 and any(r.get("passed") is False for r in reports):
        code = 1
    files = [f for r in reports for f in r.get("files", [])] + [str(path)]
    rec = {"kind": "crossvalidate", "config_hash": config_hash(cfg), "config": cfg.resolved(),
           "reports": reports, "exit_code": code, "files": files}
    _append_log(out, rec)
    return code, rec


def cmd_params(cfg: RunConfig) -> tuple[int, dict]:
    """Resolved model parameters; for physical inputs also the rate-scale table."""
    point = resolve(cfg)
    payload = {"kind": point["kind"], "models": {"fock": asdict(point["fock"]), "fp": asdict(point["fp"])}}
    payload.update(point["extra"])
    if point["kind"] == "physical":
        body = cfg.model.body
        inputs = PhysicalInputs(**{k: getattr(body, k) for k in ("A_area", "T", "a_B", "eps", "m_exc",
                                                                  "X_hopfield", "gamma0")})
        est = estimate(inputs)
        dec = estimate_decimal(inputs)
        payload["dual_path_max_rel_diff"] = max(
            abs(float(dec[k]) - getattr(est, k).value) / abs(float(dec[k])) for k in dec)
    return 0, payload
