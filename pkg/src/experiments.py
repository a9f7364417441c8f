from __future__ import annotations
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
import json
import logging
import math
import os

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.analysis import (
    CouplingReport,
    age_distance_frame,
    build_coupled_run,
    coupling_row,
    limit_curve,
    simulate_limit_copies,
    theoretical_beta,
)
from src.assumptions import require_regime, validate_config
from src.config import ExperimentConfig
from src.errors import HypothesisError
from src.limit import MeanIntensityCurve
from src.pde import boundary_residual, make_grid, solve_linear_pps, solve_pps
from src.particle import simulate_adrhp

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
SE_TARGET = 0.1


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def write_frame(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %s (%d rows)", path, len(df))
    return path


def _clean(obj):
    # JSON has no NaN / inf
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_clean(obj), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("wrote %s", path)
    return path


def replica_seed(seed: int, n: int, replica: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(n), int(replica)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _jobs(requested: int) -> int:
    return requested if requested > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    tol = cfg.tol
    stats = {}
    for n in cfg.n_list:
        events, audits, totals = [], [], []
        for r in range(cfg.replicas):
            run = simulate_adrhp(cfg.model, n, cfg.theta, replica_seed(cfg.seed, n, r), event_cap=tol.event_cap)
            events.append(run.events_frame(replica=r))
            audit = run.audit_frame()
            audit.insert(0, "replica", r)
            audits.append(audit)
            totals.append(run.total_events)
        write_frame(pd.concat(events, ignore_index=True), out_dir / f"events_n{n}.csv")
        write_frame(pd.concat(audits, ignore_index=True), out_dir / f"audit_n{n}.csv")
        stats[f"n={n} events/particle"] = float(np.mean(totals)) / n
    return stats


def run_solve_pde(cfg: ExperimentConfig, out_dir: Path) -> dict:
    model, tol = cfg.model, cfg.tol
    regime = require_regime(validate_config(cfg))
    snapshot_times = cfg.age_times
    if regime == "H1":
        grid = make_grid(cfg.dx, cfg.theta, model.initial, tol.renorm_floor)
        sol = solve_pps(
            model.psi, model.mean_kernel, model.f0, model.initial, grid,
            fp_tol=tol.fp_tol, max_iter=tol.max_iter, snapshot_times=snapshot_times,
        )
        identity = boundary_residual(sol, model.psi)
        bound = max(model.initial.density_sup, model.psi.sup_bound) + tol.bound_tol
        boundary = sol.boundary_frame()
    else:
        curve = limit_curve(
            model, cfg.theta, cfg.dx, fp_tol=tol.fp_tol, max_iter=tol.max_iter, regime=regime
        )
        boundary = pd.DataFrame({"t": curve.times, "u0": curve.values, "X": curve.gamma - model.f0(curve.times)})
        sol, identity, bound = None, None, None
        if model.initial.has_density:
            grid = make_grid(cfg.dx, cfg.theta, model.initial, tol.renorm_floor)
            sol = solve_linear_pps(
                lambda t, s: np.full_like(s, float(curve.at(t))),
                model.initial, grid, snapshot_times=snapshot_times, floor=tol.renorm_floor,
            )
            bound = max(model.initial.density_sup, curve.sup()) + tol.bound_tol

    write_frame(boundary, out_dir / "boundary.csv")
    stats = {"regime": regime, "u0 min": float(boundary["u0"].min()), "u0 max": float(boundary["u0"].max())}
    if sol is not None:
        write_frame(sol.density_frame(), out_dir / "density.csv")
        mass_err = sol.max_mass_error()
        stats["max mass error"] = mass_err
        stats["max density"] = float(sol.umax.max())
        stats["mass ok"] = mass_err <= tol.mass_tol
        stats["bound ok"] = bool(sol.umax.max() <= bound)
        if not stats["mass ok"]:
            logger.warning("mass error %.3e exceeds mass_tol %.3e", mass_err, tol.mass_tol)
        if not stats["bound ok"]:
            logger.warning("density %.6g exceeds the a priori bound %.6g", sol.umax.max(), bound)
    if identity is not None:
        stats["identity residual"] = identity
        stats["identity ok"] = identity <= tol.quad_tol
    return stats


def run_limit(cfg: ExperimentConfig, out_dir: Path) -> dict:
    tol = cfg.tol
    curve = limit_curve(
        cfg.model, cfg.theta, cfg.dx, fp_tol=tol.fp_tol, max_iter=tol.max_iter,
        snapshot_times=cfg.age_times, floor=tol.renorm_floor,
    )
    write_frame(curve.frame(), out_dir / "curve.csv")
    stats = {"regime": curve.meta["regime"], "lambda_bar sup": curve.sup()}
    if curve.densities:
        copies = simulate_limit_copies(cfg.model, curve, cfg.limit_copies, cfg.theta, cfg.seed)
        ages = age_distance_frame(copies, curve, sorted(curve.densities))
        write_frame(ages, out_dir / "limit_ages.csv")
        for _, r in ages.iterrows():
            stats[f"W1 ages t={r['t']:g}"] = float(r["w1"])
    return stats


# ---------------------------------------------------------------------------
# coupled replicas
# ---------------------------------------------------------------------------


def _coupled_task(args) -> dict:
    model, n, replica, seed, theta, curve, age_times, event_cap = args
    coupled = build_coupled_run(model, n, theta, seed, curve=curve, event_cap=event_cap)
    return coupling_row(coupled, curve, age_times, replica=replica)


def _run_tasks(cfg: ExperimentConfig, curve: MeanIntensityCurve, keys, quiet: bool) -> list[dict]:
    tasks = [
        (cfg.model, n, r, replica_seed(cfg.seed, n, r), cfg.theta, curve, cfg.age_times, cfg.tol.event_cap)
        for n, r in keys
    ]
    jobs = _jobs(cfg.jobs)
    if jobs == 1 or len(tasks) == 1:
        return [_coupled_task(t) for t in tqdm(tasks, desc="coupled runs", disable=quiet)]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(tqdm(ex.map(_coupled_task, tasks), total=len(tasks), desc="coupled runs", disable=quiet))


def _needs_more(rows: list[dict]) -> bool:
    d = np.array([r["delta_n"] for r in rows])
    if len(d) < 2:
        return True
    se = d.std(ddof=1) / math.sqrt(len(d))
    return se > SE_TARGET * d.mean()


def _report(cfg: ExperimentConfig, rows: list[dict], underpowered: list[int]) -> CouplingReport:
    frame = pd.DataFrame(rows).sort_values(["n", "replica"], kind="stable").reset_index(drop=True)
    return CouplingReport(
        rows=frame,
        beta=theoretical_beta(cfg.model, cfg.theta),
        assumptions=validate_config(cfg).as_dict(),
        underpowered=underpowered,
    )


def _write_report(report: CouplingReport, out_dir: Path) -> dict:
    write_frame(report.rows, out_dir / "report.csv")
    write_frame(report.per_n, out_dir / "report_per_n.csv")
    summary = report.summary()
    write_json(summary, out_dir / "summary.json")
    stats = {
        f"n={int(r['n'])} delta_n": f"{r['delta_n_mean']:.4g} +/- {r['delta_n_se']:.2g} ({int(r['replicas'])} replicas)"
        for _, r in report.per_n.iterrows()
    }
    stats["slope"] = summary["slope"]
    stats["beta*theta"] = summary["beta_theta_bound"]
    if report.underpowered:
        stats["underpowered n"] = ",".join(str(n) for n in report.underpowered)
    return stats


def _coupling_curve(cfg: ExperimentConfig) -> MeanIntensityCurve:
    regime = require_regime(validate_config(cfg))
    tol = cfg.tol
    return limit_curve(
        cfg.model, cfg.theta, cfg.dx, fp_tol=tol.fp_tol, max_iter=tol.max_iter,
        snapshot_times=cfg.age_times, floor=tol.renorm_floor, regime=regime,
    )


def run_couple(cfg: ExperimentConfig, out_dir: Path, quiet: bool = False) -> dict:
    curve = _coupling_curve(cfg)
    keys = [(n, r) for n in cfg.n_list for r in range(cfg.replicas)]
    rows = _run_tasks(cfg, curve, keys, quiet)
    return _write_report(_report(cfg, rows, []), out_dir)


def run_sweep(cfg: ExperimentConfig, out_dir: Path, quiet: bool = False) -> dict:
    """
    Coupled runs over n_list. Replicas are added in doubling batches, up to
    max_replicas, until SE(delta_n) <= 0.1 * delta_n for every n.
    """
    curve = _coupling_curve(cfg)
    done: dict[int, list[dict]] = {n: [] for n in cfg.n_list}
    pending = {n: cfg.replicas for n in cfg.n_list}
    while pending:
        keys = [(n, len(done[n]) + r) for n, count in pending.items() for r in range(count)]
        for row in _run_tasks(cfg, curve, keys, quiet):
            done[row["n"]].append(row)
        pending = {}
        for n, rows in done.items():
            have = len(rows)
            if _needs_more(rows) and have < cfg.max_replicas:
                pending[n] = min(have, cfg.max_replicas - have)
        if pending:
            logger.info("adding replicas: %s", ", ".join(f"n={n}: +{k}" for n, k in pending.items()))

    underpowered = [n for n, rows in done.items() if _needs_more(rows)]
    for n in underpowered:
        logger.warning("n=%d is underpowered after %d replicas", n, len(done[n]))
    rows = [r for n in cfg.n_list for r in done[n]]
    return _write_report(_report(cfg, rows, underpowered), out_dir)


def run_validate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    report = validate_config(cfg)
    write_frame(report.frame(), out_dir / "assumptions.csv")
    stats = dict(report.status)
    stats["H1"] = report.h1
    stats["H2"] = report.h2
    try:
        stats["regime"] = require_regime(report)
    except HypothesisError as e:
        logger.warning("%s", e)
        stats["regime"] = None
        stats["regime_error"] = str(e)
    return stats


PIPELINES = {
    "simulate": run_simulate,
    "solve-pde": run_solve_pde,
    "limit": run_limit,
    "validate": run_validate,
}


def run(cfg: ExperimentConfig, quiet: bool = False) -> dict:
    """Dispatch cfg.command and write its artifacts under cfg.output_dir."""
    out_dir = Path(cfg.output_dir)
    if cfg.command == "couple":
        return run_couple(cfg, out_dir, quiet=quiet)
    if cfg.command == "sweep":
        return run_sweep(cfg, out_dir, quiet=quiet)
    return PIPELINES[cfg.command](cfg, out_dir)
