from __future__ import annotations
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from src.assumptions import require_regime, validate_model
from src.errors import DomainError
from src.limit import (
    MeanIntensityCurve,
    limit_envelope,
    mean_intensity_age_independent,
    mean_intensity_bounded,
    mean_intensity_upper_bound,
    simulate_limit_process,
)
from src.metrics import (
    RateFit,
    delta_count,
    fit_rate,
    summarize,
    sup_age_gap,
    w1_empirical_vs_density,
    w1_tilde_empirical_vs_density,
)
from src.model import ModelSpec
from src.particle import (
    DEFAULT_EVENT_CAP,
    ParticleSystemRun,
    PointPath,
    ages_at,
    draw_network,
    draw_pasts_and_streams,
    simulate_adrhp,
)
from src.pde import Grid1D, make_grid, solve_linear_pps

logger = logging.getLogger(__name__)

MOMENT_POINTS = 1001


# ---------------------------------------------------------------------------
# limit side
# ---------------------------------------------------------------------------


def limit_curve(
    model: ModelSpec,
    theta: float,
    dx: float,
    fp_tol: float = 1e-10,
    max_iter: int = 50,
    snapshot_times=(),
    floor: float = 1e-12,
    regime: str | None = None,
) -> MeanIntensityCurve:
    """
    Mean intensity of the limit process in the regime the model satisfies:
    the age-structured system under H1, the Volterra equation under H2.

    Under H2 the age densities at snapshot_times come from the linear system with
    firing rate lambda_bar(t), when the initial age has a density.
    """
    if regime is None:
        regime = require_regime(validate_model(model, theta))
    snapshot_times = tuple(float(t) for t in snapshot_times)
    psi, m_kernel = model.psi, model.mean_kernel

    if regime == "H1":
        grid = make_grid(dx, theta, model.initial, floor)
        curve = mean_intensity_bounded(
            psi, m_kernel, model.f0, model.initial, grid,
            fp_tol=fp_tol, max_iter=max_iter, snapshot_times=snapshot_times,
        )
    elif regime == "H2":
        curve = mean_intensity_age_independent(
            psi, m_kernel, model.f0, Grid1D(dx=dx, T=theta, s_max=theta),
            fp_tol=fp_tol, max_iter=max_iter,
        )
        if snapshot_times and model.initial.has_density:
            grid = make_grid(dx, theta, model.initial, floor)
            sol = solve_linear_pps(
                lambda t, s: np.full_like(s, float(curve.at(t))),
                model.initial, grid, snapshot_times=snapshot_times, floor=floor,
            )
            curve.ages = grid.ages
            curve.densities = {t: sol.density_at(t).copy() for t in snapshot_times}
            curve.meta["max_mass_error"] = sol.max_mass_error()
    else:
        raise DomainError(f"regime must be 'H1' or 'H2', got {regime!r}")
    curve.meta["regime"] = regime
    return curve


def simulate_limit_copies(
    model: ModelSpec, curve: MeanIntensityCurve, count: int, theta: float, seed: int
) -> list[PointPath]:
    """count i.i.d. limit processes; copy i uses the past and stream of particle i."""
    pasts, streams = draw_pasts_and_streams(model, count, seed)
    env = limit_envelope(curve, model.psi, theta)
    return [
        simulate_limit_process(curve, model.psi, past, stream, theta, env)
        for past, stream in zip(pasts, streams)
    ]


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------


@dataclass
class CoupledRun:
    """Particle system and n limit copies driven by the same pasts and grain streams."""

    n: int
    theta: float
    seed: int
    regime: str
    particle: ParticleSystemRun
    limit_paths: list[PointPath]

    def pairs(self):
        return zip(self.particle.paths, self.limit_paths)

    def delta_counts(self, theta: float | None = None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        return np.array([delta_count(a, b, theta) for a, b in self.pairs()])

    def age_gaps(self) -> np.ndarray:
        return np.array([sup_age_gap(a, b, self.theta) for a, b in self.pairs()])


def build_coupled_run(
    model: ModelSpec,
    n: int,
    theta: float,
    seed: int,
    curve: MeanIntensityCurve | None = None,
    dx: float = 1e-3,
    fp_tol: float = 1e-10,
    max_iter: int = 50,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> CoupledRun:
    regime = require_regime(validate_model(model, theta))
    if curve is None:
        curve = limit_curve(model, theta, dx, fp_tol=fp_tol, max_iter=max_iter, regime=regime)
    draw = draw_network(model, n, seed)
    run = simulate_adrhp(model, n, theta, seed, draw=draw, event_cap=event_cap)
    env = limit_envelope(curve, model.psi, theta)
    limit_paths = [
        simulate_limit_process(curve, model.psi, past, stream, theta, env)
        for past, stream in zip(draw.pasts, draw.streams)
    ]
    return CoupledRun(n=n, theta=theta, seed=seed, regime=regime, particle=run, limit_paths=limit_paths)


def age_column(t: float) -> str:
    return f"w1_age@{t:g}"


def coupling_row(coupled: CoupledRun, curve: MeanIntensityCurve, age_times=(), replica: int = 0) -> dict:
    deltas = coupled.delta_counts()
    gaps = coupled.age_gaps()
    row = {
        "n": coupled.n,
        "replica": replica,
        "delta_n": float(deltas.mean()),
        "age_gap": float(gaps.mean()),
        "p_differ": float(np.mean(gaps > 0)),
        "events": coupled.particle.total_events,
    }
    for t in age_times:
        density = curve.densities.get(float(t))
        if density is None:
            continue
        ages = ages_at(coupled.particle.paths, t)
        row[age_column(t)] = w1_empirical_vs_density(ages, density, curve.ages)
    return row


def age_distance_frame(paths: list[PointPath], curve: MeanIntensityCurve, times) -> pd.DataFrame:
    """W1 and W1-tilde between the empirical ages of paths and u(t, .)."""
    rows = []
    for t in times:
        density = curve.densities.get(float(t))
        if density is None:
            raise DomainError(f"no age density stored at t={t}")
        ages = ages_at(paths, t)
        rows.append({
            "t": float(t),
            "count": len(ages),
            "w1": w1_empirical_vs_density(ages, density, curve.ages),
            "w1_tilde": w1_tilde_empirical_vs_density(ages, density, curve.ages),
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# theoretical bound
# ---------------------------------------------------------------------------


@dataclass
class BetaBound:
    value: float | None         # beta * theta, or None
    beta: float | None
    regime: str | None
    reason: str = ""
    parts: dict = field(default_factory=dict)


def theoretical_beta(model: ModelSpec, theta: float, points: int = MOMENT_POINTS) -> BetaBound:
    """
    Linear-in-theta bound beta * theta on delta_n(theta) * sqrt(n), in the
    stationary setting alpha = Lip * ||M||_1 < 1.

        H1:  Lip / (1 - (alpha + ||Psi||_inf theta)) * (||M||_2 ||Psi||_inf^1/2 + sqrt(3) ||M||_1 ||Psi||_inf + ||V||_inf^1/2)
        H2:  Lip / (1 - alpha) * (||M||_2 ||lambda_bar||_inf^1/2 + ||M||_1 ||lambda_bar||_inf + ||V||_inf^1/2)

    with ||lambda_bar||_inf <= (Phi(0) + Lip ||m_F||_inf) / (1 - Lip ||m_H||_1).
    """
    psi = model.psi
    lip = psi.lip
    if lip == 0:
        return BetaBound(value=0.0, beta=0.0, regime=None, reason="Lip(Psi) = 0: no interaction gap")

    report = validate_model(model, theta)
    if not (report.h1 or report.h2):
        return BetaBound(None, None, None, reason="model satisfies neither H1 nor H2")

    env = model.kernel_law.envelope_kernel()
    if not env.is_envelope_nonincreasing():
        return BetaBound(None, None, None, reason="kernel envelope is not integrable on [0, inf)")
    m1, m2 = env.envelope_l1(), env.envelope_l2()
    alpha = lip * m1
    parts = {"lip": lip, "alpha": alpha, "M_l1": m1, "M_l2": m2}
    if not alpha < 1:
        return BetaBound(None, None, None, reason=f"alpha = Lip * ||M||_1 = {alpha:.6g} >= 1", parts=parts)
    if not math.isfinite(m2):
        return BetaBound(None, None, None, reason="||M||_2 is infinite", parts=parts)

    ts = np.linspace(0.0, model.moment_horizon(theta), points)
    v_sup = float(np.max(model.past_variance(ts)))
    mf_sup = float(np.max(np.abs(model.f0(ts))))
    parts.update({"V_sup": v_sup, "m_F_sup": mf_sup})
    if not (math.isfinite(v_sup) and math.isfinite(mf_sup)):
        return BetaBound(None, None, None, reason="past moments are not bounded", parts=parts)

    reasons = []
    if report.h1:
        sup = psi.sup_bound
        gate = (1.0 - alpha) / sup if sup > 0 else math.inf
        parts["theta_max"] = gate
        if theta < gate:
            beta = lip / (1.0 - (alpha + sup * theta)) * (
                m2 * math.sqrt(sup) + math.sqrt(3.0) * m1 * sup + math.sqrt(v_sup)
            )
            return BetaBound(beta * theta, beta, "H1", parts=parts)
        reasons.append(f"theta = {theta:g} >= (1 - alpha) / ||Psi||_inf = {gate:.6g}")

    if report.h2:
        lam_sup = mean_intensity_upper_bound(psi, model.mean_kernel, mf_sup)
        if lam_sup is None:
            reasons.append("Lip * ||m_H||_1 >= 1: mean intensity bound unavailable")
        else:
            parts["lambda_sup"] = lam_sup
            beta = lip / (1.0 - alpha) * (m2 * math.sqrt(lam_sup) + m1 * lam_sup + math.sqrt(v_sup))
            return BetaBound(beta * theta, beta, "H2", parts=parts)

    return BetaBound(None, None, None, reason="; ".join(reasons), parts=parts)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class CouplingReport:
    rows: pd.DataFrame
    beta: BetaBound
    assumptions: dict
    underpowered: list[int] = field(default_factory=list)

    @property
    def per_n(self) -> pd.DataFrame:
        return summarize(self.rows)

    def fit(self) -> RateFit | None:
        agg = self.per_n
        if len(agg) < 3 or not np.all(agg["delta_n_mean"] > 0):
            return None
        return fit_rate(agg["n"], agg["delta_n_mean"])

    def bound_check(self) -> list[dict]:
        if self.beta.value is None:
            return []
        out = []
        for _, r in self.per_n.iterrows():
            se = r["delta_n_se"] if math.isfinite(r["delta_n_se"]) else 0.0
            limit = self.beta.value / math.sqrt(r["n"]) + 4.0 * se
            out.append({"n": int(r["n"]), "delta_n": float(r["delta_n_mean"]), "bound": limit, "ok": bool(r["delta_n_mean"] <= limit)})
        return out

    def summary(self) -> dict:
        fit = self.fit()
        per_n = self.per_n
        return {
            "slope": None if fit is None else fit.slope,
            "slope_se": None if fit is None else fit.slope_se,
            "intercept": None if fit is None else fit.intercept,
            "fit_residual": None if fit is None else fit.residual,
            "beta_theta_bound": self.beta.value,
            "beta": self.beta.beta,
            "beta_regime": self.beta.regime,
            "beta_reason": self.beta.reason,
            "assumptions": self.assumptions,
            "underpowered": self.underpowered,
            "per_n": per_n.to_dict(orient="records"),
            "bound_check": self.bound_check(),
        }
