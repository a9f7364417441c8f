from __future__ import annotations
from dataclasses import dataclass, field
from typing import TYPE_CHECKING
import math

import numpy as np
import pandas as pd

from src.errors import HypothesisError
from src.model import ModelSpec

if TYPE_CHECKING:
    from src.config import ExperimentConfig

SATISFIED = "satisfied"
VIOLATED = "violated"
NOT_CHECKABLE = "not-checkable"

ASSUMPTIONS = (
    "initial_density",          # age at time 0 has a bounded density
    "kernel_integrable",        # |H| <= M with M locally integrable
    "past_mean",                # E|F(t)| locally bounded
    "psi_lipschitz",
    "psi_bounded",
    "psi_age_independent",
    "initial_bounded",          # age at time 0 bounded a.s.
    "kernel_square_integrable",
    "past_variance",            # V_F exists, int sqrt(V_F) locally finite, m_F continuous
)


@dataclass
class AssumptionReport:
    status: dict[str, str]
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def h1(self) -> bool:
        return self._ok("psi_bounded", "initial_density") and self.coupling_base

    @property
    def h2(self) -> bool:
        return self._ok("psi_age_independent") and self.coupling_base

    @property
    def coupling_base(self) -> bool:
        return self._ok("kernel_square_integrable", "past_variance", "psi_lipschitz")

    @property
    def well_posed(self) -> bool:
        return self._ok("kernel_integrable", "past_mean", "psi_lipschitz")

    def _ok(self, *names: str) -> bool:
        return all(self.status[n] == SATISFIED for n in names)

    def regime(self) -> str | None:
        if self.h1:
            return "H1"
        if self.h2:
            return "H2"
        return None

    def as_dict(self) -> dict:
        return {
            "assumptions": dict(self.status),
            "notes": dict(self.notes),
            "H1": self.h1,
            "H2": self.h2,
        }

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(k, v, self.notes.get(k, "")) for k, v in self.status.items()],
            columns=["assumption", "status", "note"],
        )


def _finite_on(values: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(values)))


def validate_model(model: ModelSpec, theta: float, points: int = 201) -> AssumptionReport:
    status: dict[str, str] = {}
    notes: dict[str, str] = {}
    base = model.kernel_law.base
    envelope = model.kernel_law.envelope_kernel()
    psi = model.psi
    ts = np.linspace(0.0, model.moment_horizon(theta), points)

    if model.initial.has_density:
        status["initial_density"] = SATISFIED
    else:
        status["initial_density"] = VIOLATED
        notes["initial_density"] = "dirac initial age has no density"

    integral = envelope.envelope_integral(theta)
    status["kernel_integrable"] = SATISFIED if math.isfinite(integral) else VIOLATED
    if not base.is_envelope_nonincreasing():
        notes["kernel_integrable"] = "envelope grows; exact thinning with unbounded Psi is unavailable"

    mean = model.f0(ts)
    status["past_mean"] = SATISFIED if _finite_on(mean) else VIOLATED

    status["psi_lipschitz"] = SATISFIED if math.isfinite(psi.lip) else VIOLATED
    status["psi_bounded"] = SATISFIED if psi.is_bounded else VIOLATED
    status["psi_age_independent"] = SATISFIED if psi.age_independent else VIOLATED
    if not psi.age_independent:
        notes["psi_age_independent"] = f"refractory period delta={psi.delta}"

    bound = model.initial.age_bound
    declared = model.initial.m_t0
    if bound is None:
        status["initial_bounded"] = VIOLATED
        notes["initial_bounded"] = "initial age law has unbounded support"
    elif declared is not None and bound > declared:
        status["initial_bounded"] = VIOLATED
        notes["initial_bounded"] = f"initial ages reach {bound}, above m_t0={declared}"
    else:
        status["initial_bounded"] = SATISFIED
        notes["initial_bounded"] = f"M_T0={bound if declared is None else declared}"

    # every envelope family is bounded on finite windows
    peak = float(np.max(envelope.envelope(np.linspace(0.0, theta, points))))
    status["kernel_square_integrable"] = SATISFIED if math.isfinite(peak) and math.isfinite(integral) else VIOLATED

    if model.past.mode == "zero":
        status["past_variance"] = SATISFIED
    else:
        var = model.past_variance(ts)
        if not _finite_on(var):
            status["past_variance"] = VIOLATED
        elif not model.past.mean_is_continuous(base, model.initial):
            status["past_variance"] = NOT_CHECKABLE
            notes["past_variance"] = "mean past influence jumps (piecewise kernel with a deterministic anchor)"
        else:
            status["past_variance"] = SATISFIED

    return AssumptionReport(status=status, notes=notes)


def require_regime(report: AssumptionReport) -> str:
    """H1 when both hold; raises HypothesisError when neither does."""
    regime = report.regime()
    if regime is not None:
        return regime
    reasons = []
    if report.status["psi_bounded"] != SATISFIED and report.status["psi_age_independent"] != SATISFIED:
        reasons.append(
            "Psi is unbounded and depends on the age (refractory period > 0): "
            "this is outside both convergence regimes"
        )
    elif report.status["psi_bounded"] == SATISFIED and report.status["initial_density"] != SATISFIED:
        reasons.append("bounded age-dependent Psi needs an initial age density")
    if not report.coupling_base:
        failed = [n for n in ("kernel_square_integrable", "past_variance", "psi_lipschitz") if report.status[n] != SATISFIED]
        reasons.append(f"coupling assumptions not satisfied: {', '.join(failed)}")
    raise HypothesisError("; ".join(reasons) or "model satisfies neither H1 nor H2")


def validate_config(cfg: "ExperimentConfig") -> AssumptionReport:
    return validate_model(cfg.model, cfg.theta)
