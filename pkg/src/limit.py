from __future__ import annotations
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from src.errors import ConvergenceError, DomainError, HypothesisError
from src.model import IntensityFn, KernelSpec
from src.paths import PointPath
from src.pde import Grid1D, boundary_residual, solve_pps
from src.thinning import Envelope, GrainStream, thin_next_event

logger = logging.getLogger(__name__)

PROVENANCES = ("pde", "volterra")


@dataclass
class MeanIntensityCurve:
    """
    lambda_bar on the grid, with gamma_bar(t) = int_0^t m(t-z) lambda_bar(z) dz + f0(t).
    Both are linearly interpolated between nodes.
    """

    times: np.ndarray
    values: np.ndarray
    gamma: np.ndarray
    provenance: str
    ages: np.ndarray | None = None
    densities: dict[float, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"provenance must be one of {PROVENANCES}")

    @property
    def dx(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t):
        return np.interp(t, self.times, self.values)

    def gamma_at(self, t):
        return np.interp(t, self.times, self.gamma)

    def gamma_abs_sup(self, t0: float, t1: float) -> float:
        inside = (self.times > t0) & (self.times < t1)
        ends = np.abs(self.gamma_at(np.array([t0, t1])))
        if inside.any():
            return float(max(ends.max(), np.abs(self.gamma[inside]).max()))
        return float(ends.max())

    def sup(self) -> float:
        return float(self.values.max())

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "lambda_bar": self.values, "gamma_bar": self.gamma})


def mean_intensity_upper_bound(psi: IntensityFn, kernel: KernelSpec, f0_sup: float) -> float | None:
    """(Phi(0) + Lip ||f0||_inf) / (1 - Lip ||h||_1), or None when Lip ||h||_1 >= 1."""
    contraction = psi.lip * kernel.l1_norm()
    if not contraction < 1:
        return None
    return (psi.phi_zero + psi.lip * f0_sup) / (1.0 - contraction)


def mean_intensity_bounded(
    psi: IntensityFn,
    m_kernel: KernelSpec,
    m_past,
    u_in,
    grid: Grid1D,
    fp_tol: float = 1e-10,
    max_iter: int = 50,
    snapshot_times=None,
) -> MeanIntensityCurve:
    sol = solve_pps(psi, m_kernel, m_past, u_in, grid, fp_tol=fp_tol, max_iter=max_iter, snapshot_times=snapshot_times)
    densities = {}
    for t in snapshot_times or ():
        densities[float(t)] = sol.density_at(t).copy()
    curve = MeanIntensityCurve(
        times=sol.times,
        values=sol.u0.copy(),
        gamma=sol.X + sol.f0,
        provenance="pde",
        ages=grid.ages,
        densities=densities,
        meta={
            "identity_residual": boundary_residual(sol, psi),
            "max_mass_error": sol.max_mass_error(),
            "max_density": float(sol.umax.max()),
            "renormalized_by": sol.meta["renormalized_by"],
        },
    )
    logger.info(
        "mean intensity (pde): sup=%.6g identity residual=%.3e",
        curve.sup(),
        curve.meta["identity_residual"],
    )
    return curve


def mean_intensity_age_independent(
    psi0: IntensityFn,
    m_kernel: KernelSpec,
    m_past,
    grid: Grid1D,
    fp_tol: float = 1e-10,
    max_iter: int = 50,
) -> MeanIntensityCurve:
    """
    lambda_bar(t) = Psi_0( int_0^t h(t-z) lambda_bar(z) dz + f0(t) ) marched with trapezoid
    memory; the implicit last term is resolved by a per-step fixed point.
    """
    if not psi0.age_independent:
        raise HypothesisError("age-independent pipeline needs Psi(s, .) = Psi_0 (refractory period 0)")
    times, dx, K = grid.times, grid.dx, grid.K
    if callable(m_past):
        F0 = np.asarray(m_past(times), dtype=float).reshape(times.shape)
    elif m_past is None:
        F0 = np.zeros_like(times)
    else:
        F0 = np.broadcast_to(np.asarray(m_past, dtype=float), times.shape).copy()
    if not np.all(np.isfinite(F0)):
        raise HypothesisError("m_past must be finite on the grid")
    hk = np.asarray(m_kernel(times), dtype=float)
    phi = psi0.phi_of

    lam = np.empty(K + 1)
    gamma = np.empty(K + 1)
    gamma[0] = F0[0]
    lam[0] = float(phi(F0[0]))
    half = 0.5 * dx * hk[0]

    for k in range(1, K + 1):
        history = dx * (0.5 * hk[k] * lam[0] + np.dot(hk[k - 1 : 0 : -1], lam[1:k])) + F0[k]
        cur = lam[k - 1]
        residual = math.inf
        for _ in range(max_iter):
            nxt = float(phi(history + half * cur))
            residual = abs(nxt - cur)
            cur = nxt
            if residual <= fp_tol * max(1.0, abs(cur)):
                break
        else:
            unstable = psi0.lip * m_kernel.l1_norm() >= 1
            raise ConvergenceError(
                f"mean intensity step at t={times[k]:.6g} did not converge"
                + (" (Lip * ||h||_1 >= 1: beyond the stability threshold)" if unstable else ""),
                residual,
                max_iter,
            )
        if not math.isfinite(cur):
            raise ConvergenceError(f"mean intensity diverged at t={times[k]:.6g}", math.inf, max_iter)
        lam[k] = cur
        gamma[k] = history + half * cur

    bound = mean_intensity_upper_bound(psi0, m_kernel, float(np.abs(F0).max()))
    curve = MeanIntensityCurve(
        times=times,
        values=lam,
        gamma=gamma,
        provenance="volterra",
        meta={"uniform_bound": bound},
    )
    logger.info("mean intensity (volterra): sup=%.6g", curve.sup())
    return curve


def limit_envelope(curve: MeanIntensityCurve, psi: IntensityFn, theta: float, window: float = 0.25) -> Envelope:
    if psi.is_bounded:
        return Envelope.constant(psi.sup_bound, 0.0, theta)
    m = max(1, int(math.ceil(theta / window)))
    breaks = np.linspace(0.0, theta, m + 1)
    levels = [
        float(psi.dominating_rate(curve.gamma_abs_sup(a, b))) for a, b in zip(breaks[:-1], breaks[1:])
    ]
    return Envelope(breaks=tuple(float(b) for b in breaks), levels=tuple(levels))


def simulate_limit_process(
    curve: MeanIntensityCurve,
    psi: IntensityFn,
    past: PointPath,
    stream: GrainStream,
    theta: float,
    envelope: Envelope | None = None,
) -> PointPath:
    """
    Thinning sample of the limit process with intensity Psi(S_{t-}, gamma_bar(t)).

    The past and the grain stream are supplied by the caller; sharing them with a
    particle of the n-particle system realises the coupling.
    """
    if curve.horizon < theta - 1e-9:
        raise DomainError(f"mean intensity curve stops at {curve.horizon}, before theta={theta}")
    env = envelope if envelope is not None else limit_envelope(curve, psi, theta)
    last = past.last_past
    times, gam = curve.times, curve.gamma

    def intensity(t: float) -> float:
        return psi.rate(t - last, float(np.interp(t, times, gam)))

    events = []
    t_now = 0.0
    while True:
        t = thin_next_event(stream, t_now, theta, env, intensity)
        if t is None:
            break
        events.append(t)
        last = t
        t_now = t
    return past.with_events(events, theta)
