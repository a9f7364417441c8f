from __future__ import annotations
from dataclasses import dataclass, field
from typing import Callable
import logging
import math

import numpy as np
import pandas as pd

from src.errors import ConvergenceError, DomainError, HypothesisError
from src.model import InitialLaw, IntensityFn, KernelSpec

logger = logging.getLogger(__name__)

MAX_STORED_ENTRIES = 5_000_000


@dataclass(frozen=True)
class Grid1D:
    """Shared time/age step: t_k = k*dx for k <= K, s_j = j*dx for j <= J.

    K is the first index with K*dx >= T, so the time grid always covers [0, T].
    """

    dx: float
    T: float
    s_max: float

    def __post_init__(self):
        if self.dx <= 0:
            raise DomainError(f"grid step must be > 0, got {self.dx}")
        if self.T < 0 or self.s_max < self.T:
            raise DomainError("grid needs 0 <= T <= s_max")

    @property
    def K(self) -> int:
        return int(math.ceil(self.T / self.dx - 1e-9))

    @property
    def end(self) -> float:
        return self.K * self.dx

    @property
    def J(self) -> int:
        return int(math.ceil(self.s_max / self.dx - 1e-9))

    @property
    def times(self) -> np.ndarray:
        return self.dx * np.arange(self.K + 1)

    @property
    def ages(self) -> np.ndarray:
        return self.dx * np.arange(self.J + 1)

    def index(self, t: float) -> int:
        k = int(round(t / self.dx))
        if k < 0 or k > self.K:
            raise DomainError(f"time {t} is outside the grid [0, {self.end}]")
        return k


def make_grid(dx: float, T: float, initial: InitialLaw, floor: float = 1e-12) -> Grid1D:
    """Age cutoff = support of u_in + K*dx, so no mass reaches it before the last step."""
    if not initial.has_density:
        raise HypothesisError("the age-structured system needs an initial age density (dirac given)")
    support = initial.support_bound(floor)
    s_max = dx * math.ceil((support + T) / dx) + dx
    return Grid1D(dx=dx, T=T, s_max=s_max)


def trapezoid(values: np.ndarray, dx: float) -> float:
    return float(dx * (values.sum() - 0.5 * (values[0] + values[-1])))


@dataclass
class DensityGrid:
    grid: Grid1D
    saved_k: np.ndarray
    u: np.ndarray
    u0: np.ndarray
    X: np.ndarray
    f0: np.ndarray
    mass: np.ndarray
    umax: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def density_at(self, t: float) -> np.ndarray:
        k = self.grid.index(t)
        hit = np.flatnonzero(self.saved_k == k)
        if len(hit) == 0:
            raise DomainError(f"density at t={t} was not stored; pass it in snapshot_times")
        return self.u[hit[0]]

    def max_mass_error(self) -> float:
        return float(np.max(np.abs(self.mass - 1.0)))

    def density_frame(self) -> pd.DataFrame:
        ages = self.grid.ages
        frames = [
            pd.DataFrame({"t": self.grid.dx * k, "s": ages, "u": row})
            for k, row in zip(self.saved_k, self.u)
        ]
        return pd.concat(frames, ignore_index=True)

    def boundary_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "u0": self.u0, "X": self.X})


def _initial_density(u_in, grid: Grid1D, floor: float) -> tuple[np.ndarray, float]:
    ages = grid.ages
    if isinstance(u_in, InitialLaw):
        if not u_in.has_density:
            raise HypothesisError("the age-structured system needs an initial age density (dirac given)")
        dens = u_in.density(ages)
        dens = np.where(dens < floor, 0.0, dens)
    elif callable(u_in):
        dens = np.asarray(u_in(ages), dtype=float)
    else:
        dens = np.asarray(u_in, dtype=float)
        if dens.shape != ages.shape:
            raise DomainError(f"initial density has {dens.size} nodes, grid has {ages.size}")
    if not np.all(np.isfinite(dens)):
        raise HypothesisError("initial density must be bounded")
    if np.any(dens < 0):
        raise DomainError("initial density must be non-negative")
    tail = ages > grid.s_max - grid.end
    if np.any(dens[tail] > floor):
        raise DomainError("age cutoff too small: initial mass would cross s_max before T")
    mass = trapezoid(dens, grid.dx)
    if mass <= 0:
        raise DomainError("initial density has zero mass")
    return dens / mass, mass


def _save_plan(grid: Grid1D, snapshot_times) -> tuple[int, set[int]]:
    K, J = grid.K, grid.J
    every = max(1, int(math.ceil((K + 1) * (J + 1) / MAX_STORED_ENTRIES)))
    forced = {0, K}
    for t in snapshot_times or ():
        forced.add(grid.index(t))
    return every, forced


class _Marcher:
    """One forward sweep along unit-speed characteristics."""

    def __init__(self, u_init: np.ndarray, grid: Grid1D, snapshot_times):
        self.grid = grid
        self.dx = grid.dx
        self.u = u_init.copy()
        self.every, self.forced = _save_plan(grid, snapshot_times)
        self.saved_k: list[int] = []
        self.rows: list[np.ndarray] = []
        K = grid.K
        self.mass = np.empty(K + 1)
        self.umax = np.empty(K + 1)
        self._store(0)

    def _store(self, k: int) -> None:
        self.mass[k] = trapezoid(self.u, self.dx)
        self.umax[k] = float(self.u.max())
        if k % self.every == 0 or k in self.forced:
            self.saved_k.append(k)
            self.rows.append(self.u.copy())

    def trial(self, f_old: np.ndarray, f_new: np.ndarray) -> tuple[np.ndarray, float]:
        """Transport one step and solve the implicit trapezoid boundary condition."""
        if not (np.all(np.isfinite(f_new)) and np.all(np.isfinite(f_old))):
            raise DomainError("firing rate must be bounded on the grid")
        dx = self.dx
        new = np.empty_like(self.u)
        new[1:] = self.u[:-1] * np.exp(-0.5 * dx * (f_old[:-1] + f_new[1:]))
        denom = 1.0 - 0.5 * dx * f_new[0]
        if denom <= 0:
            raise DomainError("grid step too coarse for the firing rate (dx * f(t,0) >= 2)")
        interior = dx * (np.dot(f_new[1:-1], new[1:-1]) + 0.5 * f_new[-1] * new[-1])
        u0 = interior / denom
        new[0] = u0
        return new, u0

    def commit(self, k: int, new: np.ndarray) -> None:
        self.u = new
        self._store(k)

    def saved(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.saved_k), np.vstack(self.rows)


def solve_linear_pps(
    f: Callable[[float, np.ndarray], np.ndarray] | float,
    u_in,
    grid: Grid1D,
    snapshot_times=None,
    floor: float = 1e-12,
) -> DensityGrid:
    """
    du/dt + du/ds + f(t,s) u = 0,  u(t,0) = int f(t,s) u(t,s) ds,  u(0,.) = u_in.

    Transport is an exact shift on the grid; the integrating factor along each
    characteristic and the boundary integral use the trapezoid rule.
    """
    if not callable(f):
        rate = float(f)
        f = lambda t, s, _r=rate: np.full_like(s, _r)  # noqa: E731
    dens, mass0 = _initial_density(u_in, grid, floor)
    ages, times = grid.ages, grid.times
    march = _Marcher(dens, grid, snapshot_times)

    f_old = np.asarray(f(0.0, ages), dtype=float)
    if not np.all(np.isfinite(f_old)):
        raise DomainError("firing rate must be bounded on the grid")
    u0 = np.empty(grid.K + 1)
    u0[0] = trapezoid(f_old * dens, grid.dx)
    for k in range(grid.K):
        f_new = np.asarray(f(times[k + 1], ages), dtype=float)
        new, u0[k + 1] = march.trial(f_old, f_new)
        march.commit(k + 1, new)
        f_old = f_new

    saved_k, rows = march.saved()
    return DensityGrid(
        grid=grid,
        saved_k=saved_k,
        u=rows,
        u0=u0,
        X=np.zeros(grid.K + 1),
        f0=np.zeros(grid.K + 1),
        mass=march.mass,
        umax=march.umax,
        meta={"kind": "linear", "renormalized_by": mass0},
    )


def _on_grid(values, times: np.ndarray) -> np.ndarray:
    if values is None:
        return np.zeros_like(times)
    if callable(values):
        return np.asarray(values(times), dtype=float).reshape(times.shape)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full_like(times, float(arr))
    if arr.shape != times.shape:
        raise DomainError(f"expected {times.size} grid values, got {arr.size}")
    return arr


def solve_pps(
    psi: IntensityFn,
    h: KernelSpec,
    f0,
    u_in,
    grid: Grid1D,
    fp_tol: float = 1e-10,
    max_iter: int = 50,
    snapshot_times=None,
    floor: float = 1e-12,
) -> DensityGrid:
    """
    Nonlinear age-structured system with f(t,s) = Psi(s, X(t) + f0(t)) and
    X(t) = int_0^t h(t-z) u(z,0) dz.

    Each step solves its own scalar fixed point in X(t_{k+1}) by Picard iteration;
    the trapezoid memory makes the step causal.
    """
    if not psi.is_bounded:
        raise HypothesisError(
            "solve_pps needs a bounded intensity; use mean_intensity_age_independent for unbounded Psi"
        )
    dens, mass0 = _initial_density(u_in, grid, floor)
    ages, times, dx = grid.ages, grid.times, grid.dx
    K = grid.K
    F0 = _on_grid(f0, times)
    if not np.all(np.isfinite(F0)):
        raise HypothesisError("f0 must be finite on the grid")
    hk = np.asarray(h(times), dtype=float)
    march = _Marcher(dens, grid, snapshot_times)

    X = np.zeros(K + 1)
    u0 = np.empty(K + 1)
    f_old = psi(ages, F0[0])
    u0[0] = trapezoid(f_old * dens, dx)
    iterations = np.zeros(K + 1, dtype=int)

    for k in range(K):
        history = dx * (0.5 * hk[k + 1] * u0[0] + np.dot(hk[k:0:-1], u0[1 : k + 1]))
        x_cur = history + 0.5 * dx * hk[0] * u0[k]
        residual = math.inf
        for it in range(1, max_iter + 1):
            f_new = psi(ages, x_cur + F0[k + 1])
            new, u0_new = march.trial(f_old, f_new)
            x_next = history + 0.5 * dx * hk[0] * u0_new
            residual = abs(x_next - x_cur)
            x_cur = x_next
            if residual <= fp_tol:
                break
        else:
            raise ConvergenceError(f"Picard step at t={times[k + 1]:.6g} did not converge", residual, max_iter)
        iterations[k + 1] = it
        X[k + 1] = x_cur
        u0[k + 1] = u0_new
        march.commit(k + 1, new)
        f_old = f_new

    logger.debug("solve_pps: max Picard iterations %d", int(iterations.max(initial=0)))
    saved_k, rows = march.saved()
    return DensityGrid(
        grid=grid,
        saved_k=saved_k,
        u=rows,
        u0=u0,
        X=X,
        f0=F0,
        mass=march.mass,
        umax=march.umax,
        meta={
            "kind": "nonlinear",
            "renormalized_by": mass0,
            "max_iterations": int(iterations.max(initial=0)),
            "psi": psi,
            "kernel": h,
        },
    )


def boundary_residual(sol: DensityGrid, psi: IntensityFn) -> float:
    """sup over stored rows of |u0 - int Psi(s, X + f0) u ds|."""
    ages, dx = sol.grid.ages, sol.grid.dx
    worst = 0.0
    for k, row in zip(sol.saved_k, sol.u):
        integral = trapezoid(psi(ages, sol.X[k] + sol.f0[k]) * row, dx)
        worst = max(worst, abs(integral - sol.u0[k]))
    return worst
