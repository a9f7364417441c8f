from __future__ import annotations
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from src.errors import DomainError, ExplosionError, HypothesisError
from src.model import (
    InteractionMatrix,
    KernelSpec,
    ModelSpec,
    sample_initial_past,
    sample_interaction_matrix,
)
from src.paths import PointPath, age_at, ages_at  # noqa: F401  (re-exported)
from src.thinning import GrainStream, check_envelope

logger = logging.getLogger(__name__)

DEFAULT_EVENT_CAP = 1_000_000
MATRIX_TAG = 0
PAST_TAG = 1


# ---------------------------------------------------------------------------
# shared randomness
# ---------------------------------------------------------------------------


@dataclass
class NetworkDraw:
    """Everything random that is fixed at time 0, plus the grain streams."""

    seed: int
    matrix: InteractionMatrix
    pasts: list[PointPath]
    streams: list[GrainStream]

    @property
    def n(self) -> int:
        return len(self.pasts)


def _tagged_rng(seed: int, tag: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(tag,))
    return np.random.default_rng(ss)


def draw_pasts_and_streams(model: ModelSpec, n: int, seed: int) -> tuple[list[PointPath], list[GrainStream]]:
    """Initial pasts and grain streams of particles 0..n-1; no interaction matrix is drawn."""
    if n < 1:
        raise DomainError(f"network size must be >= 1, got {n}")
    past_rng = _tagged_rng(seed, PAST_TAG)
    pasts = [sample_initial_past(model.initial, past_rng) for _ in range(n)]
    streams = [GrainStream(seed=seed, stream_id=i) for i in range(n)]
    return pasts, streams


def draw_network(model: ModelSpec, n: int, seed: int) -> NetworkDraw:
    pasts, streams = draw_pasts_and_streams(model, n, seed)
    matrix = sample_interaction_matrix(
        model.kernel_law, n, _tagged_rng(seed, MATRIX_TAG), model.zero_self_interaction
    )
    return NetworkDraw(seed=seed, matrix=matrix, pasts=pasts, streams=streams)


# ---------------------------------------------------------------------------
# interaction sums  sum_j c_ij sum_{T in N^j} g(t - T)
# ---------------------------------------------------------------------------


class _ExpConvolution:
    """O(1) evaluation / O(n) update for g(t) = alpha * exp(-beta t)."""

    def __init__(self, weights: np.ndarray, alpha: float, beta: float, anchors: np.ndarray | None):
        self.w = weights
        self.alpha = alpha
        self.beta = beta
        self.t_ref = 0.0
        if anchors is None or alpha == 0:
            self.state = np.zeros(weights.shape[0])
        else:
            self.state = weights @ np.exp(beta * anchors)

    def value(self, i: int, t: float) -> float:
        return self.alpha * self.state[i] * math.exp(-self.beta * (t - self.t_ref))

    def values_all(self, t: float) -> np.ndarray:
        return self.alpha * self.state * math.exp(-self.beta * (t - self.t_ref))

    def add_event(self, j: int, t: float) -> None:
        self.state *= math.exp(-self.beta * (t - self.t_ref))
        self.state += self.w[:, j]
        self.t_ref = t


class _SumConvolution:
    """Direct O(events) sum for kernels without a recursion."""

    def __init__(self, weights: np.ndarray, kernel, anchors: np.ndarray | None):
        self.w = weights
        self.kernel = kernel
        n = weights.shape[0]
        cap = max(64, 2 * n)
        self.times = np.empty(cap)
        self.sources = np.empty(cap, dtype=np.int64)
        self.size = 0
        if anchors is not None:
            for j, a in enumerate(anchors):
                self.add_event(j, float(a))

    def value(self, i: int, t: float) -> float:
        k = self.size
        if k == 0:
            return 0.0
        return float(self.w[i, self.sources[:k]] @ self.kernel(t - self.times[:k]))

    def values_all(self, t: float) -> np.ndarray:
        k = self.size
        if k == 0:
            return np.zeros(self.w.shape[0])
        return self.w[:, self.sources[:k]] @ self.kernel(t - self.times[:k])

    def add_event(self, j: int, t: float) -> None:
        if self.size == len(self.times):
            self.times = np.resize(self.times, 2 * self.size)
            self.sources = np.resize(self.sources, 2 * self.size)
        self.times[self.size] = t
        self.sources[self.size] = j
        self.size += 1


def _signed_convolution(base: KernelSpec, weights, anchors):
    if base.uses_exponential_recursion():
        return _ExpConvolution(weights, base.alpha, base.beta, anchors)
    return _SumConvolution(weights, base, anchors)


def _abs_convolution(base: KernelSpec, weights, anchors):
    """sum |w| |h|; coincides with the envelope sum for exponential kernels with beta >= 0."""
    if base.uses_exponential_recursion():
        return _ExpConvolution(np.abs(weights), abs(base.alpha), base.beta, anchors)
    return _SumConvolution(np.abs(weights), lambda t: np.abs(base(t)), anchors)


def _envelope_convolution(base: KernelSpec, weights, anchors):
    if base.uses_exponential_recursion():
        return _ExpConvolution(np.abs(weights), abs(base.alpha), base.beta, anchors)
    return _SumConvolution(np.abs(weights), base.envelope, anchors)


# ---------------------------------------------------------------------------
# rate models
# ---------------------------------------------------------------------------


class _RateModel:
    """Intensity and envelope of one of the two systems driven by the event loop."""

    static_level: float | None = None

    def __init__(self, model: ModelSpec, draw: NetworkDraw, headroom: float):
        self.psi = model.psi
        self.n = draw.n
        self.base = draw.matrix.base
        weights = draw.matrix.weights
        anchors = model.past.anchors(draw.pasts)
        self.last = np.array([p.last_past for p in draw.pasts], dtype=float)
        self.bound = None
        self.budget = math.inf
        self.headroom_x = np.zeros(self.n)

        if self.static_level is None:
            if not self.base.is_envelope_nonincreasing():
                raise HypothesisError(
                    "unbounded intensity needs a non-increasing kernel envelope for exact thinning"
                )
            self.bound = _envelope_convolution(self.base, weights, anchors)
            # the level stays valid for `budget` further network events
            self.budget = max(1, int(math.ceil(headroom * self.n)))
            row_max = np.abs(weights).max(axis=1)
            self.headroom_x = self.budget * row_max * self.base.sup_norm() / self.n

    def envelope(self, t: float) -> tuple[np.ndarray, float]:
        if self.static_level is not None:
            return np.full(self.n, self.static_level), math.inf
        xabs = self.bound.values_all(t) / self.n + self.headroom_x
        return self._dominating(xabs), self.budget

    def _dominating(self, xabs: np.ndarray) -> np.ndarray:
        return np.asarray(self.psi.dominating_rate(xabs), dtype=float)

    def intensity(self, i: int, t: float) -> float:
        raise NotImplementedError

    def record(self, i: int, t: float) -> None:
        self.last[i] = t
        if self.bound is not None:
            self.bound.add_event(i, t)


class _AdrhpRates(_RateModel):
    def __init__(self, model: ModelSpec, draw: NetworkDraw, headroom: float):
        psi = model.psi
        if psi.is_bounded:
            self.static_level = psi.sup_bound
        elif psi.lip == 0:
            self.static_level = psi.phi_zero
        super().__init__(model, draw, headroom)
        self.signal = _signed_convolution(
            self.base, draw.matrix.weights, model.past.anchors(draw.pasts)
        )

    def intensity(self, i: int, t: float) -> float:
        x = self.signal.value(i, t) / self.n
        return self.psi.rate(t - self.last[i], x)

    def record(self, i: int, t: float) -> None:
        super().record(i, t)
        self.signal.add_event(i, t)


class _DominatingRates(_RateModel):
    """Linear Hawkes: sup_s Psi(s,0) + Lip * (1/n) sum_j [ |H_ij| * N^j + |F_ij| ]."""

    def __init__(self, model: ModelSpec, draw: NetworkDraw, headroom: float):
        if model.psi.lip == 0:
            self.static_level = model.psi.phi_zero
        super().__init__(model, draw, headroom)
        self.linear = _abs_convolution(
            self.base, draw.matrix.weights, model.past.anchors(draw.pasts)
        )

    def _dominating(self, xabs: np.ndarray) -> np.ndarray:
        return self.psi.phi_zero + self.psi.lip * xabs

    def intensity(self, i: int, t: float) -> float:
        return self.psi.phi_zero + self.psi.lip * self.linear.value(i, t) / self.n

    def record(self, i: int, t: float) -> None:
        super().record(i, t)
        self.linear.add_event(i, t)


# ---------------------------------------------------------------------------
# event loop
# ---------------------------------------------------------------------------


def _candidates(streams: list[GrainStream], t0: float, t1: float, levels: np.ndarray):
    ts, xs, ids = [], [], []
    for i, stream in enumerate(streams):
        if levels[i] <= 0:
            continue
        g = stream.grains_in(t0, t1, float(levels[i]))
        keep = g.t > t0
        ts.append(g.t[keep])
        xs.append(g.x[keep])
        ids.append(np.full(int(keep.sum()), i, dtype=np.int64))
    if not ts:
        return np.empty(0), np.empty(0), np.empty(0, dtype=np.int64)
    t = np.concatenate(ts)
    x = np.concatenate(xs)
    i = np.concatenate(ids)
    # time order; equal times go in stream-id order
    order = np.lexsort((i, t))
    return t[order], x[order], i[order]


def _run_event_loop(
    rates: _RateModel,
    streams: list[GrainStream],
    theta: float,
    event_cap: int,
    chunk_target: float = 64.0,
):
    n = len(streams)
    events: list[list[float]] = [[] for _ in range(n)]
    audit: list[tuple[float, int, float, float]] = []
    t_now = 0.0
    total = 0
    requeries = 0

    while t_now < theta:
        levels, budget = rates.envelope(t_now)
        rate_sum = float(levels.sum())
        if rate_sum <= 0:
            break
        if math.isinf(budget):
            t_end = theta
        else:
            t_end = min(theta, t_now + chunk_target / rate_sum)
        requeries += 1

        accepted = 0
        stopped_at = None
        for t, x, i in zip(*_candidates(streams, t_now, t_end, levels)):
            t = float(t)
            lam = rates.intensity(i, t)
            check_envelope(t, int(i), lam, float(levels[i]))
            if x <= lam:
                events[i].append(t)
                rates.record(i, t)
                audit.append((t, int(i), lam, float(levels[i])))
                total += 1
                if total > event_cap:
                    raise ExplosionError(event_cap, t)
                accepted += 1
                if accepted >= budget:
                    stopped_at = t
                    break
        t_now = t_end if stopped_at is None else stopped_at

    logger.debug("event loop: %d events, %d envelope queries", total, requeries)
    return events, audit


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass
class ParticleSystemRun:
    n: int
    theta: float
    seed: int
    kind: str
    paths: list[PointPath]
    matrix: InteractionMatrix
    audit: list[tuple[float, int, float, float]] = field(default_factory=list, repr=False)

    @property
    def total_events(self) -> int:
        return sum(len(p.events) for p in self.paths)

    def counts(self) -> np.ndarray:
        return np.array([len(p.events) for p in self.paths])

    def events_frame(self, replica: int = 0) -> pd.DataFrame:
        rows = [(replica, i, t) for i, p in enumerate(self.paths) for t in p.events]
        return pd.DataFrame(rows, columns=["replica", "particle", "time"])

    def audit_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.audit, columns=["time", "particle", "intensity", "envelope"])


def _check_model(model: ModelSpec, n: int, theta: float) -> None:
    if n < 1:
        raise DomainError(f"network size must be >= 1, got {n}")
    if theta <= 0:
        raise DomainError(f"horizon must be > 0, got {theta}")
    if not math.isfinite(model.kernel_law.base.envelope_integral(theta)):
        raise HypothesisError("kernel envelope is not locally integrable")


def _simulate(rate_cls, kind, model, n, theta, seed, draw, event_cap, headroom) -> ParticleSystemRun:
    _check_model(model, n, theta)
    draw = draw if draw is not None else draw_network(model, n, seed)
    if draw.n != n:
        raise DomainError(f"network draw has {draw.n} particles, expected {n}")
    rates = rate_cls(model, draw, headroom)
    events, audit = _run_event_loop(rates, draw.streams, theta, event_cap)
    paths = [p.with_events(ev, theta) for p, ev in zip(draw.pasts, events)]
    run = ParticleSystemRun(
        n=n, theta=theta, seed=seed, kind=kind, paths=paths, matrix=draw.matrix, audit=audit
    )
    logger.info("%s run: n=%d theta=%g events=%d", kind, n, theta, run.total_events)
    return run


def simulate_adrhp(
    model: ModelSpec,
    n: int,
    theta: float,
    seed: int,
    draw: NetworkDraw | None = None,
    event_cap: int = DEFAULT_EVENT_CAP,
    headroom: float = 0.25,
) -> ParticleSystemRun:
    """
    Exact thinning sample of the n-particle ADRHP on (0, theta].

    Particle i only ever accepts grains of stream i. Bounded Psi uses the constant
    envelope sup Psi; unbounded Psi uses the dominating linear intensity at the last
    re-query plus a headroom that covers `ceil(headroom * n)` further events.
    """
    return _simulate(_AdrhpRates, "adrhp", model, n, theta, seed, draw, event_cap, headroom)


def simulate_dominating_linear(
    model: ModelSpec,
    n: int,
    theta: float,
    seed: int,
    draw: NetworkDraw | None = None,
    event_cap: int = DEFAULT_EVENT_CAP,
    headroom: float = 0.25,
) -> ParticleSystemRun:
    """Linear Hawkes process built on the same grains; its paths contain the ADRHP paths."""
    return _simulate(
        _DominatingRates, "dominating", model, n, theta, seed, draw, event_cap, headroom
    )


def contains(outer: PointPath, inner: PointPath) -> bool:
    return set(inner.events) <= set(outer.events)
