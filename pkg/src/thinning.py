from __future__ import annotations
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple
import math

import numpy as np

from src.errors import DomainError, EnvelopeViolation

_SEED_MASK = (1 << 64) - 1
GRAIN_TAG = 2
ENVELOPE_RTOL = 1e-12


class Grains(NamedTuple):
    t: np.ndarray
    x: np.ndarray


@dataclass
class GrainStream:
    """
    Unit-rate Poisson measure on [0, inf) x [0, inf) for one particle.

    The plane is cut into cells (band k: x in [k*band_width, (k+1)*band_width),
    window m: t in [m*window, (m+1)*window)). Each cell is drawn from its own
    Philox generator keyed by (seed, stream_id, k, m), so the grains below any
    level are the same whatever order or level the cells are requested at.
    """

    seed: int
    stream_id: int
    band_width: float = 1.0
    window: float = 1.0
    _cells: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.band_width <= 0 or self.window <= 0:
            raise DomainError("band_width and window must be > 0")
        if self.stream_id < 0:
            raise DomainError("stream_id must be >= 0")

    def _cell(self, band: int, win: int) -> Grains:
        key = (band, win)
        cell = self._cells.get(key)
        if cell is None:
            ss = np.random.SeedSequence(
                entropy=int(self.seed) & _SEED_MASK,
                spawn_key=(GRAIN_TAG, int(self.stream_id), band, win),
            )
            gen = np.random.Generator(np.random.Philox(ss))
            count = gen.poisson(self.band_width * self.window)
            t = win * self.window + self.window * gen.random(count)
            x = band * self.band_width + self.band_width * gen.random(count)
            order = np.argsort(t, kind="stable")
            cell = Grains(t[order], x[order])
            self._cells[key] = cell
        return cell

    def grains_in(self, t0: float, t1: float, level: float) -> Grains:
        if level <= 0:
            raise DomainError(f"level must be > 0, got {level}")
        if t0 < 0 or t1 < t0:
            raise DomainError(f"need 0 <= t0 <= t1, got [{t0}, {t1}]")
        if t1 == t0:
            return Grains(np.empty(0), np.empty(0))

        n_bands = int(math.ceil(level / self.band_width))
        first_win = int(math.floor(t0 / self.window))
        last_win = int(math.ceil(t1 / self.window))
        ts, xs = [], []
        for win in range(first_win, last_win):
            for band in range(n_bands):
                cell = self._cell(band, win)
                keep = (cell.t >= t0) & (cell.t <= t1) & (cell.x <= level)
                ts.append(cell.t[keep])
                xs.append(cell.x[keep])
        t = np.concatenate(ts)
        x = np.concatenate(xs)
        order = np.argsort(t, kind="stable")
        return Grains(t[order], x[order])


def grains_in(stream: GrainStream, t0: float, t1: float, level: float) -> Grains:
    return stream.grains_in(t0, t1, level)


@dataclass(frozen=True)
class Envelope:
    """Piecewise-constant dominating rate: levels[k] on [breaks[k], breaks[k+1])."""

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.levels) + 1:
            raise DomainError("envelope needs one more break than levels")
        if any(b <= a for a, b in zip(self.breaks, self.breaks[1:])):
            raise DomainError("envelope breaks must be strictly increasing")
        if any(level < 0 for level in self.levels):
            raise DomainError("envelope levels must be >= 0")

    @classmethod
    def constant(cls, level: float, t0: float, t1: float) -> "Envelope":
        return cls(breaks=(float(t0), float(t1)), levels=(float(level),))

    def level_at(self, t: float) -> float:
        k = int(np.searchsorted(self.breaks, t, side="right")) - 1
        k = min(max(k, 0), len(self.levels) - 1)
        return self.levels[k]

    def pieces(self, t0: float, t1: float) -> Iterator[tuple[float, float, float]]:
        for a, b, level in zip(self.breaks[:-1], self.breaks[1:], self.levels):
            lo, hi = max(a, t0), min(b, t1)
            if hi > lo:
                yield lo, hi, level


def check_envelope(t: float, particle: int, intensity: float, level: float) -> None:
    if intensity > level * (1.0 + ENVELOPE_RTOL) + ENVELOPE_RTOL:
        raise EnvelopeViolation(t, particle, intensity, level)


def thin_next_event(
    stream: GrainStream,
    t_now: float,
    horizon: float,
    envelope: Envelope,
    intensity: Callable[[float], float],
) -> float | None:
    """
    First grain (t, x) with t_now < t <= horizon and x <= intensity(t), or None.

    Exact as long as intensity(t) <= envelope(t); every candidate is audited.
    """
    last_seen = t_now
    for a, b, level in envelope.pieces(t_now, horizon):
        if level <= 0:
            continue
        # walk the grain windows one at a time
        lo = a
        while lo < b:
            hi = min(b, (math.floor(lo / stream.window) + 1) * stream.window)
            grains = stream.grains_in(lo, hi, level)
            for t, x in zip(grains.t, grains.x):
                if t <= last_seen:
                    continue
                last_seen = t
                lam = intensity(t)
                check_envelope(t, stream.stream_id, lam, level)
                if x <= lam:
                    return float(t)
            lo = hi
    return None
