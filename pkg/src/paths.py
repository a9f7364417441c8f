from __future__ import annotations
from dataclasses import dataclass
import bisect
import math

import numpy as np

from src.errors import DomainError


@dataclass(frozen=True)
class PointPath:
    """
    One particle's points on the real line.

    past:   sorted times <= 0 (a single T_0 in practice)
    events: sorted times in (0, theta]
    """

    past: tuple[float, ...] = ()
    events: tuple[float, ...] = ()
    theta: float = math.inf

    def __post_init__(self):
        past = tuple(float(x) for x in self.past)
        events = tuple(float(x) for x in self.events)
        if any(x > 0 for x in past):
            raise DomainError("past points must be <= 0")
        if any(x <= 0 or x > self.theta for x in events):
            raise DomainError("events must lie in (0, theta]")
        if any(b <= a for a, b in zip(past, past[1:])) or any(b <= a for a, b in zip(events, events[1:])):
            raise DomainError("path points must be strictly increasing")
        object.__setattr__(self, "past", past)
        object.__setattr__(self, "events", events)

    @property
    def last_past(self) -> float:
        if not self.past:
            raise DomainError("path has no past point")
        return self.past[-1]

    @property
    def points(self) -> tuple[float, ...]:
        return self.past + self.events

    def with_events(self, events, theta: float) -> "PointPath":
        return PointPath(past=self.past, events=tuple(events), theta=theta)

    def events_array(self) -> np.ndarray:
        return np.asarray(self.events, dtype=float)

    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.points, dtype=float))


def age_at(path: PointPath, t: float, predictable: bool = True) -> float:
    """
    S_t = t - sup{T in path : T <= t}; the predictable age S_{t-} uses T < t.
    At t = 0 both versions use the last past point.
    """
    if t < 0 or t > path.theta:
        raise DomainError(f"time must lie in [0, theta], got {t}")
    points = path.points
    if predictable and t > 0:
        idx = bisect.bisect_left(points, t)
    else:
        idx = bisect.bisect_right(points, t)
    if idx == 0:
        raise DomainError(f"age undefined at t={t}: no point before it")
    return t - points[idx - 1]


def ages_at(paths: list[PointPath], t: float, predictable: bool = True) -> np.ndarray:
    return np.array([age_at(p, t, predictable) for p in paths])
