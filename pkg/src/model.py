from __future__ import annotations
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate, special, stats

from src.errors import DomainError
from src.paths import PointPath

KERNEL_FAMILIES = ("exponential", "erlang", "piecewise_constant", "zero")
WEIGHT_LAWS = ("deterministic", "uniform", "bernoulli")
PAST_MODES = ("hawkes_past", "common_stimulus", "zero")
PHI_KINDS = ("affine", "clipped_affine", "sigmoid", "constant")
AGE_LAWS = ("exponential", "uniform", "dirac")


def _as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """
    Interaction function h on [0, inf) and its dominating envelope M.

    exponential:         h(t) = alpha * exp(-beta t)
    erlang:              h(t) = alpha * Gamma(order, rate=beta) density
    piecewise_constant:  h(t) = values[i] on [breakpoints[i-1], breakpoints[i]), 0 after the last one
    zero:                h = 0

    The envelope is the upper hull M(t) = sup_{u >= t} |h(u)|, so it never increases
    for the erlang and piecewise families.
    """

    family: str = "zero"
    alpha: float = 0.0
    beta: float = 0.0
    order: int = 1
    breakpoints: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise DomainError(f"kernel family must be one of {KERNEL_FAMILIES}, got {self.family!r}")
        for name in ("alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"kernel {name} must be finite")
        if self.family == "erlang":
            if int(self.order) < 1 or self.beta <= 0:
                raise DomainError("erlang kernel needs order >= 1 and beta > 0")
        if self.family == "piecewise_constant":
            b = np.asarray(self.breakpoints, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if len(b) == 0 or len(b) != len(v):
                raise DomainError("piecewise_constant kernel needs as many breakpoints as values")
            if b[0] <= 0 or np.any(np.diff(b) <= 0) or not np.all(np.isfinite(v)):
                raise DomainError("breakpoints must be positive and strictly increasing, values finite")
            object.__setattr__(self, "breakpoints", tuple(float(x) for x in b))
            object.__setattr__(self, "values", tuple(float(x) for x in v))

    # -- evaluation ---------------------------------------------------------

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            return self.alpha * np.exp(-self.beta * t)
        if self.family == "erlang":
            return self.alpha * stats.gamma.pdf(t, a=self.order, scale=1.0 / self.beta)
        if self.family == "piecewise_constant":
            vals = np.append(np.asarray(self.values), 0.0)
            return vals[np.searchsorted(self.breakpoints, t, side="right")]
        return np.zeros_like(t)

    def envelope(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "exponential":
            return abs(self.alpha) * np.exp(-self.beta * t)
        if self.family == "erlang":
            mode = (self.order - 1) / self.beta
            return abs(self.alpha) * stats.gamma.pdf(np.maximum(t, mode), a=self.order, scale=1.0 / self.beta)
        if self.family == "piecewise_constant":
            return self._hull_values()[np.searchsorted(self.breakpoints, t, side="right")]
        return np.zeros_like(t)

    def _hull_values(self) -> np.ndarray:
        # running max from the right, padded with the zero tail
        absv = np.abs(np.asarray(self.values))
        hull = np.maximum.accumulate(absv[::-1])[::-1]
        return np.append(hull, 0.0)

    def scaled(self, c: float) -> "KernelSpec":
        if self.family == "piecewise_constant":
            return KernelSpec(
                family=self.family,
                breakpoints=self.breakpoints,
                values=tuple(c * v for v in self.values),
            )
        return KernelSpec(family=self.family, alpha=c * self.alpha, beta=self.beta, order=self.order)

    # -- norms --------------------------------------------------------------

    def sup_norm(self) -> float:
        return float(self.envelope(0.0))

    def l1_norm(self) -> float:
        """Integral of |h| over [0, inf)."""
        if self.family == "exponential":
            if self.alpha == 0:
                return 0.0
            return abs(self.alpha) / self.beta if self.beta > 0 else math.inf
        if self.family == "erlang":
            return abs(self.alpha)
        if self.family == "piecewise_constant":
            lengths = np.diff(np.concatenate(([0.0], self.breakpoints)))
            return float(np.sum(np.abs(self.values) * lengths))
        return 0.0

    def envelope_l1(self) -> float:
        if self.family == "erlang":
            return self.envelope_integral(math.inf)
        if self.family == "piecewise_constant":
            lengths = np.diff(np.concatenate(([0.0], self.breakpoints)))
            return float(np.sum(self._hull_values()[:-1] * lengths))
        return self.l1_norm()

    def envelope_l2(self) -> float:
        if self.family == "exponential":
            if self.alpha == 0:
                return 0.0
            return abs(self.alpha) / math.sqrt(2.0 * self.beta) if self.beta > 0 else math.inf
        if self.family == "erlang":
            k, b = self.order, self.beta
            mode = (k - 1) / b
            peak = float(self.envelope(mode))
            log_c = 2 * k * math.log(b) + special.gammaln(2 * k - 1) - (2 * k - 1) * math.log(2 * b) - 2 * special.gammaln(k)
            tail = math.exp(log_c) * special.gammaincc(2 * k - 1, 2 * b * mode)
            return math.sqrt(mode * peak**2 + self.alpha**2 * tail)
        if self.family == "piecewise_constant":
            lengths = np.diff(np.concatenate(([0.0], self.breakpoints)))
            return float(np.sqrt(np.sum(self._hull_values()[:-1] ** 2 * lengths)))
        return 0.0

    def envelope_integral(self, T: float) -> float:
        """Integral of M over [0, T]; finite for every finite T."""
        if T <= 0:
            return 0.0
        if self.family == "exponential":
            if self.beta == 0:
                return abs(self.alpha) * T
            if math.isinf(T):
                return self.l1_norm()
            return abs(self.alpha) * (1.0 - math.exp(-self.beta * T)) / self.beta
        if self.family == "erlang":
            mode = (self.order - 1) / self.beta
            dist = stats.gamma(a=self.order, scale=1.0 / self.beta)
            peak = float(self.envelope(mode))
            if T <= mode:
                return peak * T
            return peak * mode + abs(self.alpha) * (dist.cdf(T) - dist.cdf(mode))
        if self.family == "piecewise_constant":
            edges = np.concatenate(([0.0], self.breakpoints))
            lengths = np.clip(np.minimum(edges[1:], T) - edges[:-1], 0.0, None)
            return float(np.sum(self._hull_values()[:-1] * lengths))
        return 0.0

    # -- structure ----------------------------------------------------------

    def is_envelope_nonincreasing(self) -> bool:
        if self.family == "exponential":
            return self.beta >= 0 or self.alpha == 0
        return True

    def is_continuous(self) -> bool:
        return self.family != "piecewise_constant"

    def decay_horizon(self, rel_tol: float = 1e-12) -> float:
        """Time after which the envelope stays below rel_tol * sup."""
        if self.family == "exponential":
            if self.alpha == 0:
                return 0.0
            return -math.log(rel_tol) / self.beta if self.beta > 0 else math.inf
        if self.family == "erlang":
            mode = (self.order - 1) / self.beta
            return mode + float(stats.gamma.isf(rel_tol, a=self.order, scale=1.0 / self.beta))
        if self.family == "piecewise_constant":
            return float(self.breakpoints[-1])
        return 0.0

    def uses_exponential_recursion(self) -> bool:
        return self.family in ("exponential", "zero")


def eval_kernel(k: KernelSpec, t: float) -> float:
    if t < 0:
        raise DomainError(f"kernel argument must be >= 0, got {t}")
    return float(k(t))


# ---------------------------------------------------------------------------
# random kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomKernelLaw:
    """H_ij = w_ij * base with w_ij drawn i.i.d. from the weight law."""

    base: KernelSpec = field(default_factory=KernelSpec)
    law: str = "deterministic"
    w: float = 1.0
    a: float = 0.0
    b: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.law not in WEIGHT_LAWS:
            raise DomainError(f"weight law must be one of {WEIGHT_LAWS}, got {self.law!r}")
        if self.law == "uniform" and not self.a <= self.b:
            raise DomainError("uniform weights need a <= b")
        if self.law == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise DomainError("bernoulli weights need 0 <= p <= 1")

    @property
    def mean_weight(self) -> float:
        if self.law == "uniform":
            return 0.5 * (self.a + self.b)
        if self.law == "bernoulli":
            return self.p * self.w
        return self.w

    @property
    def second_moment(self) -> float:
        if self.law == "uniform":
            return (self.a**2 + self.a * self.b + self.b**2) / 3.0
        if self.law == "bernoulli":
            return self.p * self.w**2
        return self.w**2

    @property
    def weight_variance(self) -> float:
        return max(self.second_moment - self.mean_weight**2, 0.0)

    @property
    def w_max(self) -> float:
        if self.law == "uniform":
            return max(abs(self.a), abs(self.b))
        return abs(self.w)

    @property
    def nonnegative(self) -> bool:
        if self.law == "uniform":
            return self.a >= 0
        return self.w >= 0

    def sample_weights(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.law == "uniform":
            return rng.uniform(self.a, self.b, size=size)
        if self.law == "bernoulli":
            return self.w * (rng.random(size=size) < self.p)
        return np.full(size, float(self.w))

    def mean_kernel(self) -> KernelSpec:
        return self.base.scaled(self.mean_weight)

    def envelope_kernel(self) -> KernelSpec:
        """Kernel whose envelope is M_{mu_H} = w_max * M_base."""
        return self.base.scaled(self.w_max)


def kernel_mean_and_envelope(law: RandomKernelLaw, t: float) -> tuple[float, float]:
    if t < 0:
        raise DomainError(f"kernel argument must be >= 0, got {t}")
    m = law.mean_weight * float(law.base(t))
    M = law.w_max * float(law.base.envelope(t))
    return m, M


@dataclass(frozen=True)
class InteractionMatrix:
    base: KernelSpec
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def kernel(self, i: int, j: int) -> KernelSpec:
        return self.base.scaled(float(self.weights[i, j]))


def sample_interaction_matrix(
    law: RandomKernelLaw,
    n: int,
    rng: np.random.Generator | int | None,
    zero_self_interaction: bool = False,
) -> InteractionMatrix:
    if n < 1:
        raise DomainError(f"network size must be >= 1, got {n}")
    weights = law.sample_weights(_as_rng(rng), (n, n)).astype(float)
    if zero_self_interaction:
        np.fill_diagonal(weights, 0.0)
    return InteractionMatrix(base=law.base, weights=weights)


# ---------------------------------------------------------------------------
# initial condition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialLaw:
    """Law of the age A at time 0; the past is the single point T_0 = -A."""

    age0: str = "exponential"
    rate: float = 1.0
    upper: float = 1.0
    a0: float = 0.0
    m_t0: float | None = None

    def __post_init__(self):
        if self.age0 not in AGE_LAWS:
            raise DomainError(f"initial age law must be one of {AGE_LAWS}, got {self.age0!r}")
        if self.age0 == "exponential" and self.rate <= 0:
            raise DomainError("exponential initial age needs rate > 0")
        if self.age0 == "uniform" and self.upper <= 0:
            raise DomainError("uniform initial age needs upper > 0")
        if self.age0 == "dirac" and self.a0 < 0:
            raise DomainError("dirac initial age needs a0 >= 0")
        if self.m_t0 is not None and self.m_t0 < 0:
            raise DomainError("m_t0 must be >= 0")

    @property
    def has_density(self) -> bool:
        return self.age0 != "dirac"

    @property
    def density_sup(self) -> float:
        if self.age0 == "exponential":
            return self.rate
        if self.age0 == "uniform":
            return 1.0 / self.upper
        return math.inf

    @property
    def age_bound(self) -> float | None:
        """Almost-sure bound on A, if the law has one."""
        if self.age0 == "uniform":
            return self.upper
        if self.age0 == "dirac":
            return self.a0
        return None

    def density(self, s):
        s = np.asarray(s, dtype=float)
        if self.age0 == "exponential":
            return np.where(s >= 0, self.rate * np.exp(-self.rate * np.maximum(s, 0.0)), 0.0)
        if self.age0 == "uniform":
            return np.where((s >= 0) & (s <= self.upper), 1.0 / self.upper, 0.0)
        raise DomainError("dirac initial age has no density")

    def support_bound(self, floor: float = 1e-12) -> float:
        """Age beyond which the density is below floor (exact support for bounded laws)."""
        if self.age0 == "exponential":
            return max(math.log(self.rate / floor) / self.rate, 0.0)
        if self.age0 == "uniform":
            return self.upper
        return self.a0

    def laplace(self, beta: float) -> float:
        """E[exp(-beta A)]."""
        if self.age0 == "exponential":
            if self.rate + beta <= 0:
                return math.inf
            return self.rate / (self.rate + beta)
        if self.age0 == "uniform":
            x = beta * self.upper
            return 1.0 if x == 0 else float(-np.expm1(-x) / x)
        return math.exp(-beta * self.a0)

    def expect(self, g) -> float:
        """E[g(A)] by quadrature (exact evaluation for the dirac law)."""
        if self.age0 == "dirac":
            return float(g(self.a0))
        upper = self.support_bound()
        val, _ = integrate.quad(lambda a: float(g(a)) * float(self.density(a)), 0.0, upper, limit=200)
        return val

    def sample_age(self, rng: np.random.Generator) -> float:
        if self.age0 == "exponential":
            return float(rng.exponential(1.0 / self.rate))
        if self.age0 == "uniform":
            return float(rng.uniform(0.0, self.upper))
        return float(self.a0)


def sample_initial_past(law: InitialLaw, rng: np.random.Generator | int | None) -> PointPath:
    age = law.sample_age(_as_rng(rng))
    return PointPath(past=(-age,), events=())


# ---------------------------------------------------------------------------
# past influence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PastInfluenceLaw:
    """
    F_ij(t) = H_ij(t - anchor_j):
      hawkes_past      anchor_j = T_0^j (the last past point of particle j)
      common_stimulus  anchor_j = tau <= 0 for every j
      zero             F = 0
    """

    mode: str = "zero"
    tau: float = 0.0

    def __post_init__(self):
        if self.mode not in PAST_MODES:
            raise DomainError(f"past mode must be one of {PAST_MODES}, got {self.mode!r}")
        if self.mode == "common_stimulus" and self.tau > 0:
            raise DomainError("common stimulus time tau must be <= 0")

    def anchors(self, pasts: list[PointPath]) -> np.ndarray | None:
        if self.mode == "hawkes_past":
            return np.array([p.last_past for p in pasts], dtype=float)
        if self.mode == "common_stimulus":
            return np.full(len(pasts), float(self.tau))
        return None

    def _moments(self, t: float, base: KernelSpec, initial: InitialLaw) -> tuple[float, float]:
        # (E[h(t + A)], E[h(t + A)^2]) for hawkes_past, h(t - tau) and its square otherwise
        if self.mode == "common_stimulus":
            v = float(base(t - self.tau))
            return v, v * v
        if base.family == "exponential":
            e = math.exp(-base.beta * t)
            return (
                base.alpha * e * initial.laplace(base.beta),
                base.alpha**2 * e * e * initial.laplace(2.0 * base.beta),
            )
        if base.family == "zero":
            return 0.0, 0.0
        first = initial.expect(lambda a: base(t + a))
        second = initial.expect(lambda a: base(t + a) ** 2)
        return first, second

    def mean(self, t, law: RandomKernelLaw, initial: InitialLaw) -> np.ndarray:
        """m_{nu_F}(t) = E[F(t)]."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.mode == "zero":
            return np.zeros_like(t)
        return np.array([law.mean_weight * self._moments(x, law.base, initial)[0] for x in t])

    def variance(self, t, law: RandomKernelLaw, initial: InitialLaw) -> np.ndarray:
        """V_{nu_F}(t) = Var[F(t)] = E[w^2] E[h^2] - (E[w] E[h])^2."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.mode == "zero":
            return np.zeros_like(t)
        out = []
        for x in t:
            first, second = self._moments(x, law.base, initial)
            out.append(max(law.second_moment * second - (law.mean_weight * first) ** 2, 0.0))
        return np.array(out)

    def mean_is_continuous(self, base: KernelSpec, initial: InitialLaw) -> bool:
        if self.mode == "zero" or base.is_continuous():
            return True
        # averaging over a density smooths the jumps of a piecewise kernel
        return self.mode == "hawkes_past" and initial.has_density


# ---------------------------------------------------------------------------
# intensity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityFn:
    """Psi(s, x) = Phi(x) * 1{s >= delta}."""

    phi: str = "constant"
    mu: float = 0.0
    a: float = 0.0
    cap: float = math.inf
    scale: float = 1.0
    gain: float = 1.0
    center: float = 0.0
    c: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if self.phi not in PHI_KINDS:
            raise DomainError(f"phi must be one of {PHI_KINDS}, got {self.phi!r}")
        if self.delta < 0:
            raise DomainError("refractory period must be >= 0")
        if self.phi == "constant" and self.c < 0:
            raise DomainError("constant intensity must be >= 0")
        if self.phi == "clipped_affine" and self.cap < 0:
            raise DomainError("clipped_affine cap must be >= 0")
        if self.phi == "sigmoid" and self.scale < 0:
            raise DomainError("sigmoid scale must be >= 0")

    def phi_of(self, x):
        x = np.asarray(x, dtype=float)
        if self.phi == "affine":
            return np.maximum(self.mu + self.a * x, 0.0)
        if self.phi == "clipped_affine":
            return np.clip(self.mu + self.a * x, 0.0, self.cap)
        if self.phi == "sigmoid":
            return self.scale * special.expit(self.gain * (x - self.center))
        return np.full_like(x, self.c)

    def __call__(self, s, x):
        s = np.asarray(s, dtype=float)
        return np.where(s >= self.delta, self.phi_of(x), 0.0)

    def rate(self, s: float, x: float) -> float:
        # scalar fast path for the event loops
        if s < self.delta:
            return 0.0
        if self.phi == "affine":
            v = self.mu + self.a * x
            return v if v > 0.0 else 0.0
        if self.phi == "clipped_affine":
            v = self.mu + self.a * x
            return min(max(v, 0.0), self.cap)
        if self.phi == "sigmoid":
            z = self.gain * (x - self.center)
            if z >= 0:
                return self.scale / (1.0 + math.exp(-z))
            e = math.exp(z)
            return self.scale * e / (1.0 + e)
        return self.c

    @property
    def lip(self) -> float:
        if self.phi in ("affine", "clipped_affine"):
            return abs(self.a)
        if self.phi == "sigmoid":
            return 0.25 * self.scale * abs(self.gain)
        return 0.0

    @property
    def sup_bound(self) -> float:
        if self.phi == "affine":
            return max(self.mu, 0.0) if self.a == 0 else math.inf
        if self.phi == "clipped_affine":
            return self.cap
        if self.phi == "sigmoid":
            return self.scale
        return self.c

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.sup_bound)

    @property
    def age_independent(self) -> bool:
        return self.delta == 0

    @property
    def phi_zero(self) -> float:
        """sup_s Psi(s, 0)."""
        return float(self.phi_of(0.0))

    def dominating_rate(self, xabs):
        """Upper bound of Psi(s, x) over s and over |x| <= xabs."""
        bound = self.phi_zero + self.lip * np.asarray(xabs, dtype=float)
        return np.minimum(bound, self.sup_bound)


def eval_intensity(f: IntensityFn, s: float, x: float) -> float:
    if s < 0:
        raise DomainError(f"age must be >= 0, got {s}")
    return float(f(s, x))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kernel_law: RandomKernelLaw = field(default_factory=RandomKernelLaw)
    psi: IntensityFn = field(default_factory=IntensityFn)
    initial: InitialLaw = field(default_factory=InitialLaw)
    past: PastInfluenceLaw = field(default_factory=PastInfluenceLaw)
    zero_self_interaction: bool = False

    @property
    def mean_kernel(self) -> KernelSpec:
        return self.kernel_law.mean_kernel()

    def f0(self, t) -> np.ndarray:
        return self.past.mean(t, self.kernel_law, self.initial)

    def past_variance(self, t) -> np.ndarray:
        return self.past.variance(t, self.kernel_law, self.initial)

    def moment_horizon(self, theta: float) -> float:
        """Window on which sup-norms of m_{nu_F} and V_{nu_F} are evaluated."""
        tail = self.kernel_law.base.decay_horizon()
        return max(theta, tail if math.isfinite(tail) else theta)

    @property
    def h1(self) -> bool:
        return self.psi.is_bounded and self.initial.has_density

    @property
    def h2(self) -> bool:
        return self.psi.age_independent
