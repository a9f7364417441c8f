from __future__ import annotations
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
import json
import math

from src.errors import ConfigError, DomainError
from src.model import (
    InitialLaw,
    IntensityFn,
    KernelSpec,
    ModelSpec,
    PastInfluenceLaw,
    RandomKernelLaw,
)

COMMANDS = ("simulate", "solve-pde", "limit", "couple", "sweep", "validate")


@dataclass
class Tolerances:
    """Numerical tolerances; None means 'derive from the grid step'."""

    mass_tol: float | None = None
    bound_tol: float | None = None
    quad_tol: float | None = None
    fp_tol: float = 1e-10
    max_iter: int = 50
    event_cap: int = 1_000_000
    renorm_floor: float = 1e-12

    def resolved(self, dx: float) -> "Tolerances":
        return replace(
            self,
            mass_tol=10 * dx if self.mass_tol is None else self.mass_tol,
            bound_tol=10 * dx if self.bound_tol is None else self.bound_tol,
            quad_tol=10 * dx if self.quad_tol is None else self.quad_tol,
        )


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    command: str = "couple"
    theta: float = 5.0
    dx: float = 1e-3
    n_list: tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    replicas: int = 16
    max_replicas: int = 256
    seed: int = 0
    output_dir: str = "out"
    jobs: int = 0       # 0 = all cores
    age_times: tuple[float, ...] = ()
    limit_copies: int = 10_000
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"experiment.command must be one of {COMMANDS}, got {self.command!r}")
        if not self.theta > 0 or not math.isfinite(self.theta):
            raise ConfigError(f"experiment.theta must be a finite number > 0, got {self.theta}")
        if not self.dx > 0 or self.dx > self.theta:
            raise ConfigError(f"experiment.dx must lie in (0, theta], got {self.dx}")
        if not self.n_list or any(int(n) < 1 for n in self.n_list):
            raise ConfigError("experiment.n_list must hold network sizes >= 1")
        if self.replicas < 1 or self.max_replicas < self.replicas:
            raise ConfigError("experiment needs 1 <= replicas <= max_replicas")
        if self.jobs < 0:
            raise ConfigError("experiment.jobs must be >= 0")
        if any(not 0 <= t <= self.theta for t in self.age_times):
            raise ConfigError("experiment.age_times must lie in [0, theta]")
        self.n_list = tuple(int(n) for n in self.n_list)
        self.age_times = tuple(float(t) for t in self.age_times)

    @property
    def tol(self) -> Tolerances:
        return self.tolerances.resolved(self.dx)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _build(cls, section: dict, where: str, exclude: tuple[str, ...] = ()):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)} - set(exclude)
    kwargs = {}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (DomainError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from e


def model_from_dict(data: dict) -> ModelSpec:
    if not isinstance(data, dict):
        raise ConfigError("model must be an object")
    unknown = set(data) - {"kernel", "weights", "psi", "initial", "past", "zero_self_interaction"}
    if unknown:
        raise ConfigError(f"unknown key model.{sorted(unknown)[0]}")
    if "family" not in data.get("kernel", {}):
        raise ConfigError("model.kernel.family is required")
    if "phi" not in data.get("psi", {}):
        raise ConfigError("model.psi.phi is required")

    base = _build(KernelSpec, data["kernel"], "model.kernel")
    weights = _build(RandomKernelLaw, data.get("weights", {}), "model.weights")
    return ModelSpec(
        kernel_law=replace(weights, base=base),
        psi=_build(IntensityFn, data["psi"], "model.psi"),
        initial=_build(InitialLaw, data.get("initial", {}), "model.initial"),
        past=_build(PastInfluenceLaw, data.get("past", {}), "model.past"),
        zero_self_interaction=bool(data.get("zero_self_interaction", False)),
    )


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - {"model", "experiment"}
    if unknown:
        raise ConfigError(f"unknown top-level key {sorted(unknown)[0]}")
    if "model" not in data:
        raise ConfigError("config needs a model section")
    model = model_from_dict(data["model"])
    exp = dict(data.get("experiment", {}))
    tol = _build(Tolerances, exp.pop("tolerances", {}), "experiment.tolerances")
    cfg = _build(ExperimentConfig, exp, "experiment", exclude=("model", "tolerances"))
    cfg.model = model
    cfg.tolerances = tol
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e.msg} at line {e.lineno}, column {e.colno}") from e
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Command-line values win over the file; None means 'not given'."""
    given = {k: v for k, v in overrides.items() if v is not None}
    if not given:
        return cfg
    return replace(cfg, **given)
