from __future__ import annotations


class AdrhpError(Exception):
    exit_code = 1


class DomainError(AdrhpError, ValueError):
    exit_code = 7


class ContractViolation(AdrhpError, ValueError):
    exit_code = 7


class ConfigError(AdrhpError, ValueError):
    exit_code = 2


class HypothesisError(AdrhpError, ValueError):
    exit_code = 3


class ConvergenceError(AdrhpError, RuntimeError):
    exit_code = 4

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class EnvelopeViolation(AdrhpError, RuntimeError):
    """A candidate intensity exceeded its dominating envelope: thinning is no longer exact."""

    exit_code = 5

    def __init__(self, time: float, particle: int, intensity: float, envelope: float):
        super().__init__(
            f"intensity {intensity:.6g} exceeds envelope {envelope:.6g} "
            f"for particle {particle} at t={time:.6g}"
        )
        self.time = time
        self.particle = particle
        self.intensity = intensity
        self.envelope = envelope


class ExplosionError(AdrhpError, RuntimeError):
    exit_code = 6

    def __init__(self, cap: int, time: float):
        super().__init__(
            f"event cap {cap} reached at t={time:.6g}; the process looks explosive "
            "(check the Lipschitz/integrability hypotheses of the model)"
        )
        self.cap = cap
        self.time = time


EXIT_CODES = {
    "ok": 0,
    "config": ConfigError.exit_code,
    "hypothesis": HypothesisError.exit_code,
    "convergence": ConvergenceError.exit_code,
    "envelope": EnvelopeViolation.exit_code,
    "explosion": ExplosionError.exit_code,
    "domain": DomainError.exit_code,
}
