"""Exception types shared across the package."""


class DegenerateDynamicsError(ValueError):
    """Raised for the absorbing transition pair (theta01=0, theta11=1),
    whose passive belief chain has no stationary point."""


class SolverConvergenceError(RuntimeError):
    """Relative value iteration failed to reach the span tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual span {residual:.3e})")
        self.residual = residual


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class ProtocolError(RuntimeError):
    """Federation transport failure or handshake violation (CLI exit code 3)."""
