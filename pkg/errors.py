"""
Exception hierarchy shared by the simulator, the predictors and the harness
"""

from typing import List


class RdwSimError(Exception):
    """Base class for every error raised by this project"""


class DomainError(RdwSimError, ValueError):
    """An input value violates an operation's precondition"""


class ConfigurationError(RdwSimError, ValueError):
    """Parameters or shapes that cannot work together"""


class ValidationError(ConfigurationError):
    """Configuration file rejected; lists every violation found"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} configuration violation(s):\n{lines}")


class InvariantViolation(RdwSimError, RuntimeError):
    """Simulator state broke an invariant; the run must abort"""


class ModelNotFoundError(RdwSimError, FileNotFoundError):
    """A checkpoint needed for evaluation does not exist"""
