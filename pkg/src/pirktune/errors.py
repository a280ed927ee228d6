"""Exception hierarchy shared by all stages.

Every error class carries the process exit code the CLI maps it to, so a
failing stage can be identified from the shell without parsing stderr.
"""


class PirktuneError(Exception):
    """Base class; exit code 1 covers anything not classified below."""

    exit_code = 1


class DocumentError(PirktuneError):
    """A description document is malformed or violates its schema."""

    exit_code = 3


class ScenarioError(PirktuneError):
    """Cross-references or bounds of an assembled tuning scenario are broken."""

    exit_code = 4


class CodegenError(PirktuneError):
    """Code-block parsing, specialization or emission failed."""

    exit_code = 5


class ModelError(PirktuneError):
    """The cycle model cannot be evaluated (missing throughput, bad level, ...)."""

    exit_code = 6


class StoreError(PirktuneError):
    """Prediction store I/O failure."""

    exit_code = 7


class MeasurementError(PirktuneError):
    """Measurement or benchmark input missing or inconsistent."""

    exit_code = 8


class InterpError(PirktuneError):
    """Runtime error while interpreting kernel or variant code."""

    exit_code = 9


class BoundsError(InterpError):
    """Array index outside the declared extent."""


class UnboundIdentifierError(InterpError):
    """Statement references a name the environment does not provide."""


class DomainError(InterpError):
    """Evaluation left the finite-real domain (sqrt of negative, overflow, 1/0)."""
