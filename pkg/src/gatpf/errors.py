"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the command line
front end prints when it exits nonzero.
"""


class GatpfError(Exception):
    code = "error"


class CaseSyntaxError(GatpfError, ValueError):
    """Malformed case file (bad matrix row, wrong column count)."""

    code = "syntax_error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(GatpfError, ValueError):
    code = "validation_error"


class DimensionMismatch(GatpfError, ValueError):
    code = "dimension_mismatch"


class NonConvergence(GatpfError):
    """Newton-Raphson did not reach tolerance within ``max_iter``.

    ``trace`` holds ``(iteration, max_mismatch)`` pairs.
    """

    code = "non_convergence"

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class SingularJacobian(GatpfError):
    code = "singular_jacobian"


class YieldTooLow(GatpfError):
    code = "yield_too_low"


class EmptyMask(GatpfError, ValueError):
    code = "empty_mask"


class NonFiniteLoss(GatpfError, FloatingPointError):
    code = "non_finite_loss"


class MixedTopology(GatpfError, ValueError):
    code = "mixed_topology"


class ShapeMismatch(GatpfError, ValueError):
    code = "shape_mismatch"


class EmptyInput(GatpfError, ValueError):
    code = "empty"


class DisconnectedTopology(GatpfError):
    code = "disconnected_topology"


class FormatError(GatpfError, ValueError):
    """Unknown model file version or model kind."""

    code = "format_error"
