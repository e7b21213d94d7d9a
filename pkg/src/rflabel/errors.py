"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes, so raise the most specific
class that applies.
"""


class RFLabelError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RFLabelError):
    """Invalid configuration, scene description, or schema violation."""


class GeometryError(RFLabelError):
    """Geometric precondition violated (behind camera, clipped box, ...)."""


class SolverError(RFLabelError):
    """Numerical solve failed: divergence, unresolved ambiguity, or an
    infeasible calibration target."""
