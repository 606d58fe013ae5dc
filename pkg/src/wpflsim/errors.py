"""Exception types shared across the simulator."""


class WpflError(Exception):
    """Base class for all simulator errors."""


class ConfigError(WpflError, ValueError):
    """Invalid or inconsistent configuration values."""


class InfeasiblePrivacyError(WpflError):
    """No noise scale in the search bracket meets the privacy target."""


class ConstraintViolation(WpflError, ValueError):
    """A scheduling/configuration constraint cannot be satisfied."""


class EstimationError(WpflError):
    """Empirical constant estimation failed (e.g. degenerate samples)."""


class DataFormatError(WpflError, ValueError):
    """Malformed dataset file."""
