"""Exception types raised across the package."""


class StructuralError(ValueError):
    """Inputs disagree on shape, index range or activity masking."""


class ConfigurationError(ValueError):
    """A scenario, estimator or experiment configuration cannot be honoured."""


class NumericalStateError(FloatingPointError):
    """Parameters or gradients became non-finite."""


class DomainError(ValueError):
    """A scalar argument lies outside its admissible range."""


class InstanceTooLargeError(ValueError):
    """An exhaustive enumeration would exceed its hard size cap."""
