"""Error taxonomy shared by all modules.

ConfigurationError: the request itself is invalid (bad parameters, missing
inputs).  NumericalError: the request was valid but a numerical procedure
failed its own accuracy contract.  The CLI maps these to exit codes 1 and 2.
"""


class ConfigurationError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class SingularityError(NumericalError):
    """Momentum-space sum evaluated too close to a diffraction edge."""


class RegularizationError(ConfigurationError):
    """A divergent quantity was requested from a routine that cannot
    regularize it; the message names the routine that can."""


class NearDarkStateError(NumericalError):
    """Steady-state linear system is numerically singular."""


class PoleError(NumericalError):
    """Resonance condition evaluated at a tan pole."""


class UndefinedDelayError(NumericalError):
    """Group delay undefined where the transmission vanishes."""


class UndefinedG2Error(NumericalError):
    """Photon correlation undefined: no light in the detection mode."""


class FitFailureError(NumericalError):
    """Nonlinear fit residual exceeded its tolerance."""


class StiffnessError(NumericalError):
    """Propagator step-size underflow."""


class ExtractionAmbiguityWarning(UserWarning):
    """Mode extraction with poorly separated decay timescales."""
