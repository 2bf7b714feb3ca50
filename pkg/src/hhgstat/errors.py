"""Exception hierarchy.

Every domain failure derives from :class:`HHGError`; the CLI maps those to
exit code 1. Malformed input files raise :class:`FormatError` (exit code 2).
"""


class HHGError(Exception):
    """Base class for domain errors."""


class FormatError(HHGError):
    """Input file does not follow the expected format."""


# fock_core
class TruncationOverflow(HHGError):
    pass


class InvalidState(HHGError, ValueError):
    pass


class ZeroIntensity(HHGError):
    pass


# hhg_hamiltonian
class NonHermitian(HHGError):
    pass


class StepTooLarge(HHGError):
    pass


class NonPositiveInput(HHGError, ValueError):
    pass


# photostat_models
class ZeroGain(HHGError, ValueError):
    pass


class EmptySpectrum(HHGError, ValueError):
    pass


class InvalidK(HHGError, ValueError):
    pass


# detector_sim
class ConfigError(HHGError, ValueError):
    pass


# correlator
class UnsortedStream(HHGError, ValueError):
    pass


class EmptyChannel(HHGError):
    pass


class FitFailure(HHGError):
    pass


class InsufficientCounts(HHGError):
    pass


class RejectedFit(HHGError):
    pass


class InvalidEfficiency(HHGError, ValueError):
    pass


class ZeroRate(HHGError, ValueError):
    pass


class TooFewRuns(HHGError):
    pass


class RejectedInput(HHGError):
    pass


# strongfield_params
class MissingLatticeConstant(HHGError):
    pass


class NonPositiveData(HHGError, ValueError):
    pass


class DegenerateFit(HHGError):
    pass


class NoCrossover(HHGError):
    pass
