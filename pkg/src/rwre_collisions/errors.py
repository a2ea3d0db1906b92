"""Exception and warning types raised across the package."""


class RWREError(Exception):
    """Base class for all errors raised by rwre_collisions."""


class ConfigError(RWREError, ValueError):
    pass


class LawError(ConfigError):
    """An environment law descriptor is invalid."""


class SupportOutsideUnitInterval(LawError):
    pass


class ProbSumMismatch(LawError):
    pass


class EllipticityViolated(LawError):
    pass


class KappaError(RWREError):
    """No admissible Kesten exponent exists for the law."""


class NotTransientRight(KappaError):
    pass


class NoRootBelowCap(KappaError):
    pass


class DegenerateLaw(KappaError):
    pass


class QuadratureNotConverged(RWREError):
    pass


class EpsilonOutOfRange(ConfigError):
    pass


class ScheduleOutOfReach(RWREError):
    """The requested schedule index has no exact N_i under the horizon cap."""


class WindowTooSmall(RWREError):
    pass


class ConservationError(RWREError):
    """Probability mass drifted beyond tolerance during a DP sweep."""


class DegenerateFit(RWREError, ValueError):
    pass


class RangeError(RWREError, ValueError):
    pass


class ArithmeticLawWarning(UserWarning):
    """log(rho_0) has a lattice law; n^kappa scaling is not guaranteed."""


class TheoremRegimeWarning(UserWarning):
    """Parameters fall outside the 0 < kappa < 1/2 regime."""


class ParityWarning(UserWarning):
    """Starting points of mixed parity can never collide."""
