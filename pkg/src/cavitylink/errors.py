"""Exception types shared across the package."""


class CavityLinkError(Exception):
    """Base class for all cavitylink errors."""


class InvalidConfigError(CavityLinkError, ValueError):
    """A configuration value violates its documented range or invariant."""


class EmptyInputError(CavityLinkError, ValueError):
    """An operation that needs at least one sample or element got none."""


class ContractViolation(CavityLinkError):
    """Two inputs that must agree (lengths, rates, parity) do not."""


class InvalidReferenceError(CavityLinkError, ValueError):
    """A reference sequence with zero power cannot normalize an EVM."""


class TruncatedFrameError(CavityLinkError):
    """A synchronized symbol block is shorter than one frame."""


class ConfigParseError(CavityLinkError):
    """A campaign configuration document could not be parsed."""


class ReportError(CavityLinkError):
    """The requested report style does not match the supplied records."""


class ContinuityError(CavityLinkError):
    """Sample-continuity contract violated; the affected trial must abort."""
