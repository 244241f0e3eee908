"""Exception types shared across the package."""


class ProtoensError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(ProtoensError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(ProtoensError, ValueError):
    """Input values fall outside an operation's mathematical domain."""


class ContractError(ProtoensError, RuntimeError):
    """A caller violated an operation's precondition."""


class ParseError(ProtoensError, ValueError):
    """A file or record does not match its documented format."""


class ValidationError(ProtoensError, ValueError):
    """Configuration or data fails a consistency requirement."""


class SamplingError(ProtoensError, ValueError):
    """An episode cannot be sampled from the given corpus."""


class UnsupportedConfigurationError(ProtoensError, ValueError):
    """The requested mode is not supported for these inputs."""
