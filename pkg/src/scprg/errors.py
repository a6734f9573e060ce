"""Exception taxonomy shared across the package."""


class ScprgError(Exception):
    """Base class for all package errors."""


class ShapeError(ScprgError):
    """Tensor shapes do not conform to the operation's contract."""


class DomainError(ScprgError):
    """Input values lie outside the mathematical domain of the operation."""


class ContractError(ScprgError):
    """An API precondition was violated by the caller."""


class ConfigError(ScprgError):
    """A configuration value is missing, malformed or inconsistent."""


class FormatError(ScprgError):
    """A serialized artifact (interchange file, checkpoint) is corrupt."""


class VocabError(ScprgError):
    """A token, role or event type has no registered id."""


class ValidationError(ScprgError):
    """A data record failed validation against the corpus schema."""
