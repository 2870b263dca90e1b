"""Exception hierarchy shared by all pipeline stages."""


class ValidationError(ValueError):
    """An input, config, or invariant check failed."""


class FormatError(ValidationError):
    """A file does not conform to its on-disk format."""


class ChecksumError(FormatError):
    """Stored checksum does not match the recomputed one."""
