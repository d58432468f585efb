"""Exceptions raised across TagASC.

Every exception carries an ``exit_code`` so that the command-line entry point
can map failures onto its documented exit codes:
    - 1: check/assertion failure
    - 2: usage or configuration error
    - 3: data error
"""

__all__ = ["TagASCError", "CheckFailure", "ConfigurationError", "UsageError",
           "DimensionError", "DegenerateBatchError", "DataError", "ParseError",
           "MalformedHeaderError", "UnsupportedCodecError", "TruncatedDataError",
           "DegenerateDataError"]


class TagASCError(Exception):
    """Base class of all TagASC errors."""
    exit_code = 1

    def __init__(self, subject: str, detail: str = ""):
        self.subject = subject
        self.detail = detail
        super().__init__(f"{subject}: {detail}" if detail else subject)

    def log_info(self) -> str:
        """The message in the logger's format."""
        return f"**{self.__class__.__name__}: {self.subject}** {self.detail}".rstrip()


class CheckFailure(TagASCError):
    """A gradient check or an assertion-style verification failed."""
    exit_code = 1


class ConfigurationError(TagASCError, ValueError):
    """Invalid configuration, e.g., a head count that does not divide f."""
    exit_code = 2


class UsageError(ConfigurationError):
    """Contradictory or malformed command-line flags."""
    exit_code = 2


class DimensionError(TagASCError, ValueError):
    """Shape contract violated."""
    exit_code = 3


class DegenerateBatchError(DimensionError):
    """Batch statistics are undefined, e.g., a single time step in train mode."""


class DataError(TagASCError):
    """Invalid input data (missing tags, overlapping splits, out-of-range labels)."""
    exit_code = 3


class ParseError(DataError):
    """A file could not be parsed.

    Attributes:
        offset: byte offset (binary formats) or line number (text formats).
    """

    def __init__(self, subject: str, detail: str = "", offset=None):
        self.offset = offset
        super().__init__(subject, detail)


class MalformedHeaderError(ParseError):
    """RIFF/WAVE header or chunk layout is broken."""


class UnsupportedCodecError(ParseError):
    """Well-formed WAV whose encoding is not PCM16 with 1-2 channels."""


class TruncatedDataError(ParseError):
    """The data chunk declares more bytes than the file holds."""


class DegenerateDataError(DataError):
    """Training data cannot define a classifier, e.g., a single class."""
