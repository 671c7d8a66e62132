"""Exception taxonomy shared by all polarkit modules.

Exit-code mapping used by the CLI:

* 2 -- :class:`UsageError`
* 3 -- :class:`StructuralError`, :class:`DataError`, :class:`FormatError`
* 4 -- :class:`TransportError`
* 5 -- :class:`CompositionError`
"""


class PolarkitError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PolarkitError):
    """Caller misuse: unknown option, missing template, stage mismatch."""


class StructuralError(PolarkitError):
    """Shape or dimension mismatch between co-registered inputs."""


class DataError(PolarkitError):
    """Invalid sample values: non-finite data, degenerate instances."""


class FormatError(PolarkitError):
    """Malformed file or payload: bad JSON, inconsistent RLE, bad polygon."""


class IntegrityError(FormatError):
    """Referential integrity violation inside an otherwise parseable file."""


class TransportError(PolarkitError):
    """Text-generation client failure after exhausting retries."""


class GenerationError(TransportError):
    """Client returned an unusable (e.g. empty) response."""


class CompositionError(PolarkitError):
    """Split targets cannot be met by the accepted sample pool."""


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4
EXIT_COMPOSITION = 5


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code documented above."""
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (StructuralError, DataError, FormatError)):
        return EXIT_DATA
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    if isinstance(exc, CompositionError):
        return EXIT_COMPOSITION
    return 1
