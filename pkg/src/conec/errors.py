"""Exception hierarchy and process exit codes."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class ConecError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ConecError):
    """Missing, malformed, or inconsistent input data (exit code 2)."""


class NumericError(ConecError):
    """Numerical failure during computation (exit code 3)."""


class NumericOverflowError(NumericError):
    """A score or gradient became non-finite."""


class EmptyVocabularyError(DataError):
    """No word in the corpus met the frequency threshold."""


class MalformedLineError(DataError):
    """An input file line could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


class MissingWordError(DataError):
    """The word has no accumulated context counts."""


class WordNotInDocumentError(DataError):
    """The word does not occur in the supplied document."""


class UnresolvableWordError(DataError):
    """Out-of-vocabulary word queried without a document to draw context from."""


class DegenerateLabelsError(DataError):
    """Classifier training needs at least two distinct classes."""


class LengthMismatchError(DataError):
    """Paired sequences have different lengths."""


class ZeroQueryError(DataError):
    """A zero vector has no direction to rank neighbors against."""


class CheckpointError(DataError):
    """Base class for checkpoint (de)serialization failures."""


class CorruptHeaderError(CheckpointError):
    """Checkpoint magic bytes or header do not match the expected format."""


class VersionMismatchError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class TruncatedFileError(CheckpointError):
    """Checkpoint file ended before all declared payloads were read."""
