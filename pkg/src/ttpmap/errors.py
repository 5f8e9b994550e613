"""Exception types shared across the pipeline."""


class TtpmapError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(TtpmapError):
    """Input file or record does not match its declared format."""


class MalformedId(FormatError):
    """A string does not parse as an ATT&CK technique ID."""


class DuplicateId(FormatError):
    """The same technique ID appears more than once in a taxonomy source."""


class EmptyCorpus(TtpmapError):
    """An operation that requires documents was given none."""


class BackendError(TtpmapError):
    """A chat backend failed after the configured retries."""


class UnparseableResponse(TtpmapError):
    """A re-ranker response contains no ranking line at all."""


class QueryTooLong(TtpmapError):
    """The query alone exceeds the generator context budget."""


class EmptyPrediction(TtpmapError):
    """Filtering removed every predicted label; caller decides the fallback."""

    def __init__(self, message: str, raw_response: str = "", filtered_count: int = 0):
        super().__init__(message)
        self.raw_response = raw_response
        self.filtered_count = filtered_count


class LevelMismatch(TtpmapError):
    """Two label sets scored together are at different granularity levels."""


class MissingPrediction(TtpmapError):
    """Gold examples without a matching prediction record."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        super().__init__(f"no prediction for {len(self.missing_ids)} example(s): "
                         + ", ".join(self.missing_ids[:10])
                         + ("..." if len(self.missing_ids) > 10 else ""))
