"""Exception hierarchy shared across the engine.

Every error carries a short machine-readable ``code`` so the HTTP layer can
map failures onto structured error bodies without string matching.
"""


class EngineError(Exception):
    code = "engine_error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.details:
            body["details"] = {k: v for k, v in self.details.items() if v is not None}
        return body


class ValidationError(EngineError):
    """Input rejected before any computation ran."""

    code = "validation_error"


class ParseError(ValidationError):
    """Malformed input file; carries the offending line when known."""

    code = "parse_error"

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        super().__init__(message, line=line, column=column)
        self.line = line
        self.column = column


class RankError(ValidationError):
    """Design matrix is rank deficient; names the collinear columns."""

    code = "rank_error"

    def __init__(self, message: str, columns: list[str]):
        super().__init__(message, columns=columns)
        self.columns = columns


class SupportError(ValidationError):
    """A requested segment or time bucket has no data in one of the cells."""

    code = "support_error"


class CapabilityError(EngineError):
    """The requested computation needs inputs this dataset cannot provide."""

    code = "capability_error"


class ConflictError(EngineError):
    code = "conflict"


class NotFoundError(EngineError):
    code = "not_found"
