"""Exception types shared across the package."""

from __future__ import annotations


class TabrecError(Exception):
    """Base class for all package-specific errors."""


class ParseError(TabrecError):
    """A delimited-text file could not be parsed."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class EmptyTableError(TabrecError):
    """The file contained a header but no data rows."""


class GatewayError(TabrecError):
    """Base class for chat-backend failures."""


class AuthError(GatewayError):
    """Missing or rejected credentials."""


class RateLimited(GatewayError):
    def __init__(self, retry_after: float | None = None, message: str = "rate limited"):
        self.retry_after = retry_after
        super().__init__(message)


class TransportError(GatewayError):
    """Network-level failure that persisted through all retries."""


class MockFixtureMissing(GatewayError):
    def __init__(self, stage_tag: str, key: str):
        self.stage_tag = stage_tag
        self.key = key
        super().__init__(f"no mock fixture registered for stage={stage_tag!r} key={key!r}")


class DuplicateFixture(GatewayError):
    def __init__(self, stage_tag: str, key: str):
        self.stage_tag = stage_tag
        self.key = key
        super().__init__(f"fixture already registered for stage={stage_tag!r} key={key!r}")


class NoJsonFound(GatewayError):
    """No parseable JSON value could be extracted from a completion."""

    def __init__(self, text: str):
        self.text = text
        preview = text if len(text) <= 200 else text[:200] + "..."
        super().__init__(f"no JSON value found in completion: {preview!r}")


class ExplanationParseError(TabrecError):
    """The table-explanation stage produced no usable structure after a re-ask."""


class PipelineEmpty(TabrecError):
    """All three generation families returned zero candidates."""


class ScriptedEnvelopeMissing(TabrecError):
    """The scripted executor has no canned envelope for a request."""

    def __init__(self, table: str, module: str, code: str):
        self.table = table
        self.module = module
        self.code = code
        snippet = code if len(code) <= 120 else code[:120] + "..."
        super().__init__(
            f"no scripted envelope for table={table!r} module={module!r} code={snippet!r}"
        )


class DatasetSchemaError(TabrecError):
    """A gold-dataset line failed schema validation."""

    def __init__(self, line: int, field: str, reason: str = ""):
        self.line = line
        self.field = field
        detail = f": {reason}" if reason else ""
        super().__init__(f"dataset line {line}, field {field!r}{detail}")
