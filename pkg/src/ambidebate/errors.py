"""Exception hierarchy shared by every module."""

from __future__ import annotations


class AmbidebateError(Exception):
    """Base class; ``code`` is the machine-greppable tag the CLI prints."""

    code = "E_INTERNAL"


class VocabularyExhausted(AmbidebateError):
    code = "E_VOCAB"


class SchemaError(AmbidebateError):
    """Malformed input. ``path`` locates the offending field, e.g. ``[3].slots.ambiguous_span``."""

    code = "E_SCHEMA"

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(AmbidebateError):
    """A model response did not follow the marker grammar."""

    code = "E_PARSE"

    def __init__(self, reason: str, raw: str = ""):
        self.reason = reason
        self.raw = raw
        super().__init__(reason)


class BackendError(AmbidebateError):
    code = "E_BACKEND"


class NetworkError(BackendError):
    code = "E_NETWORK"


class HttpStatusError(BackendError):
    code = "E_HTTP_STATUS"

    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body[:200]}")


class ScriptExhausted(BackendError):
    code = "E_SCRIPT_EXHAUSTED"


class KeyMismatch(AmbidebateError):
    code = "E_KEY_MISMATCH"


class ConfigError(AmbidebateError):
    code = "E_CONFIG"
