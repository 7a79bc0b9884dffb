"""Error taxonomy shared by the whole grid stack.

Every exception carries a stable ``code`` string. The same codes travel in
ERROR envelopes on the wire and drive CLI exit statuses, so they are part of
the public surface and must not be renamed casually.
"""

from __future__ import annotations


class GridError(Exception):
    """Base class; ``code`` identifies the failure on the wire and in the CLI."""

    code = "E_INTERNAL"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail


class ConfigError(GridError):
    code = "E_CONFIG"


class PolicyParseError(GridError):
    code = "E_PARSE"


class OutOfRangeError(GridError):
    code = "E_RANGE"


class DuplicateServiceError(GridError):
    code = "E_DUP"


class DuplicateStateError(GridError):
    code = "E_DUP_STATE"


class StorageError(GridError):
    code = "E_IO"


class SchemaError(GridError):
    code = "E_SCHEMA"


class UnknownTypeError(GridError):
    code = "E_UNKNOWN_TYPE"


class VersionError(GridError):
    code = "E_VERSION"


class DuplicateSubjectError(GridError):
    code = "E_DUPLICATE_SUBJECT"


class UnknownSubjectError(GridError):
    code = "E_UNKNOWN_SUBJECT"


class NotFoundError(GridError):
    code = "E_NOT_FOUND"


class InvalidCertError(GridError):
    code = "E_INVALID_CERT"


class ConnError(GridError):
    code = "E_CONN"


class ExistsError(GridError):
    code = "E_EXISTS"


# Codes that normally travel as ERROR envelopes rather than exceptions.
E_AUTH = "E_AUTH"
E_CERT = "E_CERT"
E_NO_NODE = "E_NO_NODE"
E_NO_SESSION = "E_NO_SESSION"
E_NOT_AUTHORIZED = "E_NOT_AUTHORIZED"
E_BAD_PEER_CERT = "E_BAD_PEER_CERT"
E_TICK_LIMIT = "E_TICK_LIMIT"
