"""Error types shared by the network and forest file loaders."""

from __future__ import annotations

from typing import Optional


class FormatError(Exception):
    """Base class for model-file and interchange failures."""

    code = "format"


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""

    code = "bad_magic"


class VersionError(FormatError):
    """The file declares a format version this reader does not speak."""

    code = "bad_version"


class TruncatedError(FormatError):
    """The file ends before the declared content does."""

    code = "truncated"


class ValidationError(FormatError):
    """A structurally readable description that violates an invariant."""

    code = "invalid"

    def __init__(self, message: str, layer_index: Optional[int] = None):
        super().__init__(message)
        self.layer_index = layer_index


class MalformedForestError(ValidationError):
    """A forest whose traversal guard tripped (cycle or index overrun)."""

    code = "malformed_forest"


class InterchangeError(FormatError):
    """JSON interchange schema violation, carrying the offending field path."""

    code = "interchange"

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
