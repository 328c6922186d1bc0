"""Exception hierarchy. The CLI maps every :class:`LrnnError` to exit status 2."""
from __future__ import annotations

from typing import Optional


class LrnnError(Exception):
    pass


class ParseError(LrnnError):
    def __init__(self, message: str, line: int = 0, column: int = 0,
                 token: Optional[str] = None, source: Optional[str] = None) -> None:
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        self.source = source
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.source}:" if self.source else ""
        tok = f" near {self.token!r}" if self.token is not None else ""
        return f"{where}{self.line}:{self.column}: {self.message}{tok}"


class TemplateError(LrnnError):
    """Semantically invalid template (arity conflicts, range restriction, layering)."""


class GroundingError(LrnnError):
    pass


class CompileError(LrnnError):
    pass


class ShapeError(CompileError):
    pass


class DataError(LrnnError):
    """Malformed corpus or example data."""
