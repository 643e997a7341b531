"""Exception hierarchy shared by every module.

Data errors (bad files, inconsistent inputs) derive from ``CurateError`` so the
CLI can map them to exit status 1.
"""


class CurateError(Exception):
    pass


class LatticeError(CurateError):
    """Structural problem with a lattice (cycle, disconnection, no path)."""


class LexiconError(CurateError):
    pass


class NgramError(CurateError):
    pass


class FormatError(CurateError):
    """Malformed input text; carries the file name and line number."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        if lineno is not None:
            message = f"{path or '<input>'}:{lineno}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
