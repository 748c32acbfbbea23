"""
errors.py
Domain exceptions shared by every core module.
"""

from __future__ import annotations

from typing import Any, List, Optional, Sequence, Tuple


class Roi10dError(RuntimeError):
    pass


class GeometryDomainError(Roi10dError, ValueError):
    """An input lies outside the domain of a geometric operation."""


class MissingScoreError(GeometryDomainError):
    pass


class ConfigError(Roi10dError, ValueError):
    pass


class UnsupportedGeometryError(Roi10dError):
    pass


class EmptySurfaceError(Roi10dError):
    pass


class PlacementFailure(Roi10dError):
    pass


class LabelParseError(Roi10dError, ValueError):
    def __init__(self, message: str, *, line_number: Optional[int] = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


class NonConvergenceError(Roi10dError):
    def __init__(self, message: str, *, last_iterate: Any = None, iterations: int = 0):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class DivergenceError(Roi10dError):
    def __init__(self, message: str, *, trace: Any = None):
        self.trace = trace
        super().__init__(message)


class SignAmbiguityError(Roi10dError):
    """Raised when ray parity cannot decide inside/outside (mesh is not watertight)."""

    def __init__(self, rays: Sequence[Tuple[int, int]]):
        self.rays: List[Tuple[int, int]] = list(rays)
        shown = ", ".join(f"(y={j}, z={k})" for j, k in self.rays[:10])
        more = f" and {len(self.rays) - 10} more" if len(self.rays) > 10 else ""
        super().__init__(f"Odd crossing count on {len(self.rays)} rays: {shown}{more}")
