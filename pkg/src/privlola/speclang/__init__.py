"""Stream specification language: syntax tree, parser and renderer."""

from .ast import *  # noqa: F401,F403
from .ast import Specification
from .parser import parse_specification, tokenize
from .render import format_duration, format_number, render_expr, render_specification

__all__ = [
    "Specification",
    "parse_specification",
    "render_specification",
    "render_expr",
    "format_number",
    "format_duration",
    "tokenize",
]
