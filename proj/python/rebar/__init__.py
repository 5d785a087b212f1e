"""Matched observational studies with remnant-based residualization."""

from ._rebar import *  # noqa: F401,F403
from ._rebar import __doc__ as _doc

__all__ = [name for name in dir() if not name.startswith("_")]
