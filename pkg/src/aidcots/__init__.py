"""Transmission switching on a DC network model guided by AC admittance sensitivities."""

from __future__ import annotations

from .cases import load_case
from .netmodel import Network, build_admittance, incidence, parse_matpower

__all__ = ["Network", "build_admittance", "incidence", "load_case", "parse_matpower"]
__version__ = "0.1.0"
