"""Transient reachability violations during iBGP re-convergence.

Simulate BGP events on a router network, probe the data plane, and measure
for how long each router loses reachability to each affected prefix.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import IbgpConvError  # noqa: E402

__all__ = ["IbgpConvError", "__version__"]
