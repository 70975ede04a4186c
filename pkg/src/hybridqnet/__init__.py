"""Rate and fidelity of entanglement distribution over fiber, satellite and hybrid routes."""

from __future__ import annotations

__version__ = "0.1.0"
