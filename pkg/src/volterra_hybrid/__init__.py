"""Hybrid equity / interest-rate model driven by Gaussian Volterra processes.

Volatility and short rate are both Gaussian Volterra processes.  The package
provides bond and cap analytics, a Fredholm-determinant characteristic
function with Lewis pricing, Riccati routes for completely monotone kernels,
Monte Carlo validation and two-stage calibration.
"""

from __future__ import annotations

__version__ = "0.1.0"
