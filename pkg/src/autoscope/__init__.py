"""Simulated autonomous scanning-probe microscopy.

Modules, bottom up: ``sample`` (synthetic ferroelectric specimens), ``scope``
(scan paths, drift, noise and simulated time), ``gp`` (exact GP regression),
``acquire`` (acquisition surfaces and measurement tours), ``recon``
(reconstruction and error metrics), ``agent`` (tabular RL), ``feedback``
(line-by-line trigger and pulse loop) and ``campaign`` (configured runs,
persistence, reports).
"""

__version__ = "0.1.0"
