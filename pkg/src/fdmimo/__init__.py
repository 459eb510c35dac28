"""Monte-Carlo simulator of multi-cell FD-MIMO downlink throughput under RF impairments.

Submodules: :mod:`array` (geometry, ports, patterns), :mod:`channel`
(layout, users, fading), :mod:`impairments` (phase/magnitude errors, LO and
temperature drift), :mod:`precoding` (precoders, feedback, reception,
scheduling), :mod:`calibration`, :mod:`sim` (drops and sweeps) and
:mod:`cli`.
"""

__version__ = "0.1.0"

from .sim import SimConfig, run_drop, run_sweep  # noqa: E402

__all__ = ["__version__", "SimConfig", "run_drop", "run_sweep"]
