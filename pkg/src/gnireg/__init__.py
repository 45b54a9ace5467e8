"""Gaussian-noise-injection training and diagnostics toolkit.

Submodules are imported explicitly (``from gnireg import trainer``); the
package root stays import-light so the CLI can cap BLAS thread pools before
numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "calibration",
    "cli",
    "data",
    "diagnostics",
    "errors",
    "linalg",
    "network",
    "noise",
    "objective",
    "svgplot",
    "trainer",
]
