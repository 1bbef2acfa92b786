"""Resonances of compactly perturbed planar waveguides.

A strip of width pi, perturbed inside a bounded region, scatters waves fed
through its two half-infinite leads.  The resolvent of the Laplacian
continues meromorphically across the channel thresholds n**2 onto an
infinitely branched surface; its poles (resonances) are computed here as
zeros of two independent determinants: a mode-matching determinant and a
cutoff-resolvent Fredholm determinant on a finite-difference grid.
"""

__version__ = "0.1.0"

from .sheet import BoundaryCondition, SheetPoint, Threshold, thresholds, branch_sqrt
from .geometry import Segment, Geometry
from .quasimode import QuasimodeSpec

__all__ = [
    "BoundaryCondition",
    "SheetPoint",
    "Threshold",
    "thresholds",
    "branch_sqrt",
    "Segment",
    "Geometry",
    "QuasimodeSpec",
    "__version__",
]
