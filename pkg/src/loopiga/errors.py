"""Exception hierarchy shared by all loopiga modules."""


class LoopIgaError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(LoopIgaError):
    """Invalid or unusable control mesh."""


class NonManifoldEdge(MeshError):
    """An edge is not shared by exactly two cells."""


class NonManifoldVertex(MeshError):
    """The cells around a vertex do not form a single closed fan."""


class InconsistentOrientation(MeshError):
    """Two cells traverse a shared edge in the same direction."""


class UnreferencedVertex(MeshError):
    """A vertex is missing from the cell list, or a cell references a
    vertex id that does not exist."""


class InvalidValence(LoopIgaError):
    """Vertex valence outside the supported range (N >= 3)."""


class TwoEVsInPatch(MeshError):
    """A cell has more than one extraordinary corner; the one-ring
    collection around the patch is ill-defined."""


class TwoEVsOnEdge(MeshError):
    """Both endpoints of an edge are extraordinary; no mid-edge lookup
    row applies."""


class OutOfDomain(LoopIgaError):
    """Parameter point lies outside the closed unit triangle."""


class AtExtraordinaryVertex(LoopIgaError):
    """Evaluation requested exactly at the extraordinary corner, where
    derivative data is singular; use limit stencils instead."""


class MaxDepthExceeded(LoopIgaError):
    """Parameter point so close to the extraordinary corner that the
    ring-descent depth cap was hit."""


class UnsupportedDegree(LoopIgaError):
    """No embedded Gaussian rule with the requested exactness."""


class InvalidLevel(LoopIgaError):
    """Subdivision or ring-refinement depth out of range."""


class InvalidResolution(LoopIgaError):
    """Mesh generator resolution too small."""


class DegenerateMetric(LoopIgaError):
    """First fundamental form numerically singular at a quadrature
    point (collapsed control configuration)."""


class NoConvergence(LoopIgaError):
    """Iterative solver hit its iteration cap before the tolerance."""


class SingularSystem(LoopIgaError):
    """Linear system unusable: zero diagonal, indefinite direction, or
    constraint vector orthogonal to the kernel."""


class LevelMismatch(LoopIgaError):
    """Coefficient vector does not match the mesh chain level."""


class MeshMismatch(LoopIgaError):
    """Field vectors do not live on the mesh they are compared on."""


class DegenerateErrors(LoopIgaError):
    """Error sequence unusable for convergence rates (zeros or
    non-monotone mesh sizes)."""


class ClusterStagnation(UserWarning):
    """Eigenvalue gap below tolerance; iteration continues with block
    deflation.  Emitted as a warning, not raised."""
