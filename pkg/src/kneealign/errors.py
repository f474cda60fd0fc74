"""Exception types raised across the package.

Validation failures subclass ValueError so callers may catch either the
specific type or the broad builtin. Numerical failures (non-finite loss,
failed convergence) subclass ArithmeticError.
"""


class DegeneratePair(ValueError):
    """Two points expected to be distinct coincide."""


class ZeroVector(ValueError):
    """A direction vector has zero length."""


class DegenerateAxis(ValueError):
    """An anatomical axis collapses to a point."""


class ShapeMismatch(ValueError):
    """Tensor or array operands have incompatible shapes."""


class OddSpatialSize(ValueError):
    """2x2 pooling applied to an odd spatial dimension."""


class UnrecordedTensor(ValueError):
    """backward() called on a tensor that is not part of a recorded graph."""


class BadSize(ValueError):
    """Invalid heatmap or image size."""


class EmptyDataset(ValueError):
    """A training set with no samples."""


class NonFiniteLoss(ArithmeticError):
    """Training loss became NaN or infinite."""


class MissingMirrorTable(ValueError):
    """Horizontal flip requested but the schema has no mirror table."""


class SchemaMismatch(ValueError):
    """Two landmark sets do not share the same schema."""


class ZeroReferenceLength(ValueError):
    """The reference pair of the ground truth coincides."""


class LengthMismatch(ValueError):
    """Paired measurement series have different lengths."""


class TooFewSubjects(ValueError):
    """Agreement statistic requires more subjects."""


class GeometryOverflow(ValueError):
    """Phantom geometry does not fit inside the image with the required margin."""


class ConfigError(ValueError):
    """Malformed or unknown key in a run configuration."""
