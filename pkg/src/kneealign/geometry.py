"""2-D points, similarity transforms, polylines, and signed angles.

Coordinate convention throughout the package: x grows rightward and y grows
downward (image raster order). All signed angles are defined in this frame;
angles are degrees at API boundaries and radians internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePair, ZeroVector

_COINCIDENCE_EPS = 1e-12


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite coordinate: {v!r}")


@dataclass(frozen=True)
class Point2:
    """A 2-D point in pixel coordinates (x rightward, y downward)."""

    x: float
    y: float

    def __post_init__(self):
        _check_finite(self.x, self.y)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class SimilarityTransform:
    """Scale/rotation/translation map: p -> scale * R(rotation) @ p + t.

    ``rotation`` is in radians; positive rotation turns +x toward +y
    (the y-down convention). ``scale`` must be positive.
    """

    scale: float
    rotation: float
    tx: float
    ty: float

    def __post_init__(self):
        _check_finite(self.scale, self.rotation, self.tx, self.ty)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_complex(self) -> tuple[complex, complex]:
        """Return (a, b) with T(z) = a*z + b on x+iy complex points."""
        a = self.scale * complex(math.cos(self.rotation), math.sin(self.rotation))
        return a, complex(self.tx, self.ty)


def frame_from_point_pair(
    p0: Point2, p1: Point2, q0: Point2, q1: Point2
) -> SimilarityTransform:
    """Solve the unique similarity T with T(q0) = p0 and T(q1) = p1.

    Uses the closed-form two-point construction: with points as complex
    numbers, a = (p1 - p0) / (q1 - q0) and b = p0 - a * q0.

    Parameters
    ----------
    p0, p1 : Point2
        Detected positions in image coordinates.
    q0, q1 : Point2
        The corresponding fixed positions in the reference frame.

    Raises
    ------
    DegeneratePair
        If either pair coincides (distance < 1e-12).
    """
    zp0, zp1 = complex(p0.x, p0.y), complex(p1.x, p1.y)
    zq0, zq1 = complex(q0.x, q0.y), complex(q1.x, q1.y)
    if abs(zp1 - zp0) < _COINCIDENCE_EPS:
        raise DegeneratePair("image point pair coincides")
    if abs(zq1 - zq0) < _COINCIDENCE_EPS:
        raise DegeneratePair("frame point pair coincides")
    a = (zp1 - zp0) / (zq1 - zq0)
    b = zp0 - a * zq0
    return SimilarityTransform(abs(a), math.atan2(a.imag, a.real), b.real, b.imag)


def apply(t: SimilarityTransform, p: Point2) -> Point2:
    """Map a point through the transform."""
    c, s = math.cos(t.rotation), math.sin(t.rotation)
    return Point2(
        t.scale * (c * p.x - s * p.y) + t.tx,
        t.scale * (s * p.x + c * p.y) + t.ty,
    )


def apply_array(t: SimilarityTransform, pts: np.ndarray) -> np.ndarray:
    """Map an (N, 2) array of points through the transform."""
    pts = np.asarray(pts, dtype=np.float64)
    c, s = math.cos(t.rotation), math.sin(t.rotation)
    x = t.scale * (c * pts[..., 0] - s * pts[..., 1]) + t.tx
    y = t.scale * (s * pts[..., 0] + c * pts[..., 1]) + t.ty
    return np.stack([x, y], axis=-1)


def invert(t: SimilarityTransform) -> SimilarityTransform:
    """Return T^-1 with apply(invert(T), apply(T, p)) == p."""
    a, b = t.as_complex()
    ai = 1.0 / a
    bi = -b / a
    return SimilarityTransform(abs(ai), math.atan2(ai.imag, ai.real), bi.real, bi.imag)


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Return the transform applying b first, then a."""
    ca, ba = a.as_complex()
    cb, bb = b.as_complex()
    c = ca * cb
    d = ca * bb + ba
    return SimilarityTransform(abs(c), math.atan2(c.imag, c.real), d.real, d.imag)


def signed_angle_deg(u, v) -> float:
    """Signed angle from u to v in degrees, in (-180, 180].

    Positive when rotating u onto v turns +x toward +y (the y-down frame).
    Computed as atan2(cross(u, v), dot(u, v)).

    Parameters
    ----------
    u, v : array-like of length 2 or Point2
        Direction vectors; must have nonzero length.

    Raises
    ------
    ZeroVector
        If either vector has zero norm.
    """
    ux, uy = (u.x, u.y) if isinstance(u, Point2) else (float(u[0]), float(u[1]))
    vx, vy = (v.x, v.y) if isinstance(v, Point2) else (float(v[0]), float(v[1]))
    _check_finite(ux, uy, vx, vy)
    if math.hypot(ux, uy) == 0.0:
        raise ZeroVector("u has zero length")
    if math.hypot(vx, vy) == 0.0:
        raise ZeroVector("v has zero length")
    cross = ux * vy - uy * vx
    dot = ux * vx + uy * vy
    ang = math.degrees(math.atan2(cross, dot))
    # atan2 yields (-180, 180]; -180.0 can still appear from a negative-zero
    # cross term, fold it onto +180.
    if ang == -180.0:
        ang = 180.0
    return ang


class Polyline:
    """An ordered chain of 2-D points (length >= 2).

    Consecutive duplicates are allowed but distance queries require a total
    length > 0.
    """

    def __init__(self, points):
        pts = np.asarray(
            [[p.x, p.y] if isinstance(p, Point2) else p for p in points],
            dtype=np.float64,
        )
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a polyline needs at least two 2-D points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline contains non-finite coordinates")
        self.points = pts

    def total_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


def point_to_polyline_distance(p, c: Polyline) -> float:
    """Minimum Euclidean distance from a point to a polyline.

    Projects onto each segment's interior where the foot of the perpendicular
    falls inside it, otherwise uses the nearer endpoint.

    Raises
    ------
    ValueError
        If the polyline has zero total length.
    """
    if isinstance(p, Point2):
        q = p.to_array()
    else:
        q = np.asarray(p, dtype=np.float64)
    a = c.points[:-1]
    b = c.points[1:]
    d = b - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    if not np.any(seg_len2 > 0):
        raise ValueError("polyline has zero total length")
    t = np.zeros(len(a))
    nz = seg_len2 > 0
    t[nz] = np.einsum("ij,ij->i", q - a[nz], d[nz]) / seg_len2[nz]
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * d
    return float(np.min(np.linalg.norm(foot - q, axis=1)))
