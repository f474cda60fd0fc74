"""Landmark sets with named anatomical roles, mirror table, and contours.

A schema fixes, for a landmark count K: which index pairs play the six
anatomical roles (femoral/tibial shaft pairs, femoral notch pair, tibial
plateau corner pair), the index remapping under horizontal mirroring, and
the ordered index runs tracing each bone contour (used for point-to-curve
distances).

Role pairs are ordered (medial, lateral) for a left knee, i.e. (smaller x,
larger x) in the canonical pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingMirrorTable, SchemaMismatch

ROLE_NAMES = (
    "femur_shaft_proximal",  # paired with femur_shaft_distal for the femoral axis
    "femur_shaft_distal",
    "femoral_notch",
    "tibia_shaft_proximal",
    "tibia_shaft_distal",
    "plateau_corners",  # reference-length pair, also the global-search targets
)


@dataclass
class LandmarkSchema:
    n_points: int
    roles: dict[str, tuple[int, int]]
    mirror: np.ndarray | None = None
    contours: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for name in ROLE_NAMES:
            if name not in self.roles:
                raise ValueError(f"schema missing role {name!r}")
            a, b = self.roles[name]
            for i in (a, b):
                if not 0 <= i < self.n_points:
                    raise ValueError(f"role {name} index {i} out of range")
            if a == b:
                raise ValueError(f"role {name} uses the same index twice")
            seen.update((a, b))
        if self.mirror is not None:
            self.mirror = np.asarray(self.mirror, dtype=np.int64)
            if self.mirror.shape != (self.n_points,):
                raise ValueError("mirror table length must equal n_points")
            if not np.array_equal(self.mirror[self.mirror], np.arange(self.n_points)):
                raise ValueError("mirror table must be an involution")
        for run in self.contours:
            for i in run:
                if not 0 <= i < self.n_points:
                    raise ValueError(f"contour index {i} out of range")

    def role_pair(self, name: str) -> tuple[int, int]:
        return self.roles[name]

    def same_layout(self, other: "LandmarkSchema") -> bool:
        return self.n_points == other.n_points and self.roles == other.roles


@dataclass
class LandmarkSet:
    """Ordered 2-D landmark coordinates plus their schema and side flag."""

    points: np.ndarray
    schema: LandmarkSchema
    side: str = "left"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (K, 2)")
        if self.points.shape[0] != self.schema.n_points:
            raise SchemaMismatch(
                f"{self.points.shape[0]} points but schema expects {self.schema.n_points}"
            )
        if not np.all(np.isfinite(self.points)):
            raise ValueError("landmark coordinates must be finite")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")

    def pair_points(self, role: str) -> np.ndarray:
        a, b = self.schema.role_pair(role)
        return self.points[[a, b]]

    def mirrored(self, image_width: int) -> "LandmarkSet":
        """Mirror about the vertical axis, remapping indices by the table."""
        if self.schema.mirror is None:
            raise MissingMirrorTable("schema has no mirror table")
        flipped = self.points.copy()
        flipped[:, 0] = (image_width - 1.0) - flipped[:, 0]
        remapped = flipped[self.schema.mirror]
        return LandmarkSet(remapped, self.schema, side=("right" if self.side == "left" else "left"))


def write_schema(path, schema: LandmarkSchema) -> None:
    """Serialize a schema as flat ``key = value`` text plus index lists."""
    lines = ["version = 1", f"n_points = {schema.n_points}"]
    for name in ROLE_NAMES:
        a, b = schema.roles[name]
        lines.append(f"role_{name} = {a} {b}")
    if schema.mirror is not None:
        lines.append("mirror = " + " ".join(str(int(i)) for i in schema.mirror))
    for n, run in enumerate(schema.contours):
        lines.append(f"contour_{n} = " + " ".join(str(i) for i in run))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_schema(path) -> LandmarkSchema:
    kv: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed schema line: {line!r}")
            key, val = line.split("=", 1)
            kv[key.strip()] = val.strip()
    if kv.get("version") != "1":
        raise ValueError(f"unsupported schema version {kv.get('version')!r}")
    n = int(kv["n_points"])
    roles = {}
    for name in ROLE_NAMES:
        a, b = kv[f"role_{name}"].split()
        roles[name] = (int(a), int(b))
    mirror = None
    if "mirror" in kv:
        mirror = np.array([int(v) for v in kv["mirror"].split()], dtype=np.int64)
    contours = []
    i = 0
    while f"contour_{i}" in kv:
        contours.append([int(v) for v in kv[f"contour_{i}"].split()])
        i += 1
    return LandmarkSchema(n, roles, mirror, contours)
