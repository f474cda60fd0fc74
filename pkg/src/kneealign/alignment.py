"""Anatomical tibiofemoral angle (aTFA) from landmark positions.

Two constructions measure the angle between the anatomical femoral and
tibial axes:

* FTS: femoral axis through the two femoral shaft midpoints, tibial axis
  through the two tibial shaft midpoints.
* FNTS: femoral axis through the distal femoral shaft midpoint and the
  femoral notch midpoint; tibial axis as in FTS.

Both axes are oriented toward increasing y (proximal to distal). Angles
are deviations from 0 (parallel axes); varus is negative and valgus
positive for a left knee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAxis
from .geometry import signed_angle_deg
from .landmarks import LandmarkSet

# Ties the y-down signed angle to the valgus-positive convention for the
# canonical left knee (lateral side toward +x); validated against the
# phantom generator's geometric definition of valgus.
_VALGUS_SIGN = -1.0

_AXIS_EPS = 1e-9


def midpoint(pair: np.ndarray) -> np.ndarray:
    """Arithmetic mean of a (2, 2) point pair, computed in float64."""
    pair = np.asarray(pair, dtype=np.float64)
    return 0.5 * (pair[0] + pair[1])


def _axis(p_from: np.ndarray, p_to: np.ndarray, name: str) -> np.ndarray:
    d = p_to - p_from
    if float(np.hypot(d[0], d[1])) < _AXIS_EPS:
        raise DegenerateAxis(f"{name} axis endpoints coincide")
    return d


@dataclass(frozen=True)
class AlignmentResult:
    atfa_fts: float
    atfa_fnts: float
    fts_femoral_axis: np.ndarray  # (2, 2): proximal point, distal point
    fts_tibial_axis: np.ndarray
    fnts_femoral_axis: np.ndarray
    fnts_tibial_axis: np.ndarray


def _tibial_axis(lm: LandmarkSet) -> tuple[np.ndarray, np.ndarray]:
    prox = midpoint(lm.pair_points("tibia_shaft_proximal"))
    dist = midpoint(lm.pair_points("tibia_shaft_distal"))
    return prox, dist


def atfa_fts(lm: LandmarkSet) -> float:
    """aTFA with both axes fit through shaft midpoint pairs (degrees)."""
    f_prox = midpoint(lm.pair_points("femur_shaft_proximal"))
    f_dist = midpoint(lm.pair_points("femur_shaft_distal"))
    t_prox, t_dist = _tibial_axis(lm)
    fdir = _axis(f_prox, f_dist, "femoral")
    tdir = _axis(t_prox, t_dist, "tibial")
    return _VALGUS_SIGN * signed_angle_deg(fdir, tdir)


def atfa_fnts(lm: LandmarkSet) -> float:
    """aTFA with the femoral axis through the notch midpoint (degrees)."""
    f_prox = midpoint(lm.pair_points("femur_shaft_distal"))
    f_dist = midpoint(lm.pair_points("femoral_notch"))
    t_prox, t_dist = _tibial_axis(lm)
    fdir = _axis(f_prox, f_dist, "femoral (notch)")
    tdir = _axis(t_prox, t_dist, "tibial")
    return _VALGUS_SIGN * signed_angle_deg(fdir, tdir)


def measure(lm: LandmarkSet) -> AlignmentResult:
    """Both aTFA measures plus the axis endpoints used (for plotting)."""
    f_prox = midpoint(lm.pair_points("femur_shaft_proximal"))
    f_dist = midpoint(lm.pair_points("femur_shaft_distal"))
    notch = midpoint(lm.pair_points("femoral_notch"))
    t_prox, t_dist = _tibial_axis(lm)
    return AlignmentResult(
        atfa_fts=atfa_fts(lm),
        atfa_fnts=atfa_fnts(lm),
        fts_femoral_axis=np.stack([f_prox, f_dist]),
        fts_tibial_axis=np.stack([t_prox, t_dist]),
        fnts_femoral_axis=np.stack([f_dist, notch]),
        fnts_tibial_axis=np.stack([t_prox, t_dist]),
    )
