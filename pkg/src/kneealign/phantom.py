"""Procedural knee phantoms with exact ground-truth landmarks and angles.

Each phantom is two bone silhouettes (femur above, tibia below) whose
center lines meet at the joint with a prescribed signed angle. Half-width
profiles are symmetric about each axis, so every cross-section midpoint
lies exactly on the axis and the shaft/notch constructions recover the true
angle to float precision. Landmarks sample the silhouette contours at fixed
axial fractions; the canonical pose is a left knee with the lateral side
toward +x, and valgus tilts the distal tibia laterally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GeometryOverflow
from .landmarks import LandmarkSchema, LandmarkSet

# Fraction of the total deformity carried by the femoral axis; the tibia
# carries the rest. Only the difference (the measured angle) is observable.
_FEMUR_TILT_SHARE = 0.35


@dataclass(frozen=True)
class PhantomParams:
    size: int = 256
    true_atfa_deg: float = 0.0
    k: int = 40
    femur_len: float = 75.0
    tibia_len: float = 75.0
    femur_shaft_hw: float = 13.0
    condyle_hw: float = 24.0
    plateau_hw: float = 26.0
    tibia_shaft_hw: float = 12.0
    tibia_end_hw: float = 15.0
    joint_gap: float = 7.0
    center_dx: float = 0.0
    center_dy: float = 0.0
    notch_depth: float = 12.0
    notch_wall_offset: float = 5.0
    post_op: bool = False
    noise_sd: float = 0.012
    blur_sigma: float = 0.8
    side: str = "left"
    seed: int = 0

    def __post_init__(self):
        if not -20.0 <= self.true_atfa_deg <= 20.0:
            raise ValueError("true_atfa_deg must lie in [-20, 20]")
        for name in ("femur_shaft_hw", "condyle_hw", "plateau_hw", "tibia_shaft_hw", "tibia_end_hw"):
            if getattr(self, name) <= 4.0:
                raise ValueError(f"{name} must exceed 4 px")
        if self.k < 24:
            raise ValueError("need k >= 24 to place all role pairs")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _point_counts(k: int) -> tuple[int, int, bool]:
    """Split K into per-edge counts: femur and tibia each use 6 fixed points
    plus 2 * n edge points; an odd K adds a distal tibia center point."""
    odd = bool(k % 2)
    pairs = (k - 12 - odd) // 2
    if pairs < 6 or 12 + 2 * pairs + odd != k:
        raise ValueError(f"unsupported landmark count {k}")
    n_f = pairs // 2
    n_t = pairs - n_f
    return n_f, n_t, odd


def _edge_fracs(n: int, role_a: float = 0.2, role_b: float = 0.8):
    ts = np.linspace(0.06, 0.93, n)
    ia = int(np.argmin(np.abs(ts - role_a)))
    ib = int(np.argmin(np.abs(ts - role_b)))
    return ts, ia, ib


def build_schema(k: int = 40) -> LandmarkSchema:
    """Schema for the phantom layout: contour-ordered points per bone."""
    n_f, n_t, odd = _point_counts(k)
    kf = 6 + 2 * n_f

    ts_f, yf, rf = _edge_fracs(n_f)
    ts_t, bk, bl = _edge_fracs(n_t)

    # Femur indices: 0..n_f-1 medial edge (proximal->distal), then medial
    # condyle, notch pair, lateral condyle, lateral edge (distal->proximal),
    # then two top-cap points (lateral, medial).
    lat_f = lambda j: n_f + 4 + (n_f - 1 - j)  # lateral-edge index at medial j
    roles = {
        "femur_shaft_proximal": (yf, lat_f(yf)),
        "femur_shaft_distal": (rf, lat_f(rf)),
        "femoral_notch": (n_f + 1, n_f + 2),
    }
    mirror = np.empty(k, dtype=np.int64)
    for j in range(n_f):
        mirror[j] = lat_f(j)
        mirror[lat_f(j)] = j
    mirror[n_f] = n_f + 3
    mirror[n_f + 3] = n_f
    mirror[n_f + 1] = n_f + 2
    mirror[n_f + 2] = n_f + 1
    mirror[kf - 2] = kf - 1
    mirror[kf - 1] = kf - 2
    femur_run = list(range(kf)) + [0]

    # Tibia indices (offset by kf): plateau-medial corner, medial edge
    # (proximal->distal), distal cap (medial, [center if odd], lateral),
    # lateral edge (distal->proximal), plateau-lateral corner, top cap
    # (lateral, medial).
    off = kf
    n_cap = 3 if odd else 2
    lat_t = lambda j: off + 1 + n_t + n_cap + (n_t - 1 - j)
    roles["tibia_shaft_proximal"] = (off + 1 + bk, lat_t(bk))
    roles["tibia_shaft_distal"] = (off + 1 + bl, lat_t(bl))
    roles["plateau_corners"] = (off, off + 1 + n_t + n_cap + n_t)
    mirror[off] = roles["plateau_corners"][1]
    mirror[roles["plateau_corners"][1]] = off
    for j in range(n_t):
        mirror[off + 1 + j] = lat_t(j)
        mirror[lat_t(j)] = off + 1 + j
    cap0 = off + 1 + n_t
    if odd:
        mirror[cap0] = cap0 + 2
        mirror[cap0 + 1] = cap0 + 1
        mirror[cap0 + 2] = cap0
    else:
        mirror[cap0] = cap0 + 1
        mirror[cap0 + 1] = cap0
    top0 = roles["plateau_corners"][1] + 1
    mirror[top0] = top0 + 1
    mirror[top0 + 1] = top0
    tibia_run = list(range(off, k)) + [off]

    return LandmarkSchema(k, roles, mirror, [femur_run, tibia_run])


class _BoneFrame:
    """Axis-aligned local frame: u along the axis (downward), v lateral."""

    def __init__(self, origin, tilt_rad):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.vu = np.array([math.sin(tilt_rad), math.cos(tilt_rad)])
        self.vv = np.array([math.cos(tilt_rad), -math.sin(tilt_rad)])

    def to_image(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return self.origin + np.outer(uv[:, 0], self.vu) + np.outer(uv[:, 1], self.vv)


def _femur_curves(p: PhantomParams):
    def hw(t):
        return p.femur_shaft_hw + (p.condyle_hw - p.femur_shaft_hw) * _smoothstep((t - 0.7) / 0.3)

    def u_bot(v):
        notch_sigma = p.notch_wall_offset * 1.1
        return (
            p.femur_len
            + 7.0 * (1.0 - (v / p.condyle_hw) ** 2)
            - p.notch_depth * np.exp(-((v / notch_sigma) ** 2))
        )

    def u_top(v):
        return -4.0 * (1.0 - (v / hw(0.0)) ** 2)

    return hw, u_bot, u_top


def _tibia_curves(p: PhantomParams):
    def hw(t):
        t = np.asarray(t, dtype=np.float64)
        w = p.tibia_shaft_hw + (p.plateau_hw - p.tibia_shaft_hw) * _smoothstep(1.0 - t / 0.28)
        return w + (p.tibia_end_hw - p.tibia_shaft_hw) * _smoothstep((t - 0.85) / 0.15)

    def u_bot(v):
        return p.tibia_len + 5.0 * (1.0 - (v / hw(1.0)) ** 2)

    return hw, u_bot


def _ground_truth(p: PhantomParams):
    """Landmarks (image coords), dense render polygons, and bone frames."""
    theta = math.radians(p.true_atfa_deg)
    a_f = -_FEMUR_TILT_SHARE * theta
    a_t = (1.0 - _FEMUR_TILT_SHARE) * theta
    center = np.array([p.size / 2.0 + p.center_dx, p.size / 2.0 + p.center_dy])
    vf = np.array([math.sin(a_f), math.cos(a_f)])
    vt = np.array([math.sin(a_t), math.cos(a_t)])
    femur = _BoneFrame(center - (p.joint_gap / 2.0 + p.femur_len) * vf, a_f)
    tibia = _BoneFrame(center + (p.joint_gap / 2.0) * vt, a_t)

    n_f, n_t, odd = _point_counts(p.k)
    fhw, f_bot, f_top = _femur_curves(p)
    thw, t_bot = _tibia_curves(p)

    ts_f, _, _ = _edge_fracs(n_f)
    vc = 0.6 * p.condyle_hw
    vn = p.notch_wall_offset
    vtop = 0.5 * fhw(0.0)
    fem_uv = (
        [(t * p.femur_len, -fhw(t)) for t in ts_f]
        + [(f_bot(-vc), -vc), (f_bot(-vn), -vn), (f_bot(vn), vn), (f_bot(vc), vc)]
        + [(t * p.femur_len, fhw(t)) for t in ts_f[::-1]]
        + [(f_top(vtop), vtop), (f_top(-vtop), -vtop)]
    )

    ts_t, _, _ = _edge_fracs(n_t)
    vd = 0.5 * thw(1.0)
    vtp = 0.45 * p.plateau_hw
    cap = [(t_bot(-vd), -vd)]
    if odd:
        cap.append((t_bot(0.0), 0.0))
    cap.append((t_bot(vd), vd))
    tib_uv = (
        [(0.0, -p.plateau_hw)]
        + [(t * p.tibia_len, -thw(t)) for t in ts_t]
        + cap
        + [(t * p.tibia_len, thw(t)) for t in ts_t[::-1]]
        + [(0.0, p.plateau_hw)]
        + [(0.0, vtp), (0.0, -vtp)]
    )

    pts = np.vstack([femur.to_image(np.array(fem_uv)), tibia.to_image(np.array(tib_uv))])

    # Dense outlines for rendering.
    tt = np.linspace(0.0, 1.0, 48)
    vv = np.linspace(-p.condyle_hw, p.condyle_hw, 64)
    vtt = np.linspace(fhw(0.0), -fhw(0.0), 16)
    fem_poly = femur.to_image(
        np.array(
            [(t * p.femur_len, -fhw(t)) for t in tt]
            + [(f_bot(v), v) for v in vv]
            + [(t * p.femur_len, fhw(t)) for t in tt[::-1]]
            + [(f_top(v), v) for v in vtt]
        )
    )
    vvt = np.linspace(-thw(1.0), thw(1.0), 32)
    tib_poly = tibia.to_image(
        np.array(
            [(0.0, -p.plateau_hw)]
            + [(t * p.tibia_len, -thw(t)) for t in tt]
            + [(t_bot(v), v) for v in vvt]
            + [(t * p.tibia_len, thw(t)) for t in tt[::-1]]
            + [(0.0, p.plateau_hw)]
        )
    )
    return pts, fem_poly, tib_poly, femur, tibia


def _implant_polys(p: PhantomParams, femur: _BoneFrame, tibia: _BoneFrame):
    fl, ch, ph = p.femur_len, p.condyle_hw, p.plateau_hw
    fem_comp = np.array(
        [(fl - 16, -0.8 * ch), (fl + 3, -0.8 * ch), (fl + 3, 0.8 * ch), (fl - 16, 0.8 * ch)]
    )
    fem_stem = np.array([(fl - 45, -5), (fl - 16, -5), (fl - 16, 5), (fl - 45, 5)])
    tib_plate = np.array([(-1, -0.85 * ph), (7, -0.85 * ph), (7, 0.85 * ph), (-1, 0.85 * ph)])
    tib_stem = np.array([(7, -4.5), (38, -4.5), (38, 4.5), (7, 4.5)])
    return [
        femur.to_image(fem_comp),
        femur.to_image(fem_stem),
        tibia.to_image(tib_plate),
        tibia.to_image(tib_stem),
    ]


def _fill_polygon(canvas: np.ndarray, poly_xy: np.ndarray, value: float, scale: int) -> None:
    """Even-odd scanline fill on a supersampled canvas (max composite)."""
    hs, ws = canvas.shape
    # Continuous image coords -> supersampled pixel-index coords.
    xs = (poly_xy[:, 0] + 0.5) * scale - 0.5
    ys = (poly_xy[:, 1] + 0.5) * scale - 0.5
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    keep = y0 != y1
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]
    lo = np.minimum(y0, y1)
    hi = np.maximum(y0, y1)
    rows = np.arange(hs, dtype=np.float64)
    # crossings[r, e] for scanline y = r
    mask = (rows[:, None] >= lo[None, :]) & (rows[:, None] < hi[None, :])
    r_idx, e_idx = np.nonzero(mask)
    t = (r_idx - y0[e_idx]) / (y1[e_idx] - y0[e_idx])
    cx = x0[e_idx] + t * (x1[e_idx] - x0[e_idx])
    jc = np.clip(np.ceil(cx), 0, ws).astype(np.int64)
    diff = np.zeros((hs, ws + 1), dtype=np.int64)
    np.add.at(diff, (r_idx, jc), 1)
    inside = (np.cumsum(diff[:, :-1], axis=1) % 2).astype(bool)
    np.maximum(canvas, np.where(inside, value, 0.0), out=canvas)


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    r = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    k /= k.sum()
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        padded = np.pad(img, pad, mode="reflect")
        out = np.zeros_like(img)
        for i, kv in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(i, i + img.shape[axis])
            out += kv * padded[tuple(sl)]
        img = out
    return img


def generate(params: PhantomParams) -> tuple[np.ndarray, LandmarkSet, float]:
    """Render one phantom.

    Returns (image, landmarks, true_atfa_deg) with the image as a float32
    (size, size) array in [0, 1]. A 'right' side renders the mirrored left
    phantom with indices remapped by the schema's mirror table.
    """
    pts, fem_poly, tib_poly, femur, tibia = _ground_truth(params)

    margin = 8.0
    all_xy = np.vstack([pts, fem_poly, tib_poly])
    if all_xy.min() < margin or all_xy.max() > params.size - 1 - margin:
        raise GeometryOverflow(
            f"phantom spans [{all_xy.min():.1f}, {all_xy.max():.1f}] "
            f"outside margin {margin} of a {params.size} px image"
        )

    scale = 4
    canvas = np.full((params.size * scale, params.size * scale), 0.07)
    _fill_polygon(canvas, fem_poly, 0.52, scale)
    _fill_polygon(canvas, tib_poly, 0.56, scale)
    if params.post_op:
        for poly in _implant_polys(params, femur, tibia):
            _fill_polygon(canvas, poly, 0.95, scale)
    img = canvas.reshape(params.size, scale, params.size, scale).mean(axis=(1, 3))
    img = _gaussian_blur(img, params.blur_sigma)
    rng = np.random.default_rng(params.seed)
    img = img + rng.normal(0.0, params.noise_sd, img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    schema = build_schema(params.k)
    lset = LandmarkSet(pts, schema, side="left")
    if params.side == "right":
        img = img[:, ::-1].copy()
        lset = lset.mirrored(params.size)
    return img, lset, params.true_atfa_deg


def sample_params(rng: np.random.Generator, **overrides) -> PhantomParams:
    """Draw one phantom's parameters: uniform angle, jittered geometry."""
    base = dict(
        true_atfa_deg=float(rng.uniform(-20.0, 20.0)),
        femur_len=float(rng.uniform(70.0, 80.0)),
        tibia_len=float(rng.uniform(70.0, 80.0)),
        femur_shaft_hw=float(rng.uniform(11.5, 14.5)),
        condyle_hw=float(rng.uniform(22.0, 26.0)),
        plateau_hw=float(rng.uniform(24.0, 28.0)),
        tibia_shaft_hw=float(rng.uniform(10.5, 13.5)),
        tibia_end_hw=float(rng.uniform(13.5, 16.5)),
        center_dx=float(rng.uniform(-10.0, 10.0)),
        center_dy=float(rng.uniform(-10.0, 10.0)),
        notch_depth=float(rng.uniform(10.0, 14.0)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )
    base.update(overrides)
    return PhantomParams(**base)
