"""Encoder/decoder hourglass with attention-gated skip connections.

The encoder halves resolution ``depth`` times while channels double up to a
cap of 4x the base width; the bottleneck and every level use two-conv
residual blocks; the decoder mirrors the encoder and merges each skip after
filtering it through an attention gate driven by the immediately coarser
decoder feature. A 1x1 head followed by ReLU emits one nonnegative heatmap
per landmark at input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autograd as ag
from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .heatmap import decode_soft_argmax, encode_gaussian
from .optim import Adam


@dataclass
class HourglassConfig:
    depth: int = 3
    width: int = 8
    k: int = 2
    in_h: int = 64
    in_w: int = 64
    sigma_target: float = 2.5
    wing_w: float = 10.0
    wing_eps: float = 2.0
    lr: float = 2e-3
    epochs: int = 30
    batch_size: int = 8
    beta: float = 10.0
    aux_mse_weight: float = 0.0
    seed: int = 0
    gates: str = "learned"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.width < 4:
            raise ValueError("width must be >= 4")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        step = 1 << self.depth
        if self.in_h % step or self.in_w % step:
            raise ValueError(f"input size {self.in_h}x{self.in_w} must be divisible by 2^{self.depth}")
        if self.gates not in ("learned", "open", "none"):
            raise ValueError(f"unknown gates mode {self.gates!r}")

    def channels(self) -> list[int]:
        return [min((1 << i) * self.width, 4 * self.width) for i in range(self.depth + 1)]


def _init_conv(rng, c_out, c_in, k):
    bound = 1.0 / np.sqrt(c_in * k * k)
    return rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(np.float32)


def _init_bias(rng, c_out, c_in, k):
    bound = 1.0 / np.sqrt(c_in * k * k)
    return rng.uniform(-bound, bound, size=c_out).astype(np.float32)


class HourglassModel:
    """Parameter set plus architecture config; forward builds the graph."""

    def __init__(self, config: HourglassConfig, dtype=np.float32):
        self.config = config
        self.params: dict[str, ag.Tensor] = {}
        rng = np.random.default_rng(config.seed)
        ch = config.channels()

        def add(name, arr):
            self.params[name] = ag.Tensor(arr.astype(dtype), requires_grad=True)

        def add_conv(name, c_out, c_in, k):
            add(f"{name}.w", _init_conv(rng, c_out, c_in, k))
            add(f"{name}.b", _init_bias(rng, c_out, c_in, k))

        add_conv("stem", ch[0], 1, 3)
        for i in range(config.depth):
            add_conv(f"enc{i}.c1", ch[i], ch[i], 3)
            add_conv(f"enc{i}.c2", ch[i], ch[i], 3)
            add_conv(f"down{i}", ch[i + 1], ch[i], 3)
        add_conv("bottleneck.c1", ch[-1], ch[-1], 3)
        add_conv("bottleneck.c2", ch[-1], ch[-1], 3)
        for i in range(config.depth):
            add_conv(f"up{i}", ch[i], ch[i + 1], 1)
            add_conv(f"dec{i}.c1", ch[i], ch[i], 3)
            add_conv(f"dec{i}.c2", ch[i], ch[i], 3)
            cint = max(ch[i] // 2, 4)
            add_conv(f"ag{i}.wx", cint, ch[i], 1)
            add_conv(f"ag{i}.wg", cint, ch[i + 1], 1)
            add_conv(f"ag{i}.psi", 1, cint, 1)
            # Start with gates mostly open.
            self.params[f"ag{i}.psi.b"].data[:] = 1.0
        add_conv("head", config.k, ch[0], 1)

    def parameters(self) -> list[ag.Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != t.data.shape:
                raise ShapeMismatch(f"{name}: {state[name].shape} != {t.data.shape}")
            t.data = state[name].astype(t.data.dtype).copy()

    def astype(self, dtype) -> "HourglassModel":
        clone = HourglassModel(self.config, dtype=dtype)
        for name, t in self.params.items():
            clone.params[name].data = t.data.astype(dtype)
        return clone

    def _conv(self, name, x, padding=0):
        return ag.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], padding=padding)

    def _resblock(self, name, x):
        h = ag.relu(self._conv(f"{name}.c1", x, padding=1))
        h = self._conv(f"{name}.c2", h, padding=1)
        return ag.relu(ag.add(x, h))

    def attention_gate(self, level: int, x: ag.Tensor, g: ag.Tensor) -> ag.Tensor:
        """Gate a skip feature x with the coarser decoder feature g.

        alpha = sigmoid(psi(relu(Wx x + Wg up(g)))), broadcast over channels.
        """
        if g.shape[2] * 2 == x.shape[2] and g.shape[3] * 2 == x.shape[3]:
            g = ag.upsample_nearest2(g)
        elif g.shape[2:] != x.shape[2:]:
            raise ShapeMismatch(f"gate feature {g.shape} incompatible with skip {x.shape}")
        a = ag.add(self._conv(f"ag{level}.wx", x), self._conv(f"ag{level}.wg", g))
        psi_w = self.params[f"ag{level}.psi.w"]
        psi_b = self.params[f"ag{level}.psi.b"]
        alpha = ag.sigmoid(ag.conv2d(ag.relu(a), psi_w, psi_b))
        return ag.mul(x, alpha)

    def forward(self, image: ag.Tensor) -> ag.Tensor:
        """Map a (B, 1, H, W) image tensor to (B, K, H, W) heatmaps."""
        cfg = self.config
        if image.data.ndim != 4 or image.shape[1] != 1:
            raise ShapeMismatch("expected a (B, 1, H, W) input")
        if image.shape[2] != cfg.in_h or image.shape[3] != cfg.in_w:
            raise ShapeMismatch(
                f"input {image.shape[2]}x{image.shape[3]} does not match config {cfg.in_h}x{cfg.in_w}"
            )
        h = ag.relu(self._conv("stem", image, padding=1))
        skips = []
        for i in range(cfg.depth):
            h = self._resblock(f"enc{i}", h)
            skips.append(h)
            h = ag.maxpool2(h)
            h = ag.relu(self._conv(f"down{i}", h, padding=1))
        h = self._resblock("bottleneck", h)
        for i in reversed(range(cfg.depth)):
            g = h
            skip = skips[i]
            if cfg.gates == "none":
                gated = skip
            else:
                gated = self.attention_gate(i, skip, g)
            h = ag.relu(self._conv(f"up{i}", ag.upsample_nearest2(h)))
            h = self._resblock(f"dec{i}", ag.add(h, gated))
        # Linear head: the soft-argmax is shift-invariant, and clamping
        # to a nonnegative heatmap stack happens at the predict() boundary.
        return self._conv("head", h)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Inference on a (B, 1, H, W) or (1, H, W) array; no graph recorded.

        Returns nonnegative heatmap stacks (negative responses clamp to 0,
        so a featureless input yields near-zero peaks).
        """
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        with ag.no_grad():
            out = self.forward(ag.Tensor(arr))
        return np.maximum(out.data, 0.0)

    def open_gate_copy(self) -> "HourglassModel":
        """Copy with psi biases pushed to the open-gate limit (alpha -> 1)."""
        clone = HourglassModel(self.config)
        clone.load_state_dict(self.state_dict())
        for i in range(self.config.depth):
            clone.params[f"ag{i}.psi.w"].data[:] = 0.0
            clone.params[f"ag{i}.psi.b"].data[:] = 40.0
        return clone

    def gate_free_copy(self) -> "HourglassModel":
        """Copy that bypasses the gates entirely (plain hourglass)."""
        clone = HourglassModel(replace(self.config, gates="none"))
        clone.load_state_dict(self.state_dict())
        return clone


def train(
    model: HourglassModel,
    images: np.ndarray,
    coords: np.ndarray,
    log=None,
) -> list[float]:
    """Adam on Wing loss of the soft-argmax coordinates.

    Parameters
    ----------
    images : (N, H, W) or (N, 1, H, W) float array, values in [0, 1].
    coords : (N, K, 2) target pixel coordinates in frame space.
    log : optional callable(epoch, mean_loss).

    Returns
    -------
    Per-epoch mean training loss.

    Raises
    ------
    EmptyDataset, NonFiniteLoss
    """
    cfg = model.config
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[:, None]
    coords = np.asarray(coords, dtype=np.float32)
    n = images.shape[0]
    if n == 0:
        raise EmptyDataset("no training samples")
    if coords.shape != (n, cfg.k, 2):
        raise ShapeMismatch(f"coords shape {coords.shape} != ({n}, {cfg.k}, 2)")

    aux_targets = None
    if cfg.aux_mse_weight > 0:
        aux_targets = np.stack(
            [encode_gaussian(c, cfg.sigma_target, (cfg.in_h, cfg.in_w)) for c in coords]
        )

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            x = ag.Tensor(images[idx])
            hm = model.forward(x)
            pred = decode_soft_argmax(hm, cfg.beta)
            loss = ag.wing_loss(pred, ag.Tensor(coords[idx]), w=cfg.wing_w, eps=cfg.wing_eps)
            if aux_targets is not None:
                diff = ag.sub(hm, ag.Tensor(aux_targets[idx]))
                mse = ag.tensor_sum(ag.mul(diff, diff)) * (1.0 / hm.data.size)
                loss = ag.add(loss, mse * cfg.aux_mse_weight)
            opt.zero_grad()
            loss.backward()
            opt.step()
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise NonFiniteLoss(f"loss became {lval} at epoch {epoch}, batch start {start}")
            total += lval * len(idx)
        mean = total / n
        trace.append(mean)
        if log is not None:
            log(epoch, mean)
    return trace


def config_to_dict(cfg: HourglassConfig) -> dict[str, str]:
    return {f.name: repr(getattr(cfg, f.name)) for f in fields(cfg)}


def config_from_dict(d: dict[str, str]) -> HourglassConfig:
    kwargs = {}
    valid = {f.name: f.type for f in fields(HourglassConfig)}
    for key, val in d.items():
        if key not in valid:
            raise KeyError(f"unknown config key {key!r}")
        if key == "gates":
            kwargs[key] = val.strip("'\"")
        elif key in ("depth", "width", "k", "in_h", "in_w", "epochs", "batch_size", "seed"):
            kwargs[key] = int(val)
        else:
            kwargs[key] = float(val)
    return HourglassConfig(**kwargs)
