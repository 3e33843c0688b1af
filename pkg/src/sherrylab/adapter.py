"""Residual bottleneck adapters, insertion policy and tunability accounting.

An adapter is Y = X + ReLU(X W1) W2: a down-projection, a ReLU, and an
up-projection added back onto the input. No biases, no normalization. On
stage-based encoders X is the channel vector at each spatial position, so W1
and W2 act as 1x1 convolutions; the arithmetic is identical either way.

W2 starts at zero, which makes insertion behavior-preserving: until the first
optimizer step the adapted encoder computes exactly what the plain one did.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec, ModeRequiresAdapters, ShapeMismatch, TooManyAdapters


@dataclass
class AdapterState:
    point_name: str
    W1: np.ndarray  # width x bottleneck
    W2: np.ndarray  # bottleneck x width
    bottleneck_ratio: float

    @property
    def width(self) -> int:
        return self.W1.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.W1.shape[1]


class TunabilityMode(enum.Enum):
    HEAD = "head"
    HEAD_ADAPTER = "head_adapter"
    BACKBONE = "backbone"
    BACKBONE_ADAPTER = "backbone_adapter"


def bottleneck_width(width: int, ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise InvalidSpec(f"bottleneck ratio must be in (0, 1], got {ratio}")
    return max(1, int(round(ratio * width)))


def adapter_forward(X: np.ndarray, a: AdapterState) -> np.ndarray:
    """Y = X + ReLU(X W1) W2, applied along the last axis."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != a.width:
        raise ShapeMismatch(
            f"adapter '{a.point_name}' expects width {a.width}, got {X.shape[-1]}")
    y, _ = adapter_forward_cached(X, a.W1.astype(np.float64), a.W2.astype(np.float64))
    return y


def adapter_forward_cached(X: np.ndarray, W1: np.ndarray, W2: np.ndarray):
    if X.shape[-1] != W1.shape[0]:
        raise ShapeMismatch(
            f"adapter width {W1.shape[0]} does not match input width {X.shape[-1]}")
    pre = X @ W1
    hidden = np.maximum(pre, 0.0)
    y = X + hidden @ W2
    return y, {"x": X, "pre": pre, "hidden": hidden, "W1": W1, "W2": W2}


def adapter_backward(dY: np.ndarray, cache: dict):
    """Gradients (dX, dW1, dW2) for Y = X + ReLU(X W1) W2."""
    x, pre, hidden = cache["x"], cache["pre"], cache["hidden"]
    w1, w2 = cache["W1"], cache["W2"]
    flat = (-1, x.shape[-1])
    d_hidden = dY @ w2.T
    d_pre = d_hidden * (pre > 0)
    dX = dY + d_pre @ w1.T
    x2 = x.reshape(flat)
    dW1 = x2.T @ d_pre.reshape(-1, w1.shape[1])
    dW2 = hidden.reshape(-1, w1.shape[1]).T @ dY.reshape(flat)
    return dX, dW1, dW2


def insert_adapters(enc, count: int, ratio: float = 0.25, seed: int = 0) -> None:
    """Attach adapters to the LAST ``count`` insertion points (deepest first).

    W2 is zero-initialized so forward outputs are unchanged until training.
    Mutates the encoder in place; parameters register under the adapter group.
    """
    from .backbone import GROUP_ADAPTER, insertion_points

    points = insertion_points(enc)
    if count < 0 or count > len(points):
        raise TooManyAdapters(
            f"count {count} outside [0, {len(points)}] insertion points")
    if enc.adapters:
        raise InvalidSpec("encoder already has adapters")
    rng = np.random.default_rng(seed)
    widths = {pt: wd for pt, wd in zip(points, enc.spec.widths)}
    for point in points[len(points) - count:]:
        width = widths[point]
        bn = bottleneck_width(width, ratio)
        w1 = rng.standard_normal((width, bn)) * np.sqrt(2.0 / width)
        w2 = np.zeros((bn, width))
        w1r = enc.register(f"adapter/{point}/W1", w1, GROUP_ADAPTER)
        w2r = enc.register(f"adapter/{point}/W2", w2, GROUP_ADAPTER)
        enc.adapters[point] = AdapterState(point_name=point, W1=w1r, W2=w2r,
                                           bottleneck_ratio=ratio)


_MODE_GROUPS = {
    TunabilityMode.HEAD: {"head"},
    TunabilityMode.HEAD_ADAPTER: {"head", "adapter"},
    TunabilityMode.BACKBONE: {"head", "block", "source_head"},
    TunabilityMode.BACKBONE_ADAPTER: {"head", "block", "source_head", "adapter"},
}


def set_tunability(enc, mode: TunabilityMode) -> None:
    """Select which parameter groups receive optimizer updates."""
    if enc.frozen:
        raise InvalidSpec("encoder is frozen; tunability cannot be changed")
    needs_adapters = mode in (TunabilityMode.HEAD_ADAPTER,
                              TunabilityMode.BACKBONE_ADAPTER)
    if needs_adapters and not enc.adapters:
        raise ModeRequiresAdapters(f"mode {mode.value} needs adapters inserted")
    wanted = _MODE_GROUPS[mode]
    enc.trainable = {name for name, g in enc.groups.items() if g in wanted}


def count_parameters(enc) -> dict:
    """Exact element counts: total, currently-tunable, and per group."""
    by_group: dict[str, int] = {}
    total = 0
    tunable = 0
    for name, arr in enc.params.items():
        size = int(arr.size)
        total += size
        by_group[enc.groups[name]] = by_group.get(enc.groups[name], 0) + size
        if name in enc.trainable:
            tunable += size
    return {"total": total, "tunable": tunable, "by_group": by_group}
