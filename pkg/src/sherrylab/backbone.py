"""Encoder abstraction with named adapter insertion points.

Three desk-scale families share one parameter registry and one forward
contract (batch -> retrieval features + optional source-class logits):

* IDENTITY         - copies the flattened input through; the projection head
                     is the only mapping. One insertion point.
* STAGE_CONV       - a stack of pointwise (1x1-conv) stages, ReLU between,
                     global average pool at the end. One insertion point per
                     stage, mirroring stage-indexed CNN backbones.
* LAYER_TRANSFORMER- per-token affine + ReLU + a global token-mixing residual
                     per layer, mean-pooled over tokens. One insertion point
                     per layer, mirroring layer-indexed ViT backbones.

All math runs in float64; parameters are stored float32 (the archive dtype)
so checkpoint round-trips are bit-exact. Forward/backward are hand-written
and verified against central finite differences in the test suite.

Real pretrained weights enter through the same parameter archive format via
``load_encoder``; nothing here requires a GPU.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive
from .adapter import AdapterState, adapter_backward, adapter_forward_cached
from .errors import ArchiveCorrupt, InvalidSpec, ShapeMismatch

GROUP_BLOCK = "block"
GROUP_HEAD = "head"
GROUP_SOURCE_HEAD = "source_head"
GROUP_ADAPTER = "adapter"


class Family(enum.Enum):
    STAGE_CONV = "stage_conv"
    LAYER_TRANSFORMER = "layer_transformer"
    IDENTITY = "identity"


@dataclass(frozen=True)
class EncoderSpec:
    family: Family
    num_blocks: int
    widths: tuple[int, ...]
    input_size: tuple[int, int, int]  # (H, W, C)
    source_classes: int

    def validate(self) -> None:
        h, w, c = self.input_size
        if min(h, w, c) <= 0:
            raise InvalidSpec(f"input_size must be positive, got {self.input_size}")
        if self.num_blocks < 1:
            raise InvalidSpec("num_blocks must be >= 1")
        if len(self.widths) != self.num_blocks:
            raise InvalidSpec(
                f"widths has {len(self.widths)} entries for {self.num_blocks} blocks")
        if any(wd < 1 for wd in self.widths):
            raise InvalidSpec("all widths must be >= 1")
        if self.source_classes < 1:
            raise InvalidSpec("source_classes must be >= 1")
        if self.family is Family.IDENTITY:
            flat = h * w * c
            if self.num_blocks != 1 or self.widths[0] != flat:
                raise InvalidSpec(
                    f"IDENTITY family needs num_blocks=1 and widths=({flat},)")

    @property
    def flat_dim(self) -> int:
        h, w, c = self.input_size
        return h * w * c

    @property
    def backbone_out(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return {"family": self.family.value, "num_blocks": self.num_blocks,
                "widths": list(self.widths), "input_size": list(self.input_size),
                "source_classes": self.source_classes}

    @staticmethod
    def from_dict(d: dict) -> "EncoderSpec":
        return EncoderSpec(family=Family(d["family"]), num_blocks=int(d["num_blocks"]),
                           widths=tuple(int(w) for w in d["widths"]),
                           input_size=tuple(int(v) for v in d["input_size"]),
                           source_classes=int(d["source_classes"]))


class EncoderState:
    """Parameter registry + structural metadata for one encoder.

    ``params`` maps unique names to float32 arrays; ``groups`` tags each name
    with block/head/source_head/adapter; ``trainable`` is the currently
    selected tunable subset. Adapters reference the same array objects, so
    updates must happen in place.
    """

    def __init__(self, spec: EncoderSpec, retrieval_dim: int, head_hidden: int,
                 seed: int, head_init: str):
        self.spec = spec
        self.retrieval_dim = retrieval_dim
        self.head_hidden = head_hidden
        self.seed = seed
        self.head_init = head_init
        self.params: dict[str, np.ndarray] = {}
        self.groups: dict[str, str] = {}
        self.trainable: set[str] = set()
        self.adapters: dict[str, AdapterState] = {}
        self.frozen = False

    def register(self, name: str, value: np.ndarray, group: str,
                 trainable: bool = True) -> np.ndarray:
        if name in self.params:
            raise InvalidSpec(f"duplicate parameter name '{name}'")
        arr = np.ascontiguousarray(value, dtype=np.float32)
        self.params[name] = arr
        self.groups[name] = group
        if trainable:
            self.trainable.add(name)
        return arr

    @property
    def has_source_head(self) -> bool:
        return "source_head/W" in self.params

    @property
    def text_dim(self) -> int | None:
        w = self.params.get("head/proj/W")
        return None if w is None else w.shape[1]

    def snapshot(self) -> "EncoderState":
        """Deep copy; the copy is marked frozen (inference-only)."""
        twin = EncoderState(self.spec, self.retrieval_dim, self.head_hidden,
                            self.seed, self.head_init)
        for name, arr in self.params.items():
            twin.register(name, arr.copy(), self.groups[name], trainable=False)
        for point, a in self.adapters.items():
            twin.adapters[point] = AdapterState(
                point_name=point,
                W1=twin.params[f"adapter/{point}/W1"],
                W2=twin.params[f"adapter/{point}/W2"],
                bottleneck_ratio=a.bottleneck_ratio)
        twin.trainable = set()
        twin.frozen = True
        return twin


def insertion_points(enc: EncoderState) -> list[str]:
    """Adapter attachment point names, in data-flow order."""
    fam = enc.spec.family
    if fam is Family.IDENTITY:
        return ["flat"]
    prefix = "stage" if fam is Family.STAGE_CONV else "layer"
    return [f"{prefix}{i}" for i in range(enc.spec.num_blocks)]


def build_encoder(spec: EncoderSpec, seed: int, retrieval_dim: int | None = None,
                  head_hidden: int | None = None, head_init: str = "random") -> EncoderState:
    """Deterministically initialize an encoder from (spec, seed).

    ``head_init='identity'`` sets both head layers to the identity map (bias
    zero); it requires backbone_out == head_hidden == retrieval_dim and only
    passes nonnegative features through unchanged (the hidden ReLU clips
    negatives). ``head_init='centered'`` draws the same random weights as
    'random' but sets the hidden bias so preactivations are zero-mean for
    inputs centered at 0.5 (the midpoint of the [0, 1] image range), leaving
    the ReLU gates half-open instead of saturated by the common input mean.
    """
    spec.validate()
    d = retrieval_dim if retrieval_dim is not None else spec.backbone_out
    hid = head_hidden if head_hidden is not None else d
    if d < 1 or hid < 1:
        raise InvalidSpec("retrieval_dim and head_hidden must be >= 1")
    if head_init not in ("random", "identity", "centered"):
        raise InvalidSpec(f"unknown head_init '{head_init}'")
    if head_init == "identity" and not (spec.backbone_out == hid == d):
        raise InvalidSpec("identity head needs backbone_out == head_hidden == retrieval_dim")

    enc = EncoderState(spec, d, hid, seed, head_init)
    rng = np.random.default_rng(seed)

    if spec.family is not Family.IDENTITY:
        fan_in = spec.input_size[2]
        for i, width in enumerate(spec.widths):
            w = rng.standard_normal((fan_in, width)) * np.sqrt(2.0 / fan_in)
            enc.register(f"block/{i}/W", w, GROUP_BLOCK)
            enc.register(f"block/{i}/b", np.zeros(width), GROUP_BLOCK)
            fan_in = width

    bb = spec.backbone_out
    if head_init == "identity":
        enc.register("head/fc1/W", np.eye(bb), GROUP_HEAD)
        enc.register("head/fc1/b", np.zeros(hid), GROUP_HEAD)
        enc.register("head/fc2/W", np.eye(hid), GROUP_HEAD)
        enc.register("head/fc2/b", np.zeros(d), GROUP_HEAD)
    else:
        w1 = rng.standard_normal((bb, hid)) * np.sqrt(2.0 / bb)
        b1 = -0.5 * w1.sum(axis=0) if head_init == "centered" else np.zeros(hid)
        enc.register("head/fc1/W", w1, GROUP_HEAD)
        enc.register("head/fc1/b", b1, GROUP_HEAD)
        enc.register("head/fc2/W", rng.standard_normal((hid, d)) * np.sqrt(1.0 / hid),
                     GROUP_HEAD)
        enc.register("head/fc2/b", np.zeros(d), GROUP_HEAD)
    return enc


def attach_source_head(enc: EncoderState, seed: int) -> None:
    """Affine map from backbone output to the pretrain-class logits."""
    if enc.has_source_head:
        raise InvalidSpec("source head already attached")
    rng = np.random.default_rng(seed)
    bb, k = enc.spec.backbone_out, enc.spec.source_classes
    enc.register("source_head/W", rng.standard_normal((bb, k)) * np.sqrt(1.0 / bb),
                 GROUP_SOURCE_HEAD)
    enc.register("source_head/b", np.zeros(k), GROUP_SOURCE_HEAD)


def attach_projector(enc: EncoderState, text_dim: int, seed: int) -> None:
    """Bias-free linear bridge from retrieval space to text-embedding space.

    Identity when the dimensions already agree. Lives in the head group; kept
    bias-free so alignment stays exactly invariant to feature rescaling.
    """
    if "head/proj/W" in enc.params:
        raise InvalidSpec("projector already attached")
    d = enc.retrieval_dim
    if text_dim < 1:
        raise InvalidSpec("text_dim must be >= 1")
    if d == text_dim:
        w = np.eye(d)
    else:
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((d, text_dim)) * np.sqrt(1.0 / d)
    enc.register("head/proj/W", w, GROUP_HEAD)


def attach_classifier(enc: EncoderState, num_classes: int, seed: int) -> None:
    """Trainable benchmark classifier for the classical (no text bank) mode."""
    if "head/cls/W" in enc.params:
        raise InvalidSpec("classifier already attached")
    rng = np.random.default_rng(seed)
    d = enc.retrieval_dim
    enc.register("head/cls/W", rng.standard_normal((d, num_classes)) * np.sqrt(1.0 / d),
                 GROUP_HEAD)
    enc.register("head/cls/b", np.zeros(num_classes), GROUP_HEAD)


# --------------------------------------------------------------------------
# Forward / backward

def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def params64(enc: EncoderState,
             override: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    p = {name: arr.astype(np.float64) for name, arr in enc.params.items()}
    if override:
        for name, arr in override.items():
            p[name] = np.asarray(arr, dtype=np.float64)
    return p


def forward_cached(enc: EncoderState, batch: np.ndarray,
                   override: dict[str, np.ndarray] | None = None):
    """Run the encoder, keeping every intermediate needed for backward.

    Returns (features NxD, source_logits NxK or None, cache). Pure function
    of (parameters, batch): no state is read or written.
    """
    batch = np.asarray(batch, dtype=np.float64)
    h, w, c = enc.spec.input_size
    if batch.ndim != 4 or batch.shape[1:] != (h, w, c):
        raise ShapeMismatch(
            f"batch shape {batch.shape} does not match input size {(h, w, c)}")
    n = batch.shape[0]
    p = params64(enc, override)
    points = insertion_points(enc)
    fam = enc.spec.family

    if fam is Family.IDENTITY:
        # one token carrying the whole flattened input
        x = batch.reshape(n, 1, h * w * c)
        tokens = 1
    else:
        x = batch.reshape(n, h * w, c)
        tokens = h * w
    stack = []  # one record per block: (kind-specific cache)
    for i, point in enumerate(points):
        if fam is Family.IDENTITY:
            r = x
            rec = {"kind": "identity"}
        else:
            wname, bname = f"block/{i}/W", f"block/{i}/b"
            u = x @ p[wname] + p[bname]
            r = _relu(u)
            rec = {"kind": "affine", "x_in": x, "u": u, "wname": wname, "bname": bname}
            if fam is Family.LAYER_TRANSFORMER:
                rec["pre_mix"] = r
                r = r + r.mean(axis=1, keepdims=True)
        a = enc.adapters.get(point)
        if a is not None:
            w1 = p[f"adapter/{point}/W1"]
            w2 = p[f"adapter/{point}/W2"]
            r, acache = adapter_forward_cached(r, w1, w2)
            rec["adapter"] = (point, acache)
        rec["x_out"] = r
        stack.append(rec)
        x = r

    pooled = x.mean(axis=1)  # (N, backbone_out)

    u1 = pooled @ p["head/fc1/W"] + p["head/fc1/b"]
    r1 = _relu(u1)
    feats = r1 @ p["head/fc2/W"] + p["head/fc2/b"]

    source_logits = None
    if "source_head/W" in p:
        source_logits = pooled @ p["source_head/W"] + p["source_head/b"]

    cache = {"p": p, "n": n, "tokens": tokens, "stack": stack, "pooled": pooled,
             "u1": u1, "r1": r1}
    return feats, source_logits, cache


def forward(enc: EncoderState, batch: np.ndarray):
    """Features (N x retrieval_dim) and source logits (N x K, or None)."""
    feats, source_logits, _ = forward_cached(enc, batch)
    return feats, source_logits


def backward(enc: EncoderState, cache: dict, d_feats: np.ndarray,
             d_source_logits: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every registered parameter.

    ``d_feats``/``d_source_logits`` are the loss gradients at the encoder
    outputs. Parameters with no path to the loss get zero gradients.
    """
    p = cache["p"]
    grads = {name: np.zeros_like(arr) for name, arr in p.items()
             if name in enc.params}

    d_feats = np.asarray(d_feats, dtype=np.float64)
    grads["head/fc2/W"] = cache["r1"].T @ d_feats
    grads["head/fc2/b"] = d_feats.sum(axis=0)
    dr1 = d_feats @ p["head/fc2/W"].T
    du1 = dr1 * (cache["u1"] > 0)
    grads["head/fc1/W"] = cache["pooled"].T @ du1
    grads["head/fc1/b"] = du1.sum(axis=0)
    d_pooled = du1 @ p["head/fc1/W"].T

    if d_source_logits is not None:
        if "source_head/W" not in p:
            raise ShapeMismatch("source-logit gradient given but no source head attached")
        dsl = np.asarray(d_source_logits, dtype=np.float64)
        grads["source_head/W"] = cache["pooled"].T @ dsl
        grads["source_head/b"] = dsl.sum(axis=0)
        d_pooled = d_pooled + dsl @ p["source_head/W"].T

    tokens = cache["tokens"]
    dx = np.repeat(d_pooled[:, None, :] / tokens, tokens, axis=1)

    for rec in reversed(cache["stack"]):
        if "adapter" in rec:
            point, acache = rec["adapter"]
            dx, dw1, dw2 = adapter_backward(dx, acache)
            grads[f"adapter/{point}/W1"] = dw1
            grads[f"adapter/{point}/W2"] = dw2
        if rec["kind"] == "identity":
            continue
        if "pre_mix" in rec:
            dx = dx + dx.mean(axis=1, keepdims=True)
        du = dx * (rec["u"] > 0)
        x_in = rec["x_in"]
        n_tok = x_in.shape[0] * x_in.shape[1]
        grads[rec["wname"]] = x_in.reshape(n_tok, -1).T @ du.reshape(n_tok, -1)
        grads[rec["bname"]] = du.reshape(n_tok, -1).sum(axis=0)
        dx = du @ p[rec["wname"]].T
    return grads


# --------------------------------------------------------------------------
# Serialization

def save_encoder(enc: EncoderState, path: str | Path) -> None:
    extra = {
        "encoder": {
            "spec": enc.spec.to_dict(),
            "retrieval_dim": enc.retrieval_dim,
            "head_hidden": enc.head_hidden,
            "seed": enc.seed,
            "head_init": enc.head_init,
            "adapters": [{"point": pt, "ratio": a.bottleneck_ratio}
                         for pt, a in sorted(enc.adapters.items())],
            "frozen": enc.frozen,
        }
    }
    archive.save_archive(path, enc.params, enc.groups, extra=extra)


def load_encoder(path: str | Path) -> EncoderState:
    arrays, groups, extra = archive.load_archive(path)
    meta = extra.get("encoder")
    if not meta:
        raise ArchiveCorrupt(f"{path}: archive has no encoder metadata")
    spec = EncoderSpec.from_dict(meta["spec"])
    enc = EncoderState(spec, int(meta["retrieval_dim"]), int(meta["head_hidden"]),
                       int(meta.get("seed", 0)), str(meta.get("head_init", "random")))
    for name in sorted(arrays):
        enc.register(name, arrays[name], groups.get(name, ""), trainable=False)
    for a in meta.get("adapters", []):
        point = a["point"]
        w1 = enc.params.get(f"adapter/{point}/W1")
        w2 = enc.params.get(f"adapter/{point}/W2")
        if w1 is None or w2 is None:
            raise ArchiveCorrupt(f"adapter arrays missing for point '{point}'")
        enc.adapters[point] = AdapterState(point_name=point, W1=w1, W2=w2,
                                           bottleneck_ratio=float(a["ratio"]))
    enc.frozen = bool(meta.get("frozen", False))
    if not enc.frozen:
        enc.trainable = set(enc.params)
    return enc
