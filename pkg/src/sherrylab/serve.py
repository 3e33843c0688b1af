"""Read-only retrieval service: the trained student behind a small HTTP API.

All state (encoder snapshot, precomputed photo gallery, thumbnail sources)
is loaded and validated at startup and never mutated, so responses are a
pure function of the request. Endpoints live under /v1: health, classes,
retrieve, thumbnail.

Sketch preprocessing contract (shared with the CLI's query command and the
drawing UI): the uploaded PNG is alpha-flattened onto white, converted to
the encoder's channel count, resized to the encoder input with bilinear
resampling, and scaled to [0, 1].
"""

from __future__ import annotations

import base64
import binascii
import io
import socket
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import archive, backbone
from .backbone import EncoderState
from .datamodel import SplitManifest, Domain, load_manifest, read_toy_record
from .errors import ArtifactMismatch, BadImage, PortUnavailable
from .retrieval import FeatureIndex, load_index, rank
from .trainer import load_checkpoint


@dataclass
class ServiceState:
    student: EncoderState
    gallery: FeatureIndex
    checkpoint_digest: str
    thumbnail_paths: dict[str, str] = field(default_factory=dict)

    @property
    def classes(self) -> list[str]:
        return sorted(set(self.gallery.labels))


def preprocess_png(data: bytes, input_size: tuple[int, int, int]) -> np.ndarray:
    """Decode an uploaded sketch into the encoder's input array."""
    h, w, c = input_size
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise BadImage(f"cannot decode image: {exc}") from exc
    if "A" in img.getbands():
        rgba = img.convert("RGBA")
        background = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        img = Image.alpha_composite(background, rgba)
    img = img.convert("L" if c == 1 else "RGB")
    if img.size != (w, h):
        img = img.resize((w, h), Image.Resampling.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if c == 1:
        arr = arr[:, :, None]
    return arr


def build_service(checkpoint_dir: str | Path, features_path: str | Path,
                  manifest_path: str | Path | None = None) -> ServiceState:
    """Load and cross-validate the artifacts; fails fast on any mismatch."""
    ckpt = load_checkpoint(checkpoint_dir)
    student = ckpt.encoder
    if not student.frozen:
        student = student.snapshot()
    gallery = load_index(features_path)
    if gallery.domain is not Domain.PHOTO:
        raise ArtifactMismatch(
            f"gallery domain is {gallery.domain.value}, expected photo")
    if gallery.vectors.shape[1] != student.retrieval_dim:
        raise ArtifactMismatch(
            f"gallery dim {gallery.vectors.shape[1]} does not match "
            f"model dim {student.retrieval_dim}")
    c = student.spec.input_size[2]
    if c not in (1, 3):
        raise ArtifactMismatch(
            f"encoder takes {c}-channel input; the service needs an "
            f"image-shaped encoder (1 or 3 channels)")
    digest = archive.archive_digest(Path(checkpoint_dir) / "params")

    thumbs: dict[str, str] = {}
    if manifest_path is not None:
        manifest = load_manifest(manifest_path, check_files=False)
        for s in manifest.train_samples + manifest.test_samples:
            if s.path is not None:
                thumbs[s.id] = s.path
    return ServiceState(student=student, gallery=gallery,
                        checkpoint_digest=digest, thumbnail_paths=thumbs)


def _thumbnail_png(path: str) -> bytes:
    """PNG bytes for a gallery item; toy records render as a value grid."""
    if path.endswith(".rec"):
        _, _, _, vec = read_toy_record(path)
        side = int(np.ceil(np.sqrt(vec.size)))
        grid = np.zeros(side * side)
        grid[:vec.size] = vec
        lo, hi = float(grid.min()), float(grid.max())
        span = (hi - lo) if hi > lo else 1.0
        gray = np.round((grid - lo) / span * 255.0).astype(np.uint8)
        img = Image.fromarray(gray.reshape(side, side), mode="L")
        img = img.resize((side * 16, side * 16), Image.Resampling.NEAREST)
    else:
        img = Image.open(path)
        img.load()
        img = img.convert("RGB")
        img.thumbnail((128, 128))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def create_app(state: ServiceState):
    """FastAPI application over an immutable ServiceState."""
    from fastapi import FastAPI, Body
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="sherrylab retrieval service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error": {"type": code, "message": message}})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "gallery_size": state.gallery.size,
                "checkpoint": state.checkpoint_digest}

    @app.get("/v1/classes")
    def classes():
        return {"classes": state.classes}

    @app.post("/v1/retrieve")
    def retrieve(payload: dict = Body(...)):
        k = payload.get("k", 10)
        if not isinstance(k, int) or isinstance(k, bool) \
                or not (1 <= k <= state.gallery.size):
            return error(422, "BadK",
                         f"k must be an integer in [1, {state.gallery.size}]")
        encoded = payload.get("image")
        if not isinstance(encoded, str) or not encoded:
            return error(400, "BadImage", "missing base64 'image' field")
        started = time.perf_counter()
        try:
            data = base64.b64decode(encoded, validate=True)
            arr = preprocess_png(data, state.student.spec.input_size)
        except (BadImage, binascii.Error, ValueError) as exc:
            return error(400, "BadImage", str(exc))
        feats, _ = backbone.forward(state.student, arr[None])
        ranked = rank(feats[0], state.gallery)[:k]
        label_of = dict(zip(state.gallery.ids, state.gallery.labels))
        results = [{"id": rid, "class": label_of[rid], "score": score,
                    "thumbnail_url": f"/v1/thumbnail/{rid}"}
                   for rid, score in ranked]
        latency_ms = (time.perf_counter() - started) * 1000.0
        return {"results": results, "latency_ms": latency_ms}

    @app.get("/v1/thumbnail/{item_id}")
    def thumbnail(item_id: str):
        path = state.thumbnail_paths.get(item_id)
        if path is None or not Path(path).is_file():
            return error(404, "MissingFile", f"no thumbnail for '{item_id}'")
        return Response(content=_thumbnail_png(path), media_type="image/png")

    return app


def start(checkpoint_dir: str | Path, features_path: str | Path,
          port: int = 8008, host: str = "127.0.0.1",
          manifest_path: str | Path | None = None) -> None:
    """Blocking entry point used by the CLI and deployments."""
    import uvicorn

    state = build_service(checkpoint_dir, features_path, manifest_path)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise PortUnavailable(f"cannot bind {host}:{port}: {exc}") from exc
    finally:
        probe.close()
    uvicorn.run(create_app(state), host=host, port=port, log_level="warning")
