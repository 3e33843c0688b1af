"""Shared fixtures: the toy benchmark, a file-backed copy of it, a trained
toy checkpoint, and a small image-shaped world (PNG files + conv encoder)
for the CLI retrieve / HTTP service tests."""

import numpy as np
import pytest
from PIL import Image

from sherrylab.adapter import TunabilityMode
from sherrylab.backbone import EncoderSpec, Family, build_encoder
from sherrylab.datamodel import ToySpec, generate_toy_dataset, ingest_directory, save_manifest
from sherrylab.retrieval import extract_index, save_index
from sherrylab.textbank import (PromptTemplate, StubTextProvider,
                                bank_from_prototypes, embed_classes, save_bank)
from sherrylab.trainer import TrainConfig, save_checkpoint, train, toy_student
from sherrylab.datamodel import Domain


@pytest.fixture(scope="session")
def toy():
    """Default synthetic benchmark: (manifest, prototypes)."""
    return generate_toy_dataset(ToySpec())


@pytest.fixture(scope="session")
def seen_bank(toy):
    manifest, protos = toy
    return bank_from_prototypes(protos, manifest.seen_classes)


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """File-backed toy dataset: manifest.json + records/ + both banks."""
    out = tmp_path_factory.mktemp("toydata")
    manifest, protos = generate_toy_dataset(ToySpec())
    save_manifest(manifest, out / "manifest.json", write_samples=True)
    save_bank(bank_from_prototypes(protos, manifest.seen_classes),
              out / "bank-seen.json")
    save_bank(bank_from_prototypes(protos, manifest.unseen_classes),
              out / "bank-unseen.json")
    return out


@pytest.fixture(scope="session")
def toy_ckpt_dir(tmp_path_factory, toy, seen_bank):
    """Short trained run on the toy benchmark, saved as a checkpoint dir."""
    manifest, _ = toy
    cfg = TrainConfig(epochs=5, batch_size=32, learning_rate=1e-2, seed=0,
                      tunability=TunabilityMode.BACKBONE_ADAPTER)
    ckpt = train(cfg, manifest, seen_bank,
                 pretrained=toy_student(manifest, seed=0))
    out = tmp_path_factory.mktemp("toyckpt")
    save_checkpoint(ckpt, out)
    return out


def _write_png(path, arr):
    """Save a float [0,1] HxW array as an 8-bit grayscale PNG."""
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L")
    img.save(path, format="PNG")


@pytest.fixture(scope="session")
def img_world(tmp_path_factory):
    """PNG-backed dataset + trained conv checkpoint + photo feature index.

    8x8 grayscale files (loaded as RGB), 4 seen / 3 unseen classes with a
    seeded per-class base pattern plus per-sample noise, and 20 standalone
    query sketches. Returns a dict of paths plus the loaded manifest.
    """
    root = tmp_path_factory.mktemp("imgworld")
    seen = ["box", "dots", "grid", "wave"]
    unseen = ["ring", "slash", "tri"]
    counts = {"photo": {"seen": 6, "unseen": 5},
              "sketch": {"seen": 6, "unseen": 3}}
    for ci, cname in enumerate(seen + unseen):
        base_rng = np.random.default_rng([17, ci])
        base = base_rng.random((8, 8))
        for dom in ("photo", "sketch"):
            n = counts[dom]["seen" if cname in seen else "unseen"]
            for k in range(n):
                rng = np.random.default_rng([17, ci, k, 0 if dom == "photo" else 1])
                arr = np.clip(base + 0.25 * rng.standard_normal((8, 8)), 0.0, 1.0)
                _write_png(root / dom / cname / f"{k:02d}.png", arr)
    manifest = ingest_directory(root, {"name": "imgworld"}, seen, unseen)
    manifest_path = root / "manifest.json"
    save_manifest(manifest, manifest_path)

    bank = embed_classes(StubTextProvider("stub", dim=24),
                         [PromptTemplate("a photo of [class]")], seen)
    bank_path = root / "bank.json"
    save_bank(bank, bank_path)

    spec = EncoderSpec(family=Family.STAGE_CONV, num_blocks=2,
                       widths=(16, 16), input_size=(8, 8, 3),
                       source_classes=len(seen))
    cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=3e-3, seed=5,
                      tunability=TunabilityMode.BACKBONE_ADAPTER,
                      adapter_count=2)
    ckpt = train(cfg, manifest, bank, pretrained=build_encoder(spec, seed=5))
    ckpt_dir = root / "ckpt"
    save_checkpoint(ckpt, ckpt_dir)

    photos = [s for s in manifest.test_samples if s.domain is Domain.PHOTO]
    index = extract_index(ckpt.encoder, photos)
    features_dir = root / "features"
    save_index(index, features_dir)

    queries_dir = root / "queries"
    for q in range(20):
        rng = np.random.default_rng([23, q])
        arr = np.ones((8, 8))
        strokes = rng.integers(0, 8, size=(6, 2))
        for y, x in strokes:
            arr[y, :] *= rng.random() * 0.5
            arr[:, x] *= rng.random() * 0.5
        _write_png(queries_dir / f"q{q:02d}.png", np.clip(arr, 0.0, 1.0))

    return {"root": root, "manifest_path": manifest_path, "manifest": manifest,
            "bank_path": bank_path, "ckpt_dir": ckpt_dir,
            "features_dir": features_dir, "queries_dir": queries_dir,
            "gallery": index, "seen": seen, "unseen": unseen}
