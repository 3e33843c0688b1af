"""Figure artifacts: point selection, heatmap geometry, adapter sweeps."""

import dataclasses

import numpy as np
import pytest

from sherrylab.adapter import TunabilityMode
from sherrylab.datamodel import Domain, ToySpec, generate_toy_dataset
from sherrylab.errors import TooFewSamples
from sherrylab.plots import (adapter_scaling, heatmap_matrix,
                             plot_adapter_scaling, plot_heatmap, plot_tsne,
                             tsne_points)
from sherrylab.retrieval import zero_shot_evaluate
from sherrylab.textbank import bank_from_prototypes
from sherrylab.trainer import TrainConfig, toy_student, train


@pytest.fixture(scope="module")
def world():
    spec = ToySpec(num_seen=4, num_unseen=3, per_class_per_domain=6,
                   feature_dim=10, domain_offset_scale=0.2, noise_scale=0.02,
                   seed=2)
    manifest, protos = generate_toy_dataset(spec)
    student = toy_student(manifest, seed=0)
    return {"manifest": manifest, "protos": protos, "student": student}


# ---------------------------------------------------------------------------
# t-SNE

def test_tsne_points_counts_and_determinism(world):
    pts = tsne_points(world["student"], world["manifest"], num_classes=2,
                      per_class=3, seed=4)
    assert len(pts) == 2 * 3 * 2
    assert {p["domain"] for p in pts} == {"sketch", "photo"}
    assert len({p["class"] for p in pts}) == 2
    for p in pts:
        assert set(p) >= {"id", "class", "domain", "x", "y"}
    again = tsne_points(world["student"], world["manifest"], num_classes=2,
                        per_class=3, seed=4)
    assert pts == again
    other = tsne_points(world["student"], world["manifest"], num_classes=2,
                        per_class=3, seed=5)
    assert {p["id"] for p in other} != {p["id"] for p in pts}


def test_tsne_keeps_tight_classes_together():
    # noiseless, offset-free world: same-class features are identical, so
    # their planar images must huddle relative to other classes
    spec = ToySpec(num_seen=4, num_unseen=3, per_class_per_domain=5,
                   feature_dim=10, domain_offset_scale=0.0, noise_scale=0.0,
                   seed=7)
    manifest, _ = generate_toy_dataset(spec)
    pts = tsne_points(toy_student(manifest, 0), manifest, num_classes=3,
                      per_class=4, seed=1)
    xy = {p["id"]: np.array([p["x"], p["y"]]) for p in pts}
    label = {p["id"]: p["class"] for p in pts}
    within, between = [], []
    ids = list(xy)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            d = float(np.linalg.norm(xy[a] - xy[b]))
            (within if label[a] == label[b] else between).append(d)
    assert np.mean(within) < np.mean(between)


def test_tsne_rejects_oversized_requests(world):
    with pytest.raises(TooFewSamples):
        tsne_points(world["student"], world["manifest"], num_classes=99,
                    per_class=3, seed=0)
    with pytest.raises(TooFewSamples):
        tsne_points(world["student"], world["manifest"], num_classes=2,
                    per_class=99, seed=0)
    with pytest.raises(TooFewSamples):
        tsne_points(world["student"], world["manifest"], num_classes=0,
                    per_class=1, seed=0)


def test_plot_tsne_writes_stable_artifacts(world, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    plot_tsne(world["student"], world["manifest"], 2, 3, 4, a)
    plot_tsne(world["student"], world["manifest"], 2, 3, 4, b)
    assert (a / "tsne.png").is_file()
    assert (a / "tsne.csv").read_bytes() == (b / "tsne.csv").read_bytes()
    header = (a / "tsne.csv").read_text().splitlines()[0]
    assert header == "id,class,domain,x,y"


# ---------------------------------------------------------------------------
# Heatmap

def test_heatmap_geometry_and_range(world, tmp_path):
    bank = bank_from_prototypes(world["protos"],
                                world["manifest"].unseen_classes)
    matrix, columns = heatmap_matrix(world["student"], world["manifest"],
                                     bank, per_class=2, seed=0, split="test")
    C = len(bank.class_names)
    assert matrix.shape == (C, C * 2 * 2)
    assert np.all(matrix >= -1.0 - 1e-9) and np.all(matrix <= 1.0 + 1e-9)
    # sketches first, photos second, each grouped in bank class order
    assert [s.domain for s in columns[: C * 2]] == [Domain.SKETCH] * (C * 2)
    assert [s.domain for s in columns[C * 2:]] == [Domain.PHOTO] * (C * 2)
    assert [s.class_name for s in columns[: C * 2: 2]] == bank.class_names
    # own-class similarity dominates: the diagonal blocks win on average
    own = np.mean([matrix[i, j] for j, s in enumerate(columns)
                   for i in (bank.class_names.index(s.class_name),)])
    off = np.mean([matrix[i, j] for j, s in enumerate(columns)
                   for i in range(C) if bank.class_names[i] != s.class_name])
    assert own > off

    out = plot_heatmap(world["student"], world["manifest"], bank, tmp_path,
                       per_class=2, seed=0, split="test")
    assert out.shape == matrix.shape
    lines = (tmp_path / "heatmap.csv").read_text().splitlines()
    assert len(lines) == 3 + C
    assert (tmp_path / "heatmap.png").is_file()


def test_heatmap_train_split_uses_seen_bank(world):
    bank = bank_from_prototypes(world["protos"],
                                world["manifest"].seen_classes)
    matrix, columns = heatmap_matrix(world["student"], world["manifest"],
                                     bank, per_class=2, seed=0, split="train")
    assert matrix.shape[0] == len(world["manifest"].seen_classes)
    assert all(s.split.value == "train" for s in columns)
    with pytest.raises(TooFewSamples):
        heatmap_matrix(world["student"], world["manifest"], bank,
                       per_class=2, seed=0, split="test")


# ---------------------------------------------------------------------------
# Adapter scaling

def test_adapter_scaling_rows_and_zero_count_baseline(world, tmp_path):
    manifest = world["manifest"]
    bank = bank_from_prototypes(world["protos"], manifest.seen_classes)
    cfg = TrainConfig(epochs=1, batch_size=12, learning_rate=1e-2,
                      tunability=TunabilityMode.BACKBONE_ADAPTER,
                      adapter_count=1, seed=3)
    rows = plot_adapter_scaling([1, 0], cfg, manifest, bank, tmp_path,
                                ks=(5,))
    assert [r["adapter_count"] for r in rows] == [0, 1]
    assert rows[0]["tunable_params"] < rows[1]["tunable_params"]
    assert rows[0]["total_params"] < rows[1]["total_params"]
    ratios = [r["tunable_ratio"] for r in rows]
    assert all(0 < r <= 1 for r in ratios)
    for r in rows:
        assert 0.0 <= r["map_all"] <= 1.0

    # count 0 must equal a plain run in the adapter-free mode
    plain_cfg = dataclasses.replace(cfg, tunability=TunabilityMode.BACKBONE,
                                    adapter_count=0)
    ckpt = train(plain_cfg, manifest, bank,
                 pretrained=toy_student(manifest, cfg.seed))
    rep = zero_shot_evaluate(ckpt.encoder, manifest, ks=(5,))
    assert rows[0]["map_all"] == rep.map_all

    lines = (tmp_path / "adapter_scaling.csv").read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("adapter_count,")
    assert (tmp_path / "adapter_scaling.png").is_file()


def test_adapter_scaling_dedupes_counts(world):
    manifest = world["manifest"]
    bank = bank_from_prototypes(world["protos"], manifest.seen_classes)
    cfg = TrainConfig(epochs=1, batch_size=12, learning_rate=1e-2,
                      tunability=TunabilityMode.HEAD_ADAPTER,
                      adapter_count=1, seed=3)
    rows = adapter_scaling([1, 1, 0, 0], cfg, manifest, bank, ks=(5,))
    assert [r["adapter_count"] for r in rows] == [0, 1]
