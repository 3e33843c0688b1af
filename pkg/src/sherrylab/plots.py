"""Figure emission: t-SNE scatter, visual-text similarity heatmap, and the
adapter-count scaling curve.

Every figure writes its numeric data (CSV) next to the image, so the
rendered file is never the only record and plots can be regenerated or
checked without parsing pixels. Rendering uses the Agg backend and fixed
metadata, keeping output bytes stable across reruns.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from sklearn.manifold import TSNE

from . import backbone
from .adapter import TunabilityMode, count_parameters
from .datamodel import Domain, SplitManifest
from .errors import ShapeMismatch, TooFewSamples
from .retrieval import extract_index, zero_shot_evaluate
from .textbank import TextBank, classifier_matrix
from .trainer import Checkpoint, TrainConfig, train

_PNG_META = {"Software": None}


def _save_csv(path: Path, rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


# --------------------------------------------------------------------------
# t-SNE of unseen-class features

def tsne_points(student, manifest: SplitManifest, num_classes: int,
                per_class: int, seed: int) -> list[dict]:
    """Seeded class/sample selection, feature extraction, 2-D embedding.

    ``per_class`` counts per domain, so each class contributes up to
    2*per_class points (sketches and photos).
    """
    if num_classes < 1 or per_class < 1:
        raise TooFewSamples("num_classes and per_class must be >= 1")
    unseen = sorted(manifest.unseen_classes)
    if len(unseen) < num_classes:
        raise TooFewSamples(
            f"{len(unseen)} unseen classes available, {num_classes} requested")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(unseen, size=num_classes, replace=False))

    picked = []
    for cname in chosen:
        for domain in (Domain.SKETCH, Domain.PHOTO):
            pool = [s for s in manifest.test_samples
                    if s.class_name == cname and s.domain is domain]
            if len(pool) < per_class:
                raise TooFewSamples(
                    f"class '{cname}' has {len(pool)} {domain.value} samples, "
                    f"{per_class} requested")
            idx = sorted(rng.choice(len(pool), size=per_class, replace=False))
            picked.extend(pool[i] for i in idx)

    n = len(picked)
    if n < 5:
        raise TooFewSamples(f"{n} points are too few for a 2-D embedding")
    sketches = [s for s in picked if s.domain is Domain.SKETCH]
    photos = [s for s in picked if s.domain is Domain.PHOTO]
    feats = np.concatenate([extract_index(student, sketches).vectors,
                            extract_index(student, photos).vectors])
    ordered = sketches + photos

    perplexity = max(2.0, min(30.0, (n - 1) / 3.0))
    method = "exact" if n < 500 else "barnes_hut"
    coords = TSNE(n_components=2, random_state=seed, init="pca",
                  perplexity=perplexity, method=method).fit_transform(
                      feats.astype(np.float64))
    return [{"id": s.id, "class": s.class_name, "domain": s.domain.value,
             "x": float(coords[i, 0]), "y": float(coords[i, 1])}
            for i, s in enumerate(ordered)]


def plot_tsne(student, manifest: SplitManifest, num_classes: int,
              per_class: int, seed: int, out_dir: str | Path) -> list[dict]:
    out_dir = Path(out_dir)
    points = tsne_points(student, manifest, num_classes, per_class, seed)
    _save_csv(out_dir / "tsne.csv",
              [["id", "class", "domain", "x", "y"]]
              + [[p["id"], p["class"], p["domain"], _fmt(p["x"]), _fmt(p["y"])]
                 for p in points])

    classes = sorted({p["class"] for p in points})
    cmap = plt.get_cmap("tab10")
    fig, ax = plt.subplots(figsize=(6, 6))
    for ci, cname in enumerate(classes):
        for domain, marker in (("sketch", "^"), ("photo", "o")):
            xs = [p["x"] for p in points
                  if p["class"] == cname and p["domain"] == domain]
            ys = [p["y"] for p in points
                  if p["class"] == cname and p["domain"] == domain]
            ax.scatter(xs, ys, s=14, marker=marker,
                       color=cmap(ci % 10),
                       label=f"{cname} ({domain})" if len(classes) <= 10 else None)
    ax.set_xticks([])
    ax.set_yticks([])
    if len(classes) <= 10:
        ax.legend(fontsize=6, markerscale=1.2, loc="best")
    fig.tight_layout()
    fig.savefig(out_dir / "tsne.png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return points


# --------------------------------------------------------------------------
# Visual-text similarity heatmap

def heatmap_matrix(student, manifest: SplitManifest, bank: TextBank,
                   per_class: int, seed: int, split: str = "test"):
    """Cosine of every sample's (projected, normalized) feature against each
    bank row. Columns hold sketches first, then photos, each grouped in bank
    class order; rows follow the bank."""
    pool = manifest.test_samples if split == "test" else manifest.train_samples
    rng = np.random.default_rng(seed)
    columns = []
    for domain in (Domain.SKETCH, Domain.PHOTO):
        for cname in bank.class_names:
            cands = [s for s in pool
                     if s.class_name == cname and s.domain is domain]
            if not cands:
                raise TooFewSamples(
                    f"no {domain.value} samples for bank class '{cname}' "
                    f"in the {split} split")
            take = min(per_class, len(cands))
            idx = sorted(rng.choice(len(cands), size=take, replace=False))
            columns.extend(cands[i] for i in idx)

    if not student.frozen:
        student = student.snapshot()
    images = np.stack([s.image for s in columns])
    feats, _ = backbone.forward(student, images)
    proj_w = student.params.get("head/proj/W")
    if proj_w is not None:
        feats = feats @ proj_w.astype(np.float64)
    if feats.shape[1] != bank.dim:
        raise ShapeMismatch(
            f"feature dim {feats.shape[1]} does not match bank dim {bank.dim}")
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    matrix = classifier_matrix(bank) @ (feats / norms).T
    return matrix, columns


def plot_heatmap(student, manifest: SplitManifest, bank: TextBank,
                 out_dir: str | Path, per_class: int = 8, seed: int = 0,
                 split: str = "test") -> np.ndarray:
    out_dir = Path(out_dir)
    matrix, columns = heatmap_matrix(student, manifest, bank, per_class, seed,
                                     split)
    rows = [["class", *[s.id for s in columns]],
            ["(domain)", *[s.domain.value for s in columns]],
            ["(label)", *[s.class_name for s in columns]]]
    for i, cname in enumerate(bank.class_names):
        rows.append([cname, *[_fmt(v) for v in matrix[i]]])
    _save_csv(out_dir / "heatmap.csv", rows)

    n_sketch = sum(1 for s in columns if s.domain is Domain.SKETCH)
    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.3 * len(bank.class_names))))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis",
                   interpolation="nearest")
    ax.set_yticks(range(len(bank.class_names)))
    ax.set_yticklabels(bank.class_names, fontsize=6)
    ax.axvline(n_sketch - 0.5, color="white", linewidth=1.0)
    ax.set_xlabel(f"samples (sketches | photos), {len(columns)} total")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_dir / "heatmap.png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return matrix


# --------------------------------------------------------------------------
# Adapter-count scaling sweep

def _downgrade(mode: TunabilityMode) -> TunabilityMode:
    if mode is TunabilityMode.HEAD_ADAPTER:
        return TunabilityMode.HEAD
    if mode is TunabilityMode.BACKBONE_ADAPTER:
        return TunabilityMode.BACKBONE
    return mode


def adapter_scaling(counts: list[int], cfg: TrainConfig,
                    manifest: SplitManifest, bank: TextBank,
                    student_factory=None, ks=(10,)) -> list[dict]:
    """Train+evaluate once per adapter count with identical seeds.

    A count of zero runs the mode's adapter-free counterpart, so the sweep
    always starts from the plain baseline. ``student_factory`` builds a fresh
    starting encoder per run (default: the manifest-inferred toy init).
    """
    rows = []
    for count in sorted(set(int(c) for c in counts)):
        mode = _downgrade(cfg.tunability) if count == 0 else cfg.tunability
        run_cfg = dataclasses.replace(cfg, adapter_count=count, tunability=mode)
        pretrained = None if student_factory is None else student_factory()
        ckpt = train(run_cfg, manifest, bank, pretrained=pretrained)
        counts_d = count_parameters(ckpt.encoder)
        report = zero_shot_evaluate(ckpt.encoder, manifest, ks=ks)
        rows.append({
            "adapter_count": count,
            "tunable_params": counts_d["tunable"],
            "total_params": counts_d["total"],
            "tunable_ratio": counts_d["tunable"] / counts_d["total"],
            "map_all": report.map_all,
        })
    return rows


def plot_adapter_scaling(counts: list[int], cfg: TrainConfig,
                         manifest: SplitManifest, bank: TextBank,
                         out_dir: str | Path, student_factory=None,
                         ks=(10,)) -> list[dict]:
    out_dir = Path(out_dir)
    rows = adapter_scaling(counts, cfg, manifest, bank, student_factory, ks)
    _save_csv(out_dir / "adapter_scaling.csv",
              [["adapter_count", "tunable_params", "total_params",
                "tunable_ratio", "map_all"]]
              + [[r["adapter_count"], r["tunable_params"], r["total_params"],
                  _fmt(r["tunable_ratio"]), _fmt(r["map_all"])]
                 for r in rows])

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([r["tunable_ratio"] for r in rows],
            [r["map_all"] for r in rows], marker="o")
    for r in rows:
        ax.annotate(str(r["adapter_count"]),
                    (r["tunable_ratio"], r["map_all"]),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel("tunable parameter ratio")
    ax.set_ylabel("mAP@all (unseen)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "adapter_scaling.png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return rows
