"""Feature extraction, cosine ranking, and retrieval metrics.

Evaluation is student-only: galleries and queries are built from encoder
features alone, never from text embeddings, and the metric layer sees only
FeatureIndex values. Rankings sort by descending cosine with ties broken by
ascending id, which makes every reported number deterministic.

AP@k uses the denominator min(R, k) where R is the number of relevant
gallery items (AP@all uses R); Prec@k divides by plain k even when fewer
than k relevant items exist. Queries whose class is absent from the gallery
are excluded from the means and counted in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive, backbone
from .backbone import EncoderState
from .datamodel import Domain, Sample
from .errors import (ArchiveCorrupt, EmptyGallery, InsufficientSketches,
                     InvalidManifest, NoRelevantItems, NotNormalized,
                     ShapeMismatch, ZeroVector)

DEFAULT_KS = (100, 200)


@dataclass
class FeatureIndex:
    ids: list[str]
    labels: list[str]
    vectors: np.ndarray  # M x d float32, unit rows
    domain: Domain

    def validate(self) -> None:
        m = len(self.ids)
        if len(self.labels) != m or self.vectors.shape[0] != m:
            raise ShapeMismatch(
                f"{m} ids, {len(self.labels)} labels, "
                f"{self.vectors.shape[0]} vectors")
        if m == 0:
            raise EmptyGallery("index holds no items")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-5):
            raise NotNormalized("index rows must be unit-norm")

    @property
    def size(self) -> int:
        return len(self.ids)


def make_index(ids: list[str], labels: list[str], vectors: np.ndarray,
               domain: Domain) -> FeatureIndex:
    """Normalize rows and wrap them in a validated index."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeMismatch(f"vectors must be M x d, got {v.shape}")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVector("cannot normalize a zero feature vector")
    idx = FeatureIndex(ids=list(ids), labels=list(labels),
                       vectors=(v / norms).astype(np.float32), domain=domain)
    idx.validate()
    return idx


def extract_index(student: EncoderState, samples: list[Sample],
                  batch_size: int = 64) -> FeatureIndex:
    """Encode samples into a normalized gallery/query index.

    Works on a frozen snapshot (taken here if needed) so extraction can
    never touch training state; only encoder features are used.
    """
    if not samples:
        raise EmptyGallery("no samples to extract")
    domains = {s.domain for s in samples}
    if len(domains) != 1:
        raise InvalidManifest("an index must hold a single domain")
    if not student.frozen:
        student = student.snapshot()
    rows = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        feats, _ = backbone.forward(student, images)
        rows.append(feats)
    return make_index([s.id for s in samples],
                      [s.class_name for s in samples],
                      np.concatenate(rows, axis=0), domains.pop())


# --------------------------------------------------------------------------
# Ranking

def _ordering(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Positions sorted by descending score, then ascending id."""
    return np.lexsort((id_rank, -scores))


def rank(query_vec: np.ndarray, index: FeatureIndex) -> list[tuple[str, float]]:
    """Full gallery ranking for one query by cosine similarity."""
    index.validate()
    q = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.vectors.shape[1]:
        raise ShapeMismatch(
            f"query dim {q.shape[0]} vs index dim {index.vectors.shape[1]}")
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ZeroVector("query vector has zero norm")
    scores = index.vectors.astype(np.float64) @ (q / n)
    id_rank = np.argsort(np.argsort(index.ids, kind="stable"), kind="stable")
    order = _ordering(scores, id_rank)
    return [(index.ids[i], float(scores[i])) for i in order]


# --------------------------------------------------------------------------
# Metrics

def average_precision(rel, k: int | None = None,
                      denominator: str = "min") -> float:
    """AP of a binary relevance list given in rank order.

    ``k=None`` means the whole list. ``denominator`` picks the AP@k
    normalizer: "min" for min(R, k) (the convention used here) or
    "relevant" for plain R (for comparing against tools that report it).
    """
    rel = np.asarray(rel, dtype=np.int64).reshape(-1)
    if rel.size == 0:
        raise NoRelevantItems("empty relevance list")
    r_total = int(rel.sum())
    if r_total == 0:
        raise NoRelevantItems("query has no relevant gallery items")
    if denominator not in ("min", "relevant"):
        raise ValueError(f"unknown denominator '{denominator}'")
    if k is None:
        k = rel.size
        denom = r_total
    else:
        if k < 1:
            raise ValueError("k must be >= 1")
        denom = min(r_total, k) if denominator == "min" else r_total
    top = rel[:k]
    hits = np.flatnonzero(top == 1)
    precisions = (np.arange(1, hits.size + 1)) / (hits + 1)
    return float(precisions.sum() / denom)


@dataclass
class MetricReport:
    map_all: float
    map_at: dict[int, float]
    prec_at: dict[int, float]
    per_query_ap: list[float]
    num_queries: int
    gallery_size: int
    excluded_queries: int = 0

    @property
    def map_at_200(self):
        return self.map_at.get(200)

    @property
    def prec_at_100(self):
        return self.prec_at.get(100)

    @property
    def prec_at_200(self):
        return self.prec_at.get(200)

    def validate(self) -> None:
        vals = [self.map_all, *self.map_at.values(), *self.prec_at.values(),
                *self.per_query_ap]
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ValueError("metrics must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "map_all": self.map_all,
            "map_at": {str(k): v for k, v in sorted(self.map_at.items())},
            "prec_at": {str(k): v for k, v in sorted(self.prec_at.items())},
            "per_query_ap": self.per_query_ap,
            "num_queries": self.num_queries,
            "gallery_size": self.gallery_size,
            "excluded_queries": self.excluded_queries,
        }

    @staticmethod
    def from_dict(d: dict) -> "MetricReport":
        return MetricReport(
            map_all=float(d["map_all"]),
            map_at={int(k): float(v) for k, v in d.get("map_at", {}).items()},
            prec_at={int(k): float(v) for k, v in d.get("prec_at", {}).items()},
            per_query_ap=[float(v) for v in d.get("per_query_ap", [])],
            num_queries=int(d["num_queries"]),
            gallery_size=int(d["gallery_size"]),
            excluded_queries=int(d.get("excluded_queries", 0)),
        )


def save_report(report: MetricReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_report(path: str | Path) -> MetricReport:
    with open(path, encoding="utf-8") as fh:
        return MetricReport.from_dict(json.load(fh))


def evaluate(queries: FeatureIndex, gallery: FeatureIndex,
             ks=DEFAULT_KS, denominator: str = "min") -> MetricReport:
    """Mean AP and Prec@k of every query against the gallery.

    Queries whose class never occurs in the gallery cannot be scored; they
    are dropped from every mean and tallied in ``excluded_queries``.
    """
    queries.validate()
    gallery.validate()
    if queries.vectors.shape[1] != gallery.vectors.shape[1]:
        raise ShapeMismatch(
            f"query dim {queries.vectors.shape[1]} vs "
            f"gallery dim {gallery.vectors.shape[1]}")
    ks = sorted(set(int(k) for k in ks))
    if any(k < 1 for k in ks):
        raise ValueError("every k must be >= 1")

    scores = queries.vectors.astype(np.float64) @ gallery.vectors.astype(np.float64).T
    id_rank = np.argsort(np.argsort(gallery.ids, kind="stable"), kind="stable")
    g_labels = np.asarray(gallery.labels)

    per_query_ap = []
    ap_at = {k: [] for k in ks}
    prec_at = {k: [] for k in ks}
    excluded = 0
    for qi in range(queries.size):
        q_label = queries.labels[qi]
        if not np.any(g_labels == q_label):
            excluded += 1
            continue
        order = _ordering(scores[qi], id_rank)
        rel = (g_labels[order] == q_label).astype(np.int64)
        per_query_ap.append(average_precision(rel, None, denominator))
        for k in ks:
            ap_at[k].append(average_precision(rel, k, denominator))
            prec_at[k].append(float(rel[:k].sum()) / k)

    if not per_query_ap:
        raise NoRelevantItems("no query class occurs in the gallery")
    report = MetricReport(
        map_all=float(np.mean(per_query_ap)),
        map_at={k: float(np.mean(v)) for k, v in ap_at.items()},
        prec_at={k: float(np.mean(v)) for k, v in prec_at.items()},
        per_query_ap=per_query_ap,
        num_queries=len(per_query_ap),
        gallery_size=gallery.size,
        excluded_queries=excluded,
    )
    report.validate()
    return report


def zero_shot_evaluate(student: EncoderState, manifest, ks=DEFAULT_KS,
                       denominator: str = "min") -> MetricReport:
    """Standard protocol: unseen-class test sketches query test photos."""
    sketches = [s for s in manifest.test_samples if s.domain is Domain.SKETCH]
    photos = [s for s in manifest.test_samples if s.domain is Domain.PHOTO]
    if not sketches or not photos:
        raise EmptyGallery("manifest test split lacks sketches or photos")
    queries = extract_index(student, sketches)
    gallery = extract_index(student, photos)
    return evaluate(queries, gallery, ks=ks, denominator=denominator)


def zs_sbsr_evaluate(sketches: FeatureIndex, queries_per_class: int,
                     seed: int, ks=DEFAULT_KS) -> MetricReport:
    """Sketch-to-sketch protocol: per class, a seeded draw of query sketches;
    every remaining sketch forms the gallery, so queries never retrieve
    themselves."""
    sketches.validate()
    if queries_per_class < 1:
        raise ValueError("queries_per_class must be >= 1")
    labels = np.asarray(sketches.labels)
    classes = sorted(set(sketches.labels))
    rng = np.random.default_rng(seed)
    query_pos: list[int] = []
    for cname in classes:
        members = np.flatnonzero(labels == cname)
        if members.size < queries_per_class + 1:
            raise InsufficientSketches(
                f"class '{cname}' has {members.size} sketches; "
                f"needs at least {queries_per_class + 1}")
        chosen = rng.choice(members, size=queries_per_class, replace=False)
        query_pos.extend(int(i) for i in np.sort(chosen))
    query_set = set(query_pos)
    gallery_pos = [i for i in range(sketches.size) if i not in query_set]

    def subset(pos):
        return FeatureIndex(ids=[sketches.ids[i] for i in pos],
                            labels=[sketches.labels[i] for i in pos],
                            vectors=sketches.vectors[pos],
                            domain=sketches.domain)

    return evaluate(subset(query_pos), subset(gallery_pos), ks=ks)


# --------------------------------------------------------------------------
# Feature files share the parameter archive format.

def save_index(index: FeatureIndex, path: str | Path) -> None:
    index.validate()
    archive.save_archive(path, {"vectors": index.vectors},
                         {"vectors": "features"},
                         extra={"index": {"ids": index.ids,
                                          "labels": index.labels,
                                          "domain": index.domain.value}})


def load_index(path: str | Path) -> FeatureIndex:
    arrays, _, extra = archive.load_archive(path)
    meta = extra.get("index")
    if not meta or "vectors" not in arrays:
        raise ArchiveCorrupt(f"{path}: not a feature index archive")
    idx = FeatureIndex(ids=[str(i) for i in meta["ids"]],
                       labels=[str(c) for c in meta["labels"]],
                       vectors=arrays["vectors"],
                       domain=Domain(meta["domain"]))
    idx.validate()
    return idx
