"""Prompt construction and the frozen text-embedding classifier.

Class names are turned into prompt sentences by filling a single-placeholder
template, embedded offline by a text-embedding provider, L2-normalized and
stored as a TextBank. The bank's matrix doubles as a fixed classifier: image
features are scored against its rows by cosine and never update it.

Real prompt encoders are reached through the provider protocol with an
on-disk cache; the repo ships only a deterministic stub provider (seeded
hash-to-gaussian) plus an import path for externally computed embedding
files, so no model download ever happens in tests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (BadTemplate, EmptyClassList, MissingFile, NotNormalized,
                     ProviderDimMismatch)

PLACEHOLDER = "[class]"

# Text-encoder output widths, keyed by the paired image encoder's name.
KNOWN_ENCODER_DIMS = {
    "RN50": 1024,
    "RN50x4": 640,
    "ViT-B/16": 512,
    "ViT-L/14": 768,
}

# Generic caption templates for ensembling, skewed toward line-drawing
# phrasings since half the queries are sketches.
ENSEMBLE_TEMPLATES = [
    "a photo of a [class]",
    "a photo of the [class]",
    "a sketch of a [class]",
    "a drawing of a [class]",
    "a black and white sketch of a [class]",
    "a doodle of a [class]",
    "an image of a [class]",
    "a picture of a [class]",
]


def templates_for_mode(mode: str) -> "list[PromptTemplate]":
    """Templates behind each prompting style (CLASSICAL has none: it trains
    a plain classifier and never builds a bank)."""
    key = mode.upper()
    if key == "A_CLASS":
        return [PromptTemplate("a [class]")]
    if key == "A_PHOTO_OF_CLASS":
        return [PromptTemplate("a photo of [class]")]
    if key == "ENSEMBLE":
        return [PromptTemplate(p) for p in ENSEMBLE_TEMPLATES]
    raise BadTemplate(f"no templates for prompt mode '{mode}'")


@dataclass(frozen=True)
class PromptTemplate:
    pattern: str

    def validate(self) -> None:
        if self.pattern.count(PLACEHOLDER) != 1:
            raise BadTemplate(
                f"template must contain exactly one '{PLACEHOLDER}': {self.pattern!r}")


def fill_template(t: PromptTemplate, class_name: str) -> str:
    """Substitute the class into the template; underscores become spaces."""
    t.validate()
    if not class_name:
        raise BadTemplate("class name must be nonempty")
    return t.pattern.replace(PLACEHOLDER, class_name.replace("_", " "))


@dataclass
class TextBank:
    encoder_name: str
    dim: int
    class_names: list[str]
    prompts: list[list[str]]  # per class, the prompt(s) that produced the row
    vectors: np.ndarray       # C x dim float32
    normalized: bool = True

    def validate(self) -> None:
        if self.vectors.shape != (len(self.class_names), self.dim):
            raise ProviderDimMismatch(
                f"vectors shape {self.vectors.shape} vs "
                f"{len(self.class_names)} classes of dim {self.dim}")
        if self.normalized:
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if self.class_names and not np.all(np.abs(norms - 1.0) <= 1e-5):
                raise NotNormalized("bank rows must have unit norm")


def classifier_matrix(bank: TextBank) -> np.ndarray:
    """The frozen C x dim classifier. Row order is the bank's class order.

    Returned read-only: this matrix is never a trainable parameter.
    """
    if not bank.normalized:
        raise NotNormalized("classifier requires a normalized bank")
    bank.validate()
    m = bank.vectors.astype(np.float64).copy()
    m.setflags(write=False)
    return m


# --------------------------------------------------------------------------
# Providers

class StubTextProvider:
    """Deterministic stand-in for a real prompt encoder.

    Each prompt hashes to a seed that drives a gaussian draw, normalized to
    unit length, so identical text always embeds identically across runs and
    machines. For the known encoder names the declared dim matches the real
    encoder so downstream shapes are faithful.
    """

    def __init__(self, name: str = "stub", dim: int | None = None):
        if dim is None:
            if name not in KNOWN_ENCODER_DIMS:
                raise ProviderDimMismatch(
                    f"provider '{name}' has no known dim; pass one explicitly")
            dim = KNOWN_ENCODER_DIMS[name]
        self.name = name
        self.dim = int(dim)

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(
            f"{self.name}|{self.dim}|{text}".encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class PrototypeProvider:
    """Backs the toy benchmark: 'embeds' a class name as its generator
    prototype, so the bank rows coincide with the toy class centers."""

    def __init__(self, prototypes: dict[str, np.ndarray]):
        if not prototypes:
            raise EmptyClassList("no prototypes given")
        self.name = "toy-prototypes"
        self.prototypes = {k.replace("_", " "): np.asarray(v, dtype=np.float64)
                           for k, v in prototypes.items()}
        self.dim = len(next(iter(self.prototypes.values())))

    def embed(self, text: str) -> np.ndarray:
        for key, proto in self.prototypes.items():
            if key in text:
                return proto / np.linalg.norm(proto)
        raise ProviderDimMismatch(f"no prototype matches prompt {text!r}")


def embed_classes(provider, templates: list[PromptTemplate],
                  classes: list[str], mode: str = "single") -> TextBank:
    """One unit vector per class; 'ensemble' averages templates then renorms."""
    if not classes:
        raise EmptyClassList("class list is empty")
    if mode not in ("single", "ensemble"):
        raise BadTemplate(f"mode must be single or ensemble, got '{mode}'")
    if not templates:
        raise BadTemplate("at least one template required")
    if mode == "single" and len(templates) != 1:
        raise BadTemplate("single mode takes exactly one template")

    rows = []
    prompts = []
    for cname in classes:
        filled = [fill_template(t, cname) for t in templates]
        vecs = []
        for text in filled:
            v = np.asarray(provider.embed(text), dtype=np.float64)
            if v.shape != (provider.dim,):
                raise ProviderDimMismatch(
                    f"provider '{provider.name}' declared dim {provider.dim} "
                    f"but returned shape {v.shape}")
            vecs.append(v / np.linalg.norm(v))
        mean = np.mean(vecs, axis=0)
        n = np.linalg.norm(mean)
        if n == 0:
            raise ProviderDimMismatch(f"degenerate ensemble for class '{cname}'")
        rows.append(mean / n)
        prompts.append(filled)

    bank = TextBank(encoder_name=provider.name, dim=provider.dim,
                    class_names=list(classes), prompts=prompts,
                    vectors=np.asarray(rows, dtype=np.float32), normalized=True)
    bank.validate()
    return bank


def bank_from_prototypes(prototypes: dict[str, np.ndarray],
                         classes: list[str]) -> TextBank:
    """Toy bank whose rows are the normalized generator prototypes."""
    provider = PrototypeProvider(prototypes)
    return embed_classes(provider, [PromptTemplate("[class]")], classes)


# --------------------------------------------------------------------------
# Cache file: byte-stable JSON with 9-significant-digit floats
# (9 significant decimal digits round-trip float32 exactly)

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def save_bank(bank: TextBank, path: str | Path) -> None:
    bank.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = ['{"encoder": %s, "dim": %d, "normalized": %s, "classes": ['
             % (json.dumps(bank.encoder_name), bank.dim,
                "true" if bank.normalized else "false")]
    entries = []
    for i, cname in enumerate(bank.class_names):
        vec = ", ".join(_fmt(v) for v in bank.vectors[i])
        entries.append('{"name": %s, "prompts": %s, "vector": [%s]}'
                       % (json.dumps(cname), json.dumps(bank.prompts[i]), vec))
    parts.append(", ".join(entries))
    parts.append("]}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(parts))


def load_bank(path: str | Path) -> TextBank:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no embedding cache at {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    classes = doc.get("classes", [])
    if not classes:
        raise EmptyClassList(f"{path}: cache holds no classes")
    bank = TextBank(
        encoder_name=str(doc["encoder"]),
        dim=int(doc["dim"]),
        class_names=[str(c["name"]) for c in classes],
        prompts=[list(c.get("prompts", [])) for c in classes],
        vectors=np.asarray([c["vector"] for c in classes], dtype=np.float32),
        normalized=bool(doc.get("normalized", True)),
    )
    bank.validate()
    return bank


def import_external_bank(src: str | Path, dst: str | Path) -> TextBank:
    """Validate an externally produced embedding file and re-emit it in the
    canonical cache format (renormalizing if needed)."""
    src = Path(src)
    if not src.is_file():
        raise MissingFile(f"no embedding file at {src}")
    with open(src, encoding="utf-8") as fh:
        doc = json.load(fh)
    classes = doc.get("classes", [])
    if not classes:
        raise EmptyClassList(f"{src}: no classes")
    vectors = np.asarray([c["vector"] for c in classes], dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NotNormalized(f"{src}: zero embedding vector")
    bank = TextBank(
        encoder_name=str(doc.get("encoder", "imported")),
        dim=int(doc.get("dim", vectors.shape[1])),
        class_names=[str(c["name"]) for c in classes],
        prompts=[list(c.get("prompts", [])) for c in classes],
        vectors=(vectors / norms).astype(np.float32),
        normalized=True,
    )
    bank.validate()
    save_bank(bank, dst)
    return bank
