"""Domain types, split manifests, ingestion and the synthetic toy dataset.

A benchmark is a seen/unseen class partition plus sample lists. Seen classes
feed training; unseen classes form the test-time queries (sketches) and
gallery (photos). The partition is an explicit on-disk JSON artifact, not a
code constant, because published benchmarks disagree on their splits.

The toy generator builds a feature-space dataset where every zero-shot claim
can be checked against the generative closed form: class prototypes on the
unit sphere, one global offset per domain, gaussian noise, and a recorded
affine squash into [0, 1] so samples satisfy the image value contract.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidManifest, InvalidSpec, MissingFile


class Domain(enum.Enum):
    SKETCH = "sketch"
    PHOTO = "photo"


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


class Sample:
    """One image or sketch. The pixel array is loaded lazily when the sample
    references a file; toy samples carry their array directly."""

    def __init__(self, id: str, domain: Domain, class_name: str,
                 split: Split, image: np.ndarray | None = None,
                 path: str | None = None):
        if image is None and path is None:
            raise InvalidManifest(f"sample {id}: neither image nor path")
        self.id = id
        self.domain = domain
        self.class_name = class_name
        self.split = split
        self.path = path
        self._image = None if image is None else np.asarray(image, dtype=np.float64)

    @property
    def image(self) -> np.ndarray:
        # idempotent load; concurrent double-load is harmless
        if self._image is None:
            self._image = load_image_file(self.path)
        return self._image

    @property
    def loaded(self) -> bool:
        return self._image is not None

    def check(self) -> list[str]:
        """Invariant violations for this sample (empty list if clean)."""
        problems = []
        img = self.image
        if img.ndim != 3 or min(img.shape) <= 0:
            problems.append(f"sample {self.id}: image shape {img.shape} is not HxWxC")
            return problems
        if not np.all(np.isfinite(img)):
            problems.append(f"sample {self.id}: non-finite pixel values")
        elif img.min() < 0.0 or img.max() > 1.0:
            problems.append(f"sample {self.id}: pixel values outside [0, 1]")
        return problems


@dataclass
class SplitManifest:
    name: str
    seen_classes: list[str]
    unseen_classes: list[str]
    train_samples: list[Sample] = field(default_factory=list)
    test_samples: list[Sample] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def class_index(self, class_name: str) -> int:
        """Column index of a seen class in the training classifier order."""
        return self.seen_classes.index(class_name)


@dataclass(frozen=True)
class ToySpec:
    num_seen: int = 8
    num_unseen: int = 4
    per_class_per_domain: int = 20
    feature_dim: int = 16
    domain_offset_scale: float = 0.5
    noise_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.num_seen < 2 or self.num_unseen < 2:
            raise InvalidSpec("need at least 2 seen and 2 unseen classes")
        if self.per_class_per_domain < 2:
            raise InvalidSpec("need at least 2 samples per class per domain")
        if self.feature_dim < 1:
            raise InvalidSpec("feature_dim must be positive")
        if self.domain_offset_scale < 0 or self.noise_scale < 0:
            raise InvalidSpec("scales must be nonnegative")


# --------------------------------------------------------------------------
# Validation

def validate_manifest(m: SplitManifest, check_images: bool = False) -> list[str]:
    """Return human-readable violations; empty list means the manifest is valid.

    Violations are returned rather than raised so callers can report all of
    them at once. ``check_images`` additionally loads every sample and checks
    the pixel contract (slow for file-backed manifests).
    """
    problems: list[str] = []
    overlap = set(m.seen_classes) & set(m.unseen_classes)
    for c in sorted(overlap):
        problems.append(f"class '{c}' appears in both seen and unseen sets")
    for label, classes in (("seen", m.seen_classes), ("unseen", m.unseen_classes)):
        dupes = {c for c in classes if classes.count(c) > 1}
        for c in sorted(dupes):
            problems.append(f"duplicate class '{c}' in {label} list")
    seen = set(m.seen_classes)
    unseen = set(m.unseen_classes)
    ids: set[str] = set()
    for s in m.train_samples:
        if s.class_name not in seen:
            problems.append(
                f"train sample '{s.id}' has class '{s.class_name}' not in seen classes")
        if s.split is not Split.TRAIN:
            problems.append(f"train sample '{s.id}' tagged {s.split.value}")
    for s in m.test_samples:
        if s.class_name not in unseen:
            problems.append(
                f"test sample '{s.id}' has class '{s.class_name}' not in unseen classes")
        if s.split is not Split.TEST:
            problems.append(f"test sample '{s.id}' tagged {s.split.value}")
    for s in list(m.train_samples) + list(m.test_samples):
        if s.id in ids:
            problems.append(f"duplicate sample id '{s.id}'")
        ids.add(s.id)
        if check_images:
            problems.extend(s.check())
    return problems


# --------------------------------------------------------------------------
# Manifest file round-trip

_DOMAIN_TAGS = {d.value: d for d in Domain}


def load_manifest(path: str | Path, check_files: bool = True) -> SplitManifest:
    """Read a manifest JSON document and validate it.

    Sample file paths are resolved relative to the manifest's directory.
    Images are loaded lazily; ``check_files`` only verifies existence.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidManifest(f"manifest is not valid JSON: {exc}") from exc
    for key in ("name", "seen_classes", "unseen_classes", "train", "test"):
        if key not in doc:
            raise InvalidManifest(f"manifest missing key '{key}'")
    root = path.parent

    def build(entries, split: Split) -> list[Sample]:
        out = []
        for e in entries:
            tag = str(e.get("domain", "")).lower()
            if tag not in _DOMAIN_TAGS:
                raise InvalidManifest(
                    f"sample '{e.get('id')}': unknown domain tag '{e.get('domain')}'")
            p = root / e["path"]
            if check_files and not p.is_file():
                raise MissingFile(f"sample '{e.get('id')}': file not found: {p}")
            out.append(Sample(id=str(e["id"]), domain=_DOMAIN_TAGS[tag],
                              class_name=str(e["class"]), split=split,
                              path=str(p)))
        return out

    m = SplitManifest(
        name=str(doc["name"]),
        seen_classes=[str(c) for c in doc["seen_classes"]],
        unseen_classes=[str(c) for c in doc["unseen_classes"]],
        train_samples=build(doc["train"], Split.TRAIN),
        test_samples=build(doc["test"], Split.TEST),
        metadata=dict(doc.get("metadata", {})),
    )
    problems = validate_manifest(m)
    if problems:
        raise InvalidManifest("; ".join(problems))
    return m


def save_manifest(m: SplitManifest, path: str | Path,
                  write_samples: bool = False) -> None:
    """Serialize a manifest. With ``write_samples`` the in-memory toy arrays
    are written as binary records next to the manifest first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent

    def entry(s: Sample) -> dict:
        p = s.path
        if write_samples and (p is None or not Path(p).exists()):
            rel = Path("records") / f"{s.id}.rec"
            write_toy_record(root / rel, s)
            p = str(root / rel)
            s.path = p
        if p is None:
            raise InvalidManifest(f"sample '{s.id}' has no file to reference")
        try:
            rel_out = str(Path(p).relative_to(root))
        except ValueError:
            rel_out = str(Path(p))
        return {"id": s.id, "domain": s.domain.value,
                "class": s.class_name, "path": rel_out}

    doc = {
        "name": m.name,
        "seen_classes": m.seen_classes,
        "unseen_classes": m.unseen_classes,
        "train": [entry(s) for s in m.train_samples],
        "test": [entry(s) for s in m.test_samples],
        "metadata": m.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Image / record loading

TOY_MAGIC = b"TOYFEAT1"


def write_toy_record(path: str | Path, s: Sample) -> None:
    """Binary record: magic, id, domain byte, class, dim, float32 LE vector."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    vec = np.asarray(s.image, dtype="<f4").reshape(-1)
    idb = s.id.encode("utf-8")
    clsb = s.class_name.encode("utf-8")
    dom = 0 if s.domain is Domain.SKETCH else 1
    with open(path, "wb") as fh:
        fh.write(TOY_MAGIC)
        fh.write(struct.pack("<H", len(idb)))
        fh.write(idb)
        fh.write(struct.pack("<B", dom))
        fh.write(struct.pack("<H", len(clsb)))
        fh.write(clsb)
        fh.write(struct.pack("<I", vec.size))
        fh.write(vec.tobytes())


def read_toy_record(path: str | Path) -> tuple[str, Domain, str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != TOY_MAGIC:
        raise InvalidManifest(f"{path}: not a toy feature record")
    off = 8
    (idlen,) = struct.unpack_from("<H", raw, off); off += 2
    sid = raw[off:off + idlen].decode("utf-8"); off += idlen
    (dom,) = struct.unpack_from("<B", raw, off); off += 1
    (clen,) = struct.unpack_from("<H", raw, off); off += 2
    cls = raw[off:off + clen].decode("utf-8"); off += clen
    (dim,) = struct.unpack_from("<I", raw, off); off += 4
    vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).astype(np.float64)
    return sid, (Domain.SKETCH if dom == 0 else Domain.PHOTO), cls, vec


def load_image_file(path: str | Path) -> np.ndarray:
    """Load a referenced sample file into an HxWxC float array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"image file not found: {path}")
    if path.suffix == ".rec":
        _, _, _, vec = read_toy_record(path)
        return vec.reshape(1, 1, -1)
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr


# --------------------------------------------------------------------------
# Toy dataset generator

def generate_toy_dataset(spec: ToySpec) -> tuple[SplitManifest, dict[str, np.ndarray]]:
    """Deterministic synthetic benchmark plus per-class prototypes.

    Generative model: unit-norm prototype mu_c per class, one fixed offset per
    domain with norm ``domain_offset_scale``, iid gaussian noise per sample,
    then a single global affine map squashing all values into [0, 1]. The
    affine is recorded in manifest.metadata["toy_affine"] ({"lo", "span"}:
    image = (feature - lo) / span) and the domain offsets in
    metadata["toy_offsets"], so tests can reconstruct the closed form.
    Prototypes are returned un-squashed: they double as text-bank rows.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.num_seen + spec.num_unseen
    class_names = [f"toy_class_{i:02d}" for i in range(n_classes)]
    seen = class_names[: spec.num_seen]
    unseen = class_names[spec.num_seen:]

    protos = rng.standard_normal((n_classes, spec.feature_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    offsets = {}
    for dom in (Domain.SKETCH, Domain.PHOTO):
        v = rng.standard_normal(spec.feature_dim)
        n = np.linalg.norm(v)
        offsets[dom] = v / n * spec.domain_offset_scale if n > 0 else v * 0.0

    raw: list[tuple[str, Domain, str, Split, np.ndarray]] = []
    for ci, cname in enumerate(class_names):
        split = Split.TRAIN if ci < spec.num_seen else Split.TEST
        for dom in (Domain.SKETCH, Domain.PHOTO):
            noise = rng.standard_normal((spec.per_class_per_domain, spec.feature_dim))
            feats = protos[ci] + offsets[dom] + spec.noise_scale * noise
            for k in range(spec.per_class_per_domain):
                sid = f"{cname}_{dom.value}_{k:03d}"
                raw.append((sid, dom, cname, split, feats[k]))

    allvals = np.concatenate([r[4] for r in raw])
    lo, hi = float(allvals.min()), float(allvals.max())
    span = hi - lo if hi > lo else 1.0
    # image = (feature - lo) / span, inverted by feature = image*span + lo
    train, test = [], []
    for sid, dom, cname, split, feat in raw:
        img = ((feat - lo) / span).reshape(1, 1, spec.feature_dim)
        s = Sample(id=sid, domain=dom, class_name=cname, split=split, image=img)
        (train if split is Split.TRAIN else test).append(s)

    manifest = SplitManifest(
        name=f"toy-{spec.seed}",
        seen_classes=seen,
        unseen_classes=unseen,
        train_samples=train,
        test_samples=test,
        metadata={
            "source": "toy-generator",
            "toy_spec": {
                "num_seen": spec.num_seen, "num_unseen": spec.num_unseen,
                "per_class_per_domain": spec.per_class_per_domain,
                "feature_dim": spec.feature_dim,
                "domain_offset_scale": spec.domain_offset_scale,
                "noise_scale": spec.noise_scale, "seed": spec.seed,
            },
            "toy_affine": {"lo": lo, "span": span},
            "toy_offsets": {d.value: offsets[d].tolist()
                            for d in (Domain.SKETCH, Domain.PHOTO)},
        },
    )
    prototypes = {name: protos[i].copy() for i, name in enumerate(class_names)}
    return manifest, prototypes


# --------------------------------------------------------------------------
# Benchmark templates + directory ingestion

TEMPLATE_DIR = Path(__file__).parent / "data"


def list_templates() -> list[str]:
    return sorted(p.stem for p in TEMPLATE_DIR.glob("*.json"))


def load_template(name: str) -> dict:
    p = TEMPLATE_DIR / f"{name}.json"
    if not p.is_file():
        raise MissingFile(f"no benchmark template '{name}' (have: {list_templates()})")
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


def ingest_directory(root: str | Path, template: dict,
                     seen_override: list[str] | None = None,
                     unseen_override: list[str] | None = None) -> SplitManifest:
    """Build a manifest by scanning ``root/{photo,sketch}/<class>/*``.

    The template fixes how many classes go to each side of the partition; the
    concrete assignment is drawn with the template's selection seed unless
    explicit class lists are supplied (canonical published splits should be
    passed in that way).
    """
    root = Path(root)
    classes: set[str] = set()
    for dom in ("photo", "sketch"):
        base = root / dom
        if base.is_dir():
            classes.update(p.name for p in base.iterdir() if p.is_dir())
    if not classes:
        raise InvalidManifest(f"no photo/ or sketch/ class directories under {root}")
    ordered = sorted(classes)

    if seen_override is not None or unseen_override is not None:
        if not (seen_override and unseen_override):
            raise InvalidManifest("both seen and unseen overrides are required")
        seen, unseen = list(seen_override), list(unseen_override)
    else:
        n_seen = int(template["num_seen"])
        n_unseen = int(template["num_unseen"])
        if len(ordered) != n_seen + n_unseen:
            raise InvalidManifest(
                f"template '{template['name']}' expects {n_seen + n_unseen} classes, "
                f"found {len(ordered)} under {root}")
        rng = np.random.default_rng(int(template.get("selection_seed", 0)))
        unseen_idx = set(rng.choice(len(ordered), size=n_unseen, replace=False).tolist())
        seen = [c for i, c in enumerate(ordered) if i not in unseen_idx]
        unseen = [c for i, c in enumerate(ordered) if i in unseen_idx]

    exts = {".png", ".jpg", ".jpeg", ".rec"}
    train, test = [], []
    for dom_name, dom in (("sketch", Domain.SKETCH), ("photo", Domain.PHOTO)):
        base = root / dom_name
        if not base.is_dir():
            continue
        for cname in sorted(c for c in (seen + unseen) if (base / c).is_dir()):
            split = Split.TRAIN if cname in set(seen) else Split.TEST
            for f in sorted((base / cname).iterdir()):
                if f.suffix.lower() not in exts:
                    continue
                sid = f"{dom_name}_{cname}_{f.stem}"
                s = Sample(id=sid, domain=dom, class_name=cname,
                           split=split, path=str(f))
                (train if split is Split.TRAIN else test).append(s)

    m = SplitManifest(
        name=str(template["name"]),
        seen_classes=seen,
        unseen_classes=unseen,
        train_samples=train,
        test_samples=test,
        metadata={"source": str(root), "template": template.get("name"),
                  "split_convention": template.get("convention", "")},
    )
    problems = validate_manifest(m)
    if problems:
        raise InvalidManifest("; ".join(problems))
    return m
