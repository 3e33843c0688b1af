"""On-disk archive of named float32 arrays.

Layout: one directory holding ``index.json`` plus one raw ``.bin`` file per
array (little-endian float32, C order). The index maps each logical name to
its shape, group tag and file name. Round-trips are bit-exact: the bytes
written are exactly the bytes read back.

Used for encoder parameter checkpoints (group = parameter group) and for
feature files (group = feature domain, extra index fields for ids/labels).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ArchiveCorrupt

FORMAT_TAG = "float32-archive/1"


def _file_name(name: str) -> str:
    # logical names contain "/" (group prefixes); keep the directory flat
    return name.replace("/", "__") + ".bin"


def save_archive(path: str | Path, arrays: dict[str, np.ndarray],
                 groups: dict[str, str], extra: dict | None = None) -> None:
    """Write arrays to ``path`` (created if needed). Deterministic bytes."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index: dict = {"format": FORMAT_TAG, "dtype": "float32",
                   "byteorder": "little", "arrays": {}}
    if extra:
        index["extra"] = extra
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        fname = _file_name(name)
        with open(path / fname, "wb") as fh:
            fh.write(arr.tobytes())
        index["arrays"][name] = {
            "shape": list(arr.shape),
            "group": groups.get(name, ""),
            "file": fname,
        }
    with open(path / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str], dict]:
    """Read back (arrays, groups, extra). Raises ArchiveCorrupt on damage."""
    path = Path(path)
    index_path = path / "index.json"
    if not index_path.is_file():
        raise ArchiveCorrupt(f"no index.json under {path}")
    try:
        with open(index_path, encoding="utf-8") as fh:
            index = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArchiveCorrupt(f"unreadable index.json: {exc}") from exc
    if index.get("format") != FORMAT_TAG:
        raise ArchiveCorrupt(f"unknown archive format {index.get('format')!r}")
    arrays: dict[str, np.ndarray] = {}
    groups: dict[str, str] = {}
    for name, meta in index.get("arrays", {}).items():
        fpath = path / meta["file"]
        if not fpath.is_file():
            raise ArchiveCorrupt(f"missing array file {meta['file']}")
        shape = tuple(int(s) for s in meta["shape"])
        expected = int(np.prod(shape)) * 4 if shape else 4
        raw = fpath.read_bytes()
        if len(raw) != max(expected, int(np.prod(shape)) * 4):
            raise ArchiveCorrupt(
                f"array {name}: {len(raw)} bytes on disk, expected {expected}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        groups[name] = meta.get("group", "")
    return arrays, groups, index.get("extra", {})


def archive_digest(path: str | Path) -> str:
    """Stable content hash of an archive directory (index + data bytes)."""
    import hashlib

    path = Path(path)
    h = hashlib.sha256()
    for fname in sorted(os.listdir(path)):
        fp = path / fname
        if fp.is_file():
            h.update(fname.encode())
            h.update(fp.read_bytes())
    return h.hexdigest()
