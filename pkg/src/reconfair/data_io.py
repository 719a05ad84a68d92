"""File formats: raw-float32 image containers with JSON sidecars, and the
predictions CSV (subject_id,task,score).

An image named ``foo`` is stored as ``foo.f32`` (little-endian float32,
row-major) next to ``foo.json`` holding
``{"width": W, "height": H, "dtype": "f32", "range": [0, 1]}``.
Masks use the same container with values restricted to {0, 1}.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SIDECAR_DTYPE = "f32"


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [0,1] image (or {0,1} mask) to ``path.f32`` + ``path.json``."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {arr.shape}")
    base = _strip_suffix(Path(path))
    h, w = arr.shape
    sidecar = {"width": w, "height": h, "dtype": SIDECAR_DTYPE, "range": [0, 1]}
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)
    arr.astype("<f4").tofile(base.with_suffix(".f32"))


def read_image(path: str | Path) -> np.ndarray:
    """Read an image container; validates the sidecar and value range."""
    base = _strip_suffix(Path(path))
    sidecar_path = base.with_suffix(".json")
    raw_path = base.with_suffix(".f32")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"missing sidecar {sidecar_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"missing raw image {raw_path}")
    with open(sidecar_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("width", "height", "dtype"):
        if key not in meta:
            raise ValueError(f"sidecar {sidecar_path} missing key '{key}'")
    if meta["dtype"] != SIDECAR_DTYPE:
        raise ValueError(f"unsupported dtype {meta['dtype']!r} in {sidecar_path}")
    w, h = int(meta["width"]), int(meta["height"])
    data = np.fromfile(raw_path, dtype="<f4")
    if data.size != w * h:
        raise ValueError(
            f"{raw_path}: expected {w * h} samples ({h}x{w}), found {data.size}"
        )
    return data.reshape(h, w).astype(np.float64)


def read_mask(path: str | Path) -> np.ndarray:
    """Read a binary mask container; rejects non-{0,1} values."""
    arr = read_image(path)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"mask {path} has values outside {{0, 1}}")
    return arr


def list_images(directory: str | Path) -> list[str]:
    """Image ids (basenames without suffix) stored under a directory."""
    d = Path(directory)
    return sorted(p.stem for p in d.glob("*.f32"))


def load_predictions(path: str | Path) -> dict[tuple[str, str], float]:
    """Load a predictions CSV with header ``subject_id,task,score``.

    Returns {(subject_id, task): score}; scores are validated to [0, 1].
    """
    out: dict[tuple[str, str], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "task", "score"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            sid, task = row["subject_id"], row["task"]
            try:
                score = float(row["score"])
            except ValueError as exc:
                raise ValueError(f"{path} row {i}: bad score {row['score']!r}") from exc
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{path} row {i}: score {score} outside [0, 1]")
            key = (sid, task)
            if key in out:
                raise ValueError(f"{path} row {i}: duplicate entry for {key}")
            out[key] = score
    return out


def write_predictions(path: str | Path, preds: dict[tuple[str, str], float]) -> None:
    """Write a predictions CSV (see :func:`load_predictions`)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "task", "score"])
        for (sid, task), score in sorted(preds.items()):
            writer.writerow([sid, task, repr(float(score))])


def _strip_suffix(path: Path) -> Path:
    if path.suffix in (".f32", ".json"):
        return path.with_suffix("")
    return path
