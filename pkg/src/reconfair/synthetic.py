"""Synthetic corpora for desk-scale experiments.

The biased corpus engineers an interaction between degradation and a
group-correlated image feature: one (minority) group has denser bodies, so
its projections attenuate more photons and its filtered back-projections
come out noisier at a fixed dose. A classifier fit on clean images then
under-detects that group's lesions after degradation, giving the mitigation
strategies a real gap to close: a smoothing reconstruction kernel narrows
the noise-driven detection gap at a small fidelity cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data_io
from .dataset import SplitAssignment, SubjectRecord, make_splits
from .mitigation import (
    FinetuneResult,
    MitigationData,
    SoftEoddConfig,
    ToyPipeline,
    finetune,
    sigmoid,
)
from .util import rng_for
from .xray import degrade_xray

MINORITY_FRACTION = 0.25
MAJORITY_BASE = 0.20  # body plateau intensity, majority group
MINORITY_BASE = 0.60  # denser bodies: deeper attenuation, noisier recon
LESION_SIGMA = 2.0
LESION_AMPLITUDE = 0.30
LESION_CENTER = (11.5, 11.5)  # inside one pooled patch for 32x32, patch 8
BODY_RADIUS_FRACTION = 0.44
DEFAULT_PHOTONS = 8000.0
DEFAULT_N_ANGLES = 48
ATTENUATION_SCALE = 0.35  # global: per-image calibration would mask density


@dataclass
class BiasedCorpus:
    """Subjects, clean/degraded images, splits, and a pretrained pipeline."""

    records: list[SubjectRecord]
    clean: dict[str, np.ndarray]
    degraded: dict[str, np.ndarray]
    assignments: dict[str, SplitAssignment]
    pipeline: ToyPipeline
    photons: float
    size: int

    def split_data(self, split: str) -> MitigationData:
        """Aligned mitigation arrays for one split (input = degraded)."""
        ids = sorted(
            r.subject_id for r in self.records
            if self.assignments[r.subject_id].split == split
        )
        by_id = {r.subject_id: r for r in self.records}
        return MitigationData(
            inputs=np.stack([self.degraded[i] for i in ids]),
            targets=np.stack([self.clean[i] for i in ids]),
            labels=np.array([by_id[i].labels["lesion"] for i in ids]),
            groups={"sex": np.array([by_id[i].sex for i in ids])},
            subject_ids=ids,
        )


def _body_image(
    size: int, base: float, rng: np.random.Generator, with_lesion: bool
) -> np.ndarray:
    coords = np.linspace(-1.0, 1.0, size)
    x, y = np.meshgrid(coords, coords)
    r = np.hypot(x, y)
    body = r <= 2.0 * BODY_RADIUS_FRACTION
    img = np.zeros((size, size))
    img[body] = base
    for _ in range(3):
        amp = rng.uniform(0.02, 0.10)
        cx, cy = rng.uniform(-0.5, 0.5, size=2)
        sx, sy = rng.uniform(0.2, 0.5, size=2)
        img += body * amp * np.exp(-0.5 * (((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))
    if with_lesion:
        cy_px, cx_px = LESION_CENTER
        yy, xx = np.mgrid[0:size, 0:size]
        img += LESION_AMPLITUDE * np.exp(
            -((yy - cy_px) ** 2 + (xx - cx_px) ** 2) / (2.0 * LESION_SIGMA**2)
        )
    return np.clip(img, 0.0, 1.0)


def make_biased_corpus(
    n_subjects: int = 320,
    size: int = 32,
    photons: float = DEFAULT_PHOTONS,
    n_angles: int = DEFAULT_N_ANGLES,
    seed: int = 7,
    pretrain_epochs: int = 30,
) -> BiasedCorpus:
    """Generate the corpus, fit the frozen classifier on clean images, and
    pretrain the reconstructor on plain MSE over the train split."""
    if size % 8:
        raise ValueError("size must be divisible by the 8-pixel patch")
    rng = rng_for(seed, "corpus")
    n_minority = int(round(MINORITY_FRACTION * n_subjects))
    sexes = np.array(["F"] * (n_subjects - n_minority) + ["M"] * n_minority)
    rng.shuffle(sexes)

    records: list[SubjectRecord] = []
    clean: dict[str, np.ndarray] = {}
    degraded: dict[str, np.ndarray] = {}
    group_counters = {"F": 0, "M": 0}
    for i in range(n_subjects):
        sid = f"s{i:04d}"
        sub_rng = rng_for(seed, "subject", sid)
        sex = str(sexes[i])
        label = group_counters[sex] % 2  # exactly balanced labels per group
        group_counters[sex] += 1
        age = float(sub_rng.uniform(35.0, 85.0))
        base = MINORITY_BASE if sex == "M" else MAJORITY_BASE
        img = _body_image(size, base, sub_rng, with_lesion=bool(label))
        clean[sid] = img
        degraded[sid] = degrade_xray(
            img,
            photons,
            seed=rng_for(seed, "degrade", sid).integers(2**32),
            n_angles=n_angles,
            attenuation_scale=ATTENUATION_SCALE,
        )
        records.append(
            SubjectRecord(subject_id=sid, sex=sex, age_years=age, race=None,
                          labels={"lesion": label}, image_refs=(sid,)))

    assignments = make_splits(records, seed=seed)
    pipeline = ToyPipeline.initialize(
        kernel_size=5, n_features=(size // 8) ** 2, patch=8, seed=seed
    )

    train_ids = sorted(
        sid for sid, a in assignments.items() if a.split == "train"
    )
    by_id = {r.subject_id: r for r in records}
    feats = np.stack(
        [_pool_features(clean[sid], pipeline.patch) for sid in train_ids]
    )
    labels = np.array([by_id[sid].labels["lesion"] for sid in train_ids], dtype=np.float64)
    w, b = _fit_logistic(feats, labels, seed=seed)
    pipeline.clf_weights = w
    pipeline.clf_bias = b

    corpus = BiasedCorpus(
        records=records, clean=clean, degraded=degraded,
        assignments=assignments, pipeline=pipeline,
        photons=photons, size=size,
    )
    if pretrain_epochs > 0:
        result: FinetuneResult = finetune(
            pipeline, corpus.split_data("train"), strategy="standard",
            cfg=SoftEoddConfig(), epochs=pretrain_epochs, seed=seed,
        )
        corpus.pipeline = result.pipeline
    return corpus


def _pool_features(img: np.ndarray, patch: int) -> np.ndarray:
    h, w = img.shape
    return img.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3)).ravel()


def _fit_logistic(
    feats: np.ndarray, labels: np.ndarray, seed: int,
    steps: int = 3000, lr: float = 1.0, l2: float = 1e-3,
) -> tuple[np.ndarray, float]:
    """Deterministic full-batch logistic regression fit."""
    rng = rng_for(seed, "classifier-init")
    w = rng.normal(0.0, 0.01, size=feats.shape[1])
    b = 0.0
    n = feats.shape[0]
    for _ in range(steps):
        z = feats @ w + b
        err = sigmoid(z) - labels
        w -= lr * (feats.T @ err / n + l2 * w)
        b -= lr * float(err.mean())
    return w, b


def write_corpus(corpus: BiasedCorpus, directory: str | Path) -> None:
    """Persist a corpus for the mitigation CLI: metadata CSV, clean/ and
    degraded/ image containers, and the pretrained pipeline parameters."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "metadata.csv", "w", encoding="utf-8") as fh:
        fh.write("subject_id,sex,age,race,label_lesion\n")
        for r in corpus.records:
            fh.write(f"{r.subject_id},{r.sex},{r.age_years:g},,{r.labels['lesion']}\n")
    with open(d / "splits.json", "w", encoding="utf-8") as fh:
        json.dump(
            {sid: a.split for sid, a in sorted(corpus.assignments.items())}, fh, indent=1
        )
    for sid in corpus.clean:
        data_io.write_image(d / "clean" / sid, corpus.clean[sid])
        data_io.write_image(d / "degraded" / sid, corpus.degraded[sid])
    p = corpus.pipeline
    with open(d / "pipeline.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "kernel": p.kernel.tolist(),
                "bias": p.bias,
                "clf_weights": p.clf_weights.tolist(),
                "clf_bias": p.clf_bias,
                "patch": p.patch,
                "photons": corpus.photons,
                "size": corpus.size,
            },
            fh, indent=1,
        )


def load_corpus(directory: str | Path) -> BiasedCorpus:
    """Load a corpus previously written by :func:`write_corpus`."""
    from .dataset import load_metadata  # local import to avoid cycle at module load

    d = Path(directory)
    records = load_metadata(d / "metadata.csv")
    with open(d / "splits.json", encoding="utf-8") as fh:
        splits = json.load(fh)
    assignments = {sid: SplitAssignment(split) for sid, split in splits.items()}
    clean = {r.subject_id: data_io.read_image(d / "clean" / r.subject_id) for r in records}
    degraded = {
        r.subject_id: data_io.read_image(d / "degraded" / r.subject_id) for r in records
    }
    with open(d / "pipeline.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    pipeline = ToyPipeline(
        kernel=np.asarray(meta["kernel"], dtype=np.float64),
        bias=float(meta["bias"]),
        clf_weights=np.asarray(meta["clf_weights"], dtype=np.float64),
        clf_bias=float(meta["clf_bias"]),
        patch=int(meta["patch"]),
    )
    return BiasedCorpus(
        records=records, clean=clean, degraded=degraded, assignments=assignments,
        pipeline=pipeline, photons=float(meta["photons"]),
        size=int(meta["size"]),
    )
