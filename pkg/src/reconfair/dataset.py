"""Subject metadata ingestion, patient-stratified splits, and subgroup
partitions over sensitive attributes.

The metadata CSV schema is
``subject_id,sex,age,race,label_<task1>,...,label_<taskK>[,mask_ref]``
(UTF-8, empty cell = missing). Task labels are independent binary columns.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_FRACTIONS = {"train": 0.7, "validation": 0.1, "test": 0.2}
MIN_SUBJECTS_FOR_SPLIT = 10


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: sensitive attributes, binary task labels, image refs."""

    subject_id: str
    sex: str | None
    age_years: float | None
    race: str | None
    labels: dict[str, int]
    image_refs: tuple[str, ...] = ()
    mask_ref: str | None = None

    def attribute(self, name: str) -> object:
        if name == "sex":
            return self.sex
        if name == "age":
            return self.age_years
        if name == "race":
            return self.race
        raise KeyError(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class SplitAssignment:
    """Which split a subject's images all belong to (stratified by patient)."""

    split: str  # train | validation | test
    sub_split: str | None = None  # recon_train | classifier_train, within train


@dataclass
class SubgroupPartition:
    """Disjoint groups of subject ids for one sensitive attribute."""

    attribute: str
    groups: dict[str, set[str]]
    threshold: float | None = None  # dichotomization cut, when applicable
    degenerate: bool = False  # some group empty after construction
    excluded: set[str] = field(default_factory=set)  # missing attribute value

    def counts(self) -> dict[str, int]:
        return {g: len(ids) for g, ids in self.groups.items()}

    def group_of(self, subject_id: str) -> str | None:
        for g, ids in self.groups.items():
            if subject_id in ids:
                return g
        return None

    def validate(self) -> None:
        seen: set[str] = set()
        for g, ids in self.groups.items():
            if seen & ids:
                raise ValueError(f"partition {self.attribute}: overlapping group {g!r}")
            seen |= ids


def load_metadata(path: str | Path) -> list[SubjectRecord]:
    """Parse the metadata CSV into one record per row.

    Raises ValueError naming the offending column or row for schema
    violations: missing required columns, duplicate subject ids, or label
    values other than 0/1. Empty cells are treated as missing; missing race
    (or sex/age) is permitted and simply excludes the subject from partitions
    over that attribute.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fieldnames = list(reader.fieldnames or [])
        for col in ("subject_id", "sex", "age", "race"):
            if col not in fieldnames:
                raise ValueError(f"{path}: missing required column '{col}'")
        label_cols = [c for c in fieldnames if c.startswith("label_")]
        if not label_cols:
            raise ValueError(f"{path}: no label_<task> columns found")
        has_mask = "mask_ref" in fieldnames

        records: list[SubjectRecord] = []
        seen_ids: set[str] = set()
        for i, row in enumerate(reader, start=2):  # 1-based incl. header
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise ValueError(f"{path} row {i}: empty subject_id")
            if sid in seen_ids:
                raise ValueError(f"{path} row {i}: duplicate subject_id {sid!r}")
            seen_ids.add(sid)

            sex = (row["sex"] or "").strip() or None
            race = (row["race"] or "").strip() or None
            age_cell = (row["age"] or "").strip()
            age: float | None = None
            if age_cell:
                try:
                    age = float(age_cell)
                except ValueError as exc:
                    raise ValueError(f"{path} row {i}: bad age {age_cell!r}") from exc
                if age < 0:
                    raise ValueError(f"{path} row {i}: negative age {age}")

            labels: dict[str, int] = {}
            for col in label_cols:
                cell = (row[col] or "").strip()
                if not cell:
                    continue  # missing label for this task
                if cell not in ("0", "1"):
                    raise ValueError(
                        f"{path} row {i}: label {col} must be 0 or 1, got {cell!r}"
                    )
                labels[col[len("label_"):]] = int(cell)

            mask_ref = None
            if has_mask:
                mask_ref = (row["mask_ref"] or "").strip() or None
            records.append(
                SubjectRecord(
                    subject_id=sid,
                    sex=sex,
                    age_years=age,
                    race=race,
                    labels=labels,
                    mask_ref=mask_ref,
                )
            )
    return records


def make_splits(
    records: list[SubjectRecord],
    seed: int,
    train_sub_split_fraction: float = 0.0,
) -> dict[str, SplitAssignment]:
    """Deterministic 70/10/20 train/validation/test split by subject.

    Subject ids are sorted, then permuted with a seeded generator and cut at
    cumulative fractions, so the result is independent of input row order.
    When ``train_sub_split_fraction`` > 0, the train split is further divided
    into disjoint recon_train (that fraction) and classifier_train sets.
    """
    if not 0.0 <= train_sub_split_fraction <= 1.0:
        raise ValueError("train_sub_split_fraction must lie in [0, 1]")
    ids = sorted(r.subject_id for r in records)
    n = len(ids)
    if n < MIN_SUBJECTS_FOR_SPLIT:
        raise ValueError(f"need at least {MIN_SUBJECTS_FOR_SPLIT} subjects, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [ids[k] for k in order]

    n_train = int(round(SPLIT_FRACTIONS["train"] * n))
    n_val = int(round(SPLIT_FRACTIONS["validation"] * n))
    train_ids = shuffled[:n_train]
    val_ids = shuffled[n_train:n_train + n_val]
    test_ids = shuffled[n_train + n_val:]

    assignments: dict[str, SplitAssignment] = {}
    if train_sub_split_fraction > 0:
        n_recon = int(round(train_sub_split_fraction * n_train))
        for sid in train_ids[:n_recon]:
            assignments[sid] = SplitAssignment("train", "recon_train")
        for sid in train_ids[n_recon:]:
            assignments[sid] = SplitAssignment("train", "classifier_train")
    else:
        for sid in train_ids:
            assignments[sid] = SplitAssignment("train")
    for sid in val_ids:
        assignments[sid] = SplitAssignment("validation")
    for sid in test_ids:
        assignments[sid] = SplitAssignment("test")
    return assignments


def dichotomize_age(
    records: list[SubjectRecord],
    assignments: dict[str, SplitAssignment] | None = None,
    split: str | None = None,
) -> SubgroupPartition:
    """Split subjects into two groups at the median age of the supplied set.

    Subjects exactly at the median land in the low group (labels are
    ``<=M`` / ``>M``). When both ``assignments`` and ``split`` are given the
    median and groups are restricted to subjects in that split. Subjects with
    unknown age are excluded. A partition where one side is empty (e.g. all
    ages tied) is flagged degenerate.
    """
    pool = records
    if assignments is not None and split is not None:
        pool = [
            r for r in records
            if r.subject_id in assignments and assignments[r.subject_id].split == split
        ]
    known = [r for r in pool if r.age_years is not None]
    if not known:
        raise ValueError("no subjects with known age")
    median = float(np.median([r.age_years for r in known]))
    low = {r.subject_id for r in known if r.age_years <= median}
    high = {r.subject_id for r in known if r.age_years > median}
    label = f"{median:g}"
    part = SubgroupPartition(
        attribute="age",
        groups={f"<={label}": low, f">{label}": high},
        threshold=median,
        degenerate=(len(low) == 0 or len(high) == 0),
        excluded={r.subject_id for r in pool if r.age_years is None},
    )
    part.validate()
    return part


def partition_by_value(records: list[SubjectRecord], attribute: str) -> SubgroupPartition:
    """Partition subjects by the raw value of a categorical attribute.

    Subjects with a missing value are excluded (kept for other attributes).
    """
    groups: dict[str, set[str]] = {}
    excluded: set[str] = set()
    for r in records:
        val = r.attribute(attribute)
        if val is None:
            excluded.add(r.subject_id)
            continue
        groups.setdefault(str(val), set()).add(r.subject_id)
    part = SubgroupPartition(
        attribute=attribute,
        groups=groups,
        degenerate=(len(groups) < 2),
        excluded=excluded,
    )
    part.validate()
    return part


def make_partition(records: list[SubjectRecord], attribute: str) -> SubgroupPartition:
    """Age is dichotomized at the median; sex/race group by value."""
    if attribute == "age":
        return dichotomize_age(records)
    return partition_by_value(records, attribute)


def aggregate_slice_scores(scores: list[float]) -> float:
    """Median of per-slice scores (robust patient-level aggregate).

    Even-length inputs return the mean of the two central values.
    """
    if len(scores) == 0:
        raise ValueError("cannot aggregate an empty score list")
    return float(np.median(np.asarray(scores, dtype=np.float64)))


def discover_images(
    records: list[SubjectRecord], image_ids: list[str]
) -> list[SubjectRecord]:
    """Bind image ids to records: an image belongs to a subject when named
    ``<subject_id>`` or ``<subject_id>_<slice>``."""
    by_subject: dict[str, list[str]] = {r.subject_id: [] for r in records}
    for img_id in image_ids:
        if img_id in by_subject:
            by_subject[img_id].append(img_id)
            continue
        stem, _, _ = img_id.rpartition("_")
        if stem in by_subject:
            by_subject[stem].append(img_id)
    out = []
    for r in records:
        refs = tuple(sorted(by_subject[r.subject_id]))
        if not refs:
            warnings.warn(f"subject {r.subject_id}: no images found", stacklevel=2)
        out.append(
            SubjectRecord(
                subject_id=r.subject_id,
                sex=r.sex,
                age_years=r.age_years,
                race=r.race,
                labels=dict(r.labels),
                image_refs=refs,
                mask_ref=r.mask_ref,
            )
        )
    return out
