"""Score-sheet CSV I/O, dataset ingestion and deterministic splits.

Score CSV schema (one row per patient limb)::

    patient_id,limb,mcp1_narrowing,mcp1_erosion,...,pip5_erosion[,total_narrowing,total_erosion,overall_total]

``limb`` is one of LH, RH, LF, RF. Joint columns cover mcp1-5, mtp1-5 and
pip1-5; a row fills only the joints of its limb type (hands: mcp1-5 and
pip1-5, feet: mtp1-5 and pip1) and leaves the rest empty. An empty cell in a
joint of the row's own limb type means "not scored". The three total columns
are optional; when present they are checked against the per-joint sums.

Images are matched by file name ``{patient_id}-{limb}.png`` (or ``.pgm``).
"""
from __future__ import annotations

import csv
import enum
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .imaging import LimbKind
from .joints import ALL_JOINT_COLUMNS, TASKS, default_scale, joint_names

log = logging.getLogger(__name__)

SCORE_COLUMNS = [f"{j}_{t}" for j in ALL_JOINT_COLUMNS for t in TASKS]
HEADER = ["patient_id", "limb", *SCORE_COLUMNS]
TOTAL_COLUMNS = ["total_narrowing", "total_erosion", "overall_total"]


class DatasetError(ValueError):
    pass


@dataclass
class DatasetRecord:
    patient_id: str
    limb: LimbKind
    image_path: str | None
    narrowing: dict[str, int | None] = field(default_factory=dict)
    erosion: dict[str, int | None] = field(default_factory=dict)

    @property
    def image_id(self) -> str:
        return f"{self.patient_id}-{self.limb.value}"

    def scores(self, task: str) -> dict[str, int | None]:
        return getattr(self, task)

    def total(self, task: str) -> int:
        return sum(v for v in self.scores(task).values() if v is not None)


def score_row(rec: DatasetRecord, with_totals: bool = True) -> list[str]:
    names = set(joint_names(rec.limb.limb_type))
    row = [rec.patient_id, rec.limb.value]
    for j in ALL_JOINT_COLUMNS:
        for t in TASKS:
            v = rec.scores(t).get(j) if j in names else None
            row.append("" if v is None else str(v))
    if with_totals:
        n, e = rec.total("narrowing"), rec.total("erosion")
        row += [str(n), str(e), str(n + e)]
    return row


def write_scores_csv(path: str, records, with_totals: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HEADER + (TOTAL_COLUMNS if with_totals else []))
        for rec in records:
            wr.writerow(score_row(rec, with_totals))


def _find_image(image_dir: str, image_id: str) -> str | None:
    for ext in (".png", ".pgm"):
        p = os.path.join(image_dir, image_id + ext)
        if os.path.exists(p):
            return p
    return None


def read_scores_csv(path: str) -> tuple[list[DatasetRecord], list[str]]:
    """Parse and validate a score CSV; image paths are left unset.

    Returns the records and a list of warnings (total mismatches).
    """
    warnings: list[str] = []
    records: list[DatasetRecord] = []
    seen: set[tuple[str, LimbKind]] = set()
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise DatasetError(f"{path}: empty CSV") from None
        has_totals = header == HEADER + TOTAL_COLUMNS
        if header != HEADER and not has_totals:
            raise DatasetError(f"{path}: header does not match the score schema")
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
            cells = dict(zip(header, row))
            try:
                limb = LimbKind.parse(cells["limb"])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {lineno}: {exc}") from None
            pid = cells["patient_id"].strip()
            if not pid:
                raise DatasetError(f"{path}: row {lineno}: empty patient_id")
            if (pid, limb) in seen:
                raise DatasetError(f"{path}: row {lineno}: duplicate record {pid}-{limb.value}")
            seen.add((pid, limb))
            rec = DatasetRecord(pid, limb, None)
            own = set(joint_names(limb.limb_type))
            for col in SCORE_COLUMNS:
                joint, task = col.rsplit("_", 1)
                raw = cells[col].strip()
                if joint not in own:
                    if raw:
                        raise DatasetError(f"{path}: row {lineno}, column {col}: joint not scored on {limb.value}")
                    continue
                if raw == "":
                    rec.scores(task)[joint] = None
                    continue
                try:
                    v = int(raw)
                except ValueError:
                    raise DatasetError(f"{path}: row {lineno}, column {col}: not an integer: {raw!r}") from None
                scale = default_scale(task, limb.limb_type)
                if not 0 <= v < scale.classes:
                    raise DatasetError(
                        f"{path}: row {lineno}, column {col}: score {v} outside 0..{scale.classes - 1}")
                rec.scores(task)[joint] = v
            if has_totals:
                warnings.extend(_check_totals(rec, cells, lineno))
            records.append(rec)
    return records, warnings


def _check_totals(rec: DatasetRecord, cells: dict, lineno: int) -> list[str]:
    out = []
    expect = {"total_narrowing": rec.total("narrowing"), "total_erosion": rec.total("erosion")}
    expect["overall_total"] = expect["total_narrowing"] + expect["total_erosion"]
    for col, want in expect.items():
        raw = cells[col].strip()
        if raw and raw != str(want):
            out.append(f"row {lineno}: {col}={raw} but joint scores sum to {want}")
    return out


def ingest_dataset(image_dir: str, scores_csv: str) -> tuple[list[DatasetRecord], list[str]]:
    """Join score rows with image files.

    Rows without a matching image are skipped and reported in the returned
    warning list, as are total-column mismatches.
    """
    records, warnings = read_scores_csv(scores_csv)
    matched = []
    for rec in records:
        path = _find_image(image_dir, rec.image_id)
        if path is None:
            warnings.append(f"no image for {rec.image_id}; record skipped")
            continue
        rec.image_path = path
        matched.append(rec)
    for w in warnings:
        log.warning(w)
    return matched, warnings


class SplitUnit(enum.Enum):
    ByPatient = "patient"
    ByImage = "image"


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.10
    val_fraction: float = 0.10
    seed: int = 42
    unit: SplitUnit = SplitUnit.ByPatient

    def __post_init__(self):
        for f in (self.test_fraction, self.val_fraction):
            if not 0 < f < 1:
                raise ValueError("split fractions must lie in (0, 1)")


def split_units(units: list, cfg: SplitConfig) -> tuple[list, list, list]:
    """Seeded shuffle, then the last ``test_fraction`` to test and the last
    ``val_fraction`` of the remainder to validation (counts floored)."""
    if len(units) < 10:
        raise DatasetError(f"need at least 10 split units, got {len(units)}")
    order = np.random.default_rng(cfg.seed).permutation(len(units))
    shuffled = [units[i] for i in order]
    n_test = int(np.floor(len(units) * cfg.test_fraction))
    rest = shuffled[:len(units) - n_test]
    n_val = int(np.floor(len(rest) * cfg.val_fraction))
    return rest[:len(rest) - n_val], rest[len(rest) - n_val:], shuffled[len(units) - n_test:]


def split_dataset(records: list, cfg: SplitConfig = SplitConfig()):
    """Partition records into (train, val, test).

    ``ByPatient`` keeps every limb of a patient in one partition.
    """
    if cfg.unit is SplitUnit.ByPatient:
        units = sorted({r.patient_id for r in records})
        tr, va, te = (set(p) for p in split_units(units, cfg))
        return ([r for r in records if r.patient_id in tr],
                [r for r in records if r.patient_id in va],
                [r for r in records if r.patient_id in te])
    keys = sorted(range(len(records)), key=lambda i: records[i].image_id)
    tr, va, te = split_units(keys, cfg)
    return ([records[i] for i in sorted(tr)], [records[i] for i in sorted(va)],
            [records[i] for i in sorted(te)])
