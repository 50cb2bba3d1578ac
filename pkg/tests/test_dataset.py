import csv

import numpy as np
import pytest

from svhscore.dataset import (HEADER, TOTAL_COLUMNS, DatasetError, DatasetRecord, SplitConfig,
                              SplitUnit, ingest_dataset, read_scores_csv, split_dataset,
                              write_scores_csv)
from svhscore.imaging import LimbKind, save_gray
from svhscore.joints import joint_names


def _record(pid, limb, base=0):
    names = joint_names(limb.limb_type)
    return DatasetRecord(pid, limb, None, {n: (base + i) % 5 for i, n in enumerate(names)},
                         {n: (base + 2 * i) % 6 for i, n in enumerate(names)})


def _fixture(tmp_path, patients=("A", "B"), images=True):
    recs = [_record(p, limb, i) for i, p in enumerate(patients) for limb in LimbKind]
    write_scores_csv(tmp_path / "scores.csv", recs)
    (tmp_path / "images").mkdir(exist_ok=True)
    if images:
        for r in recs:
            save_gray(tmp_path / "images" / f"{r.image_id}.png", np.zeros((4, 4), np.uint8))
    return recs


def test_two_patients_four_limbs(tmp_path):
    recs = _fixture(tmp_path)
    got, warnings = ingest_dataset(tmp_path / "images", tmp_path / "scores.csv")
    assert len(got) == 8 and warnings == []
    for a, b in zip(recs, got):
        assert (a.patient_id, a.limb, a.narrowing, a.erosion) == (b.patient_id, b.limb, b.narrowing, b.erosion)
        assert b.image_path.endswith(f"{b.image_id}.png")


def test_missing_image_skipped_with_warning(tmp_path):
    _fixture(tmp_path)
    (tmp_path / "images" / "A-LF.png").unlink()
    got, warnings = ingest_dataset(tmp_path / "images", tmp_path / "scores.csv")
    assert len(got) == 7 and any("A-LF" in w for w in warnings)


def _rewrite(path, fn):
    rows = list(csv.reader(open(path)))
    fn(rows)
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def test_out_of_range_score_names_row_and_column(tmp_path):
    _fixture(tmp_path)
    col = (HEADER + TOTAL_COLUMNS).index("mcp2_narrowing")
    _rewrite(tmp_path / "scores.csv", lambda rows: rows[1].__setitem__(col, "99"))
    with pytest.raises(DatasetError, match=r"row 2, column mcp2_narrowing.*99"):
        read_scores_csv(tmp_path / "scores.csv")


def test_duplicate_and_malformed(tmp_path):
    _fixture(tmp_path)
    _rewrite(tmp_path / "scores.csv", lambda rows: rows.append(rows[1]))
    with pytest.raises(DatasetError, match="duplicate"):
        read_scores_csv(tmp_path / "scores.csv")
    (tmp_path / "bad.csv").write_text("patient,limb\nA,LH\n")
    with pytest.raises(DatasetError, match="header"):
        read_scores_csv(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DatasetError):
        read_scores_csv(tmp_path / "empty.csv")


def test_total_mismatch_warns(tmp_path):
    _fixture(tmp_path)
    col = (HEADER + TOTAL_COLUMNS).index("overall_total")
    _rewrite(tmp_path / "scores.csv", lambda rows: rows[1].__setitem__(col, "999"))
    _, warnings = read_scores_csv(tmp_path / "scores.csv")
    assert len(warnings) == 1 and "overall_total" in warnings[0]


def test_foreign_joint_rejected(tmp_path):
    _fixture(tmp_path)
    col = HEADER.index("mtp1_erosion")
    # row 1 is a hand: a foot joint score is invalid there
    _rewrite(tmp_path / "scores.csv", lambda rows: rows[1].__setitem__(col, "1"))
    with pytest.raises(DatasetError, match="not scored"):
        read_scores_csv(tmp_path / "scores.csv")


def _patients(n):
    return [DatasetRecord(f"P{i:03d}", limb, None) for i in range(n) for limb in LimbKind]


def test_split_81_9_10_without_leakage():
    recs = _patients(100)
    tr, va, te = split_dataset(recs)
    pats = [{r.patient_id for r in part} for part in (tr, va, te)]
    assert [len(p) for p in pats] == [81, 9, 10]
    assert not (pats[0] & pats[1] or pats[0] & pats[2] or pats[1] & pats[2])
    assert len(tr) + len(va) + len(te) == 400
    again = split_dataset(recs)
    assert [[r.image_id for r in p] for p in (tr, va, te)] == [[r.image_id for r in p] for p in again]


def test_split_by_image_and_errors():
    recs = _patients(25)
    tr, va, te = split_dataset(recs, SplitConfig(unit=SplitUnit.ByImage))
    assert (len(tr), len(va), len(te)) == (81, 9, 10)
    with pytest.raises(DatasetError):
        split_dataset(_patients(5))
    with pytest.raises(ValueError):
        SplitConfig(test_fraction=1.0)
