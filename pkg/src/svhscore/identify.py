"""Assign anatomical identity (digit, joint class) to detected joints."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detection import Detection
from .imaging import LimbKind
from .joints import LAYOUT, JointClass, joint_name, joints_per_limb


@dataclass(frozen=True)
class JointIdentity:
    digit: int | None             # 1 = thumb / great toe; None = unidentified
    joint_class: JointClass | None

    @property
    def identified(self) -> bool:
        return self.digit is not None

    @property
    def name(self) -> str | None:
        return joint_name(self.joint_class, self.digit) if self.identified else None


UNIDENTIFIED = JointIdentity(None, None)


def two_means_1d(values) -> np.ndarray:
    """Exact 1-D 2-means: the contiguous split of the sorted values with the
    least within-cluster sum of squares. Returns labels (0 = smaller mean)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return np.zeros(v.size, dtype=np.int64)
    order = np.argsort(v, kind="stable")
    s = v[order]
    best, cut = np.inf, 1
    for k in range(1, s.size):
        a, b = s[:k], s[k:]
        sse = ((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()
        if sse < best - 1e-12:
            best, cut = sse, k
    labels = np.empty(v.size, dtype=np.int64)
    labels[order[:cut]] = 0
    labels[order[cut:]] = 1
    return labels


def _by_digit(dets: list[Detection], limb: LimbKind) -> list[Detection]:
    # thumb / great toe sits at small x on a right limb as imaged
    return sorted(dets, key=lambda d: (-d.cx if limb.is_left else d.cx, d.cy))


def _canonical(dets: list[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (d.cy, d.cx, d.joint_class.value, -d.confidence))


def _assign(groups: dict[JointClass, list[Detection]], limb: LimbKind):
    out = []
    for cls in sorted(groups, key=lambda c: c.value):
        for digit, d in enumerate(_by_digit(groups[cls], limb), start=1):
            out.append((d, JointIdentity(digit, cls)))
    return out


def identify_with_path(dets: list[Detection], limb: LimbKind) -> tuple[list, str]:
    """Identities plus the path taken: "primary", "backup" or "shortfall".

    A backup attempt whose rows do not split into the expected layout leaves
    every joint unidentified and reports "backup-failed".
    """
    k = joints_per_limb(limb)
    layout = LAYOUT[limb.limb_type]
    dets = list(dets)
    if len(dets) < k:
        return [(d, UNIDENTIFIED) for d in _canonical(dets)], "shortfall"
    if len(dets) > k:
        dets = sorted(dets, key=lambda d: -d.confidence)[:k]

    groups: dict[JointClass, list[Detection]] = {c: [] for c in layout}
    for d in dets:
        groups.setdefault(d.joint_class, []).append(d)
    if all(len(groups[c]) == n for c, n in layout.items()) and len(groups) == len(layout):
        return _assign(groups, limb), "primary"

    ordered = _canonical(dets)
    if limb.is_hand:
        labels = two_means_1d([d.cy for d in ordered])
        pip = [d for d, l in zip(ordered, labels) if l == 0]
        rest = [d for d, l in zip(ordered, labels) if l == 1]
        if len(pip) != layout[JointClass.PIP]:
            return [(d, UNIDENTIFIED) for d in ordered], "backup-failed"
        return _assign({JointClass.PIP: pip, JointClass.MCP: rest}, limb), "backup"
    pip = ordered[:1]
    return _assign({JointClass.PIP: pip, JointClass.MTP: ordered[1:]}, limb), "backup"


def identify_joints(dets: list[Detection], limb: LimbKind) -> list[tuple[Detection, JointIdentity]]:
    return identify_with_path(dets, limb)[0]
