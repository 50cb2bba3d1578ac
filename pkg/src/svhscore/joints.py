"""Joint vocabulary: classes, per-limb layouts and score scales."""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .imaging import LimbKind


class JointClass(enum.Enum):
    PIP = "PIP"
    MCP = "MCP"
    MTP = "MTP"


# detector class index -> joint class, per limb type
DETECTOR_CLASSES = {
    "hand": (JointClass.PIP, JointClass.MCP),
    "foot": (JointClass.PIP, JointClass.MTP),
}

# expected count of each joint class per limb type
LAYOUT = {
    "hand": {JointClass.MCP: 5, JointClass.PIP: 5},
    "foot": {JointClass.MTP: 5, JointClass.PIP: 1},
}

TASKS = ("narrowing", "erosion")


def joints_per_limb(limb: LimbKind | str) -> int:
    kind = limb.limb_type if isinstance(limb, LimbKind) else limb
    return sum(LAYOUT[kind].values())


def joint_name(cls: JointClass, digit: int) -> str:
    return f"{cls.value.lower()}{digit}"


def joint_names(limb_type: str) -> list[str]:
    """Scored joints of a limb type, in CSV column order."""
    names = []
    for cls, count in LAYOUT[limb_type].items():
        names.extend(joint_name(cls, d) for d in range(1, count + 1))
    return names


def parse_joint_name(name: str) -> tuple[JointClass, int]:
    return JointClass(name[:-1].upper()), int(name[-1])


@dataclass(frozen=True)
class ScoreScale:
    task: str
    limb_type: str
    classes: int

    def __post_init__(self):
        if self.task not in TASKS or self.limb_type not in LAYOUT:
            raise ValueError(f"unknown scale {self.task}/{self.limb_type}")
        if self.classes < 2:
            raise ValueError("a score scale needs at least two classes")

    @property
    def tag(self) -> str:
        return f"score-{self.limb_type}-{self.task}"

    def check(self, score: int) -> None:
        if not 0 <= score < self.classes:
            raise ValueError(f"{self.task} score {score} outside 0..{self.classes - 1}")


DEFAULT_CLASSES = {
    ("narrowing", "hand"): 5,
    ("narrowing", "foot"): 5,
    ("erosion", "hand"): 6,
    ("erosion", "foot"): 11,
}


def default_scale(task: str, limb_type: str) -> ScoreScale:
    return ScoreScale(task, limb_type, DEFAULT_CLASSES[(task, limb_type)])


ALL_JOINT_COLUMNS = sorted(
    {n for lt in LAYOUT for n in joint_names(lt)},
    key=lambda n: (("mcp", "mtp", "pip").index(n[:-1]), int(n[-1])))
