"""Synthetic hand/foot radiographs with ground truth for every stage.

Limbs are drawn on a 1500 x 1200 canvas (the pipeline's working size) as a
soft-tissue silhouette containing bright bones. Scored joints are pairs of
bone ends with condyle blocks: the gap between them shrinks as the narrowing
score rises, and semicircular notches bitten out of the block margins grow
with the erosion score. Unscored interphalangeal joints are plain shaft gaps
without condyles. Backgrounds carry optional speckle noise.

Right limbs put digit 1 (thumb / great toe) at the smallest x; left limbs are
mirror images.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .imaging import LimbKind, save_gray, save_mask
from .joints import JointClass, TASKS, default_scale, joint_name, joint_names

RENDER_VERSION = 1


@dataclass
class SynthConfig:
    seed: int = 42
    n_hands: int = 8
    n_feet: int = 8
    height: int = 1500
    width: int = 1200
    noise_density: float = 0.0005
    zero_fraction: float = 0.4
    gap_max: float = 30.0
    gap_step: float = 6.0
    notch_hand: tuple[float, float] = (4.0, 3.5)
    notch_foot: tuple[float, float] = (3.0, 2.0)
    jitter: float = 40.0

    def __post_init__(self):
        if self.n_hands < 0 or self.n_feet < 0 or self.n_hands + self.n_feet < 1:
            raise ValueError("sample counts must be non-negative with at least one sample")
        if self.noise_density < 0 or self.gap_max <= 0 or self.gap_step <= 0:
            raise ValueError("rendering parameters must be positive")
        if self.gap_max - 4 * self.gap_step <= 0:
            raise ValueError("gap_max too small for the narrowing scale")


@dataclass
class SynthJoint:
    name: str
    joint_class: JointClass
    digit: int
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 in canvas pixels
    narrowing: int
    erosion: int
    gap_px: float
    notch_px: float

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return (x0 + x1) / 2, (y0 + y1) / 2


@dataclass
class SynthSample:
    image_id: str
    patient_id: str
    limb: LimbKind
    image: np.ndarray
    mask: np.ndarray
    joints: list[SynthJoint] = field(default_factory=list)

    def scores(self, task: str) -> dict[str, int]:
        return {j.name: getattr(j, task) for j in self.joints}


def gap_width(narrowing: int, cfg: SynthConfig) -> float:
    return cfg.gap_max - cfg.gap_step * narrowing


def notch_radius(erosion: int, limb_type: str, cfg: SynthConfig) -> float:
    if erosion == 0:
        return 0.0
    base, step = cfg.notch_hand if limb_type == "hand" else cfg.notch_foot
    return base + step * erosion


class _Canvas:
    def __init__(self, h: int, w: int):
        self.h, self.w = h, w
        self.tissue = np.zeros((h, w), dtype=bool)
        self.bone = np.zeros((h, w), dtype=bool)

    def _window(self, x0, y0, x1, y1):
        c0 = max(0, int(np.floor(x0)))
        r0 = max(0, int(np.floor(y0)))
        c1 = min(self.w, int(np.ceil(x1)) + 1)
        r1 = min(self.h, int(np.ceil(y1)) + 1)
        if c0 >= c1 or r0 >= r1:
            return None
        ys = np.arange(r0, r1, dtype=np.float64)[:, None]
        xs = np.arange(c0, c1, dtype=np.float64)[None, :]
        return (slice(r0, r1), slice(c0, c1)), ys, xs

    def capsule(self, layer, ax, ay, bx, by, r, value=True):
        win = self._window(min(ax, bx) - r, min(ay, by) - r, max(ax, bx) + r, max(ay, by) + r)
        if win is None:
            return
        sl, ys, xs = win
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / L2, 0, 1) if L2 > 0 else 0.0
        d2 = (xs - ax - t * dx) ** 2 + (ys - ay - t * dy) ** 2
        self._set(layer, sl, d2 <= r * r, value)

    def rect(self, layer, x0, y0, x1, y1, value=True):
        win = self._window(x0, y0, x1, y1)
        if win is None:
            return
        sl, ys, xs = win
        inside = (ys >= y0) & (ys <= y1) & (xs >= x0) & (xs <= x1)
        self._set(layer, sl, inside, value)

    def rounded_rect(self, layer, x0, y0, x1, y1, r):
        win = self._window(x0, y0, x1, y1)
        if win is None:
            return
        sl, ys, xs = win
        qx = np.maximum(np.maximum(x0 + r - xs, xs - (x1 - r)), 0)
        qy = np.maximum(np.maximum(y0 + r - ys, ys - (y1 - r)), 0)
        self._set(layer, sl, qx * qx + qy * qy <= r * r, True)

    def disk(self, layer, cx, cy, r, value=True):
        win = self._window(cx - r, cy - r, cx + r, cy + r)
        if win is None:
            return
        sl, ys, xs = win
        self._set(layer, sl, (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r, value)

    def _set(self, layer, sl, region, value):
        target = getattr(self, layer)
        if value:
            target[sl] |= region
        else:
            target[sl] &= ~region


# Canonical right-limb layouts. Each digit: x centre, tissue half-width,
# shaft half-width, condyle half-width, then joints bottom-to-top as
# (y, kind) where kind is a scored JointClass or None for an unscored gap,
# and finally the tip y.
_HAND = [
    (250, 58, 26, 34, [(790, JointClass.MCP), (540, JointClass.PIP)], 400),
    (420, 56, 24, 32, [(720, JointClass.MCP), (470, JointClass.PIP), (320, None)], 210),
    (580, 56, 24, 32, [(700, JointClass.MCP), (445, JointClass.PIP), (295, None)], 180),
    (740, 56, 24, 32, [(715, JointClass.MCP), (460, JointClass.PIP), (310, None)], 195),
    (900, 52, 22, 30, [(745, JointClass.MCP), (500, JointClass.PIP), (360, None)], 255),
]
_FOOT = [
    (330, 75, 34, 44, [(760, JointClass.MTP), (520, JointClass.PIP)], 380),
    (510, 48, 22, 30, [(740, JointClass.MTP), (600, None)], 500),
    (650, 48, 22, 30, [(760, JointClass.MTP), (625, None)], 525),
    (790, 46, 21, 29, [(790, JointClass.MTP), (660, None)], 565),
    (930, 44, 20, 28, [(830, JointClass.MTP), (705, None)], 610),
]
_CONDYLE_H = 40.0
_PLAIN_GAP = 14.0


def _sample_score(rng, classes: int, zero_fraction: float) -> int:
    if rng.random() < zero_fraction:
        return 0
    return int(rng.integers(1, classes))


def render_limb(limb: LimbKind, rng: np.random.Generator, cfg: SynthConfig):
    """Render one limb; returns ``(image, mask, joints)``."""
    h, w = cfg.height, cfg.width
    sy, sx = h / 1500.0, w / 1200.0
    cv = _Canvas(h, w)
    is_hand = limb.is_hand
    layout = _HAND if is_hand else _FOOT
    limb_type = limb.limb_type
    shift_x = rng.uniform(-cfg.jitter, cfg.jitter)
    shift_y = rng.uniform(-cfg.jitter, cfg.jitter)

    def X(x):
        x = (x + shift_x) * sx
        return (w - 1) - x if limb.is_left else x

    def Y(y):
        return (y + shift_y) * sy

    if is_hand:
        x0, x1 = sorted((X(350), X(960)))
        cv.rounded_rect("tissue", x0, Y(660), x1, Y(1180), 70 * sx)
        x0, x1 = sorted((X(430), X(880)))
        cv.rect("tissue", x0, Y(1000), x1, h + 10)
        cv.capsule("tissue", X(250), Y(950), X(420), Y(1080), 60 * sx)
    else:
        x0, x1 = sorted((X(235), X(1000)))
        cv.rounded_rect("tissue", x0, Y(700), x1, h + 200, 90 * sx)

    joints: list[SynthJoint] = []
    for digit, (cx, tw, hb, hh, jlist, tip) in enumerate(layout, start=1):
        ylen = rng.uniform(-12, 12, size=len(jlist))
        xj = X(cx + rng.uniform(-8, 8))
        tip_y = Y(tip + rng.uniform(-10, 10))
        base_y = Y(jlist[0][0] + 260)
        cv.capsule("tissue", xj, base_y, xj, tip_y, tw * sx)

        # bone ends: list of (y_bottom_of_upper_bone, y_top_of_lower_bone)
        bounds = []
        for (jy, kind), dj in zip(jlist, ylen):
            yj = Y(jy + dj)
            if kind is None:
                g = _PLAIN_GAP * sy
                bounds.append((yj, g, None, 0, 0, 0.0))
                continue
            cls = kind
            C_n = default_scale("narrowing", limb_type).classes
            C_e = default_scale("erosion", limb_type).classes
            n = _sample_score(rng, C_n, cfg.zero_fraction)
            e = _sample_score(rng, C_e, cfg.zero_fraction)
            g = gap_width(n, cfg) * sy
            r = notch_radius(e, limb_type, cfg) * sx
            bounds.append((yj, g, cls, n, e, r))

        # shafts between consecutive joints
        stops = [base_y + 40 * sy] + [b[0] for b in bounds] + [tip_y + 22 * sy]
        for k in range(len(stops) - 1):
            y_lo, y_hi = stops[k], stops[k + 1]   # y_lo is lower on screen (larger)
            if k > 0:
                y_lo -= bounds[k - 1][1] / 2
            if k < len(bounds):
                y_hi += bounds[k][1] / 2
            cv.rect("bone", xj - hb * sx, y_hi, xj + hb * sx, y_lo)

        for yj, g, cls, n, e, r in bounds:
            if cls is None:
                continue
            hhx = hh * sx
            ch = _CONDYLE_H * sy
            upper = (yj - g / 2 - ch, yj - g / 2)
            lower = (yj + g / 2, yj + g / 2 + ch)
            for ya, yb in (upper, lower):
                cv.rect("bone", xj - hhx, ya, xj + hhx, yb)
            # re-open the joint space in case shafts overlap it
            cv.rect("bone", xj - hhx - 1, yj - g / 2 + 0.5, xj + hhx + 1, yj + g / 2 - 0.5, value=False)
            if r > 0:
                for ya, yb in (upper, lower):
                    ym = (ya + yb) / 2
                    cv.disk("bone", xj - hhx, ym, r, value=False)
                    cv.disk("bone", xj + hhx, ym, r, value=False)
            bw = hhx + 18 * sx
            bh = ch + 20 * sy + (cfg.gap_max * sy) / 2
            joints.append(SynthJoint(
                name=joint_name(cls, digit), joint_class=cls, digit=digit,
                box=(xj - bw, yj - bh, xj + bw, yj + bh),
                narrowing=n, erosion=e, gap_px=g, notch_px=r))

    bone = cv.bone & cv.tissue
    gain = rng.uniform(0.75, 1.2)
    bg = float(rng.integers(4, 16))
    img = np.full((h, w), bg)
    noise = rng.normal(0.0, 1.0, size=(h, w))
    tissue_level = 90.0 * gain
    bone_level = 185.0 * gain
    img = np.where(cv.tissue, tissue_level + 14.0 * noise, img)
    img = np.where(bone, bone_level + 14.0 * noise, img)
    _speckle(img, cv.tissue, rng, cfg.noise_density)
    image = np.rint(img).clip(0, 255).astype(np.uint8)
    joints.sort(key=lambda j: j.name)
    return image, cv.tissue.copy(), joints


def _speckle(img, limb_mask, rng, density):
    h, w = img.shape
    n = int(rng.poisson(density * h * w)) if density > 0 else 0
    if n == 0:
        return
    ys = rng.integers(0, h, n)
    xs = rng.integers(0, w, n)
    radii = rng.integers(1, 4, n)
    vals = rng.uniform(30, 200, n)
    for y, x, r, v in zip(ys, xs, radii, vals):
        r0, r1 = max(0, y - r), min(h, y + r + 1)
        c0, c1 = max(0, x - r), min(w, x + r + 1)
        yy, xx = np.ogrid[r0:r1, c0:c1]
        disk = (yy - y) ** 2 + (xx - x) ** 2 <= r * r
        region = img[r0:r1, c0:c1]
        region[disk & ~limb_mask[r0:r1, c0:c1]] = v


def _plan(cfg: SynthConfig) -> list[tuple[str, LimbKind]]:
    plan = []
    for i in range(cfg.n_hands):
        plan.append((f"P{i // 2:04d}", LimbKind.HandRight if i % 2 == 0 else LimbKind.HandLeft))
    for i in range(cfg.n_feet):
        plan.append((f"P{i // 2:04d}", LimbKind.FootRight if i % 2 == 0 else LimbKind.FootLeft))
    return plan


def render_sample(cfg: SynthConfig, index: int) -> SynthSample:
    """Render sample ``index`` alone; identical to the one in the full set."""
    plan = _plan(cfg)
    patient, limb = plan[index]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, RENDER_VERSION, index]))
    image, mask, joints = render_limb(limb, rng, cfg)
    return SynthSample(f"{patient}-{limb.value}", patient, limb, image, mask, joints)


def iter_synthetic(cfg: SynthConfig) -> Iterator[SynthSample]:
    for i in range(len(_plan(cfg))):
        yield render_sample(cfg, i)


def generate_synthetic(cfg: SynthConfig) -> list[SynthSample]:
    return list(iter_synthetic(cfg))


def write_dataset(samples, out_dir: str, cfg: SynthConfig | None = None) -> None:
    """Write images, truth masks, the scores CSV and a truth-box CSV."""
    from .dataset import write_scores_csv, DatasetRecord

    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    records = []
    with open(os.path.join(out_dir, "boxes.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["image_id", "joint", "class", "digit", "x0", "y0", "x1", "y1",
                     "narrowing", "erosion"])
        for s in samples:
            path = os.path.join(img_dir, s.image_id + ".png")
            save_gray(path, s.image)
            save_mask(os.path.join(mask_dir, s.image_id + ".png"), s.mask)
            for j in s.joints:
                wr.writerow([s.image_id, j.name, j.joint_class.value, j.digit,
                             *(f"{v:.2f}" for v in j.box), j.narrowing, j.erosion])
            records.append(DatasetRecord(
                s.patient_id, s.limb, path,
                {n: s.scores("narrowing")[n] for n in joint_names(s.limb.limb_type)},
                {n: s.scores("erosion")[n] for n in joint_names(s.limb.limb_type)}))
    write_scores_csv(os.path.join(out_dir, "scores.csv"), records)
    if cfg is not None:
        meta = {"render_version": RENDER_VERSION, "config": asdict(cfg)}
        with open(os.path.join(out_dir, "synth.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


__all__ = ["SynthConfig", "SynthJoint", "SynthSample", "generate_synthetic",
           "iter_synthetic", "render_sample", "write_dataset", "gap_width",
           "notch_radius", "TASKS"]
