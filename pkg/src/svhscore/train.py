"""Training orchestration for the masking, detection and scoring models."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace

from .dataset import ingest_dataset
from .detection import (DETECTOR_SHIFT, DETECTOR_TRAIN, TRAINED_DETECTOR, BBox, DetectorSpec,
                        fit_priors, train_detector)
from .imaging import LimbKind, load_gray, load_mask
from .joints import TASKS, JointClass, default_scale
from .nn import TrainConfig
from .ordinal import (PRETEXT_TRAIN, SCORER_TRAIN, ScorerSpec, build_scorer, pretrain_trunk,
                      train_scorer)
from .pipeline import (LIMB_TYPES, crop_training_set, detection_training_set, detector_tag,
                       limb_example, mask_training_set, noise_mask_samples, norm_box, save_model,
                       scorer_tag, unet_tag)
from .unet import UNET_TRAIN, UNetSpec, train_unet

log = logging.getLogger(__name__)


@dataclass
class TrainPlan:
    """Hyper-parameters for every model family; CLI config keys map onto these."""
    seed: int = 42
    unet_size: int = 64
    unet: TrainConfig = field(default_factory=lambda: replace(UNET_TRAIN))
    mask_min_iou: float = 0.95
    unet_negatives: int = 12
    detector: TrainConfig = field(default_factory=lambda: replace(DETECTOR_TRAIN))
    detector_shift: int = DETECTOR_SHIFT
    pretext: TrainConfig = field(default_factory=lambda: replace(PRETEXT_TRAIN))
    scorer: TrainConfig = field(default_factory=lambda: replace(SCORER_TRAIN))

    def seeded(self, seed: int) -> "TrainPlan":
        return replace(self, seed=seed, unet=replace(self.unet, seed=seed),
                       detector=replace(self.detector, seed=seed),
                       pretext=replace(self.pretext, seed=seed),
                       scorer=replace(self.scorer, seed=seed))


def load_examples(data_dir: str):
    """Limb examples from a dataset directory.

    Layout: ``images/`` and ``scores.csv`` (required); ``masks/`` truth masks
    and ``boxes.csv`` truth joint boxes (both optional, as written by
    ``synth``). Returns (examples, warnings).
    """
    records, warnings = ingest_dataset(os.path.join(data_dir, "images"),
                                       os.path.join(data_dir, "scores.csv"))
    boxes: dict[str, list] = {}
    box_csv = os.path.join(data_dir, "boxes.csv")
    if os.path.exists(box_csv):
        with open(box_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                box = tuple(float(row[k]) for k in ("x0", "y0", "x1", "y1"))
                boxes.setdefault(row["image_id"], []).append(
                    (box, row["joint"], JointClass(row["class"])))
    examples = []
    for rec in records:
        img = load_gray(rec.image_path)
        mpath = os.path.join(data_dir, "masks", rec.image_id + ".png")
        mask = load_mask(mpath) if os.path.exists(mpath) else None
        joints = []
        for box, name, cls in boxes.get(rec.image_id, []):
            scores = {t: rec.scores(t).get(name) for t in TASKS}
            if any(v is None for v in scores.values()):
                continue
            joints.append((box, name, cls, scores))
        examples.append(limb_example(rec.image_id, img, rec.limb, mask, joints))
    return examples, warnings


def by_limb_type(examples) -> dict[str, list]:
    out: dict[str, list] = {lt: [] for lt in LIMB_TYPES}
    for ex in examples:
        out[ex.limb.limb_type].append(ex)
    return {k: v for k, v in out.items() if v}


def train_unets(examples, out_dir: str, plan: TrainPlan = TrainPlan()) -> dict:
    results = {}
    for lt, exs in by_limb_type(examples).items():
        samples = mask_training_set(exs, plan.unet_size, plan.mask_min_iou)
        log.info("unet-%s: %d of %d masks pass the IoU filter", lt, len(samples), len(exs))
        samples += noise_mask_samples(plan.unet_negatives, plan.unet_size, exs[0].limb, plan.seed)
        net, res = train_unet(samples, plan.unet, UNetSpec(input_size=plan.unet_size))
        results[unet_tag(lt)] = (net, res, save_model(out_dir, unet_tag(lt), net, plan.seed))
    return results


def detector_spec_for(examples, base: DetectorSpec = TRAINED_DETECTOR) -> DetectorSpec:
    boxes = [norm_box(b, ex.prep.gray.shape) for ex in examples for b, *_ in ex.boxes]
    return replace(base, priors=fit_priors(boxes, base.anchors))


def train_detectors(examples, out_dir: str, plan: TrainPlan = TrainPlan()) -> dict:
    results = {}
    for lt, exs in by_limb_type(examples).items():
        spec = detector_spec_for(exs)
        samples = detection_training_set(exs, spec.input_size)
        net, res = train_detector(samples, plan.detector, spec, max_shift=plan.detector_shift)
        results[detector_tag(lt)] = (net, res, save_model(out_dir, detector_tag(lt), net, plan.seed))
    return results


def train_scorers(examples, out_dir: str, plan: TrainPlan = TrainPlan(),
                  spec: ScorerSpec = ScorerSpec()) -> dict:
    """One pretext-trained frozen trunk per limb type, shared by its two task heads."""
    results = {}
    for lt, exs in by_limb_type(examples).items():
        crops, classes, scores = crop_training_set(exs)
        trunk, _ = pretrain_trunk(crops, classes, 2, spec, plan.pretext)
        for task in TASKS:
            net = build_scorer(spec, default_scale(task, lt), trunk, plan.seed)
            res = train_scorer(net, crops, scores[task], plan.scorer)
            tag = scorer_tag(lt, task)
            results[tag] = (net, res, save_model(out_dir, tag, net, plan.seed))
    return results


def truth_boxes(ex) -> list[tuple[BBox, int]]:
    return [(norm_box(b, ex.prep.gray.shape), c) for b, _, c, _ in ex.boxes]


def limb_of(image_id: str) -> LimbKind:
    return LimbKind.parse(image_id.rsplit("-", 1)[-1])


__all__ = ["TrainPlan", "load_examples", "train_unets", "train_detectors", "train_scorers",
           "by_limb_type", "truth_boxes", "limb_of"]
