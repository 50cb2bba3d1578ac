"""End-to-end scoring: preprocess, mask, detect, identify, score, report."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import __version__
from .dataset import DatasetRecord, write_scores_csv
from .detection import (BBox, Detection, Detector, DetectorSpec, build_detector,
                        detect_joints)
from .enhance import clahe
from .identify import JointIdentity, identify_with_path
from .imaging import (LimbKind, PadGeometry, check_gray, crop_limb, load_gray, normalize,
                      pad_geometry, resize_nearest, resize_pad, TARGET_HEIGHT, TARGET_WIDTH)
from .joints import DETECTOR_CLASSES, LAYOUT, TASKS, ScoreScale, joint_names
from .masking import NoLimbFound, apply_mask, extract_mask
from .metrics import JointScore, ScoreSheet, aggregate_totals
from .nn import CheckpointError, load_into, read_checkpoint, save_checkpoint
from .ordinal import Scorer, ScorerSpec, build_scorer, build_trunk, extract_crop, score_batch
from .unet import UNet, UNetSpec, build_unet, predict_mask

log = logging.getLogger(__name__)

LIMB_TYPES = ("hand", "foot")
MASK_COVERAGE = (0.02, 0.90)


# --------------------------------------------------------------------- preprocessing

@dataclass
class Prepared:
    gray: np.ndarray            # resized, padded, cropped and CLAHE-enhanced
    limb: LimbKind
    input_shape: tuple[int, int]
    geometry: PadGeometry

    def to_input(self, x: float, y: float) -> tuple[float, float]:
        """Map a pixel position in the prepared frame back to the input image."""
        g = self.geometry
        return (x - g.left) / g.scale, (y - g.top) / g.scale


def preprocess(img: np.ndarray, limb: LimbKind) -> Prepared:
    check_gray(img)
    h, w = img.shape
    geom = pad_geometry(h, w, TARGET_HEIGHT, TARGET_WIDTH)
    if (h, w) == (TARGET_HEIGHT, TARGET_WIDTH):
        geom = PadGeometry(1.0, h, w, 0, 0)
    framed = crop_limb(resize_pad(img), limb)
    return Prepared(clahe(framed), limb, (h, w), geom)


def frame_mask(mask: np.ndarray, limb: LimbKind) -> np.ndarray:
    """Carry an input-resolution mask through the same resize, pad and crop."""
    h, w = mask.shape
    if (h, w) != (TARGET_HEIGHT, TARGET_WIDTH):
        g = pad_geometry(h, w, TARGET_HEIGHT, TARGET_WIDTH)
        full = np.zeros((TARGET_HEIGHT, TARGET_WIDTH), dtype=bool)
        full[g.top:g.top + g.content_h, g.left:g.left + g.content_w] = resize_nearest(
            mask, g.content_h, g.content_w)
        mask = full
    return np.asarray(mask[:crop_limb(np.zeros(mask.shape, np.uint8), limb).shape[0]], bool)


def frame_box(box, prep: Prepared) -> tuple[float, float, float, float]:
    """Input-image pixel box -> prepared-frame pixel box."""
    g = prep.geometry
    x0, y0, x1, y1 = box
    return (x0 * g.scale + g.left, y0 * g.scale + g.top,
            x1 * g.scale + g.left, y1 * g.scale + g.top)


def norm_box(box, shape) -> BBox:
    """Pixel (x0, y0, x1, y1) -> normalized centre box, clipped to the frame."""
    h, w = shape
    x0, y0, x1, y1 = (float(np.clip(box[0], 0, w)), float(np.clip(box[1], 0, h)),
                      float(np.clip(box[2], 0, w)), float(np.clip(box[3], 0, h)))
    return BBox((x0 + x1) / 2 / w, (y0 + y1) / 2 / h, (x1 - x0) / w, (y1 - y0) / h)


def pixel_box(b: BBox, shape) -> tuple[float, float, float, float]:
    h, w = shape
    x0, y0, x1, y1 = b.corners()
    return x0 * w, y0 * h, x1 * w, y1 * h


# --------------------------------------------------------------------- models

def unet_tag(limb_type: str) -> str:
    return f"unet-{limb_type}"


def detector_tag(limb_type: str) -> str:
    return f"detector-{limb_type}"


def scorer_tag(limb_type: str, task: str) -> str:
    return f"score-{limb_type}-{task}"


def required_tags(limb_type: str) -> list[str]:
    return [unet_tag(limb_type), detector_tag(limb_type),
            *(scorer_tag(limb_type, t) for t in TASKS)]


def _ckpt_path(model_dir: str, tag: str) -> str:
    return os.path.join(model_dir, f"{tag}.ckpt")


def save_model(model_dir: str, tag: str, net, seed: int) -> str:
    """Write ``net`` as ``{tag}.ckpt``; returns its SHA-256."""
    if isinstance(net, UNet):
        return save_checkpoint(_ckpt_path(model_dir, tag), net, "unet", tag, net.spec.to_dict(), seed)
    if isinstance(net, Detector):
        return save_checkpoint(_ckpt_path(model_dir, tag), net, "detector", tag, net.spec.to_dict(), seed)
    if isinstance(net, Scorer):
        arch = {"spec": net.spec.to_dict(), "task": net.scale.task,
                "limb_type": net.scale.limb_type, "classes": net.scale.classes}
        return save_checkpoint(_ckpt_path(model_dir, tag), net, "scorer", tag, arch, seed)
    raise TypeError(f"cannot checkpoint {type(net).__name__}")


def load_model(path: str):
    header, tensors = read_checkpoint(path)
    kind, arch = header["kind"], header["arch"]
    if kind == "unet":
        net = build_unet(UNetSpec.from_dict(arch))
    elif kind == "detector":
        net = build_detector(DetectorSpec.from_dict(arch))
    elif kind == "scorer":
        spec = ScorerSpec.from_dict(arch["spec"])
        scale = ScoreScale(arch["task"], arch["limb_type"], arch["classes"])
        net = build_scorer(spec, scale, build_trunk(spec))
    else:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    load_into(net, header, tensors)
    net.eval()
    return net, header


@dataclass
class ModelBundle:
    models: dict = field(default_factory=dict)     # tag -> network
    digests: dict = field(default_factory=dict)    # tag -> checkpoint sha256

    @classmethod
    def load(cls, model_dir: str, limb_types=LIMB_TYPES) -> "ModelBundle":
        import hashlib
        bundle = cls()
        for lt in limb_types:
            for tag in required_tags(lt):
                path = _ckpt_path(model_dir, tag)
                if not os.path.exists(path):
                    raise CheckpointError(f"missing checkpoint {path}")
                net, header = load_model(path)
                if header["tag"] != tag:
                    raise CheckpointError(f"{path}: tag {header['tag']!r} != {tag!r}")
                bundle.models[tag] = net
                with open(path, "rb") as fh:
                    bundle.digests[tag] = hashlib.sha256(fh.read()).hexdigest()
        return bundle

    def get(self, tag: str):
        try:
            return self.models[tag]
        except KeyError:
            raise CheckpointError(f"missing checkpoint for {tag}") from None

    def scorer(self, limb_type: str, task: str) -> Scorer:
        return self.get(scorer_tag(limb_type, task))


# --------------------------------------------------------------------- pipeline

@dataclass
class JointResult:
    detection: Detection
    identity: JointIdentity
    box_px: tuple[float, float, float, float]       # prepared-frame pixels
    classes: dict[str, int]
    vectors: dict[str, np.ndarray]


@dataclass
class PipelineReport:
    image_id: str
    limb: LimbKind
    input_shape: tuple[int, int]
    mask_source: str                 # "unet" or "classic"
    identification: str              # primary / backup / backup-failed / shortfall
    joints: list[JointResult]
    sheet: ScoreSheet
    timings: dict[str, float]
    prepared: Prepared | None = None
    seed: int = 42
    checkpoints: dict = field(default_factory=dict)

    @property
    def detections(self) -> list[Detection]:
        return [j.detection for j in self.joints]


def choose_mask(prep: Prepared, unet: UNet | None) -> tuple[np.ndarray, str]:
    """U-Net mask when its coverage is plausible, else the classic algorithm."""
    unit = normalize(prep.gray)
    if unet is not None:
        m = predict_mask(unet, unit)
        cover = m.mean()
        if MASK_COVERAGE[0] <= cover <= MASK_COVERAGE[1]:
            return m, "unet"
        log.info("U-Net mask coverage %.3f outside %s; using classic masker", cover, MASK_COVERAGE)
    return extract_mask(prep.gray), "classic"


def run_pipeline(source, limb: LimbKind, models: ModelBundle, image_id: str | None = None,
                 seed: int = 42) -> PipelineReport:
    """Score one radiograph (path or gray raster)."""
    t_all = time.perf_counter()
    timings: dict[str, float] = {}
    lt = limb.limb_type
    unet = models.get(unet_tag(lt))
    detector = models.get(detector_tag(lt))
    scorers = {t: models.scorer(lt, t) for t in TASKS}

    t = time.perf_counter()
    if isinstance(source, (str, os.PathLike)):
        img = load_gray(source)
        if image_id is None:
            image_id = os.path.splitext(os.path.basename(os.fspath(source)))[0]
    else:
        img = check_gray(source)
    image_id = image_id or f"image-{limb.value}"
    if img.max() == img.min():
        raise NoLimbFound("blank image")
    prep = preprocess(img, limb)
    timings["preprocess"] = time.perf_counter() - t

    t = time.perf_counter()
    mask, source_kind = choose_mask(prep, unet)
    masked = apply_mask(prep.gray, mask)
    timings["mask"] = time.perf_counter() - t

    t = time.perf_counter()
    dets = detect_joints(detector, normalize(masked), limb)
    timings["detect"] = time.perf_counter() - t

    t = time.perf_counter()
    pairs, path = identify_with_path(dets, limb)
    timings["identify"] = time.perf_counter() - t

    t = time.perf_counter()
    boxes = [pixel_box(d.bbox, masked.shape) for d, _ in pairs]
    crops = np.stack([extract_crop(masked, b) for b in boxes]) if boxes else None
    joints = []
    per_task = {}
    for task, net in scorers.items():
        if crops is None:
            per_task[task] = (np.zeros(0, np.int64), np.zeros((0, net.scale.classes)))
        else:
            per_task[task] = score_batch(net, crops)
    for i, ((d, ident), b) in enumerate(zip(pairs, boxes)):
        joints.append(JointResult(d, ident, b, {t: int(per_task[t][0][i]) for t in TASKS},
                                  {t: per_task[t][1][i] for t in TASKS}))
    sheet = aggregate_totals(
        [JointScore(j.identity.name, j.classes["narrowing"], j.classes["erosion"]) for j in joints],
        scorers["narrowing"].scale, scorers["erosion"].scale)
    timings["score"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_all
    return PipelineReport(image_id, limb, prep.input_shape, source_kind, path, joints, sheet,
                          timings, prep, seed, dict(models.digests))


# --------------------------------------------------------------------- report

DETECTION_COLUMNS = ["image_id", "class", "cx", "cy", "w", "h", "confidence", "digit"]
TOTALS_COLUMNS = ["image_id", "limb", "total_narrowing", "total_erosion", "overall_total",
                  "joints", "identified", "mask_source", "identification"]


def report_record(report: PipelineReport) -> DatasetRecord:
    """Identified joints as a score-CSV record; untagged joints are left out."""
    pid = report.image_id
    suffix = f"-{report.limb.value}"
    if pid.endswith(suffix):
        pid = pid[:-len(suffix)]
    rec = DatasetRecord(pid, report.limb, None)
    for name in joint_names(report.limb.limb_type):
        for task in TASKS:
            rec.scores(task)[name] = None
    for j in report.joints:
        if j.identity.identified:
            for task in TASKS:
                rec.scores(task)[j.identity.name] = j.classes[task]
    return rec


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _annotate(report: PipelineReport, out_path: str) -> None:
    prep = report.prepared
    h, w = report.input_shape
    if prep is None:
        raise ValueError("report carries no prepared image to annotate")
    # draw on the input-resolution view of the enhanced frame
    g = prep.geometry
    frame = np.zeros((TARGET_HEIGHT, TARGET_WIDTH), np.uint8)
    frame[:prep.gray.shape[0]] = prep.gray
    content = frame[g.top:g.top + g.content_h, g.left:g.left + g.content_w]
    base = Image.fromarray(content).resize((w, h), Image.BILINEAR).convert("RGB")
    draw = ImageDraw.Draw(base)
    font = ImageFont.load_default()
    for j in report.joints:
        x0, y0 = prep.to_input(j.box_px[0], j.box_px[1])
        x1, y1 = prep.to_input(j.box_px[2], j.box_px[3])
        colour = (255, 200, 0) if j.identity.identified else (255, 60, 60)
        draw.rectangle([x0, y0, x1, y1], outline=colour, width=2)
        label = j.identity.name or "?"
        draw.text((x0 + 2, max(0, y0 - 12)),
                  f"{label} N{j.classes['narrowing']} E{j.classes['erosion']}",
                  fill=colour, font=font)
    s = report.sheet
    draw.text((4, 4), f"{report.image_id} N={s.total_narrowing} E={s.total_erosion} "
                      f"total={s.overall_total}", fill=(255, 255, 255), font=font)
    base.save(out_path, format="PNG")


def write_report(report: PipelineReport, out_dir: str) -> dict[str, str]:
    """Write score CSV, totals CSV, detections CSV, annotated PNG and manifest.

    Returns the written paths keyed by kind.
    """
    report.sheet.check()
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    iid = report.image_id
    paths = {
        "scores": os.path.join(out_dir, f"{iid}_scores.csv"),
        "totals": os.path.join(out_dir, f"{iid}_totals.csv"),
        "detections": os.path.join(out_dir, f"{iid}_detections.csv"),
        "annotated": os.path.join(out_dir, f"{iid}_annotated.png"),
        "manifest": os.path.join(out_dir, f"{iid}_manifest.json"),
    }
    write_scores_csv(paths["scores"], [report_record(report)], with_totals=False)

    s = report.sheet
    with open(paths["totals"], "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TOTALS_COLUMNS)
        wr.writerow([iid, report.limb.value, s.total_narrowing, s.total_erosion, s.overall_total,
                     len(report.joints), sum(j.identity.identified for j in report.joints),
                     report.mask_source, report.identification])

    with open(paths["detections"], "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(DETECTION_COLUMNS)
        for j in report.joints:
            d, b = j.detection, j.detection.bbox
            wr.writerow([iid, d.joint_class.value, _fmt(b.cx), _fmt(b.cy), _fmt(b.w), _fmt(b.h),
                         _fmt(d.confidence), "" if j.identity.digit is None else j.identity.digit])

    _annotate(report, paths["annotated"])

    manifest = {
        "version": __version__,
        "image_id": iid,
        "limb": report.limb.value,
        "seed": report.seed,
        "input_shape": list(report.input_shape),
        "mask_source": report.mask_source,
        "identification": report.identification,
        "checkpoints": dict(sorted(report.checkpoints.items())),
        "timings": {k: round(v, 6) for k, v in sorted(report.timings.items())},
        "joints": [
            {"joint": j.identity.name, "class": j.detection.joint_class.value,
             "narrowing": j.classes["narrowing"], "erosion": j.classes["erosion"],
             "narrowing_vector": [round(float(v), 6) for v in j.vectors["narrowing"]],
             "erosion_vector": [round(float(v), 6) for v in j.vectors["erosion"]]}
            for j in report.joints],
        "totals": {"narrowing": s.total_narrowing, "erosion": s.total_erosion,
                   "overall": s.overall_total},
    }
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# --------------------------------------------------------------------- training data

@dataclass
class LimbExample:
    """One limb image carried into the prepared frame with its truth."""
    image_id: str
    limb: LimbKind
    prep: Prepared
    truth_mask: np.ndarray | None                     # prepared-frame bool
    boxes: list[tuple[tuple[float, float, float, float], str, int, dict]]
    # (frame px box, joint name, detector class index, {task: score})


def limb_example(image_id: str, img: np.ndarray, limb: LimbKind, mask=None, joints=()) -> LimbExample:
    """``joints`` holds (input px box, joint name, JointClass, {task: score})."""
    prep = preprocess(img, limb)
    classes = DETECTOR_CLASSES[limb.limb_type]
    tm = frame_mask(mask, limb) if mask is not None else None
    boxes = [(frame_box(box, prep), name, classes.index(cls), scores)
             for box, name, cls, scores in joints]
    return LimbExample(image_id, limb, prep, tm, boxes)


def from_synthetic(sample) -> LimbExample:
    joints = [(j.box, j.name, j.joint_class, {t: getattr(j, t) for t in TASKS}) for j in sample.joints]
    return limb_example(sample.image_id, sample.image, sample.limb, sample.mask, joints)


def masked_unit(ex: LimbExample) -> np.ndarray:
    mask = ex.truth_mask if ex.truth_mask is not None else extract_mask(ex.prep.gray)
    return normalize(apply_mask(ex.prep.gray, mask))


def mask_training_set(examples, size: int, min_iou: float = 0.95):
    """Classic-algorithm masks kept only where they agree with the truth mask."""
    from .masking import iou
    from .unet import make_sample
    out = []
    for ex in examples:
        try:
            m = extract_mask(ex.prep.gray)
        except NoLimbFound:
            continue
        if ex.truth_mask is not None and iou(m, ex.truth_mask) < min_iou:
            continue
        out.append(make_sample(normalize(ex.prep.gray), m, size))
    return out


NOISE_KINDS = ("uniform", "gaussian", "speckle")


def noise_raster(kind: str, rng: np.random.Generator,
                 shape=(TARGET_HEIGHT, TARGET_WIDTH)) -> np.ndarray:
    """An 8-bit raster holding noise only, no limb."""
    if kind == "uniform":
        return rng.integers(0, 256, shape, dtype=np.uint8)
    if kind == "gaussian":
        x = rng.normal(rng.uniform(20, 235), rng.uniform(3, 60), shape)
    elif kind == "speckle":
        x = np.where(rng.random(shape) < rng.uniform(0.01, 0.3), 255.0, rng.uniform(0, 40))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return np.rint(x).clip(0, 255).astype(np.uint8)


def noise_mask_samples(n: int, size: int, limb: LimbKind, seed: int = 42):
    """Empty-mask samples of preprocessed pure noise, cycling through NOISE_KINDS.

    Without them the U-Net only sees limbs on dark backgrounds and labels
    dense texture as foreground.
    """
    from .unet import make_sample
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        unit = normalize(preprocess(noise_raster(NOISE_KINDS[i % len(NOISE_KINDS)], rng), limb).gray)
        out.append(make_sample(unit, np.zeros(unit.shape, bool), size))
    return out


def detection_training_set(examples, size: int):
    from .detection import make_detection_sample
    return [make_detection_sample(masked_unit(ex),
                                  [(norm_box(b, ex.prep.gray.shape), c) for b, _, c, _ in ex.boxes],
                                  size) for ex in examples]


def crop_training_set(examples):
    """(crops, detector class indices, {task: scores}) over every truth joint."""
    crops, classes, scores = [], [], {t: [] for t in TASKS}
    for ex in examples:
        img = apply_mask(ex.prep.gray, ex.truth_mask) if ex.truth_mask is not None else ex.prep.gray
        for box, _, c, sc in ex.boxes:
            crops.append(extract_crop(img, box))
            classes.append(c)
            for t in TASKS:
                scores[t].append(sc[t])
    return (np.stack(crops).astype(np.float32), np.asarray(classes),
            {t: np.asarray(v) for t, v in scores.items()})


