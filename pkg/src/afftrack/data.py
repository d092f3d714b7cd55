"""Sequence I/O and training-time frame augmentation.

Detections travel in the MOTChallenge comma-separated layout
``frame,id,bb_left,bb_top,bb_width,bb_height,conf[,x,y,z]``. Ground-truth
files reuse the three optional slots for class and visibility, which the
sequence loader interprets when present.

All color math runs in float64 with a frozen operation order (see
``apply_photometric``) so tests can reproduce it exactly with scalar code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .fileio import atomic_write_text
from .labels import AssociationLabel, build_label

DEFAULT_MEAN_PIXEL = (104.0, 117.0, 123.0)
DISTORT_RANGE = (0.7, 1.5)
EXPAND_RANGE = (1.0, 1.2)
CROP_RANGE = (0.8, 1.0)
CROP_ATTEMPTS = 50
STEP_PROB = 0.3
FLIP_PROB = 0.5


class MotCsvError(ValueError):
    """A detection file line could not be parsed."""


@dataclass(frozen=True)
class Detection:
    frame: int
    id: int
    left: float
    top: float
    width: float
    height: float
    conf: float = 1.0
    visibility: float = 1.0
    extras: tuple[float, ...] = ()

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.width, self.height)

    def center(self, frame_w: float, frame_h: float) -> tuple[float, float]:
        return ((self.left + self.width / 2.0) / frame_w, (self.top + self.height / 2.0) / frame_h)


def _format_number(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def parse_mot_csv(path: str | Path) -> list[Detection]:
    """Parse a MOTChallenge CSV; raises with the offending line number."""
    records: list[Detection] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) < 7:
                raise MotCsvError(f"{path}:{line_no}: expected at least 7 fields, got {len(fields)}")
            try:
                numbers = [float(f) for f in fields]
            except ValueError as exc:
                raise MotCsvError(f"{path}:{line_no}: {exc}") from None
            frame = int(numbers[0])
            ident = int(numbers[1])
            left, top, width, height, conf = numbers[2:7]
            if width <= 0 or height <= 0:
                raise MotCsvError(f"{path}:{line_no}: nonpositive box size {width}x{height}")
            records.append(
                Detection(frame, ident, left, top, width, height, conf, extras=tuple(numbers[7:]))
            )
    return records


def format_mot_csv(records: list[Detection]) -> str:
    lines = []
    for r in records:
        fields = [str(r.frame), str(r.id)] + [
            _format_number(v) for v in (r.left, r.top, r.width, r.height, r.conf, *r.extras)
        ]
        lines.append(",".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def write_mot_csv(path: str | Path, records: list[Detection]) -> None:
    atomic_write_text(path, format_mot_csv(records))


def group_by_frame(records: list[Detection]) -> dict[int, list[Detection]]:
    grouped: dict[int, list[Detection]] = {}
    for r in records:
        grouped.setdefault(r.frame, []).append(r)
    return grouped


def _with_visibility(records: list[Detection]) -> list[Detection]:
    """Interpret ground-truth extras as (class, visibility) when present."""
    out = []
    for r in records:
        vis = 1.0
        if len(r.extras) >= 2 and 0.0 <= r.extras[1] <= 1.0:
            vis = float(r.extras[1])
        out.append(replace(r, visibility=vis))
    return out


# ---------------------------------------------------------------------------
# sequences


@dataclass
class SceneSequence:
    name: str
    width: int
    height: int
    fps: float
    frames: list[np.ndarray]  # uint8 (H, W, 3), index 0 holds frame 1
    gt: dict[int, list[Detection]] = field(default_factory=dict)
    dets: dict[int, list[Detection]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, number: int) -> np.ndarray:
        return self.frames[number - 1]


def read_key_values(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def write_key_values(path: str | Path, values: dict) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in values.items())
    atomic_write_text(path, text)


def load_sequence(seq_dir: str | Path) -> SceneSequence:
    seq_dir = Path(seq_dir)
    info = read_key_values(seq_dir / "seqinfo.txt")
    width = int(info["im_width"])
    height = int(info["im_height"])
    count = int(info["frame_count"])
    frames = []
    img_dir = seq_dir / "img"
    for number in range(1, count + 1):
        for ext in (".png", ".ppm"):
            path = img_dir / f"{number:06d}{ext}"
            if path.exists():
                frames.append(np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8))
                break
        else:
            raise FileNotFoundError(f"missing frame image {img_dir / f'{number:06d}.png'}")
    gt_path = seq_dir / "gt.csv"
    det_path = seq_dir / "det.csv"
    gt = group_by_frame(_with_visibility(parse_mot_csv(gt_path))) if gt_path.exists() else {}
    dets = group_by_frame(parse_mot_csv(det_path)) if det_path.exists() else {}
    return SceneSequence(
        name=info.get("name", seq_dir.name),
        width=width,
        height=height,
        fps=float(info.get("fps", 30)),
        frames=frames,
        gt=gt,
        dets=dets,
    )


# ---------------------------------------------------------------------------
# color conversion (float64 throughout, frozen operation order)


def rgb_to_hsv(pixels: np.ndarray) -> np.ndarray:
    """Hexagonal-projection HSV: H in [0, 360) degrees, S and V share the
    input scale (S in [0, 1], V unbounded). Ties resolve in R, G, B order."""
    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    v = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    c = v - mn
    safe_c = np.where(c == 0, 1.0, c)
    safe_v = np.where(v == 0, 1.0, v)
    h = np.select(
        [c == 0, v == r, v == g],
        [np.zeros_like(v), ((g - b) / safe_c) % 6.0, (b - r) / safe_c + 2.0],
        default=(r - g) / safe_c + 4.0,
    )
    h = h * 60.0
    s = np.where(v == 0, 0.0, c / safe_v)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(pixels: np.ndarray) -> np.ndarray:
    h, s, v = pixels[..., 0], pixels[..., 1], pixels[..., 2]
    c = v * s
    hp = h / 60.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    m = v - c
    sector = np.floor(hp).astype(np.int64) % 6
    zeros = np.zeros_like(c)
    r = np.select([sector == 0, sector == 1, sector == 2, sector == 3, sector == 4], [c, x, zeros, zeros, x], default=c)
    g = np.select([sector == 0, sector == 1, sector == 2, sector == 3, sector == 4], [x, c, c, x, zeros], default=zeros)
    b = np.select([sector == 0, sector == 1, sector == 2, sector == 3, sector == 4], [zeros, zeros, x, c, c], default=x)
    return np.stack([r + m, g + m, b + m], axis=-1)


def apply_photometric(frame: np.ndarray, u1: float, u2: float, u3: float) -> np.ndarray:
    """Scale pixels by u1, scale HSV saturation by u2, scale again by u3.

    Pipeline order: uint8 -> float64, multiply by u1, convert to HSV,
    multiply S by u2 (not clamped), convert back, multiply by u3, clip to
    [0, 255], round half-to-even, uint8.
    """
    x = frame.astype(np.float64) * u1
    hsv = rgb_to_hsv(x)
    hsv[..., 1] = hsv[..., 1] * u2
    x = hsv_to_rgb(hsv) * u3
    return np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)


def photometric_distort(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u1, u2, u3 = rng.uniform(DISTORT_RANGE[0], DISTORT_RANGE[1], size=3)
    return apply_photometric(frame, u1, u2, u3)


# ---------------------------------------------------------------------------
# geometric augmentation; boxes are float arrays of (left, top, w, h) rows


def box_centers(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return boxes[:, :2] + boxes[:, 2:] / 2.0


def normalized_centers(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Box centers scaled into [0, 1).

    A center exactly on the right or bottom frame edge (a flip maps an
    edge-zero center there) clamps to the largest value below one, keeping
    the half-open sampling contract.
    """
    centers = box_centers(boxes) / np.asarray([width, height], dtype=np.float64)
    return np.clip(centers, 0.0, np.nextafter(1.0, 0.0))


def apply_expand(
    frame: np.ndarray,
    boxes: np.ndarray,
    ratio: float,
    off_x: int,
    off_y: int,
    mean_pixel: tuple[float, float, float] = DEFAULT_MEAN_PIXEL,
) -> tuple[np.ndarray, np.ndarray]:
    """Place the frame at (off_x, off_y) on a mean-pixel canvas grown by ratio."""
    height, width = frame.shape[:2]
    new_h = math.ceil(ratio * height)
    new_w = math.ceil(ratio * width)
    if not (0 <= off_y <= new_h - height and 0 <= off_x <= new_w - width):
        raise ValueError("expansion offset places the frame outside the canvas")
    canvas = np.empty((new_h, new_w, 3), dtype=np.uint8)
    canvas[:] = np.rint(np.asarray(mean_pixel)).astype(np.uint8)
    canvas[off_y : off_y + height, off_x : off_x + width] = frame
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    boxes[:, 0] += off_x
    boxes[:, 1] += off_y
    return canvas, boxes


def expand_frame(
    frame: np.ndarray,
    boxes: np.ndarray,
    rng: np.random.Generator,
    mean_pixel: tuple[float, float, float] = DEFAULT_MEAN_PIXEL,
) -> tuple[np.ndarray, np.ndarray]:
    """Random-ratio ([1, 1.2]) expansion at a uniformly random offset."""
    height, width = frame.shape[:2]
    ratio = rng.uniform(*EXPAND_RANGE)
    new_h = math.ceil(ratio * height)
    new_w = math.ceil(ratio * width)
    off_y = int(rng.integers(0, new_h - height + 1))
    off_x = int(rng.integers(0, new_w - width + 1))
    return apply_expand(frame, boxes, ratio, off_x, off_y, mean_pixel)


def apply_crop(frame: np.ndarray, boxes: np.ndarray, x0: int, y0: int,
               crop_w: int, crop_h: int) -> tuple[np.ndarray, np.ndarray]:
    cropped = frame[y0 : y0 + crop_h, x0 : x0 + crop_w]
    shifted = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    shifted[:, 0] -= x0
    shifted[:, 1] -= y0
    return cropped, shifted


def crop_frame(
    frame: np.ndarray,
    boxes: np.ndarray,
    rng: np.random.Generator,
    attempts: int = CROP_ATTEMPTS,
) -> tuple[np.ndarray, np.ndarray]:
    """Random crop (ratio in [0.8, 1]) that keeps every box center inside;
    falls back to the original frame after the attempt budget."""
    height, width = frame.shape[:2]
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    ratio = rng.uniform(*CROP_RANGE)
    crop_h = max(1, int(round(ratio * height)))
    crop_w = max(1, int(round(ratio * width)))
    if crop_h >= height and crop_w >= width:
        return frame, boxes.copy()
    centers = box_centers(boxes)
    for _ in range(attempts):
        y0 = int(rng.integers(0, height - crop_h + 1))
        x0 = int(rng.integers(0, width - crop_w + 1))
        inside = (
            (centers[:, 0] >= x0)
            & (centers[:, 0] < x0 + crop_w)
            & (centers[:, 1] >= y0)
            & (centers[:, 1] < y0 + crop_h)
        )
        if inside.all():
            return apply_crop(frame, boxes, x0, y0, crop_w, crop_h)
    return frame, boxes.copy()


def resize_frame(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-aligned sample centers."""
    height, width = frame.shape[:2]
    if (height, width) == (out_h, out_w):
        return frame.copy()
    ys = (np.arange(out_h) + 0.5) * (height / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (width / out_w) - 0.5
    ys = np.clip(ys, 0, height - 1)
    xs = np.clip(xs, 0, width - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    img = frame.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.rint(np.clip(out, 0, 255)).astype(np.uint8)


def scale_boxes(boxes: np.ndarray, sx: float, sy: float) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    boxes[:, 0] *= sx
    boxes[:, 2] *= sx
    boxes[:, 1] *= sy
    boxes[:, 3] *= sy
    return boxes


def flip_horizontal(frame: np.ndarray, boxes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    width = frame.shape[1]
    flipped = frame[:, ::-1].copy()
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    boxes[:, 0] = width - boxes[:, 0] - boxes[:, 2]
    return flipped, boxes


# ---------------------------------------------------------------------------
# paired samples for training


@dataclass
class PairSample:
    frame_a: np.ndarray
    frame_b: np.ndarray
    boxes_a: np.ndarray  # (n_a, 4) float
    boxes_b: np.ndarray
    ids_a: list[int]
    ids_b: list[int]
    label: AssociationLabel
    gap: int = 1

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ha, wa = self.frame_a.shape[:2]
        hb, wb = self.frame_b.shape[:2]
        return (
            normalized_centers(self.boxes_a, wa, ha),
            normalized_centers(self.boxes_b, wb, hb),
        )


def sample_pair(
    seq: SceneSequence,
    rng: np.random.Generator,
    n_v: int,
    n_max: int,
    visibility_threshold: float = 0.3,
) -> PairSample:
    """Draw two frames n timestamps apart (n uniform in 1..n_v) plus the
    ground-truth association label built from their identities."""
    total = len(seq)
    if total <= n_v:
        raise ValueError(f"sequence of {total} frames is too short for gaps up to {n_v}")
    gap = int(rng.integers(1, n_v + 1))
    later = int(rng.integers(gap + 1, total + 1))
    earlier = later - gap

    def visible(frame_no: int) -> list[Detection]:
        return [d for d in seq.gt.get(frame_no, []) if d.visibility >= visibility_threshold]

    dets_a = visible(earlier)
    dets_b = visible(later)
    label = build_label([d.id for d in dets_a], [d.id for d in dets_b], n_max)
    return PairSample(
        frame_a=seq.frame(earlier),
        frame_b=seq.frame(later),
        boxes_a=np.asarray([d.box for d in dets_a], dtype=np.float64).reshape(-1, 4),
        boxes_b=np.asarray([d.box for d in dets_b], dtype=np.float64).reshape(-1, 4),
        ids_a=[d.id for d in dets_a],
        ids_b=[d.id for d in dets_b],
        label=label,
        gap=gap,
    )


class TrainingPairs:
    """A fixed draw of frame pairs from one or more sequences.

    Pair selection happens once at construction, seeded; augmentation is
    re-rolled per materialization with the generator the trainer supplies,
    so every (epoch, index) combination is reproducible.
    """

    def __init__(
        self,
        sequences: list[SceneSequence],
        count: int,
        n_v: int,
        n_max: int,
        out_h: int,
        out_w: int,
        seed: int,
        augment: bool = True,
        mean_pixel: tuple[float, float, float] = DEFAULT_MEAN_PIXEL,
    ):
        if not sequences:
            raise ValueError("need at least one sequence")
        self.out_h = out_h
        self.out_w = out_w
        self.augment = augment
        self.mean_pixel = mean_pixel
        rng = np.random.default_rng([seed, 11])
        self.base: list[PairSample] = []
        for _ in range(count):
            seq = sequences[int(rng.integers(len(sequences)))]
            self.base.append(sample_pair(seq, rng, n_v, n_max))

    def __len__(self) -> int:
        return len(self.base)

    def materialize(self, index: int, rng: np.random.Generator) -> PairSample:
        sample = self.base[index]
        if self.augment:
            out, _ = augment_pair(sample, rng, self.out_h, self.out_w, self.mean_pixel)
            return out
        frames = []
        boxes = []
        for frame, box in ((sample.frame_a, sample.boxes_a), (sample.frame_b, sample.boxes_b)):
            height, width = frame.shape[:2]
            if (height, width) != (self.out_h, self.out_w):
                boxes.append(scale_boxes(box, self.out_w / width, self.out_h / height))
                frames.append(resize_frame(frame, self.out_h, self.out_w))
            else:
                frames.append(frame)
                boxes.append(box)
        return PairSample(
            frame_a=frames[0], frame_b=frames[1], boxes_a=boxes[0], boxes_b=boxes[1],
            ids_a=sample.ids_a, ids_b=sample.ids_b, label=sample.label, gap=sample.gap,
        )


def augment_pair(
    sample: PairSample,
    rng: np.random.Generator,
    out_h: int,
    out_w: int,
    mean_pixel: tuple[float, float, float] = DEFAULT_MEAN_PIXEL,
    step_prob: float = STEP_PROB,
    flip_prob: float = FLIP_PROB,
) -> tuple[PairSample, dict[str, bool]]:
    """Photometric, expansion and crop steps each fire once per pair with
    probability ``step_prob`` (shared on/off decision, per-frame parameter
    draws), then both frames resize to the target size and flip together
    with probability ``flip_prob``."""
    frames = [sample.frame_a, sample.frame_b]
    boxes = [sample.boxes_a.copy(), sample.boxes_b.copy()]
    trace = {"photometric": False, "expand": False, "crop": False, "flip": False}

    if rng.random() < step_prob:
        trace["photometric"] = True
        frames = [photometric_distort(f, rng) for f in frames]
    if rng.random() < step_prob:
        trace["expand"] = True
        for k in range(2):
            frames[k], boxes[k] = expand_frame(frames[k], boxes[k], rng, mean_pixel)
    if rng.random() < step_prob:
        trace["crop"] = True
        for k in range(2):
            frames[k], boxes[k] = crop_frame(frames[k], boxes[k], rng)
    for k in range(2):
        height, width = frames[k].shape[:2]
        if (height, width) != (out_h, out_w):
            boxes[k] = scale_boxes(boxes[k], out_w / width, out_h / height)
            frames[k] = resize_frame(frames[k], out_h, out_w)
        else:
            frames[k] = frames[k].copy()
    if rng.random() < flip_prob:
        trace["flip"] = True
        for k in range(2):
            frames[k], boxes[k] = flip_horizontal(frames[k], boxes[k])

    out = PairSample(
        frame_a=frames[0],
        frame_b=frames[1],
        boxes_a=boxes[0],
        boxes_b=boxes[1],
        ids_a=list(sample.ids_a),
        ids_b=list(sample.ids_b),
        label=sample.label,
        gap=sample.gap,
    )
    return out, trace
