"""Deterministic synthetic scenes for desk-scale training and evaluation.

Objects are distinctly colored, striped rectangles moving with a linear
velocity plus jitter, bouncing off the frame edges. Objects may enter
(new identities) or leave (permanently), and scheduled or random occlusion
events hide an object completely for a few frames: its ground-truth row is
kept with visibility 0 and a consider-flag of 0, and its detection is
suppressed. Everything derives from one seeded generator, so equal seeds
give byte-identical outputs.
"""

from __future__ import annotations

import colorsys
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .data import Detection, SceneSequence, format_mot_csv, write_key_values
from .fileio import atomic_write_bytes


class SynthConfigError(ValueError):
    """The requested scene cannot be generated."""


@dataclass(frozen=True)
class SynthConfig:
    width: int = 128
    height: int = 128
    frames: int = 300
    objects: int = 6
    fps: float = 30.0
    name: str = "synth"
    min_size: int = 14
    max_size: int = 26
    speed_min: float = 0.6
    speed_max: float = 2.4
    jitter: float = 0.25
    max_objects: int = 8
    enter_prob: float = 0.0
    leave_prob: float = 0.0
    occlusion_prob: float = 0.0
    occlusion_min: int = 2
    occlusion_max: int = 6
    occlusions: tuple[tuple[int, int, int], ...] = ()  # (object_index, start_frame, length)
    overlap_visibility: bool = True  # derive visibility from inter-object coverage
    det_dropout: float = 0.05
    det_jitter: float = 1.0

    def validate(self) -> None:
        if self.width < 8 or self.height < 8:
            raise SynthConfigError("frame size must be at least 8x8")
        if self.min_size > self.max_size:
            raise SynthConfigError("min_size exceeds max_size")
        if self.max_size >= min(self.width, self.height):
            raise SynthConfigError("objects larger than the frame cannot be placed")
        if self.frames < 1 or self.objects < 0:
            raise SynthConfigError("need at least one frame and a nonnegative object count")
        if self.objects > self.max_objects:
            raise SynthConfigError(f"{self.objects} objects exceed the cap of {self.max_objects}")
        for probs in (self.enter_prob, self.leave_prob, self.occlusion_prob, self.det_dropout):
            if not 0.0 <= probs <= 1.0:
                raise SynthConfigError("probabilities must lie in [0, 1]")


@dataclass
class _Body:
    ident: int
    w: int
    h: int
    x: float  # center
    y: float
    vx: float
    vy: float
    color: tuple[int, int, int]
    stripe: tuple[int, int, int]
    period: int
    horizontal: bool
    occluded_until: int = -1
    gone: bool = False
    spawn_order: int = 0
    events: list[tuple[int, int]] = field(default_factory=list)


def _palette(index: int) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    hue = (0.13 + index * 0.381966) % 1.0  # golden-ratio hue spacing
    base = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    dark = colorsys.hsv_to_rgb(hue, 0.85, 0.55)
    to8 = lambda c: tuple(int(round(255 * v)) for v in c)
    return to8(base), to8(dark)


def _spawn(ident: int, order: int, cfg: SynthConfig, rng: np.random.Generator) -> _Body:
    w = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    h = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    x = rng.uniform(w / 2 + 1, cfg.width - w / 2 - 1)
    y = rng.uniform(h / 2 + 1, cfg.height - h / 2 - 1)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    angle = rng.uniform(0, 2 * math.pi)
    color, stripe = _palette(ident)
    return _Body(
        ident=ident,
        w=w,
        h=h,
        x=x,
        y=y,
        vx=speed * math.cos(angle),
        vy=speed * math.sin(angle),
        color=color,
        stripe=stripe,
        period=int(rng.integers(3, 7)),
        horizontal=bool(rng.integers(0, 2)),
        spawn_order=order,
    )


def _advance(body: _Body, cfg: SynthConfig, rng: np.random.Generator) -> None:
    body.x += body.vx + rng.normal(0.0, cfg.jitter)
    body.y += body.vy + rng.normal(0.0, cfg.jitter)
    lo_x, hi_x = body.w / 2, cfg.width - body.w / 2
    lo_y, hi_y = body.h / 2, cfg.height - body.h / 2
    if body.x < lo_x:
        body.x = lo_x + (lo_x - body.x)
        body.vx = abs(body.vx)
    elif body.x > hi_x:
        body.x = hi_x - (body.x - hi_x)
        body.vx = -abs(body.vx)
    if body.y < lo_y:
        body.y = lo_y + (lo_y - body.y)
        body.vy = abs(body.vy)
    elif body.y > hi_y:
        body.y = hi_y - (body.y - hi_y)
        body.vy = -abs(body.vy)
    body.x = min(max(body.x, lo_x), hi_x)
    body.y = min(max(body.y, lo_y), hi_y)


def _int_box(body: _Body, cfg: SynthConfig) -> tuple[int, int, int, int]:
    left = int(round(body.x - body.w / 2))
    top = int(round(body.y - body.h / 2))
    left = min(max(left, 0), cfg.width - body.w)
    top = min(max(top, 0), cfg.height - body.h)
    return left, top, body.w, body.h


def _draw(frame: np.ndarray, body: _Body, cfg: SynthConfig) -> None:
    left, top, w, h = _int_box(body, cfg)
    patch = np.empty((h, w, 3), dtype=np.uint8)
    patch[:] = body.color
    if body.horizontal:
        mask = (np.arange(h) // body.period % 2).astype(bool)
        patch[mask, :] = body.stripe
    else:
        mask = (np.arange(w) // body.period % 2).astype(bool)
        patch[:, mask] = body.stripe
    frame[top : top + h, left : left + w] = patch


def _visibility(index: int, stack: list[tuple[int, tuple[int, int, int, int]]]) -> float:
    """Fraction of a box not covered by boxes drawn after it."""
    _, (left, top, w, h) = stack[index]
    covered = np.zeros((h, w), dtype=bool)
    for _, (l2, t2, w2, h2) in stack[index + 1 :]:
        x0 = max(left, l2) - left
        y0 = max(top, t2) - top
        x1 = min(left + w, l2 + w2) - left
        y1 = min(top + h, t2 + h2) - top
        if x1 > x0 and y1 > y0:
            covered[y0:y1, x0:x1] = True
    return 1.0 - covered.mean()


def generate_synthetic(cfg: SynthConfig, seed: int) -> SceneSequence:
    cfg.validate()
    rng = np.random.default_rng(seed)

    # static textured background
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
    ramp = (40 + 30 * (xx + yy) / (cfg.width + cfg.height)).astype(np.float64)
    noise = rng.uniform(-6, 6, size=(cfg.height, cfg.width))
    background = np.clip(ramp + noise, 0, 255).astype(np.uint8)[..., None].repeat(3, axis=2)

    bodies = [_spawn(i + 1, i, cfg, rng) for i in range(cfg.objects)]
    next_ident = cfg.objects + 1
    scheduled = {tuple(ev[:2]): ev[2] for ev in cfg.occlusions}

    frames: list[np.ndarray] = []
    gt_rows: list[Detection] = []
    det_rows: list[Detection] = []

    for frame_no in range(1, cfg.frames + 1):
        alive = [b for b in bodies if not b.gone]
        # departures and arrivals
        for body in alive:
            if cfg.leave_prob and rng.random() < cfg.leave_prob:
                body.gone = True
        alive = [b for b in bodies if not b.gone]
        if cfg.enter_prob and len(alive) < cfg.max_objects and rng.random() < cfg.enter_prob:
            bodies.append(_spawn(next_ident, len(bodies), cfg, rng))
            next_ident += 1
            alive = [b for b in bodies if not b.gone]

        for body in alive:
            if frame_no > 1:
                _advance(body, cfg, rng)
            key = (body.spawn_order, frame_no)
            if key in scheduled:
                body.occluded_until = frame_no + scheduled[key] - 1
            elif cfg.occlusion_prob and body.occluded_until < frame_no and rng.random() < cfg.occlusion_prob:
                body.occluded_until = frame_no + int(rng.integers(cfg.occlusion_min, cfg.occlusion_max + 1)) - 1

        frame = background.copy()
        drawn: list[tuple[int, tuple[int, int, int, int]]] = []
        hidden: list[tuple[int, tuple[int, int, int, int]]] = []
        for body in alive:
            box = _int_box(body, cfg)
            if body.occluded_until >= frame_no:
                hidden.append((body.ident, box))
                continue
            drawn.append((body.ident, box))
            _draw(frame, body, cfg)
        frames.append(frame)

        for idx, (ident, box) in enumerate(drawn):
            vis = _visibility(idx, drawn) if cfg.overlap_visibility else 1.0
            flag = 1.0 if vis >= 0.3 else 0.0
            gt_rows.append(
                Detection(frame_no, ident, float(box[0]), float(box[1]), float(box[2]), float(box[3]),
                          conf=flag, visibility=vis, extras=(-1.0, round(vis, 4)))
            )
            if vis >= 0.3 and not (cfg.det_dropout and rng.random() < cfg.det_dropout):
                left, top, w, h = box
                if cfg.det_jitter:
                    left = left + rng.normal(0.0, cfg.det_jitter)
                    top = top + rng.normal(0.0, cfg.det_jitter)
                    left = min(max(left, 0.0), cfg.width - w - 1e-6)
                    top = min(max(top, 0.0), cfg.height - h - 1e-6)
                det_rows.append(
                    Detection(frame_no, -1, float(left), float(top), float(w), float(h),
                              conf=1.0, extras=(-1.0, -1.0, -1.0))
                )
        for ident, box in hidden:
            gt_rows.append(
                Detection(frame_no, ident, float(box[0]), float(box[1]), float(box[2]), float(box[3]),
                          conf=0.0, visibility=0.0, extras=(-1.0, 0.0))
            )

    from .data import group_by_frame

    return SceneSequence(
        name=cfg.name,
        width=cfg.width,
        height=cfg.height,
        fps=cfg.fps,
        frames=frames,
        gt=group_by_frame(gt_rows),
        dets=group_by_frame(det_rows),
    )


def write_sequence(seq: SceneSequence, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "img").mkdir(parents=True, exist_ok=True)
    write_key_values(
        out_dir / "seqinfo.txt",
        {
            "name": seq.name,
            "im_width": seq.width,
            "im_height": seq.height,
            "frame_count": len(seq.frames),
            "fps": seq.fps,
        },
    )
    for number, frame in enumerate(seq.frames, start=1):
        buffer = io.BytesIO()
        Image.fromarray(frame).save(buffer, format="PNG")
        atomic_write_bytes(out_dir / "img" / f"{number:06d}.png", buffer.getvalue())
    gt_rows = [d for frame_no in sorted(seq.gt) for d in seq.gt[frame_no]]
    det_rows = [d for frame_no in sorted(seq.dets) for d in seq.dets[frame_no]]
    atomic_write_bytes(out_dir / "gt.csv", format_mot_csv(gt_rows).encode())
    atomic_write_bytes(out_dir / "det.csv", format_mot_csv(det_rows).encode())
