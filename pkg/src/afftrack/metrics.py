"""CLEAR-MOT style tracking evaluation.

Per frame, correspondences from the previous frame are kept while their
overlap stays at or above the IoU threshold; the remaining boxes are
matched by maximum-total-IoU assignment and pairs under the threshold are
discarded. Identity switches compare against the most recent hypothesis
id that ever matched a ground-truth identity. Ground-truth rows with a
consider-flag (conf) of 0 are ignored entirely.

MOTP is reported as the mean IoU of matched pairs in percent (perfect
alignment gives 100). The log-accuracy variant replaces the per-frame
switch count with log10(switches + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import solve_hungarian
from .data import Detection, group_by_frame
from .fileio import atomic_write_text


class EvaluationError(ValueError):
    """Evaluation is undefined for the given inputs (e.g. empty ground truth)."""


def iou(box_a, box_b) -> float:
    la, ta, wa, ha = box_a
    lb, tb, wb, hb = box_b
    if wa <= 0 or ha <= 0 or wb <= 0 or hb <= 0:
        raise ValueError("boxes must have positive area")
    x0 = max(la, lb)
    y0 = max(ta, tb)
    x1 = min(la + wa, lb + wb)
    y1 = min(ta + ha, tb + hb)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    inter = (x1 - x0) * (y1 - y0)
    return inter / (wa * ha + wb * hb - inter)


def _max_iou_matching(matrix: np.ndarray) -> list[tuple[int, int]]:
    """Pairs maximizing total score; handles either orientation."""
    rows, cols = matrix.shape
    if rows == 0 or cols == 0:
        return []
    if rows <= cols:
        return sorted(solve_hungarian(matrix).items())
    flipped = solve_hungarian(matrix.T)
    return sorted((r, c) for c, r in flipped.items())


@dataclass
class EvalResult:
    mota: float
    motal: float
    motp: float
    rcll: float
    idf1: float
    mt: float
    ml: float
    fp: int
    fn: int
    id_sw: int
    frag: int
    mt_count: int
    ml_count: int
    gt_tracks: int
    gt_total: int
    hyp_total: int
    matches: int
    events: list[tuple] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict[str, float]:
        return {
            "MOTA": self.mota,
            "MOTAL": self.motal,
            "MOTP": self.motp,
            "Rcll": self.rcll,
            "IDF1": self.idf1,
            "MT": self.mt,
            "ML": self.ml,
            "FP": self.fp,
            "FN": self.fn,
            "ID_Sw": self.id_sw,
            "Frag": self.frag,
            "MT_count": self.mt_count,
            "ML_count": self.ml_count,
            "GT_tracks": self.gt_tracks,
            "GT_boxes": self.gt_total,
            "Hyp_boxes": self.hyp_total,
            "Matches": self.matches,
        }


def _considered(records: list[Detection]) -> list[Detection]:
    return [r for r in records if r.conf != 0]


def match_frames(
    gt: list[Detection], hyp: list[Detection], iou_threshold: float = 0.5
) -> dict[int, list[tuple[int, int, float]]]:
    """Per-frame (gt_id, hyp_id, iou) correspondences."""
    out: dict[int, list[tuple[int, int, float]]] = {}
    for frame, matches, _, _ in _frame_matches(gt, hyp, iou_threshold):
        out[frame] = matches
    return out


def _frame_matches(gt: list[Detection], hyp: list[Detection], iou_threshold: float):
    gt_frames = group_by_frame(_considered(gt))
    hyp_frames = group_by_frame(hyp)
    carried: dict[int, int] = {}  # gt id -> hyp id matched in the previous frame
    for frame in sorted(set(gt_frames) | set(hyp_frames)):
        gts = gt_frames.get(frame, [])
        hyps = hyp_frames.get(frame, [])
        hyp_by_id = {h.id: h for h in hyps}
        matches: list[tuple[int, int, float]] = []
        taken_gt: set[int] = set()
        taken_hyp: set[int] = set()
        for g in gts:
            partner = carried.get(g.id)
            if partner is None or partner not in hyp_by_id or partner in taken_hyp:
                continue
            overlap = iou(g.box, hyp_by_id[partner].box)
            if overlap >= iou_threshold:
                matches.append((g.id, partner, overlap))
                taken_gt.add(g.id)
                taken_hyp.add(partner)
        rest_gt = [g for g in gts if g.id not in taken_gt]
        rest_hyp = [h for h in hyps if h.id not in taken_hyp]
        if rest_gt and rest_hyp:
            table = np.array([[iou(g.box, h.box) for h in rest_hyp] for g in rest_gt])
            for gi, hi in _max_iou_matching(table):
                if table[gi, hi] >= iou_threshold:
                    matches.append((rest_gt[gi].id, rest_hyp[hi].id, float(table[gi, hi])))
        carried = {g_id: h_id for g_id, h_id, _ in matches}
        yield frame, matches, gts, hyps


def evaluate(gt: list[Detection], hyp: list[Detection], iou_threshold: float = 0.5) -> EvalResult:
    considered = _considered(gt)
    gt_total = len(considered)
    if gt_total == 0:
        raise EvaluationError("ground truth contains no considered boxes; metrics are undefined")

    fp = fn = id_sw = 0
    log_switch_sum = 0.0
    iou_sum = 0.0
    match_count = 0
    last_matched: dict[int, int] = {}
    presence: dict[int, list[bool]] = {}
    events: list[tuple] = []

    for frame, matches, gts, hyps in _frame_matches(gt, hyp, iou_threshold):
        matched_gt = {g_id for g_id, _, _ in matches}
        matched_hyp = {h_id for _, h_id, _ in matches}
        fp_f = len(hyps) - len(matches)
        fn_f = len(gts) - len(matches)
        sw_f = 0
        for g_id, h_id, overlap in matches:
            previous = last_matched.get(g_id)
            if previous is not None and previous != h_id:
                sw_f += 1
                events.append((frame, "SWITCH", g_id, h_id, overlap))
            else:
                events.append((frame, "MATCH", g_id, h_id, overlap))
            last_matched[g_id] = h_id
            iou_sum += overlap
        for h in hyps:
            if h.id not in matched_hyp:
                events.append((frame, "FP", -1, h.id, 0.0))
        for g in gts:
            presence.setdefault(g.id, []).append(g.id in matched_gt)
            if g.id not in matched_gt:
                events.append((frame, "FN", g.id, -1, 0.0))
        fp += fp_f
        fn += fn_f
        id_sw += sw_f
        match_count += len(matches)
        log_switch_sum += math.log10(sw_f + 1)

    frag = 0
    mt_count = ml_count = 0
    for statuses in presence.values():
        ratio = sum(statuses) / len(statuses)
        if ratio >= 0.8:
            mt_count += 1
        if ratio <= 0.2:
            ml_count += 1
        seen_match = False
        in_gap = False
        for matched in statuses:
            if matched:
                if seen_match and in_gap:
                    frag += 1
                seen_match = True
                in_gap = False
            elif seen_match:
                in_gap = True

    gt_tracks = len(presence)
    mota = 100.0 * (1.0 - (fp + fn + id_sw) / gt_total)
    motal = 100.0 * (1.0 - (fp + fn + log_switch_sum) / gt_total)
    motp = 100.0 * iou_sum / match_count if match_count else 0.0
    rcll = 100.0 * match_count / gt_total

    idf1 = _idf1(considered, hyp, iou_threshold)

    return EvalResult(
        mota=mota,
        motal=motal,
        motp=motp,
        rcll=rcll,
        idf1=idf1,
        mt=100.0 * mt_count / gt_tracks,
        ml=100.0 * ml_count / gt_tracks,
        fp=fp,
        fn=fn,
        id_sw=id_sw,
        frag=frag,
        mt_count=mt_count,
        ml_count=ml_count,
        gt_tracks=gt_tracks,
        gt_total=gt_total,
        hyp_total=len(hyp),
        matches=match_count,
        events=events,
    )


def _idf1(gt: list[Detection], hyp: list[Detection], iou_threshold: float) -> float:
    """F1 of a global identity assignment maximizing identity true positives.

    A (gt id, hyp id) pair scores one true positive per frame where both
    exist and overlap at least at the threshold.
    """
    gt_ids = sorted({r.id for r in gt})
    hyp_ids = sorted({r.id for r in hyp})
    if not hyp_ids:
        return 0.0
    gt_idx = {g: i for i, g in enumerate(gt_ids)}
    hyp_idx = {h: j for j, h in enumerate(hyp_ids)}
    overlap_frames = np.zeros((len(gt_ids), len(hyp_ids)))
    hyp_frames = group_by_frame(hyp)
    for frame, gts in group_by_frame(gt).items():
        for g in gts:
            for h in hyp_frames.get(frame, []):
                if iou(g.box, h.box) >= iou_threshold:
                    overlap_frames[gt_idx[g.id], hyp_idx[h.id]] += 1
    idtp = sum(overlap_frames[r, c] for r, c in _max_iou_matching(overlap_frames))
    return 100.0 * 2.0 * idtp / (len(gt) + len(hyp))


def format_results(result: EvalResult) -> str:
    lines = []
    for key, value in result.as_dict().items():
        if isinstance(value, float):
            lines.append(f"{key} = {value:.4f}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_results(result: EvalResult, path) -> None:
    atomic_write_text(path, format_results(result))


def write_event_log(events: list[tuple], path) -> None:
    lines = ["frame,event,gt_id,hyp_id,iou"]
    lines += [f"{f},{kind},{g},{h},{v:.6f}" for f, kind, g, h, v in events]
    atomic_write_text(path, "\n".join(lines) + "\n")
