"""On-line track association over cached per-frame features.

Each frame is embedded once. For every cached earlier frame an affinity
matrix against the current detections is computed, and a per-trajectory
accumulator sums the affinities of the trajectory's nodes to every current
detection (plus the un-identified column). Because several trajectories
may leave simultaneously, the UI column is repeated once per trajectory
before the assignment solve, guaranteeing a feasible unique column for
everyone. A trajectory keeps a real assignment only when its accumulated
score beats its own accumulated UI mass; otherwise it counts a miss.
Trajectories retire after ``delta_w`` consecutive misses, and both the
feature cache and trajectory nodes are bounded by the ``delta_b``
look-back window, so memory stays flat regardless of video length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .assignment import solve_hungarian
from .autograd import no_grad
from .data import Detection, SceneSequence
from .model import AffinityModel, FeatureMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackerParams:
    delta_b: int = 15  # look-back depth for affinity accumulation
    delta_w: int = 12  # allowed consecutive misses before a track is dropped

    def __post_init__(self) -> None:
        if self.delta_b < 1 or self.delta_w < 0:
            raise ValueError("delta_b must be >= 1 and delta_w >= 0")


class AffinityProvider(Protocol):
    n_m: int

    def extract(self, frame: np.ndarray | None, detections: Sequence[Detection]): ...

    def affinity(self, prev_handle, cur_handle) -> np.ndarray: ...


class ModelAffinityProvider:
    """Affinities from a trained model running in inference mode."""

    needs_pixels = True

    def __init__(self, model: AffinityModel):
        self.model = model.eval()
        self.n_m = model.config.n_m

    def extract(self, frame: np.ndarray, detections: Sequence[Detection]) -> FeatureMatrix:
        height, width = frame.shape[:2]
        centers = np.asarray([d.center(width, height) for d in detections], dtype=np.float64)
        centers = centers.reshape(-1, 2)
        # detector jitter may push a center onto the frame edge
        centers = np.clip(centers, 0.0, np.nextafter(1.0, 0.0))
        with no_grad():
            return self.model.extract_features(frame, centers)

    def affinity(self, prev_handle: FeatureMatrix, cur_handle: FeatureMatrix) -> np.ndarray:
        with no_grad():
            bundle = self.model.estimate_affinity(prev_handle, cur_handle)
        return bundle.A.data.astype(np.float64)


class OracleAffinityProvider:
    """Ground-truth association matrices in place of network output."""

    needs_pixels = False

    def __init__(self, n_m: int):
        self.n_m = n_m

    def extract(self, frame, detections: Sequence[Detection]) -> list[int]:
        return [d.id for d in detections]

    def affinity(self, prev_ids: list[int], cur_ids: list[int]) -> np.ndarray:
        table = np.zeros((self.n_m, self.n_m + 1))
        lookup = {ident: j for j, ident in enumerate(cur_ids)}
        for k, ident in enumerate(prev_ids):
            j = lookup.get(ident)
            if j is None:
                table[k, self.n_m] = 1.0
            else:
                table[k, j] = 1.0
        return table


@dataclass
class Trajectory:
    id: int
    nodes: list[tuple[int, int]]  # (frame stamp, detection index in that frame)
    miss_count: int = 0


@dataclass
class TrackerState:
    tracks: list[Trajectory] = field(default_factory=list)
    feature_cache: dict[int, object] = field(default_factory=dict)
    next_id: int = 1


class Tracker:
    def __init__(self, provider: AffinityProvider, params: TrackerParams = TrackerParams()):
        self.provider = provider
        self.params = params
        self.state = TrackerState()
        self.records: list[Detection] = []

    def _truncate(self, detections: Sequence[Detection]) -> list[Detection]:
        n_m = self.provider.n_m
        if len(detections) <= n_m:
            return list(detections)
        logger.warning("frame has %d detections; keeping the %d most confident",
                       len(detections), n_m)
        ranked = sorted(range(len(detections)), key=lambda i: -detections[i].conf)
        keep = sorted(ranked[:n_m])
        return [detections[i] for i in keep]

    def step(self, frame_index: int, frame: np.ndarray | None,
             detections: Sequence[Detection]) -> list[Detection]:
        """Advance one frame; returns the hypothesis rows emitted for it."""
        state = self.state
        dets = self._truncate(detections)
        handle = self.provider.extract(frame, dets)
        n_real = len(dets)
        ui = self.provider.n_m
        emitted: list[Detection] = []

        matched: set[int] = set()
        if state.tracks:
            affinities = {
                stamp: self.provider.affinity(cached, handle)
                for stamp, cached in state.feature_cache.items()
            }
            rows = len(state.tracks)
            accumulator = np.zeros((rows, n_real + 1))
            for i, track in enumerate(state.tracks):
                for stamp, k in track.nodes:
                    table = affinities.get(stamp)
                    if table is None:
                        continue  # nodes older than the cache contribute nothing
                    accumulator[i, :n_real] += table[k, :n_real]
                    accumulator[i, n_real] += table[k, ui]
            augmented = np.concatenate(
                [accumulator[:, :n_real], np.repeat(accumulator[:, n_real:], rows, axis=1)], axis=1
            )
            assignment = solve_hungarian(augmented)
            for i, track in enumerate(state.tracks):
                column = assignment[i]
                if column < n_real and accumulator[i, column] > accumulator[i, n_real]:
                    track.nodes.append((frame_index, column))
                    track.miss_count = 0
                    matched.add(column)
                    emitted.append(self._row(frame_index, track.id, dets[column]))
                else:
                    track.miss_count += 1

        for j, det in enumerate(dets):
            if j in matched:
                continue
            track = Trajectory(id=state.next_id, nodes=[(frame_index, j)])
            state.next_id += 1
            state.tracks.append(track)
            emitted.append(self._row(frame_index, track.id, det))

        state.tracks = [t for t in state.tracks if t.miss_count <= self.params.delta_w]
        for track in state.tracks:
            while len(track.nodes) > self.params.delta_b:
                track.nodes.pop(0)
        state.feature_cache[frame_index] = handle
        while len(state.feature_cache) > self.params.delta_b:
            oldest = next(iter(state.feature_cache))
            del state.feature_cache[oldest]

        self.records.extend(emitted)
        return emitted

    @staticmethod
    def _row(frame_index: int, track_id: int, det: Detection) -> Detection:
        return Detection(frame_index, track_id, det.left, det.top, det.width, det.height,
                         conf=1.0, extras=(-1.0, -1.0, -1.0))

    def emit_tracks(self) -> list[Detection]:
        """All hypothesis rows emitted so far, in frame order."""
        return list(self.records)


def track_sequence(provider: AffinityProvider, seq: SceneSequence,
                   detections_by_frame: dict[int, list[Detection]],
                   params: TrackerParams = TrackerParams()) -> list[Detection]:
    """Run the tracker over a whole sequence using the given detections."""
    tracker = Tracker(provider, params)
    needs_pixels = getattr(provider, "needs_pixels", True)
    for frame_no in range(1, len(seq) + 1):
        frame = seq.frame(frame_no) if needs_pixels else None
        tracker.step(frame_no, frame, detections_by_frame.get(frame_no, []))
    return tracker.emit_tracks()
