"""Ground-truth association matrices between two frames.

The matrix L is (N_m + 1) x (N_m + 1): the first N_m rows/columns are
object slots of the earlier/later frame (real objects first, then dummy
padding), and the final row/column collects un-identified targets, i.e.
objects that entered or left between the two frames. The corner cell
(last row, last column) is always zero; no loss term reads it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

VISIBILITY_THRESHOLD = 0.3


class CapacityError(ValueError):
    """More real objects than the configured maximum per frame."""


@dataclass(frozen=True)
class AssociationLabel:
    L: np.ndarray  # (N_m + 1, N_m + 1) binary
    n_real_prev: int
    n_real_cur: int

    @property
    def n_max(self) -> int:
        return self.L.shape[0] - 1

    def trims(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(L1, L2, L3): drop the last row, the last column, then both."""
        n = self.n_max
        return self.L[:n, :], self.L[:, :n], self.L[:n, :n]


def build_label(ids_prev: Sequence, ids_cur: Sequence, n_max: int) -> AssociationLabel:
    """Binary correspondence of identities, with UI row/column for arrivals
    and departures and all-zero rows/columns for dummy padding."""
    if len(set(ids_prev)) != len(ids_prev) or len(set(ids_cur)) != len(ids_cur):
        raise ValueError("identities must be unique within a frame")
    if len(ids_prev) > n_max:
        raise CapacityError(f"{len(ids_prev)} objects in earlier frame exceed the {n_max} slot limit")
    if len(ids_cur) > n_max:
        raise CapacityError(f"{len(ids_cur)} objects in later frame exceed the {n_max} slot limit")
    L = np.zeros((n_max + 1, n_max + 1), dtype=np.int8)
    cur_index = {ident: j for j, ident in enumerate(ids_cur)}
    matched_cur = set()
    for i, ident in enumerate(ids_prev):
        j = cur_index.get(ident)
        if j is None:
            L[i, n_max] = 1  # departed
        else:
            L[i, j] = 1
            matched_cur.add(j)
    for j in range(len(ids_cur)):
        if j not in matched_cur:
            L[n_max, j] = 1  # entered
    return AssociationLabel(L=L, n_real_prev=len(ids_prev), n_real_cur=len(ids_cur))


def filter_occluded(objects: Sequence[tuple], threshold: float = VISIBILITY_THRESHOLD) -> list:
    """Drop (box, visibility) records with visibility strictly below the
    threshold; a value exactly at the threshold is kept."""
    kept = []
    for box, visibility in objects:
        if not 0.0 <= visibility <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {visibility}")
        if visibility >= threshold:
            kept.append((box, visibility))
    return kept
