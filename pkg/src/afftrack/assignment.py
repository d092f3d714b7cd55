"""Maximum-total-score bipartite assignment.

``solve_hungarian`` delegates the core optimization to scipy's Jonker-
Volgenant solver and then refines the result so that, among all optimal
assignments, the lexicographically smallest one is returned (row 0 takes
the lowest feasible column, then row 1, and so on). ``solve_bruteforce``
enumerates every injective mapping and serves as the verification oracle.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

BRUTE_FORCE_LIMIT = 9
_REL_TOL = 1e-9


def _check_problem(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"score matrix must be 2-D, got shape {scores.shape}")
    rows, cols = scores.shape
    if rows > cols:
        raise ValueError(f"need at least as many columns as rows, got {rows}x{cols}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("score matrix entries must be finite")
    return scores

def _optimal_total(scores: np.ndarray) -> float:
    if scores.shape[0] == 0:
        return 0.0
    rr, cc = linear_sum_assignment(scores, maximize=True)
    return float(scores[rr, cc].sum())


def assignment_total(scores: np.ndarray, assignment: dict[int, int]) -> float:
    return float(sum(scores[i, j] for i, j in assignment.items()))


def solve_hungarian(scores) -> dict[int, int]:
    """Injective row-to-column mapping with maximal total score.

    Ties between optimal assignments break toward the lexicographically
    smallest mapping, which keeps downstream tracking runs reproducible.
    """
    scores = _check_problem(scores)
    rows, cols = scores.shape
    total = _optimal_total(scores)
    tol = _REL_TOL * max(1.0, np.abs(scores).sum())
    assignment: dict[int, int] = {}
    free = list(range(cols))
    needed = total
    for i in range(rows):
        for pos, c in enumerate(free):
            rest_cols = free[:pos] + free[pos + 1 :]
            rest = scores[np.ix_(range(i + 1, rows), rest_cols)]
            candidate = scores[i, c] + _optimal_total(rest)
            if candidate >= needed - tol:
                assignment[i] = c
                free.pop(pos)
                needed -= scores[i, c]
                break
        else:  # pragma: no cover - the optimum always admits some column
            raise RuntimeError("no feasible column reproduces the optimal total")
    return assignment


def solve_bruteforce(scores) -> dict[int, int]:
    """Exhaustive search over all injective mappings (small problems only).

    Iterates column tuples in lexicographic order and keeps strict
    improvements, so ties resolve exactly as in ``solve_hungarian``.
    """
    scores = _check_problem(scores)
    rows, cols = scores.shape
    if cols > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force refuses more than {BRUTE_FORCE_LIMIT} columns, got {cols}")
    if rows == 0:
        return {}
    best_total = -np.inf
    best: tuple[int, ...] | None = None
    for perm in itertools.permutations(range(cols), rows):
        total = scores[range(rows), perm].sum()
        if total > best_total:
            best_total = total
            best = perm
    assert best is not None
    return {i: c for i, c in enumerate(best)}
