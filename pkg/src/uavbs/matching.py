"""Minimum-total-distance reposition matching.

Current UAV-BS positions form one side of a complete bipartite graph and the
next-slot positions the other; edge weights are flight distances. A
Kuhn-Munkres (Hungarian) solver finds the perfect matching of least total
weight. :func:`enumerate_all` lists every permutation and serves as an
exhaustive oracle for small ``n``.
"""
from __future__ import annotations

import csv
import functools
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .errors import LengthMismatch, TooLarge
from .geo import GeoPoint, haversine_m

ENUMERATE_MAX_N = 10


@dataclass(frozen=True)
class CostMatrix:
    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise ValueError(f"cost matrix must be non-empty and square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("cost entries must be finite and non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class MatchingScheme:
    """``perm[i] = j`` sends the UAV at current position i to next position j."""

    perm: tuple[int, ...]
    total_cost: float

    def to_json(self) -> dict:
        return {"perm": list(self.perm), "total_cost_m": self.total_cost}


@dataclass
class Labels:
    """Vertex potentials; feasible when ``A[i] + B[j] <= w[i][j]`` everywhere."""

    A: np.ndarray
    B: np.ndarray

    def feasible(self, w: np.ndarray, tol: float = 1e-9) -> bool:
        slack = np.asarray(w) - self.A[:, None] - self.B[None, :]
        return bool(slack.min() >= -tol * max(1.0, float(np.abs(w).max())))


def build_cost_matrix(current: Sequence[GeoPoint], predicted: Sequence[GeoPoint]) -> CostMatrix:
    """Pairwise haversine distances (metres) from each current to each predicted position."""
    if len(current) != len(predicted):
        raise LengthMismatch(f"{len(current)} current vs {len(predicted)} predicted positions")
    if not current:
        raise LengthMismatch("no positions given")
    w = np.array([[haversine_m(a, b) for b in predicted] for a in current])
    return CostMatrix(w)


def scheme_cost(w: np.ndarray, perm: Sequence[int]) -> float:
    # summed row by row in Python floats so every caller gets the same rounding
    total = 0.0
    for i, j in enumerate(perm):
        total += float(w[i][j])
    return total


def solve_min_matching(
    costs: CostMatrix,
    on_labels: Optional[Callable[[Labels, Optional[np.ndarray]], None]] = None,
) -> MatchingScheme:
    """Kuhn-Munkres with vertex labels, O(n^3).

    Labels start at ``A[i] = min_j w[i][j]`` and ``B[j] = 0``, which is
    feasible for the minimisation form. Rows are inserted one at a time; each
    insertion grows an alternating tree over tight edges, relabelling by the
    smallest slack until a free column is reached, then augments. Scans run
    in ascending index order and only strict improvements replace a choice,
    so ties resolve to the lowest index.

    Args:
        costs: square cost matrix.
        on_labels: optional hook called with the current labels (and the
            column-to-row match array) after initialisation and after
            every relabel; used to audit feasibility.
    """
    w = costs.w
    n = costs.n
    A = w.min(axis=1).astype(float)
    B = np.zeros(n)
    # match_col[j] = row matched to column j, -1 when free
    match_col = np.full(n, -1, dtype=int)
    if on_labels is not None:
        on_labels(Labels(A.copy(), B.copy()), match_col.copy())

    for root in range(n):
        minslack = np.full(n, math.inf)
        slack_row = np.full(n, -1, dtype=int)  # row in the tree realising minslack[j]
        in_tree_col = np.zeros(n, dtype=bool)
        in_tree_row = np.zeros(n, dtype=bool)
        row_via = np.full(n, -1, dtype=int)  # column whose match brought the row in

        row = root
        via = -1
        while True:
            in_tree_row[row] = True
            row_via[row] = via
            # update slacks from the newly added row
            red = w[row] - A[row] - B
            for j in range(n):
                if not in_tree_col[j] and red[j] < minslack[j]:
                    minslack[j] = red[j]
                    slack_row[j] = row
            # pick the column with least slack, lowest index on ties
            delta = math.inf
            jmin = -1
            for j in range(n):
                if not in_tree_col[j] and minslack[j] < delta:
                    delta = minslack[j]
                    jmin = j
            if delta > 0:
                A[in_tree_row] += delta
                B[in_tree_col] -= delta
                minslack[~in_tree_col] -= delta
                if on_labels is not None:
                    on_labels(Labels(A.copy(), B.copy()), match_col.copy())
            in_tree_col[jmin] = True
            if match_col[jmin] == -1:
                break
            row = int(match_col[jmin])
            via = jmin

        # augment along the alternating path ending at jmin
        j = jmin
        while j != -1:
            r = slack_row[j]
            pj = row_via[r]
            match_col[j] = r
            j = pj

    perm = [0] * n
    for j in range(n):
        perm[match_col[j]] = j
    if on_labels is not None:
        on_labels(Labels(A.copy(), B.copy()), match_col.copy())
    return MatchingScheme(tuple(perm), scheme_cost(w, perm))


@functools.lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int8).reshape(-1, n)
    perms.setflags(write=False)
    return perms


def _all_totals(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = w.shape[0]
    perms = _permutations(n)
    # sequential accumulation matches scheme_cost() rounding exactly
    totals = np.zeros(len(perms))
    for i in range(n):
        totals += w[i, perms[:, i]]
    return perms, totals


def enumerate_all(costs: CostMatrix) -> list[MatchingScheme]:
    """Every perfect matching with its total, ascending by cost then by perm."""
    n = costs.n
    if n > ENUMERATE_MAX_N:
        raise TooLarge(f"n={n} exceeds the enumeration limit of {ENUMERATE_MAX_N} ({math.factorial(n)} schemes)")
    perms, totals = _all_totals(costs.w)
    # permutations() is lexicographic; a stable sort keeps that order on ties
    order = np.argsort(totals, kind="stable")
    return [MatchingScheme(tuple(int(j) for j in perms[k]), float(totals[k])) for k in order]


def brute_force_min(costs: CostMatrix) -> MatchingScheme:
    """Cheapest scheme by exhaustive search (lexicographically first on ties)."""
    if costs.n > ENUMERATE_MAX_N:
        raise TooLarge(f"n={costs.n} exceeds the enumeration limit of {ENUMERATE_MAX_N}")
    perms, totals = _all_totals(costs.w)
    k = int(np.argmin(totals))
    return MatchingScheme(tuple(int(j) for j in perms[k]), float(totals[k]))


def read_cost_csv(src: TextIO) -> CostMatrix:
    """Parse ``n`` on the first line followed by ``n`` rows of ``n`` costs."""
    rows = [r for r in csv.reader(src) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError("empty cost file")
    try:
        n = int(rows[0][0])
        body = [[float(c) for c in r] for r in rows[1:]]
    except ValueError as exc:
        raise ValueError(f"malformed cost file: {exc}") from None
    if n <= 0 or len(body) != n or any(len(r) != n for r in body):
        raise ValueError(f"expected {n} rows of {n} costs")
    return CostMatrix(np.array(body))


def write_cost_csv(costs: CostMatrix, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([costs.n])
    for row in costs.w:
        writer.writerow([repr(float(x)) for x in row])


def enumeration_json(schemes: Sequence[MatchingScheme]) -> str:
    return json.dumps({"schemes": [s.to_json() for s in schemes]})
