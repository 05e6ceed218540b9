"""Exact min-cost bipartite assignment with forbidden cells.

Cost matrices are plain float arrays; FORBIDDEN (+inf) marks pairs that must
never be matched. solve() returns the largest matching the allowed cells
admit and, among those, one with minimum total cost. Ties are broken
deterministically: the returned match list (sorted by row) is the
lexicographically smallest optimal solution, comparing (row, col) pairs.

The solver runs a potentials-based Hungarian pass per connected component of
the allowed-cell graph, then canonicalizes ties by walking alternating paths
inside the zero-reduced-cost subgraph. Costs may be negative; only NaN and
-inf are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FORBIDDEN = math.inf


@dataclass(frozen=True)
class AssignmentResult:
    matches: tuple[tuple[int, int], ...]
    unmatched_rows: tuple[int, ...]
    unmatched_cols: tuple[int, ...]


def gate(costs, threshold: float) -> np.ndarray:
    """Copy of the cost matrix with entries above threshold set to FORBIDDEN."""
    c = _validated(costs)
    c[c > threshold] = FORBIDDEN
    return c


def solve(costs) -> AssignmentResult:
    """Assign rows to columns avoiding FORBIDDEN cells.

    Maximizes the number of matched pairs, then minimizes their total cost;
    ties resolve to the lexicographically smallest match list.
    """
    c = _validated(costs, copy=False)
    n_rows, n_cols = c.shape
    if n_rows == 0 or n_cols == 0:
        return AssignmentResult((), tuple(range(n_rows)), tuple(range(n_cols)))

    finite = np.isfinite(c)
    matches: list[tuple[int, int]] = []
    row_seen = np.zeros(n_rows, dtype=bool)
    col_seen = np.zeros(n_cols, dtype=bool)

    # A row and column that only allow each other form a 1x1 component;
    # peel those off in one vectorized pass before the general search.
    row_counts = finite.sum(axis=1)
    col_counts = finite.sum(axis=0)
    solo_rows = np.flatnonzero(row_counts == 1)
    if solo_rows.size:
        solo_cols = np.argmax(finite[solo_rows], axis=1)
        isolated = col_counts[solo_cols] == 1
        for r, col in zip(solo_rows[isolated], solo_cols[isolated]):
            matches.append((int(r), int(col)))
            row_seen[r] = True
            col_seen[col] = True

    for r0 in range(n_rows):
        if row_seen[r0] or not finite[r0].any():
            continue
        rows, cols = _component(finite, r0, row_seen, col_seen)
        sub = c[np.ix_(rows, cols)]
        for ri, ci in _solve_component(sub, np.isfinite(sub)):
            matches.append((int(rows[ri]), int(cols[ci])))

    matches.sort()
    matched_rows = {r for r, _ in matches}
    matched_cols = {col for _, col in matches}
    return AssignmentResult(
        tuple(matches),
        tuple(r for r in range(n_rows) if r not in matched_rows),
        tuple(col for col in range(n_cols) if col not in matched_cols),
    )


def _validated(costs, copy: bool = True) -> np.ndarray:
    # copy=False is safe only for callers that never write to the matrix
    c = (
        np.array(costs, dtype=np.float64)
        if copy
        else np.asarray(costs, dtype=np.float64)
    )
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    if np.isnan(c).any():
        raise ValueError("cost matrix must not contain NaN")
    if np.isneginf(c).any():
        raise ValueError("cost entries must be finite or FORBIDDEN (+inf)")
    return c


def _component(finite, r0, row_seen, col_seen):
    """Rows and cols of the allowed-cell component containing row r0."""
    rows_mask = np.zeros(finite.shape[0], dtype=bool)
    cols_mask = np.zeros(finite.shape[1], dtype=bool)
    rows_mask[r0] = True
    frontier = rows_mask.copy()
    while True:
        new_cols = finite[frontier].any(axis=0) & ~cols_mask
        if not new_cols.any():
            break
        cols_mask |= new_cols
        new_rows = finite[:, new_cols].any(axis=1) & ~rows_mask
        if not new_rows.any():
            break
        rows_mask |= new_rows
        frontier = new_rows
    row_seen |= rows_mask
    col_seen |= cols_mask
    return np.flatnonzero(rows_mask), np.flatnonzero(cols_mask)


def _solve_component(sub: np.ndarray, finite: np.ndarray) -> list[tuple[int, int]]:
    nr, nc = sub.shape
    if nr == 1:
        masked = np.where(finite[0], sub[0], np.inf)
        return [(0, int(np.argmin(masked)))]
    if nc == 1:
        masked = np.where(finite[:, 0], sub[:, 0], np.inf)
        return [(int(np.argmin(masked)), 0)]

    # Pad to a square so every row/col can opt out at cost M. M exceeds any
    # real-cost advantage, so match count is maximized first; F0 exceeds any
    # M-path, so forbidden cells are never used.
    scale = float(np.abs(sub[finite]).max(initial=0.0))
    m_pad = min(nr, nc) * scale + 1.0
    f0 = (nr + nc + 1) * (m_pad + scale + 1.0)
    size = nr + nc
    a = np.full((size, size), f0)
    a[:nr, :nc] = np.where(finite, sub, f0)
    a[np.arange(nr), nc + np.arange(nr)] = m_pad
    a[nr + np.arange(nc), np.arange(nc)] = m_pad
    a[nr:, nc:] = 0.0

    col_of, u, v = _hungarian_square(a)
    row_of = np.empty(size, dtype=np.int64)
    row_of[col_of] = np.arange(size)

    # Zero-reduced-cost cells carry every optimal assignment; canonicalize
    # the tie-break inside that subgraph.
    tol = 1e-9 * max(1.0, m_pad + scale)
    eq = (a - u[:, None] - v[None, :]) <= tol
    _canonicalize(eq, row_of, col_of, nr, nc)

    return [(r, int(col_of[r])) for r in range(nr) if col_of[r] < nc]


def _hungarian_square(a: np.ndarray):
    """Classic O(n^3) Hungarian on a square matrix.

    Returns (col_of_row, u, v) with u[i] + v[j] <= a[i, j] everywhere and
    equality on matched cells.

    Scalar loops beat vectorized passes here: component matrices are tiny,
    so per-op dispatch would dominate. Ties go to the lowest column index,
    matching a first-minimum scan.
    """
    n = a.shape[0]
    rows = a.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j] = 1-based row matched to col j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            u_i0 = u[p[j0]]
            row = rows[p[j0] - 1]
            delta = inf
            jm = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u_i0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    jm = j
            if jm == 0 or math.isinf(delta):
                raise RuntimeError("augmenting path search stalled on a padded square matrix")
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = jm
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of = np.empty(n, dtype=np.int64)
    col_of[np.asarray(p[1:], dtype=np.int64) - 1] = np.arange(n)
    return col_of, np.asarray(u[1:]), np.asarray(v[1:])


def _canonicalize(eq: np.ndarray, row_of: np.ndarray, col_of: np.ndarray, nr: int, nc: int):
    """Rewire the matching to the lexicographically smallest optimal one.

    Processes real rows in order; for each, tries equality-graph columns
    smaller than the current one (a real column always beats opting out) and
    keeps any that still extend to a perfect matching of the padded square.
    """
    size = eq.shape[0]
    locked_cols = np.zeros(size, dtype=bool)
    for r in range(nr):
        current = int(col_of[r])
        limit = current if current < nc else nc
        for c in range(limit):
            if not eq[r, c] or locked_cols[c]:
                continue
            if _try_reassign(eq, row_of, col_of, locked_cols, r, c):
                break
        locked_cols[col_of[r]] = True


def _try_reassign(eq, row_of, col_of, locked_cols, r: int, c: int) -> bool:
    """Give col c to row r if the displaced row can be re-matched via eq edges."""
    c_old = int(col_of[r])
    r_displaced = int(row_of[c])
    col_of[r] = c
    row_of[c] = r
    row_of[c_old] = -1
    visited = locked_cols.copy()
    visited[c] = True
    if _augment(eq, row_of, col_of, visited, r_displaced):
        return True
    col_of[r] = c_old
    row_of[c_old] = r
    row_of[c] = r_displaced
    return False


def _augment(eq, row_of, col_of, visited, r: int) -> bool:
    for c in np.flatnonzero(eq[r] & ~visited):
        c = int(c)
        visited[c] = True
        if row_of[c] == -1 or _augment(eq, row_of, col_of, visited, int(row_of[c])):
            row_of[c] = r
            col_of[r] = c
            return True
    return False
