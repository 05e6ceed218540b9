"""Independent reference implementations used only by tests.

Deliberately written in the most literal style available (explicit dense
matrices, explicit inverses, exhaustive enumeration) so they share no code
or algorithmic structure with the package under test.
"""

from __future__ import annotations

import numpy as np


def kf_matrices():
    f = np.eye(8)
    for i in range(4):
        f[i, 4 + i] = 1.0
    h = np.hstack([np.eye(4), np.zeros((4, 4))])
    return f, h


def kf_initiate_oracle(z, swp, swv):
    mean = np.concatenate([np.asarray(z, dtype=float), np.zeros(4)])
    h = float(z[3])
    std = [2 * swp * h, 2 * swp * h, 1e-2, 2 * swp * h,
           10 * swv * h, 10 * swv * h, 1e-5, 10 * swv * h]
    return mean, np.diag(np.square(std))


def kf_predict_oracle(mean, cov, swp, swv):
    f, _ = kf_matrices()
    h = float(mean[3])
    std = [swp * h, swp * h, 1e-2, swp * h,
           swv * h, swv * h, 1e-5, swv * h]
    q = np.diag(np.square(std))
    return f @ mean, f @ cov @ f.T + q


def kf_update_oracle(mean, cov, z, confidence, swp, nsa):
    _, h_mat = kf_matrices()
    bh = float(mean[3])
    std = [swp * bh, swp * bh, 1e-1, swp * bh]
    r = np.diag(np.square(std))
    if nsa:
        r = (1.0 - confidence) * r
    s = h_mat @ cov @ h_mat.T + r
    k = cov @ h_mat.T @ np.linalg.inv(s)
    new_mean = mean + k @ (np.asarray(z, dtype=float) - h_mat @ mean)
    new_cov = (np.eye(8) - k @ h_mat) @ cov
    return new_mean, (new_cov + new_cov.T) / 2.0


def assignment_oracle(costs):
    """Exhaustive max-cardinality min-cost matching value.

    Dynamic program over used-column bitmasks; returns (cardinality, cost).
    Costs are accumulated row by row in ascending row order.
    """
    c = np.asarray(costs, dtype=float)
    n, m = c.shape
    n_masks = 1 << m
    best_card = np.zeros(n_masks, dtype=np.int64)
    best_cost = np.full(n_masks, np.inf)
    best_cost[0] = 0.0
    best_card_valid = np.zeros(n_masks, dtype=bool)
    best_card_valid[0] = True
    for r in range(n):
        new_card = best_card.copy()
        new_cost = best_cost.copy()
        new_valid = best_card_valid.copy()
        for col in range(m):
            if not np.isfinite(c[r, col]):
                continue
            bit = 1 << col
            src = np.arange(n_masks)
            src = src[(src & bit) == 0]
            src = src[best_card_valid[src]]
            dst = src | bit
            cand_card = best_card[src] + 1
            cand_cost = best_cost[src] + c[r, col]
            better = ~new_valid[dst] | (cand_card > new_card[dst]) | (
                (cand_card == new_card[dst]) & (cand_cost < new_cost[dst])
            )
            upd = dst[better]
            new_card[upd] = cand_card[better]
            new_cost[upd] = cand_cost[better]
            new_valid[upd] = True
        best_card, best_cost, best_card_valid = new_card, new_cost, new_valid
    top = best_card[best_card_valid].max() if best_card_valid.any() else 0
    sel = best_card_valid & (best_card == top)
    return int(top), float(best_cost[sel].min())
