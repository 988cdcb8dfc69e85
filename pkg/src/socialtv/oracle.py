"""Brute-force reference optimiser for tests.

Enumerates ``{0, S_i/(L-1), ..., S_i}`` for every user and keeps the best
point satisfying the budget, the box and the exact delay-gap constraint
``max_i p_i - min_i p_i <= G`` with ``p_i = (D'_i + x_i/R_i - T)+``. It
shares nothing with the solvers beyond the problem data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocator import Allocation, SessionConfig
from .channel import cost_per_bit, transmission_rate

MAX_USERS = 4


@dataclass(frozen=True)
class GridSpec:
    levels_per_user: int = 201
    constraint_tolerance: float = 1e-9

    def __post_init__(self):
        if self.levels_per_user < 2:
            raise ValueError("levels_per_user must be >= 2")
        if self.constraint_tolerance < 0:
            raise ValueError("constraint_tolerance must be nonnegative")


def oracle_allocate(config: SessionConfig, users, grid: GridSpec = GridSpec()) -> Allocation:
    n = len(users)
    if n == 0:
        raise ValueError("empty user list")
    if n > MAX_USERS:
        raise ValueError(f"oracle scale guard: {n} users > {MAX_USERS}")

    cc = config.channel_constants
    m = config.qoe_model
    L = grid.levels_per_user
    tol = grid.constraint_tolerance
    h = np.array([u.gain_to_noise for u in users], dtype=float)
    S = np.array([u.requested_bits for u in users], dtype=float)
    off = np.array([u.prior_residual_delay for u in users], dtype=float)
    R = np.array([transmission_rate(v, cc) for v in h])
    cost = np.array([config.storage_cost_per_bit + cost_per_bit(v, cc) for v in h])
    budget = config.per_user_budget * n
    T, G = config.segment_duration, config.delay_bound

    frac = np.linspace(0.0, 1.0, L)
    sizes = [frac * S[i] for i in range(n)]
    per_user_cost = [cost[i] * sizes[i] for i in range(n)]
    per_user_play = [np.maximum(off[i] + sizes[i] / R[i] - T, 0.0) for i in range(n)]
    per_user_q = [m.alpha1 * np.log(m.alpha2 * frac + m.alpha3) for _ in range(n)]

    # the all-zero point: zero cost; its gap is that of the carried offsets
    best_q = -np.inf
    best_idx = None

    # chunk over the first user's level, in increasing order, so that the
    # first maximum found is the lexicographically smallest one
    rest = n - 1
    if rest:
        mesh = np.meshgrid(*([np.arange(L)] * rest), indexing="ij")
        rest_idx = [g.ravel() for g in mesh]
        rest_cost = sum(per_user_cost[i + 1][rest_idx[i]] for i in range(rest))
        rest_q = sum(per_user_q[i + 1][rest_idx[i]] for i in range(rest))
        rest_pmax = np.max([per_user_play[i + 1][rest_idx[i]] for i in range(rest)], axis=0)
        rest_pmin = np.min([per_user_play[i + 1][rest_idx[i]] for i in range(rest)], axis=0)
    else:
        rest_idx = []
        rest_cost = np.zeros(1)
        rest_q = np.zeros(1)
        rest_pmax = np.full(1, -np.inf)
        rest_pmin = np.full(1, np.inf)

    for j in range(L):
        total_cost = per_user_cost[0][j] + rest_cost
        p0 = per_user_play[0][j]
        gap = np.maximum(rest_pmax, p0) - np.minimum(rest_pmin, p0)
        ok = (total_cost <= budget * (1 + tol)) & (gap <= G + tol)
        if not ok.any():
            continue
        q = np.where(ok, per_user_q[0][j] + rest_q, -np.inf)
        k = int(np.argmax(q))
        if q[k] > best_q:
            best_q = q[k]
            best_idx = [j] + [int(r[k]) for r in rest_idx]

    if best_idx is None:
        return Allocation(np.zeros(n), "oracle", iterations=L ** n, converged=False)
    x = np.array([sizes[i][best_idx[i]] for i in range(n)])
    return Allocation(x, "oracle", iterations=L ** n, converged=True)
