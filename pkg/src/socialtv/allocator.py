"""Per-segment playback-size allocation.

Maximises ``sum_i a1 * ln(a2 * x_i / S_i + a3)`` over allocated sizes ``x``
subject to

* the session budget ``sum_i (a + b_i) x_i <= n * C``,
* the box ``0 <= x_i <= S_i``,
* an inter-user play-delay gap of at most ``G`` where the play delay of user
  ``i`` is ``(D'_i + x_i / R_i - T)+`` and ``D'_i`` is residual delay carried
  over from earlier segments (zero for a single segment).

The delay constraint is handled in two convex pieces. In the *moderate* case
some user finishes within ``T`` so the constraint reduces to per-user caps
``x_i <= R_i (T + G - D'_i)``; this is a capped water-filling problem. In the
*severe* case every user overruns ``T`` and all delays must fit inside a band
``[t, t + G]`` whose position ``t`` (the minimum delay) is itself a decision.
For fixed ``t`` that is again a water-filling problem, and the best value as a
function of ``t`` is concave, so a bounded 1-D search finds the band.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelConstants, cost_per_bit, transmission_rate
from .qoe import QoEModel

log = logging.getLogger(__name__)

CASE_LABELS = ("moderate", "severe", "fallback", "benchmark-maxqoe", "benchmark-mindelay",
               "oracle")
DEFAULT_LADDER = (0.2, 0.4, 0.6, 0.8, 1.0)

# Relative slack for the budget and absolute slack (s) for the delay gap used
# when deciding whether a candidate solution is acceptable.
BUDGET_RTOL = 1e-6
GAP_ATOL = 1e-6


@dataclass(frozen=True)
class SessionConfig:
    per_user_budget: float
    qoe_model: QoEModel
    delay_bound: float = 3.0
    segment_duration: float = 10.0
    storage_cost_per_bit: float = 1.0
    channel_constants: ChannelConstants = field(default_factory=ChannelConstants)

    def __post_init__(self):
        if not self.per_user_budget > 0:
            raise ValueError("per_user_budget must be positive")
        if not self.segment_duration > 0:
            raise ValueError("segment_duration must be positive")
        if not self.delay_bound >= 0:
            raise ValueError("delay_bound must be nonnegative")
        if not self.storage_cost_per_bit >= 0:
            raise ValueError("storage_cost_per_bit must be nonnegative")


@dataclass(frozen=True)
class UserState:
    gain_to_noise: float
    requested_bits: float
    prior_residual_delay: float = 0.0

    def __post_init__(self):
        if not self.gain_to_noise > 0:
            raise ValueError(f"gain_to_noise must be positive, got {self.gain_to_noise}")
        if not self.requested_bits > 0:
            raise ValueError(f"requested_bits must be positive, got {self.requested_bits}")
        if not self.prior_residual_delay >= 0:
            raise ValueError("prior_residual_delay must be nonnegative")


@dataclass(eq=False)
class Allocation:
    sizes_bits: np.ndarray
    case_label: str
    iterations: int = 0
    converged: bool = True
    budget_multiplier: float = 0.0

    def __post_init__(self):
        self.sizes_bits = np.asarray(self.sizes_bits, dtype=float)
        if self.case_label not in CASE_LABELS:
            raise ValueError(f"unknown case label {self.case_label!r}")


@dataclass(frozen=True)
class FeasibilityReport:
    c1_slack: float
    c2_gap: float
    c3_ok: bool
    per_user_delays: np.ndarray


@dataclass(frozen=True)
class _Problem:
    """Arrays derived from a config and its user reports."""

    S: np.ndarray       # requested sizes (bits)
    R: np.ndarray       # rates (bits/s)
    c: np.ndarray       # total per-bit cost a + b_i
    offset: np.ndarray  # carried residual delay D'_i (s)
    budget: float
    T: float
    G: float
    model: QoEModel

    @property
    def n(self):
        return len(self.S)

    def delays(self, x):
        return self.offset + x / self.R

    def play_delays(self, x):
        return np.maximum(self.delays(x) - self.T, 0.0)

    def qoe(self, x):
        m = self.model
        return float(np.sum(m.alpha1 * np.log(m.alpha2 * x / self.S + m.alpha3)))


def _problem(config: SessionConfig, users) -> _Problem:
    if len(users) == 0:
        raise ValueError("empty user list")
    h = np.array([u.gain_to_noise for u in users], dtype=float)
    cc = config.channel_constants
    R = np.atleast_1d(transmission_rate(h, cc))
    b = np.atleast_1d(cost_per_bit(h, cc))
    return _Problem(
        S=np.array([u.requested_bits for u in users], dtype=float),
        R=R,
        c=config.storage_cost_per_bit + b,
        offset=np.array([u.prior_residual_delay for u in users], dtype=float),
        budget=config.per_user_budget * len(users),
        T=config.segment_duration,
        G=config.delay_bound,
        model=config.qoe_model,
    )


def water_fill(c, S, lo, hi, budget, model: QoEModel):
    """Maximise the summed log-QoE over ``lo <= x <= hi`` with ``c @ x <= budget``.

    Every unclamped coordinate satisfies ``a1*a2 / (a2*x + a3*S) = lam * c``,
    i.e. ``x = a1 / (lam * c) - a3 * S / a2``. The budget is piecewise of the
    form ``A / lam + B`` between clamping breakpoints, so ``lam`` is found
    exactly. Returns ``(x, lam)``, or ``(None, inf)`` if even ``lo`` is
    unaffordable.
    """
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    a1, a2, a3 = model.alpha1, model.alpha2, model.alpha3
    shift = a3 * np.asarray(S, dtype=float) / a2

    if c @ hi <= budget:
        return hi.copy(), 0.0
    if c @ lo > budget * (1 + 1e-12):
        return None, np.inf

    # x_i hits hi_i for lam <= a1 / (c_i (hi_i + shift_i)) and lo_i for
    # lam >= a1 / (c_i (lo_i + shift_i)).
    bps = np.unique(np.concatenate([a1 / (c * (hi + shift)), a1 / (c * (lo + shift))]))
    if c @ lo >= budget:
        return lo.copy(), float(bps[-1])

    def x_of(lam):
        return np.clip(a1 / (lam * c) - shift, lo, hi)

    costs = np.array([c @ x_of(lam) for lam in bps])  # non-increasing
    j = int(np.searchsorted(-costs, -budget, side="left"))
    if j < len(bps) and costs[j] == budget:
        lam = bps[j]
        return x_of(lam), float(lam)
    # budget lies strictly between costs[j-1] > budget > costs[j]
    left = bps[j - 1]
    right = bps[j] if j < len(bps) else bps[-1] * 2.0
    mid = np.sqrt(left * right)
    x_mid = a1 / (mid * c) - shift
    free = (x_mid > lo) & (x_mid < hi)
    fixed = np.where(x_mid <= lo, lo, hi)
    fixed_cost = c[~free] @ fixed[~free]
    denom = budget - fixed_cost + c[free] @ shift[free]
    lam = free.sum() * a1 / denom if free.any() and denom > 0 else np.nan
    if not left * (1 - 1e-9) <= lam <= right * (1 + 1e-9):
        # near-degenerate segment (free set lost to rounding): bisect instead
        lo_lam, hi_lam = left, right
        for _ in range(200):
            lam = np.sqrt(lo_lam * hi_lam)
            if c @ x_of(lam) > budget:
                lo_lam = lam
            else:
                hi_lam = lam
        lam = hi_lam
    x = x_of(lam)
    # guard against rounding pushing the total just over budget
    total = c @ x
    if total > budget:
        x = np.where(free, np.maximum(x - (total - budget) / c.sum(), lo), x)
    return x, float(lam)


def feasibility_report(config: SessionConfig, users, alloc: Allocation) -> FeasibilityReport:
    p = _problem(config, users)
    x = alloc.sizes_bits
    if x.shape != (p.n,):
        raise ValueError(f"allocation has {x.size} entries for {p.n} users")
    pd = p.play_delays(x)
    return FeasibilityReport(
        c1_slack=float(p.budget - p.c @ x),
        c2_gap=float(pd.max() - pd.min()),
        c3_ok=bool(np.all(x >= 0) and np.all(x <= p.S)),
        per_user_delays=pd,
    )


def total_qoe(config: SessionConfig, users, alloc: Allocation) -> float:
    return _problem(config, users).qoe(alloc.sizes_bits)


def _moderate(p: _Problem):
    caps = np.minimum(p.S, p.R * (p.T + p.G - p.offset))
    feasible = bool(np.all(caps >= 0))
    caps = np.maximum(caps, 0.0)
    x, lam = water_fill(p.c, p.S, np.zeros(p.n), caps, p.budget, p.model)
    return x, lam, feasible


def allocate_moderate(config: SessionConfig, users) -> Allocation:
    """Capped water-filling: budget, box, and ``x_i <= R_i (T + G - D'_i)``.

    If some user's carried delay already exceeds ``T + G`` that cap is
    negative; the user is pinned at zero and the result is flagged
    ``converged=False`` since the linearised delay constraint cannot hold.
    """
    p = _problem(config, users)
    x, lam, feasible = _moderate(p)
    return Allocation(x, "moderate", iterations=1, converged=feasible,
                      budget_multiplier=lam)


def _band_bounds(p: _Problem, t):
    lo = np.maximum(p.R * (t - p.offset), 0.0)
    hi = np.minimum(p.S, p.R * (t + p.G - p.offset))
    return lo, hi


def _band_range(p: _Problem):
    """Interval of band floors ``t`` for which the band problem is feasible."""
    t_min = float(np.max(p.offset)) - p.G
    t_max = float(np.min(p.offset + p.S / p.R))
    # largest t whose forced lower bounds are affordable; cost is piecewise
    # linear and increasing in t
    order = np.argsort(p.offset)
    o, w = p.offset[order], (p.c * p.R)[order]
    t_budget = np.inf
    for j in range(p.n):
        # on [o_j, o_{j+1}] the first j+1 users contribute
        slope = w[: j + 1].sum()
        intercept = w[: j + 1] @ o[: j + 1]
        t = (p.budget + intercept) / slope
        upper = o[j + 1] if j + 1 < p.n else np.inf
        if t <= upper:
            t_budget = t
            break
    return t_min, min(t_max, t_budget)


def _band_solve(p: _Problem, t):
    lo, hi = _band_bounds(p, t)
    if np.any(hi < lo):
        return None, np.inf
    return water_fill(p.c, p.S, lo, hi, p.budget, p.model)


def _severe_band(p: _Problem):
    t_min, t_max = _band_range(p)
    if t_min > t_max:
        return np.zeros(p.n), 0.0, 0, False

    def neg_value(t):
        x, _ = _band_solve(p, t)
        return np.inf if x is None else -p.qoe(x)

    candidates = [t_min, t_max]
    nfev = 2
    converged = True
    if t_max > t_min:
        scale = max(1.0, abs(t_min), abs(t_max))
        res = minimize_scalar(neg_value, bounds=(t_min, t_max), method="bounded",
                              options={"xatol": 1e-10 * scale, "maxiter": 500})
        candidates.append(float(res.x))
        nfev += int(res.nfev)
        converged = bool(res.success)
    best_t = min(candidates, key=neg_value)
    x, lam = _band_solve(p, best_t)
    if x is None:
        return np.zeros(p.n), 0.0, nfev, False
    return x, lam, nfev, converged


def _severe_dual_ascent(p: _Problem, kappa0=0.1, tol=None, max_iter=100_000):
    """Projected dual ascent on the Lagrangian with the minimum-delay user ``k``.

    Each round: find ``k = argmin_i tau_i`` (``tau = D' + x/R``), take projected
    steps on the budget multiplier, the box multipliers and the band
    multipliers ``beta_i`` for ``tau_i - tau_k <= G``, then recompute
    ``x_i = a1 / (lam c_i + mu_i + beta_i/R_i - theta_i) - a3 S_i / a2``
    clamped to ``[0, S_i]``. The minimum user also receives the
    ``sum(beta)/R_k`` term from differentiating ``-beta_i * (-x_k/R_k)``.
    Steps are ``kappa0 / sqrt(l)`` scaled per constraint family so that
    budget (cost units) and band (seconds) residuals are commensurate.
    """
    m = p.model
    a1, a2, a3 = m.alpha1, m.alpha2, m.alpha3
    shift = a3 * p.S / a2
    if tol is None:
        tol = 1e-6 * float(p.S.max())

    x, lam = water_fill(p.c, p.S, np.zeros(p.n), p.S, p.budget, m)
    marginal = a1 * a2 / ((a2 * x + a3 * p.S) * p.c)
    lam_ref = max(lam, float(marginal.mean()))
    beta_ref = lam_ref * float(np.mean(p.c * p.R))
    box_ref = lam_ref * float(np.mean(p.c)) / float(np.mean(p.S))
    mu = np.zeros(p.n)
    theta = np.zeros(p.n)
    beta = np.zeros(p.n)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        kappa = kappa0 / np.sqrt(it)
        tau = p.delays(x)
        k = int(np.argmin(tau))
        lam = max(0.0, lam - kappa * lam_ref * (p.budget - p.c @ x) / p.budget)
        mu = np.maximum(0.0, mu - kappa * box_ref * (p.S - x))
        theta = np.maximum(0.0, theta - kappa * box_ref * x)
        beta = np.maximum(0.0, beta - kappa * beta_ref * (p.G + tau[k] - tau) / p.T)
        denom = lam * p.c + mu + beta / p.R - theta
        denom[k] -= beta.sum() / p.R[k]
        with np.errstate(divide="ignore"):
            x_new = np.where(denom > 0, a1 / np.where(denom > 0, denom, 1.0) - shift, p.S)
        x_new = np.clip(x_new, 0.0, p.S)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        if step < tol:
            tau = p.delays(x)
            over_budget = p.c @ x - p.budget
            band_violation = float(tau.max() - tau.min() - p.G)
            if over_budget <= BUDGET_RTOL * p.budget and band_violation <= 1e-3:
                converged = True
                break

    # primal recovery: keep the band the iterate settled on, re-solve the
    # budget multiplier exactly inside it
    t_min, t_max = _band_range(p)
    t = min(max(float(p.delays(x).min()), t_min), t_max)
    x_rec, lam_rec = _band_solve(p, t)
    if x_rec is None:
        return np.zeros(p.n), 0.0, it, False
    return x_rec, lam_rec, it, converged


def allocate_severe(config: SessionConfig, users, method: str = "band", **kwargs) -> Allocation:
    """Severe-delay solver: all delays kept within ``[t, t + G]``.

    ``method="band"`` (default) searches the band floor ``t`` directly.
    ``method="dual"`` runs the projected dual ascent, accepting ``kappa0``,
    ``tol`` and ``max_iter``, then recovers a feasible primal point.
    Non-convergence is reported through ``Allocation.converged``.
    """
    p = _problem(config, users)
    if method == "band":
        x, lam, its, ok = _severe_band(p)
    elif method == "dual":
        x, lam, its, ok = _severe_dual_ascent(p, **kwargs)
    else:
        raise ValueError(f"unknown severe method {method!r}")
    return Allocation(x, "severe", iterations=its, converged=ok, budget_multiplier=lam)


def _gap(p: _Problem, x) -> float:
    pd = p.play_delays(x)
    return float(pd.max() - pd.min())


def _acceptable(p: _Problem, alloc: Allocation) -> bool:
    x = alloc.sizes_bits
    return (_gap(p, x) <= p.G + GAP_ATOL
            and p.c @ x <= p.budget * (1 + BUDGET_RTOL))


def allocate(config: SessionConfig, users) -> Allocation:
    """Pick the moderate or severe solver and validate its outcome.

    The severe solver runs first when every user's carried delay exceeds
    ``T``; otherwise the moderate one does. A moderate result stands if some
    user still finishes inside ``T``; a severe result stands if none does. If
    the first solver's check fails the other runs, and if both fail the
    better of the two delay-feasible candidates is returned as ``fallback``.
    """
    p = _problem(config, users)
    severe_first = float(np.min(p.offset - p.T)) > 0
    order = ("severe", "moderate") if severe_first else ("moderate", "severe")
    tried = []
    for name in order:
        if name == "moderate":
            alloc = allocate_moderate(config, users)
            valid = float(np.min(p.delays(alloc.sizes_bits) - p.T)) < 0
        else:
            alloc = allocate_severe(config, users)
            valid = float(np.min(p.delays(alloc.sizes_bits) - p.T)) >= 0
        if valid and _acceptable(p, alloc):
            return alloc
        tried.append(alloc)

    feasible = [a for a in tried if _acceptable(p, a)]
    if feasible:
        best = max(feasible, key=lambda a: p.qoe(a.sizes_bits))
        return replace(best, case_label="fallback")
    log.warning("no delay-feasible candidate; returning least-violating allocation")
    best = min(tried, key=lambda a: _gap(p, a.sizes_bits))
    return replace(best, case_label="fallback", converged=False)


def max_qoe_scheme(config: SessionConfig, users) -> Allocation:
    """Budget and box only; the delay gap is ignored."""
    p = _problem(config, users)
    x, lam = water_fill(p.c, p.S, np.zeros(p.n), p.S, p.budget, p.model)
    return Allocation(x, "benchmark-maxqoe", iterations=1, budget_multiplier=lam)


def min_delay_scheme(config: SessionConfig, users) -> Allocation:
    """Sizes proportional to rate, so every transmission delay is equal.

    The common delay is the largest one the budget affords, capped at
    ``min_i S_i / R_i`` so no user exceeds their request.
    """
    p = _problem(config, users)
    delay = min(p.budget / float(p.c @ p.R), float(np.min(p.S / p.R)))
    x = np.minimum(delay * p.R, p.S)
    return Allocation(x, "benchmark-mindelay", iterations=1)


def discretize(config: SessionConfig, users, alloc: Allocation,
               ladder=DEFAULT_LADDER) -> Allocation:
    """Snap each size to the nearest ladder fraction of its request.

    Zero counts as a level (segment skipped). If snapping breaks the budget,
    users are stepped down one level at a time, largest cost saving first.
    If the input met the delay-gap bound, the user with the largest play
    delay is stepped down until it holds again.
    """
    ladder = sorted(float(f) for f in ladder)
    if not ladder:
        raise ValueError("empty ladder")
    if ladder[0] <= 0 or ladder[-1] > 1:
        raise ValueError("ladder fractions must lie in (0, 1]")
    p = _problem(config, users)
    levels = np.array([0.0] + ladder)
    ratio = alloc.sizes_bits / p.S
    idx = np.argmin(np.abs(ratio[:, None] - levels[None, :]), axis=1)
    keep_gap = _gap(p, alloc.sizes_bits) <= p.G + GAP_ATOL

    def sizes():
        return levels[idx] * p.S

    while True:
        x = sizes()
        movable = idx > 0
        if not movable.any():
            break
        if p.c @ x > p.budget * (1 + BUDGET_RTOL):
            lower = levels[np.maximum(idx - 1, 0)] * p.S
            saving = np.where(movable, p.c * (x - lower), -np.inf)
            idx[int(np.argmax(saving))] -= 1
        elif keep_gap and _gap(p, x) > p.G + GAP_ATOL:
            delay = np.where(movable, p.play_delays(x), -np.inf)
            idx[int(np.argmax(delay))] -= 1
        else:
            break
    return replace(alloc, sizes_bits=sizes())
