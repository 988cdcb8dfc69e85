"""Multi-segment session simulation and budget sweeps.

Every segment redraws i.i.d. channel gains, asks the chosen scheme for an
allocation and advances each user's residual delay

    D'_i <- (D'_i + D_i - T)+

which is the accumulated play delay the adaptive scheme constrains. The
non-adaptive scheme solves each segment as if no delay had built up.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import allocator as alloc_mod
from .allocator import Allocation, SessionConfig, UserState
from .channel import sample_gain, transmission_rate
from .qoe import REFERENCE_MODELS, QoEModel

log = logging.getLogger(__name__)

SCHEMES = ("proposed-adaptive", "proposed-nonadaptive", "max-qoe", "min-delay")
SWEEP_SCHEMES = ("proposed", "max-qoe", "min-delay")


@dataclass(frozen=True)
class VideoProfile:
    name: str
    model: QoEModel
    rate_kbps: float  # requested playback rate; also the QoE normalisation rate

    def requested_bits(self, segment_duration: float) -> float:
        return self.rate_kbps * 1e3 * segment_duration


# Requested rates are the normalisation rates under which each model was fitted.
VIDEO_PROFILES = {
    "duck": VideoProfile("duck", REFERENCE_MODELS["duck"], 8108.5),
    "crew": VideoProfile("crew", REFERENCE_MODELS["crew"], 6520.8),
    "ice": VideoProfile("ice", REFERENCE_MODELS["ice"], 1133.3),
}


@dataclass(frozen=True)
class ScenarioConfig:
    session: SessionConfig
    num_users: int
    num_segments: int = 30
    scheme: str = "proposed-adaptive"
    requested_sizes: tuple | str = "duck"
    seed: int = 0
    discretize: tuple | None = None

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.num_segments < 1:
            raise ValueError("num_segments must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if isinstance(self.requested_sizes, str):
            if self.requested_sizes not in VIDEO_PROFILES:
                raise ValueError(f"unknown video profile {self.requested_sizes!r}")
        elif len(self.requested_sizes) != self.num_users:
            raise ValueError("requested_sizes must have one entry per user")

    def requested_bits(self) -> np.ndarray:
        if isinstance(self.requested_sizes, str):
            s = VIDEO_PROFILES[self.requested_sizes].requested_bits(
                self.session.segment_duration)
            return np.full(self.num_users, s)
        return np.asarray(self.requested_sizes, dtype=float)


@dataclass(frozen=True)
class SegmentTrace:
    segment_index: int
    per_user_qoe: np.ndarray
    total_qoe: float
    per_user_play_delay: np.ndarray
    accumulated_residual_delay: np.ndarray
    max_accumulated_gap: float
    total_cost: float
    case_label: str
    converged: bool


def _draw_gains(rng, constants, n):
    h = sample_gain(rng, constants, size=n)
    while np.any(h <= 0):
        log.info("resampling zero channel gain draw")
        dead = h <= 0
        h[dead] = sample_gain(rng, constants, size=int(dead.sum()))
    return h


def _solve(scheme, config, users) -> Allocation:
    if scheme in ("proposed-adaptive", "proposed-nonadaptive", "proposed"):
        return alloc_mod.allocate(config, users)
    if scheme == "max-qoe":
        return alloc_mod.max_qoe_scheme(config, users)
    if scheme == "min-delay":
        return alloc_mod.min_delay_scheme(config, users)
    raise ValueError(f"unknown scheme {scheme!r}")


def run_session(scenario: ScenarioConfig) -> list[SegmentTrace]:
    cfg = scenario.session
    cc = cfg.channel_constants
    n = scenario.num_users
    T = cfg.segment_duration
    S = scenario.requested_bits()
    adaptive = scenario.scheme == "proposed-adaptive"
    rng = np.random.default_rng(scenario.seed)
    residual = np.zeros(n)
    traces = []
    for seg in range(scenario.num_segments):
        h = _draw_gains(rng, cc, n)
        prior = residual if adaptive else np.zeros(n)
        users = [UserState(float(h[i]), float(S[i]), float(prior[i])) for i in range(n)]
        alloc = _solve(scenario.scheme, cfg, users)
        if scenario.discretize:
            alloc = alloc_mod.discretize(cfg, users, alloc, scenario.discretize)
        x = alloc.sizes_bits
        R = np.atleast_1d(transmission_rate(h, cc))
        D = x / R
        residual = np.maximum(residual + D - T, 0.0)
        q = cfg.qoe_model.evaluate(x, S)
        report = alloc_mod.feasibility_report(cfg, users, alloc)
        traces.append(SegmentTrace(
            segment_index=seg,
            per_user_qoe=np.atleast_1d(q),
            total_qoe=float(np.sum(q)),
            per_user_play_delay=np.maximum(D - T, 0.0),
            accumulated_residual_delay=residual.copy(),
            max_accumulated_gap=float(residual.max() - residual.min()),
            total_cost=float(cfg.per_user_budget * n - report.c1_slack),
            case_label=alloc.case_label,
            converged=alloc.converged,
        ))
    return traces


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    budget: float
    mean_qoe: float
    se_qoe: float
    mean_gap_s: float
    se_gap_s: float


def trial_seed(root_seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([root_seed, trial])


def sweep_samples(scenario: ScenarioConfig, budgets, trials: int,
                  schemes=SWEEP_SCHEMES):
    """Per-trial single-segment outcomes for every scheme and budget.

    Trial ``k`` draws its channel from ``SeedSequence([seed, k])``, so every
    budget and scheme sees the same channels (common random numbers).
    Returns ``{scheme: (qoe, gap)}`` with arrays of shape (len(budgets), trials).
    """
    budgets = [float(b) for b in budgets]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if any(b <= 0 for b in budgets) or any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be positive and ascending")
    base = scenario.session
    cc = base.channel_constants
    n = scenario.num_users
    S = scenario.requested_bits()
    out = {s: (np.zeros((len(budgets), trials)), np.zeros((len(budgets), trials)))
           for s in schemes}
    for k in range(trials):
        rng = np.random.default_rng(trial_seed(scenario.seed, k))
        h = _draw_gains(rng, cc, n)
        users = [UserState(float(h[i]), float(S[i])) for i in range(n)]
        for bi, budget in enumerate(budgets):
            cfg = SessionConfig(
                per_user_budget=budget,
                qoe_model=base.qoe_model,
                delay_bound=base.delay_bound,
                segment_duration=base.segment_duration,
                storage_cost_per_bit=base.storage_cost_per_bit,
                channel_constants=cc,
            )
            for s in schemes:
                a = _solve(s, cfg, users)
                if scenario.discretize:
                    a = alloc_mod.discretize(cfg, users, a, scenario.discretize)
                rep = alloc_mod.feasibility_report(cfg, users, a)
                out[s][0][bi, k] = alloc_mod.total_qoe(cfg, users, a)
                out[s][1][bi, k] = rep.c2_gap
    return out


def _mean_se(v):
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def sweep_budget(scenario: ScenarioConfig, budgets, trials: int,
                 schemes=SWEEP_SCHEMES) -> list[SweepRow]:
    samples = sweep_samples(scenario, budgets, trials, schemes)
    rows = []
    for s in schemes:
        qoe, gap = samples[s]
        for bi, budget in enumerate(budgets):
            mq, sq = _mean_se(qoe[bi])
            mg, sg = _mean_se(gap[bi])
            rows.append(SweepRow(s, float(budget), mq, sq, mg, sg))
    return rows


def default_budgets(scenario: ScenarioConfig, num: int = 10) -> list[float]:
    """Per-user budgets from scarce (5% of the mean request) to abundant (5x)."""
    s = float(scenario.requested_bits().mean())
    return [float(b) for b in np.geomspace(0.05 * s, 5.0 * s, num)]


def fmt(value) -> str:
    """Nine significant digits; the CSV number format."""
    return f"{value:.9g}"


def write_traces_csv(traces, path, scheme: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "scheme", "total_qoe", "max_gap_s", "cost", "case"])
        for tr in traces:
            w.writerow([tr.segment_index, scheme, fmt(tr.total_qoe),
                        fmt(tr.max_accumulated_gap), fmt(tr.total_cost), tr.case_label])


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "budget", "mean_qoe", "se_qoe", "mean_gap_s", "se_gap_s"])
        for r in rows:
            w.writerow([r.scheme, fmt(r.budget), fmt(r.mean_qoe), fmt(r.se_qoe),
                        fmt(r.mean_gap_s), fmt(r.se_gap_s)])
