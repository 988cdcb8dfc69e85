"""Command-line front end: ``socialtv {fit,allocate,sweep,simulate}``.

Scenario files are INI-style with sections ``[session]``, ``[channel]``,
``[qoe]``, ``[users]`` and ``[run]``; keys are the dataclass field names.
Lists are comma separated. Unknown sections or keys are rejected.

Exit codes: 0 success, 1 solver non-convergence (outputs still written),
2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import allocator as al
from . import qoe as qoe_mod
from . import sim
from .channel import ChannelConstants, transmission_rate

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


_FLOAT_KEYS = {
    "session": {"per_user_budget", "delay_bound", "segment_duration", "storage_cost_per_bit"},
    "channel": {"bandwidth_hz", "tx_power", "power_cost_rate", "mean_gain"},
    "qoe": {"alpha1", "alpha2", "alpha3"},
}
_ALLOWED = {
    **_FLOAT_KEYS,
    "users": {"gain_to_noise", "requested_bits", "prior_residual_delay"},
    "run": {"num_users", "num_segments", "scheme", "requested_sizes", "seed", "discretize"},
}


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_digest: str
    seed: int
    tool_version: str


def _floats(text: str, where: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {text!r}") from None


def read_config(path) -> dict:
    """Parse a scenario file into ``{section: {key: value}}`` with typed values."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    path = Path(path)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _ALLOWED:
            raise ConfigError(f"unknown section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            if key not in _ALLOWED[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            where = f"[{section}] {key}"
            if key in _FLOAT_KEYS.get(section, ()):
                vals = _floats(raw, where)
                if len(vals) != 1:
                    raise ConfigError(f"{where}: expected one number")
                values[key] = vals[0]
            elif section == "users" or key == "discretize":
                values[key] = _floats(raw, where)
            elif key in ("num_users", "num_segments", "seed"):
                try:
                    values[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
            elif key == "requested_sizes":
                raw = raw.strip()
                values[key] = raw if raw in sim.VIDEO_PROFILES else _floats(raw, where)
            else:
                values[key] = raw.strip()
        out[section] = values
    return out


def _qoe_model(cfg: dict) -> qoe_mod.QoEModel:
    q = cfg.get("qoe", {})
    if "alpha1" in q or "alpha2" in q:
        if not {"alpha1", "alpha2"} <= q.keys():
            raise ConfigError("[qoe] needs both alpha1 and alpha2")
        return qoe_mod.QoEModel(q["alpha1"], q["alpha2"], q.get("alpha3", 1.0))
    req = cfg.get("run", {}).get("requested_sizes", "duck")
    if isinstance(req, str):
        return sim.VIDEO_PROFILES[req].model
    raise ConfigError("[qoe] alpha1/alpha2 required when requested_sizes is not a video profile")


def session_from(cfg: dict, budget: float | None = None) -> al.SessionConfig:
    s = dict(cfg.get("session", {}))
    if budget is not None:
        s["per_user_budget"] = budget
    if "per_user_budget" not in s:
        raise ConfigError("[session] per_user_budget is required")
    try:
        return al.SessionConfig(
            qoe_model=_qoe_model(cfg),
            channel_constants=ChannelConstants(**cfg.get("channel", {})),
            **s,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def users_from(cfg: dict) -> list[al.UserState]:
    u = cfg.get("users", {})
    if "gain_to_noise" not in u or "requested_bits" not in u:
        raise ConfigError("[users] needs gain_to_noise and requested_bits")
    h, s = u["gain_to_noise"], u["requested_bits"]
    d = u.get("prior_residual_delay", [0.0] * len(h))
    if not (len(h) == len(s) == len(d)) or not h:
        raise ConfigError("[users] lists must be non-empty and of equal length")
    try:
        return [al.UserState(*row) for row in zip(h, s, d)]
    except ValueError as exc:
        raise ConfigError(f"[users] {exc}") from None


def scenario_from(cfg: dict, seed: int | None = None, ladder=None,
                  budget: float | None = None) -> sim.ScenarioConfig:
    run = dict(cfg.get("run", {}))
    if seed is not None:
        run["seed"] = seed
    if ladder is not None:
        run["discretize"] = ladder
    if "discretize" in run:
        run["discretize"] = tuple(run["discretize"]) or None
    req = run.get("requested_sizes", "duck")
    run["requested_sizes"] = req if isinstance(req, str) else tuple(req)
    run.setdefault("num_users", 4 if isinstance(req, str) else len(req))
    try:
        return sim.ScenarioConfig(session=session_from(cfg, budget), **run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _digest(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))
    blob = json.dumps(obj, sort_keys=True, default=default, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_manifest(out: Path, command: str, resolved, seed: int) -> RunManifest:
    m = RunManifest(command, _digest(resolved), seed, __version__)
    (out / "manifest.json").write_text(json.dumps(asdict(m), indent=2) + "\n")
    return m


def _fmt(v) -> str:
    return sim.fmt(v)


def cmd_fit(args) -> int:
    src = Path(args.dataset)
    if src.exists():
        ds = qoe_mod.load_mos_csv(src)
    elif args.dataset in qoe_mod.BUNDLED_VIDEOS:
        ds = qoe_mod.bundled_dataset(args.dataset)
    else:
        raise FileNotFoundError(f"dataset not found: {args.dataset}")
    choice = args.normalization or qoe_mod.DOCUMENTED_NORMALIZATION.get(ds.video_name, "a")
    ds = qoe_mod.normalize(ds, choice)
    model, err = qoe_mod.fit(ds)
    print(f"video={ds.video_name} normalization={choice} alpha1={_fmt(model.alpha1)} "
          f"alpha2={_fmt(model.alpha2)} alpha3={_fmt(model.alpha3)} mse={_fmt(err)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "model.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video", "alpha1", "alpha2", "alpha3", "reference_rate", "mse", "normalization"])
        w.writerow([ds.video_name, _fmt(model.alpha1), _fmt(model.alpha2), _fmt(model.alpha3),
                    _fmt(ds.reference_rate), _fmt(err), choice])
    _write_manifest(out, "fit", {"dataset": asdict(ds)}, 0)
    return EXIT_OK


def cmd_allocate(args) -> int:
    cfg = read_config(args.config)
    config = session_from(cfg)
    users = users_from(cfg)
    a = al.allocate(config, users)
    if args.ladder:
        a = al.discretize(config, users, a, args.ladder)
    rep = al.feasibility_report(config, users, a)
    h = np.array([u.gain_to_noise for u in users])
    R = np.atleast_1d(transmission_rate(h, config.channel_constants))
    S = np.array([u.requested_bits for u in users])
    q = np.atleast_1d(config.qoe_model.evaluate(a.sizes_bits, S))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "allocation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "h", "rate_bps", "requested_bits", "allocated_bits",
                    "play_delay_s", "qoe"])
        for i in range(len(users)):
            w.writerow([i, _fmt(h[i]), _fmt(R[i]), _fmt(S[i]), _fmt(a.sizes_bits[i]),
                        _fmt(rep.per_user_delays[i]), _fmt(q[i])])
    print(f"case={a.case_label} converged={str(a.converged).lower()} "
          f"iterations={a.iterations} total_qoe={_fmt(q.sum())} "
          f"c1_slack={_fmt(rep.c1_slack)} c2_gap={_fmt(rep.c2_gap)} "
          f"c3_ok={str(rep.c3_ok).lower()}")
    _write_manifest(out, "allocate", {"config": cfg, "ladder": args.ladder}, 0)
    return EXIT_OK if a.converged else EXIT_NONCONVERGED


def cmd_sweep(args) -> int:
    cfg = read_config(args.config)
    sc = scenario_from(cfg, seed=args.seed, ladder=args.ladder, budget=1.0)
    budgets = args.budgets or sim.default_budgets(sc)
    rows = sim.sweep_budget(sc, budgets, args.trials)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.write_sweep_csv(rows, out / "sweep.csv")
    for r in rows:
        print(f"{r.scheme:>10} budget={_fmt(r.budget)} qoe={r.mean_qoe:.4f}±{r.se_qoe:.4f} "
              f"gap={r.mean_gap_s:.3f}±{r.se_gap_s:.3f}s")
    _write_manifest(out, "sweep", {"config": cfg, "budgets": budgets, "trials": args.trials,
                                   "ladder": args.ladder, "seed": sc.seed}, sc.seed)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = read_config(args.config)
    sc = scenario_from(cfg, seed=args.seed, ladder=args.ladder)
    traces = sim.run_session(sc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim.write_traces_csv(traces, out / "traces.csv", sc.scheme)
    worst = max(t.max_accumulated_gap for t in traces)
    ok = all(t.converged for t in traces)
    print(f"scheme={sc.scheme} segments={len(traces)} "
          f"mean_qoe={_fmt(np.mean([t.total_qoe for t in traces]))} "
          f"max_gap_s={_fmt(worst)} converged={str(ok).lower()}")
    _write_manifest(out, "simulate", {"config": cfg, "ladder": args.ladder, "seed": sc.seed},
                    sc.seed)
    return EXIT_OK if ok else EXIT_NONCONVERGED


def _csv_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socialtv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the log QoE model to a MOS table")
    f.add_argument("dataset", help="CSV path, or a bundled name (duck, crew, ice)")
    f.add_argument("--normalization", choices=("a", "b"))
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_fit)

    for name, func, help_ in (
        ("allocate", cmd_allocate, "solve one allocation instance"),
        ("sweep", cmd_sweep, "Monte-Carlo budget sweep"),
        ("simulate", cmd_simulate, "multi-segment session"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default=".")
        s.add_argument("--ladder", type=_csv_floats)
        if name != "allocate":
            s.add_argument("--seed", type=int)
        if name == "sweep":
            s.add_argument("--trials", type=int, default=50)
            s.add_argument("--budgets", type=_csv_floats)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
