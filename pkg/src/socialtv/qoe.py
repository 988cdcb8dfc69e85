"""Logarithmic QoE model ``Q = a1 * ln(a2 * allocated / requested + a3)``.

Includes least-squares fitting against mean-opinion-score tables and a small
CSV reader for them. Three MOS tables ship with the package (duck, crew, ice).

Fitting normalizations
----------------------
``"a"``: every row is used and rates are divided by the largest rate in the file.
``"b"``: only rows inside the file's declared ``[min_rate, max_rate]`` are used
and rates are divided by ``max_rate``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar


class MosParseError(ValueError):
    pass


@dataclass(frozen=True)
class QoEModel:
    alpha1: float
    alpha2: float
    alpha3: float = 1.0

    def __post_init__(self):
        if not self.alpha1 > 0:
            raise ValueError(f"alpha1 must be positive, got {self.alpha1}")
        if not self.alpha2 > 0:
            raise ValueError(f"alpha2 must be positive, got {self.alpha2}")
        if not self.alpha3 >= 1:
            raise ValueError(f"alpha3 must be >= 1, got {self.alpha3}")

    def evaluate(self, allocated, requested):
        return evaluate(self, allocated, requested)


@dataclass(frozen=True)
class MosDataset:
    video_name: str
    points: tuple  # ((rate_kbps, mos), ...)
    reference_rate: float
    min_rate: float | None = None
    max_rate: float | None = None
    normalization: str = "a"

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a MOS dataset needs at least 2 points")
        rates = [r for r, _ in self.points]
        if any(not r > 0 for r in rates):
            raise ValueError("rates must be strictly positive")
        if len(set(rates)) != len(rates):
            raise ValueError("rates must be distinct")
        for r, m in self.points:
            if not 1.0 <= m <= 5.0:
                raise ValueError(f"MOS {m} at rate {r} outside [1, 5]")
        if not self.reference_rate > 0:
            raise ValueError("reference_rate must be positive")

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for r, _ in self.points], dtype=float)

    @property
    def mos(self) -> np.ndarray:
        return np.array([m for _, m in self.points], dtype=float)


# Reference parameters for the bundled clips (alpha3 = 1).
REFERENCE_MODELS = {
    "duck": QoEModel(0.634, 1554.8, 1.0),
    "crew": QoEModel(0.802, 419.6, 1.0),
    "ice": QoEModel(0.765, 297.3, 1.0),
}
REFERENCE_MSE = {"duck": 0.0514, "crew": 0.057, "ice": 0.161}
# Normalization under which each table reproduces its reference MSE.
DOCUMENTED_NORMALIZATION = {"duck": "b", "crew": "a", "ice": "b"}


def evaluate(model: QoEModel, allocated, requested):
    requested = np.asarray(requested, dtype=float)
    if np.any(requested <= 0):
        raise ValueError("requested size must be positive")
    ratio = np.asarray(allocated, dtype=float) / requested
    q = model.alpha1 * np.log(model.alpha2 * ratio + model.alpha3)
    return float(q) if q.ndim == 0 else q


def mse(model: QoEModel, dataset: MosDataset) -> float:
    pred = model.alpha1 * np.log(
        model.alpha2 * dataset.rates / dataset.reference_rate + model.alpha3
    )
    return float(np.mean((pred - dataset.mos) ** 2))


def _best_alpha1(features: np.ndarray, mos: np.ndarray) -> float:
    return float(features @ mos / (features @ features))


def fit(dataset: MosDataset, alpha3: float = 1.0,
        alpha2_bounds=(1e-1, 1e6), grid_points: int = 600):
    """Least-squares fit of (alpha1, alpha2) with alpha3 held fixed.

    alpha1 has a closed form for every alpha2, so only alpha2 is searched:
    a log-spaced scan followed by bounded Brent refinement around the best
    grid cell. Returns ``(model, mse)``.
    """
    x = dataset.rates / dataset.reference_rate
    m = dataset.mos
    if np.ptp(m) == 0:
        raise ValueError("uninformative dataset: all MOS values are equal")

    def objective(log_a2):
        f = np.log(10.0 ** log_a2 * x + alpha3)
        a1 = _best_alpha1(f, m)
        return float(np.mean((a1 * f - m) ** 2))

    lo, hi = math.log10(alpha2_bounds[0]), math.log10(alpha2_bounds[1])
    grid = np.linspace(lo, hi, grid_points)
    values = np.array([objective(g) for g in grid])
    i = int(np.argmin(values))
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    res = minimize_scalar(objective, bounds=(left, right), method="bounded",
                          options={"xatol": 1e-12})
    log_a2 = res.x if res.fun <= values[i] else grid[i]
    a2 = 10.0 ** log_a2
    f = np.log(a2 * x + alpha3)
    a1 = _best_alpha1(f, m)
    model = QoEModel(a1, a2, alpha3)
    return model, mse(model, dataset)


def normalize(dataset: MosDataset, choice: str) -> MosDataset:
    """Apply fitting normalization ``"a"`` or ``"b"`` (see module docstring)."""
    if choice == "a":
        return replace(dataset, reference_rate=float(dataset.rates.max()),
                       normalization="a")
    if choice == "b":
        if dataset.min_rate is None or dataset.max_rate is None:
            raise ValueError(f"dataset {dataset.video_name!r} declares no min/max rate")
        pts = tuple((r, q) for r, q in dataset.points
                    if dataset.min_rate <= r <= dataset.max_rate)
        return replace(dataset, points=pts, reference_rate=dataset.max_rate,
                       normalization="b")
    raise ValueError(f"unknown normalization {choice!r}; expected 'a' or 'b'")


_META_KEYS = {"video", "min_rate", "max_rate", "reference_rate"}


def load_mos_csv(source, name: str | None = None) -> MosDataset:
    """Read a ``rate_kbps,mos`` table.

    ``source`` is a path or a text stream. Lines starting with ``#`` are
    comments; ``# key: value`` comments may declare ``video``, ``min_rate``,
    ``max_rate`` and ``reference_rate``. Without an explicit reference rate the
    largest rate in the file is used.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        text = path.read_text()
        default_name = path.stem
    else:
        text = source.read()
        default_name = "dataset"

    meta: dict[str, str] = {}
    points = []
    header_seen = False
    for lineno, line in enumerate(io.StringIO(text), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if ":" in body:
                key, _, value = body.partition(":")
                if key.strip() in _META_KEYS:
                    meta[key.strip()] = value.strip()
            continue
        row = next(csv.reader([stripped]))
        if not header_seen:
            if [c.strip() for c in row] != ["rate_kbps", "mos"]:
                raise MosParseError(f"line {lineno}: expected header 'rate_kbps,mos'")
            header_seen = True
            continue
        if len(row) != 2:
            raise MosParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            rate, score = float(row[0]), float(row[1])
        except ValueError:
            raise MosParseError(f"line {lineno}: non-numeric value in {stripped!r}") from None
        if not rate > 0:
            raise MosParseError(f"line {lineno}: rate must be positive")
        if not 1.0 <= score <= 5.0:
            raise MosParseError(f"line {lineno}: MOS {score} outside [1, 5]")
        points.append((rate, score))

    if not points:
        raise MosParseError("line 0: no data rows")
    try:
        ds = MosDataset(
            video_name=meta.get("video", name or default_name),
            points=tuple(points),
            reference_rate=float(meta.get("reference_rate", max(r for r, _ in points))),
            min_rate=float(meta["min_rate"]) if "min_rate" in meta else None,
            max_rate=float(meta["max_rate"]) if "max_rate" in meta else None,
        )
    except ValueError as exc:
        raise MosParseError(f"line {lineno}: {exc}") from None
    return ds


def bundled_dataset(name: str) -> MosDataset:
    ref = resources.files("socialtv") / "data" / f"{name}.csv"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled dataset named {name!r}")
    with ref.open("r") as fh:
        return load_mos_csv(fh, name=name)


BUNDLED_VIDEOS = ("duck", "crew", "ice")
