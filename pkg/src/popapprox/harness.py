"""Sweeps over ``n``, empirical rate fits and report files."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, NonpositiveValue, PopApproxError, TooFewPoints
from .metrics import CSV_COLUMNS, DistanceReport, centred_equilibrium, local_limit_error, tail_moments
from .model import build_skeleton, make_model, tomllib

__all__ = [
    "DEFAULT_GRID", "SweepConfig", "ConvergenceReport", "run_sweep", "fit_rate", "emit_report",
    "read_config",
]

DEFAULT_GRID = (50, 100, 200, 400, 800, 1600, 3200)
FIT_METRICS = ("tv", "sup_point", "translate_tv", "max_adjacent_diff")
CONSTANT_NAMES = {
    "sup_point_norm": "C_main",
    "translate_tv_norm": "C_translate",
    "max_adjacent_diff_norm": "C_adjacent",
    "tv_norm": "C_tv",
}


@dataclass
class SweepConfig:
    """What to sweep and where to write it."""

    model: str = "sis"
    params: dict = field(default_factory=dict)
    n_grid: Sequence[int] = DEFAULT_GRID
    tol: float = 1e-10
    reps: int = 20000
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    workers: int = 1
    delta: float | None = None
    bracket: tuple[float, float] | None = None

    def __post_init__(self):
        grid = [int(x) for x in self.n_grid]
        if any(g != x for g, x in zip(grid, self.n_grid)) or any(x < 1 for x in grid):
            raise ConfigError(f"n_grid must hold positive integers, got {list(self.n_grid)}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"n_grid must be strictly increasing, got {grid}")
        if not grid:
            raise ConfigError("n_grid is empty")
        self.n_grid = tuple(grid)
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        self.params = {k: float(v) for k, v in dict(self.params).items()}

    def build_model(self):
        return make_model(self.model, self.params, delta=self.delta, bracket=self.bracket)


def read_config(path) -> dict:
    """Parse a TOML config whose keys mirror the command-line flags."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from None
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    if "param" in doc:
        doc["params"] = {**doc.pop("param"), **doc.get("params", {})}
    return doc


def fit_rate(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``.

    Returns ``(slope, intercept, r_squared)`` so that ``y ~ exp(intercept) x**slope``.
    """
    pts = list(points)
    if len(pts) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(~(y > 0)) or np.any(~(x > 0)):
        raise NonpositiveValue("log-log fit needs strictly positive x and y")
    res = stats.linregress(np.log(x), np.log(y))
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


@dataclass
class ConvergenceReport:
    rows: list
    fits: dict = field(default_factory=dict)
    empirical_constants: dict = field(default_factory=dict)
    model: str = ""
    params: dict = field(default_factory=dict)
    skeleton: dict = field(default_factory=dict)
    tails: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.row()[name] for r in self.rows])

    def spread(self, name: str) -> float:
        """``max / min`` of a column; the boundedness surrogate for normalized columns."""
        col = self.column(name)
        return float(col.max() / col.min())

    def to_record(self) -> dict:
        return {
            "model": self.model, "params": self.params, "skeleton": self.skeleton,
            "rows": [r.row() | {"alpha": r.alpha} for r in self.rows],
            "fits": {k: list(v) for k, v in self.fits.items()},
            "empirical_constants": self.empirical_constants,
            "tails": self.tails,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        doc = json.loads(text)
        rows = [DistanceReport(n=int(r["n"]), tv=r["tv"], sup_point=r["sup_point"],
                               translate_tv=r["translate_tv"], max_adjacent_diff=r["max_adjacent_diff"],
                               alpha=r.get("alpha", 1.0)) for r in doc["rows"]]
        return cls(rows=rows, fits={k: tuple(v) for k, v in doc["fits"].items()},
                   empirical_constants=doc["empirical_constants"], model=doc["model"],
                   params=doc["params"], skeleton=doc["skeleton"], tails=doc.get("tails", []))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            row = r.row()
            w.writerow([row["n"]] + [repr(float(row[c])) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()


def _summarize(rows: list, model_name: str, params: dict, skeleton: dict, tails: list) -> ConvergenceReport:
    fits = {}
    if len(rows) >= 3:
        for name in FIT_METRICS:
            try:
                fits[name] = fit_rate([(r.n, getattr(r, name)) for r in rows])
            except NonpositiveValue:
                pass
    consts = {}
    if rows:
        for col, label in CONSTANT_NAMES.items():
            consts[label] = float(max(r.row()[col] for r in rows))
    return ConvergenceReport(rows=rows, fits=fits, empirical_constants=consts, model=model_name,
                             params=params, skeleton=skeleton, tails=tails)


def run_sweep(config: SweepConfig) -> ConvergenceReport:
    """Stationary solve and local error at each ``n`` of the grid.

    With ``workers > 1`` grid points run on a thread pool; rows are merged in
    grid order either way.
    """
    model = config.build_model()
    skeleton = build_skeleton(model)

    def one(n: int):
        try:
            pi, _ = centred_equilibrium(model, skeleton, n, tol=config.tol)
            rep = local_limit_error(model, skeleton, n, pi=pi)
            m_out, m2_in = tail_moments(pi, skeleton.c, model.delta, n)
        except PopApproxError as exc:
            raise type(exc)(f"sweep failed at n={n}: {exc}") from exc
        return rep, {"n": n, "m_out": m_out, "m2_in": m2_in}

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, config.n_grid))
    else:
        results = [one(n) for n in config.n_grid]
    rows = [r for r, _ in results]
    tails = [t for _, t in results]
    return _summarize(rows, model.name, dict(config.params), skeleton.to_dict(), tails)


def emit_report(report: ConvergenceReport, format: str = "csv", path=None) -> list[Path]:
    """Write ``report``; ``csv`` writes the table plus a ``.json`` summary beside it.

    Returns the paths written.  Output bytes depend only on the report contents.
    """
    if format not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {format!r}")
    if path is None:
        raise ConfigError("emit_report needs an output path")
    path = Path(path)
    files = []
    if format == "csv":
        files.append((path, report.to_csv()))
        files.append((path.with_suffix(".json"), report.to_json()))
    else:
        files.append((path, report.to_json()))
    written = []
    for p, text in files:
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write report: {exc.strerror}", str(p)) from exc
        written.append(p)
    return written
