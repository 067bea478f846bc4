"""Per-utterance and per-system MSE / LCC / SRCC after first-degree polynomial mapping,
summarised over repeated runs with Student-t confidence intervals.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .data import Manifest, SystemType
from .errors import CorrelationDegenerate, ManifestError, MappingDegenerate

PREDICTION_COLUMNS = ("utterance_id", "model_id", "run_id", "prediction")
METRICS = ("mse", "lcc", "srcc")


class Level(str, Enum):
    UTTERANCE = "utterance"
    SYSTEM = "system"


# ---------------------------------------------------------------- prediction sets


@dataclass(frozen=True)
class PredictionRecord:
    utterance_id: str
    prediction: float
    truth: float
    system_id: str
    system_type: SystemType


@dataclass(frozen=True)
class PredictionSet:
    model_id: str
    run_id: int
    records: tuple[PredictionRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.utterance_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate utterance ids in run {self.model_id}/{self.run_id}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def predictions(self) -> np.ndarray:
        return np.array([r.prediction for r in self.records], dtype=np.float64)

    @property
    def truths(self) -> np.ndarray:
        return np.array([r.truth for r in self.records], dtype=np.float64)

    def filter(self, keep: Callable[[PredictionRecord], bool]) -> PredictionSet:
        return PredictionSet(self.model_id, self.run_id, tuple(r for r in self.records if keep(r)))

    def with_types(self, types: Iterable[SystemType | str]) -> PredictionSet:
        wanted = {SystemType(t) for t in types}
        return self.filter(lambda r: r.system_type in wanted)


def join_predictions(
    manifest: Manifest, model_id: str, run_id: int, predictions: dict[str, float]
) -> PredictionSet:
    """Attach ground truth and system identity from ``manifest`` to raw predictions."""
    lookup = manifest.by_id()
    records = []
    for uid, pred in predictions.items():
        utt = lookup.get(uid)
        if utt is None:
            raise ManifestError(f"prediction for unknown utterance {uid!r}", field="utterance_id")
        records.append(PredictionRecord(uid, float(pred), utt.mos, utt.system_id, utt.system_type))
    return PredictionSet(model_id, int(run_id), tuple(records))


def write_predictions_csv(preds: PredictionSet, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for r in preds.records:
            writer.writerow([r.utterance_id, preds.model_id, preds.run_id, repr(float(r.prediction))])


def read_predictions_csv(path: str | Path, manifest: Manifest) -> list[PredictionSet]:
    """Read a prediction CSV (possibly holding several model/run pairs) and join it."""
    grouped: dict[tuple[str, int], dict[str, float]] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"prediction file {path} lacks columns {missing}")
        for row in reader:
            key = (row["model_id"], int(row["run_id"]))
            grouped.setdefault(key, {})[row["utterance_id"]] = float(row["prediction"])
    return [join_predictions(manifest, m, r, p) for (m, r), p in grouped.items()]


# ---------------------------------------------------------------- mapping and metrics


@dataclass(frozen=True)
class MappingCoefficients:
    intercept: float
    slope: float


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("empty input")
    return x, y


def fit_p1401(pred, truth) -> MappingCoefficients:
    """Least-squares fit of truth ~ a + b * pred."""
    x, y = _pair(pred, truth)
    if x.size < 2:
        raise MappingDegenerate("need at least two points to fit a mapping")
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx <= 0.0 or sxx <= 1e-24 * max(1.0, float(x @ x)):
        raise MappingDegenerate("predictions are constant")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    return MappingCoefficients(intercept, slope)


def apply_mapping(pred, m: MappingCoefficients) -> np.ndarray:
    return m.intercept + m.slope * np.asarray(pred, dtype=np.float64)


def mse(pred, truth) -> float:
    x, y = _pair(pred, truth)
    d = x - y
    return float(d @ d / d.size)


def lcc(x, y) -> float:
    """Pearson correlation."""
    a, b = _pair(x, y)
    if a.size < 2:
        raise CorrelationDegenerate("need at least two points")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        raise CorrelationDegenerate("constant input")
    r = float(da @ db) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def rankdata(x) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    ranks = np.empty(a.size, dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(sorted_a) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [a.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def srcc(x, y) -> float:
    """Spearman correlation: Pearson correlation of mid-ranks."""
    a, b = _pair(x, y)
    if a.size < 2:
        raise CorrelationDegenerate("need at least two points")
    return lcc(rankdata(a), rankdata(b))


# ---------------------------------------------------------------- system aggregation


@dataclass(frozen=True)
class SystemAggregate:
    system_id: str
    system_type: SystemType
    mean_prediction: float
    mean_truth: float
    count: int


def aggregate_by_system(preds: PredictionSet) -> list[SystemAggregate]:
    """One row per system, in order of first appearance."""
    if len(preds) == 0:
        raise ValueError("cannot aggregate an empty prediction set")
    sums: dict[str, list] = {}
    for r in preds.records:
        acc = sums.setdefault(r.system_id, [r.system_type, 0.0, 0.0, 0])
        acc[1] += r.prediction
        acc[2] += r.truth
        acc[3] += 1
    return [
        SystemAggregate(sid, t, p / n, y / n, n) for sid, (t, p, y, n) in sums.items()
    ]


def level_pairs(preds: PredictionSet, level: Level) -> tuple[np.ndarray, np.ndarray]:
    level = Level(level)
    if level is Level.UTTERANCE:
        return preds.predictions, preds.truths
    agg = aggregate_by_system(preds)
    return (
        np.array([a.mean_prediction for a in agg]),
        np.array([a.mean_truth for a in agg]),
    )


# ---------------------------------------------------------------- run evaluation


@dataclass
class RunMetrics:
    run_id: int
    level: Level
    n: int
    mse: float
    lcc: float
    srcc: float
    mapping: MappingCoefficients | None
    flags: list[str] = field(default_factory=list)

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def evaluate_run(preds: PredictionSet, level: Level, refit: bool = True, mapping: MappingCoefficients | None = None) -> RunMetrics:
    """Fit (or reuse) the first-degree mapping on this run at ``level`` and score it.

    Degenerate mappings fall back to unmapped predictions; degenerate
    correlations become NaN. Both are recorded in ``flags``.
    """
    level = Level(level)
    flags: list[str] = []
    if len(preds) == 0:
        return RunMetrics(preds.run_id, level, 0, math.nan, math.nan, math.nan, None, ["EMPTY"])
    x, y = level_pairs(preds, level)
    if refit:
        try:
            mapping = fit_p1401(x, y)
        except MappingDegenerate:
            mapping = None
    if mapping is None:
        flags.append(MappingDegenerate.code)
    mapped = apply_mapping(x, mapping) if mapping is not None else x
    out = {}
    for name, fn in (("lcc", lcc), ("srcc", srcc)):
        try:
            out[name] = fn(mapped, y)
        except CorrelationDegenerate:
            out[name] = math.nan
            flags.append(f"{CorrelationDegenerate.code}:{name}")
    return RunMetrics(preds.run_id, level, len(x), mse(mapped, y), out["lcc"], out["srcc"], mapping, flags)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci95: float
    n_runs: int


def t_interval(values: Sequence[float], confidence: float = 0.95) -> MetricSummary:
    """Mean and Student-t half-width over runs; a single run has half-width 0 by convention."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return MetricSummary(math.nan, math.nan, 0)
    if v.size == 1:
        return MetricSummary(float(v[0]), 0.0, 1)
    sd = float(v.std(ddof=1))
    tcrit = float(sps.t.ppf(0.5 + confidence / 2.0, v.size - 1))
    return MetricSummary(float(v.mean()), tcrit * sd / math.sqrt(v.size), int(v.size))


@dataclass
class EvalReport:
    model_id: str
    level: Level
    subset: str
    summary: dict[str, MetricSummary]
    runs: list[RunMetrics]

    @property
    def run_count(self) -> int:
        return len(self.runs)

    def per_run(self, metric: str) -> list[float]:
        return [r.value(metric) for r in self.runs]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "level": self.level.value,
            "subset": self.subset,
            "run_count": self.run_count,
            "mapping": "first-degree polynomial, refitted per run and per level",
            "metrics": {
                m: {"mean": s.mean, "ci95": s.ci95, "n_runs": s.n_runs} for m, s in self.summary.items()
            },
            "runs": [
                {
                    "run_id": r.run_id,
                    "n": r.n,
                    "mse": r.mse,
                    "lcc": r.lcc,
                    "srcc": r.srcc,
                    "mapping": None
                    if r.mapping is None
                    else {"intercept": r.mapping.intercept, "slope": r.mapping.slope},
                    "flags": r.flags,
                }
                for r in self.runs
            ],
        }


def evaluate(
    runs: Sequence[PredictionSet],
    level: Level | str = Level.UTTERANCE,
    subset: Iterable[SystemType | str] | None = None,
    subset_name: str | None = None,
) -> EvalReport:
    """Evaluate each run independently, then summarise mean and 95% CI over runs."""
    if not runs:
        raise ValueError("need at least one run")
    level = Level(level)
    model_ids = {r.model_id for r in runs}
    if len(model_ids) != 1:
        raise ValueError(f"runs from several models: {sorted(model_ids)}")
    name = subset_name or "all"
    if subset is not None:
        types = {SystemType(t) for t in subset}
        runs = [r.with_types(types) for r in runs]
        if subset_name is None:
            name = "+".join(sorted(t.value for t in types))
    per_run = [evaluate_run(r, level) for r in runs]
    summary = {m: t_interval([r.value(m) for r in per_run]) for m in METRICS}
    return EvalReport(runs[0].model_id, level, name, summary, per_run)


def format_table(reports: dict[str, dict[Level, EvalReport]], decimals: int = 2) -> str:
    """Render mean +/- CI in a model x (utterance, system) x (MSE, LCC, SRCC) grid."""
    header = ["Model"] + [f"{lvl.value[:4].upper()} {m.upper()}" for lvl in Level for m in METRICS]
    rows = [header]
    for model_id, by_level in reports.items():
        row = [model_id]
        for lvl in Level:
            rep = by_level.get(lvl)
            for m in METRICS:
                if rep is None:
                    row.append("-")
                else:
                    s = rep.summary[m]
                    row.append(f"{s.mean:.{decimals}f}±{s.ci95:.{decimals}f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
