"""Data diagnostics: MOS histograms, per-system percentile bins by system type,
system-type performance breakdown and the worst-system audit.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import TTS_TYPES, VC_TYPES, Manifest, SystemType
from .errors import MappingDegenerate, MosBenchError
from .evaluation import (
    METRICS,
    EvalReport,
    Level,
    PredictionSet,
    aggregate_by_system,
    apply_mapping,
    evaluate,
    evaluate_run,
    fit_p1401,
    t_interval,
)

DEFAULT_PARTITIONS: dict[str, frozenset[SystemType]] = {"tts": TTS_TYPES, "vc": VC_TYPES}


class Normalization(str, Enum):
    COUNT = "count"
    PROPORTION = "proportion"


@dataclass(frozen=True)
class HistogramSpec:
    edges: tuple[float, ...] | None = None
    n_bins: int = 16
    normalization: Normalization = Normalization.COUNT
    lo: float = 1.0
    hi: float = 5.0

    def bin_edges(self) -> np.ndarray:
        if self.edges is not None:
            e = np.asarray(self.edges, dtype=np.float64)
            if e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("histogram edges must be strictly increasing")
            return e
        return np.linspace(self.lo, self.hi, self.n_bins + 1)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    values: np.ndarray
    normalization: Normalization


def mos_histogram(manifest: Manifest | Sequence[float], spec: HistogramSpec = HistogramSpec()) -> Histogram:
    """Bin MOS values; bins are left-closed except the last, which also includes its right edge."""
    mos = manifest.mos if isinstance(manifest, Manifest) else np.asarray(manifest, dtype=np.float64)
    if mos.size == 0:
        raise ValueError("no MOS values to bin")
    edges = spec.bin_edges()
    if mos.min() < edges[0] or mos.max() > edges[-1]:
        raise ValueError("histogram edges do not cover the observed MOS range")
    counts, _ = np.histogram(mos, bins=edges)
    values = counts.astype(np.float64)
    if Normalization(spec.normalization) is Normalization.PROPORTION:
        values = values / values.sum()
    return Histogram(edges, values, Normalization(spec.normalization))


# ---------------------------------------------------------------- percentile bins


@dataclass
class PercentileBinReport:
    edges: np.ndarray  # the 20/40/60/80th percentiles of per-system MOS
    system_mos: dict[str, float]
    system_type: dict[str, SystemType]
    system_bin: dict[str, int]
    percentile_method: str = "linear interpolation between closest ranks; edge values go to the lower bin"

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def occupancy(self) -> list[int]:
        c = Counter(self.system_bin.values())
        return [c.get(b, 0) for b in range(self.n_bins)]

    def composition(self) -> list[dict[str, int]]:
        out = [{t.value: 0 for t in SystemType} for _ in range(self.n_bins)]
        for sid, b in self.system_bin.items():
            out[b][self.system_type[sid].value] += 1
        return out


def percentile_bins_by_system(manifest: Manifest, n_bins: int = 5) -> PercentileBinReport:
    """Assign each system to a quintile of the per-system mean MOS distribution."""
    sums: dict[str, list] = {}
    for u in manifest.utterances:
        acc = sums.setdefault(u.system_id, [u.system_type, 0.0, 0])
        acc[1] += u.mos
        acc[2] += 1
    if len(sums) < n_bins:
        raise MosBenchError(
            f"percentile binning needs at least {n_bins} systems, got {len(sums)}; "
            "pool splits or use fewer bins"
        )
    system_mos = {sid: total / n for sid, (_, total, n) in sums.items()}
    system_type = {sid: t for sid, (t, _, _) in sums.items()}
    values = np.array(list(system_mos.values()))
    qs = np.arange(1, n_bins) * (100.0 / n_bins)
    edges = np.percentile(values, qs, method="linear")
    system_bin = {sid: int(np.searchsorted(edges, m, side="left")) for sid, m in system_mos.items()}
    return PercentileBinReport(edges, system_mos, system_type, system_bin)


# ---------------------------------------------------------------- system-type breakdown


@dataclass
class BreakdownReport:
    level: Level
    reports: dict[str, EvalReport]
    refit: bool
    notes: list[str] = field(default_factory=list)


def system_type_breakdown(
    runs: Sequence[PredictionSet],
    partitions: Mapping[str, Iterable[SystemType | str]] | None = None,
    level: Level | str = Level.UTTERANCE,
    refit: bool = True,
) -> BreakdownReport:
    """Evaluate each partition of system types separately, per run, with CIs over runs.

    With ``refit`` the first-degree mapping is refitted inside every partition;
    otherwise each run's mapping is fitted once on the union of partitions.
    """
    partitions = {k: frozenset(SystemType(t) for t in v) for k, v in (partitions or DEFAULT_PARTITIONS).items()}
    names = list(partitions)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            if partitions[a] & partitions[b]:
                raise ValueError(f"partitions {a} and {b} overlap")
    level = Level(level)
    notes = []
    reports = {}
    union = frozenset().union(*partitions.values())
    for name, types in partitions.items():
        subset_runs = [r.with_types(types) for r in runs]
        if all(len(r) == 0 for r in subset_runs):
            notes.append(f"partition {name} is empty")
        if refit:
            reports[name] = evaluate(subset_runs, level, subset_name=name)
            continue
        per_run = []
        for full, sub in zip(runs, subset_runs):
            pool = full.with_types(union)
            x = pool.predictions if level is Level.UTTERANCE else np.array([a.mean_prediction for a in aggregate_by_system(pool)])
            y = pool.truths if level is Level.UTTERANCE else np.array([a.mean_truth for a in aggregate_by_system(pool)])
            try:
                m = fit_p1401(x, y)
            except MappingDegenerate:
                m = None
            per_run.append(evaluate_run(sub, level, refit=False, mapping=m))
        summary = {k: t_interval([r.value(k) for r in per_run]) for k in METRICS}
        reports[name] = EvalReport(runs[0].model_id, level, name, summary, per_run)
    return BreakdownReport(level, reports, refit, notes)


# ---------------------------------------------------------------- worst systems


@dataclass(frozen=True)
class SystemError:
    system_id: str
    system_type: SystemType
    count: int
    mean_abs_error: float


@dataclass
class AuditReport:
    systems: list[SystemError]
    notes: list[str] = field(default_factory=list)


def per_system_errors(run: PredictionSet) -> dict[str, float]:
    """|mapped system prediction - system truth| with the mapping fitted at system level."""
    agg = aggregate_by_system(run)
    x = np.array([a.mean_prediction for a in agg])
    y = np.array([a.mean_truth for a in agg])
    try:
        x = apply_mapping(x, fit_p1401(x, y))
    except MappingDegenerate:
        pass
    return {a.system_id: float(abs(p - t)) for a, p, t in zip(agg, x, y)}


def worst_systems_audit(runs: Sequence[PredictionSet], k: int = 5) -> AuditReport:
    """Rank systems by mean absolute system-level error (after mapping), averaged over runs."""
    if not runs:
        raise ValueError("need at least one run")
    errors: dict[str, list[float]] = {}
    for run in runs:
        for sid, e in per_system_errors(run).items():
            errors.setdefault(sid, []).append(e)
    agg = {a.system_id: a for a in aggregate_by_system(runs[0])}
    rows = [
        SystemError(sid, agg[sid].system_type, agg[sid].count, float(np.mean(v)))
        for sid, v in errors.items()
    ]
    rows.sort(key=lambda r: (-r.mean_abs_error, r.system_id))
    notes = []
    if all(r.mean_abs_error <= 1e-12 for r in rows):
        notes.append("all system errors are zero; ranking is degenerate")
    if k > len(rows):
        notes.append(f"k={k} exceeds the {len(rows)} systems available; returning all")
    return AuditReport(rows[:k], notes)


# ---------------------------------------------------------------- outputs


def figure_path(out_dir: str | Path, analysis: str, dataset: str, ext: str) -> Path:
    return Path(out_dir) / f"fig_{analysis}_{dataset}.{ext}"


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


_STABLE_METADATA = {".svg": {"Date": None}, ".pdf": {"CreationDate": None}, ".png": {"Software": None}}


def _save(fig, path: Path) -> Path:
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "mosbench"
    fig.savefig(path, metadata=_STABLE_METADATA.get(path.suffix, {}))
    return path


def write_histogram(hist: Histogram, out_dir: str | Path, dataset: str, ext: str = "svg") -> list[Path]:
    csv_path = _write_csv(
        figure_path(out_dir, "mos_histogram", dataset, "csv"),
        ["bin_lo", "bin_hi", hist.normalization.value],
        [(f"{lo:.4f}", f"{hi:.4f}", repr(float(v))) for lo, hi, v in zip(hist.edges[:-1], hist.edges[1:], hist.values)],
    )
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(hist.edges[:-1], hist.values, width=np.diff(hist.edges), align="edge", edgecolor="black")
    ax.set_xlabel("MOS")
    ax.set_ylabel(hist.normalization.value)
    fig.tight_layout()
    fig_path = _save(fig, figure_path(out_dir, "mos_histogram", dataset, ext))
    plt.close(fig)
    return [csv_path, fig_path]


def write_percentile_bins(report: PercentileBinReport, out_dir: str | Path, dataset: str, ext: str = "svg") -> list[Path]:
    comp = report.composition()
    groups = {
        "TTS": [SystemType.BC.value, SystemType.ESPNET.value],
        "VC": [SystemType.VCC.value],
        "Natural": [SystemType.NATURAL.value],
        "Other": [SystemType.OTHER.value],
    }
    bounds = [-math.inf, *report.edges.tolist(), math.inf]
    csv_path = _write_csv(
        figure_path(out_dir, "percentile_bins", dataset, "csv"),
        ["bin", "lower_edge", "upper_edge", *[t.value for t in SystemType]],
        [
            (b, repr(bounds[b]), repr(bounds[b + 1]), *[comp[b][t.value] for t in SystemType])
            for b in range(report.n_bins)
        ],
    )
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3))
    x = np.arange(report.n_bins)
    width = 0.8 / len(groups)
    for i, (label, members) in enumerate(groups.items()):
        ax.bar(x + i * width, [sum(c[m] for m in members) for c in comp], width, label=label)
    ax.set_xticks(x + 0.4 - width / 2, [f"Q{b + 1}" for b in x])
    ax.set_ylabel("systems")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig_path = _save(fig, figure_path(out_dir, "percentile_bins", dataset, ext))
    plt.close(fig)
    return [csv_path, fig_path]


def write_breakdown(
    breakdowns: Mapping[str, BreakdownReport], out_dir: str | Path, dataset: str, ext: str = "svg"
) -> list[Path]:
    rows = []
    for model_id, br in breakdowns.items():
        for part, rep in br.reports.items():
            for m in METRICS:
                s = rep.summary[m]
                rows.append((model_id, part, m, repr(s.mean), repr(s.ci95), s.n_runs))
    csv_path = _write_csv(
        figure_path(out_dir, "system_type_breakdown", dataset, "csv"),
        ["model_id", "partition", "metric", "mean", "ci95", "n_runs"],
        rows,
    )
    plt = _plt()
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3))
    models = list(breakdowns)
    for ax, m in zip(axes, METRICS):
        parts = list(next(iter(breakdowns.values())).reports) if models else []
        width = 0.8 / max(1, len(parts))
        for i, part in enumerate(parts):
            means = [breakdowns[mid].reports[part].summary[m].mean for mid in models]
            cis = [breakdowns[mid].reports[part].summary[m].ci95 for mid in models]
            ax.bar(np.arange(len(models)) + i * width, means, width, yerr=cis, capsize=3, label=part.upper())
        ax.set_title(m.upper())
        ax.set_xticks(np.arange(len(models)) + 0.4 - width / 2, models, rotation=45, ha="right", fontsize=7)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig_path = _save(fig, figure_path(out_dir, "system_type_breakdown", dataset, ext))
    plt.close(fig)
    return [csv_path, fig_path]


def write_audit(audits: Mapping[str, AuditReport], out_dir: str | Path, dataset: str) -> Path:
    rows = []
    for model_id, audit in audits.items():
        for rank, s in enumerate(audit.systems, start=1):
            rows.append((model_id, rank, s.system_id, s.system_type.value, s.count, repr(s.mean_abs_error)))
    return _write_csv(
        Path(out_dir) / f"table_worst_systems_{dataset}.csv",
        ["model_id", "rank", "system_id", "system_type", "utterances", "mean_abs_error"],
        rows,
    )
