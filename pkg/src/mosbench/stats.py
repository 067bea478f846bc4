"""One-way ANOVA across models followed by Tukey(-Kramer) HSD pairwise comparisons."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .errors import StatsDegenerate, StatsInputError

ALPHA = 0.05


@dataclass(frozen=True)
class MetricSamples:
    """Per-run values of one metric at one level, grouped by model."""

    metric: str
    level: str
    groups: dict[str, tuple[float, ...]]

    def __post_init__(self) -> None:
        groups = {k: tuple(float(v) for v in vals) for k, vals in self.groups.items()}
        object.__setattr__(self, "groups", groups)
        if len(groups) < 2:
            raise StatsInputError("need at least two groups")
        for name, vals in groups.items():
            if len(vals) < 2:
                raise StatsInputError(f"group {name!r} has fewer than two observations")
            if not all(math.isfinite(v) for v in vals):
                raise StatsInputError(f"group {name!r} has non-finite observations")

    @property
    def sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.groups.items()}

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def n_total(self) -> int:
        return sum(self.sizes.values())


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p: float
    df_between: int
    df_within: int
    ss_between: float
    ss_within: float
    flag: str | None = None

    @property
    def ms_within(self) -> float:
        return self.ss_within / self.df_within

    def rejected(self, alpha: float = ALPHA) -> bool:
        return self.p < alpha


def one_way_anova(samples: MetricSamples) -> AnovaResult:
    groups = [np.asarray(v) for v in samples.groups.values()]
    allv = np.concatenate(groups)
    grand = allv.mean()
    ssb = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    dfb = len(groups) - 1
    dfw = allv.size - len(groups)
    scale = max(1.0, float(np.abs(allv).max())) ** 2 * allv.size
    if ssw <= 1e-28 * scale:
        if ssb <= 1e-28 * scale:
            return AnovaResult(math.nan, 1.0, dfb, dfw, ssb, ssw, StatsDegenerate.code)
        return AnovaResult(math.inf, 0.0, dfb, dfw, ssb, 0.0, "ZERO_WITHIN_VARIANCE")
    f = (ssb / dfb) / (ssw / dfw)
    p = float(sps.f.sf(f, dfb, dfw))
    return AnovaResult(f, p, dfb, dfw, ssb, ssw)


@dataclass(frozen=True)
class PairwiseResult:
    a: str
    b: str
    mean_diff: float  # mean(b) - mean(a)
    q: float
    p_adj: float
    q_crit: float
    rejected: bool


def studentized_range_critical(alpha: float, k: int, df: float) -> float:
    return float(sps.studentized_range.ppf(1.0 - alpha, k, df))


def tukey_hsd(samples: MetricSamples, alpha: float = ALPHA, anova: AnovaResult | None = None) -> list[PairwiseResult]:
    """Tukey-Kramer pairwise tests; one row per unordered pair in group order."""
    anova = anova or one_way_anova(samples)
    names = list(samples.groups)
    means = {k: float(np.mean(v)) for k, v in samples.groups.items()}
    sizes = samples.sizes
    k = samples.k
    dfw = anova.df_within
    msw = anova.ss_within / dfw
    q_crit = studentized_range_critical(alpha, k, dfw)
    out = []
    for a, b in itertools.combinations(names, 2):
        diff = means[b] - means[a]
        se = math.sqrt(msw / 2.0 * (1.0 / sizes[a] + 1.0 / sizes[b]))
        if se == 0.0:
            q = 0.0 if diff == 0.0 else math.inf
            p = 1.0 if diff == 0.0 else 0.0
        else:
            q = abs(diff) / se
            p = float(sps.studentized_range.sf(q, k, dfw))
        out.append(PairwiseResult(a, b, diff, q, p, q_crit, q > q_crit))
    return out


@dataclass
class ComparisonReport:
    metric: str
    level: str
    anova: AnovaResult
    pairs: list[PairwiseResult]
    alpha: float = ALPHA
    notes: list[str] = field(default_factory=list)

    @property
    def anova_rejected(self) -> bool:
        return self.anova.rejected(self.alpha)

    def equal_means(self, a: str, b: str) -> bool:
        """Null of equal means kept for this pair, honoring the ANOVA gate."""
        if not self.anova_rejected:
            return True
        for p in self.pairs:
            if {p.a, p.b} == {a, b}:
                return not p.rejected
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        a = self.anova
        return {
            "metric": self.metric,
            "level": self.level,
            "alpha": self.alpha,
            "anova": {
                "F": _num(a.f),
                "p": a.p,
                "df_between": a.df_between,
                "df_within": a.df_within,
                "flag": a.flag,
                "rejected": self.anova_rejected,
            },
            "tukey_gated": not self.anova_rejected,
            "pairs": [
                {
                    "a": p.a,
                    "b": p.b,
                    "mean_diff": p.mean_diff,
                    "q": _num(p.q),
                    "p_adj": p.p_adj,
                    "q_crit": p.q_crit,
                    "rejected": p.rejected,
                    "equal_means": self.equal_means(p.a, p.b),
                }
                for p in self.pairs
            ],
            "notes": self.notes,
        }


def _num(x: float):
    return x if math.isfinite(x) else str(x)


def compare_metric(samples: MetricSamples, alpha: float = ALPHA) -> ComparisonReport:
    anova = one_way_anova(samples)
    notes = []
    if anova.flag:
        notes.append(f"ANOVA {anova.flag}")
    pairs = tukey_hsd(samples, alpha, anova)
    if not anova.rejected(alpha):
        notes.append("ANOVA did not reject equal means; pairwise decisions reported as not rejected")
    return ComparisonReport(samples.metric, samples.level, anova, pairs, alpha, notes)


def compare_models(
    values: Mapping[tuple[str, str], Mapping[str, Sequence[float]]], alpha: float = ALPHA
) -> dict[tuple[str, str], ComparisonReport]:
    """``values[(metric, level)][model_id]`` holds per-run metric values."""
    return {
        (metric, level): compare_metric(MetricSamples(metric, level, dict(groups)), alpha)
        for (metric, level), groups in values.items()
    }


def render_pairwise_table(
    reports: Mapping[tuple[str, str], ComparisonReport],
    only_with_equal: bool = True,
    columns: Sequence[tuple[str, str]] | None = None,
) -> str:
    """Pairs x (level, metric) grid with a check mark where equal means are not rejected."""
    if columns is None:
        columns = [
            (m, lvl) for lvl in ("utterance", "system") for m in ("mse", "lcc", "srcc") if (m, lvl) in reports
        ]
    if not columns:
        return ""
    first = reports[columns[0]]
    pairs = [(p.a, p.b) for p in first.pairs]
    header = ["Pair"] + [f"{lvl[:4].upper()} {m.upper()}" for m, lvl in columns]
    rows = [header]
    for a, b in pairs:
        marks = ["✓" if reports[c].equal_means(a, b) else "" for c in columns]
        if only_with_equal and not any(marks):
            continue
        rows.append([f"{a}-{b}"] + marks)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
