"""Dataset manifests: loading, validation, splits and distribution-matched subsampling."""

from __future__ import annotations

import csv
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestError, SplitMissingError, SubsampleError

MOS_MIN = 1.0
MOS_MAX = 5.0

MANIFEST_COLUMNS = (
    "utterance_id",
    "audio_path",
    "system_id",
    "system_type",
    "mos",
    "split",
    "num_raters",
)
UNLABELED_COLUMNS = ("audio_path",)


class SystemType(str, Enum):
    BC = "BC"
    ESPNET = "ESPNET"
    VCC = "VCC"
    NATURAL = "NATURAL"
    OTHER = "OTHER"


class Split(str, Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


TTS_TYPES = frozenset({SystemType.BC, SystemType.ESPNET})
VC_TYPES = frozenset({SystemType.VCC})


@dataclass(frozen=True, slots=True)
class Utterance:
    utterance_id: str
    audio_path: Path
    system_id: str
    system_type: SystemType
    mos: float
    split: Split
    num_raters: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.audio_path, Path):
            object.__setattr__(self, "audio_path", Path(self.audio_path))
        if not self.utterance_id:
            raise ManifestError("utterance_id must be non-empty", field="utterance_id")
        if not isinstance(self.system_type, SystemType):
            raise ManifestError(f"unknown system_type {self.system_type!r}", field="system_type")
        if not isinstance(self.split, Split):
            raise ManifestError(f"unknown split {self.split!r}", field="split")
        if not (math.isfinite(self.mos) and MOS_MIN <= self.mos <= MOS_MAX):
            raise ManifestError(f"mos {self.mos!r} outside [1, 5]", field="mos")
        if self.num_raters is not None and self.num_raters <= 0:
            raise ManifestError("num_raters must be positive", field="num_raters")


@dataclass(frozen=True)
class Manifest:
    """An ordered, validated collection of labeled utterances.

    ``notes`` carries non-fatal diagnostics (e.g. an empty filter result).
    """

    name: str
    utterances: tuple[Utterance, ...]
    label_scale_note: str = ""
    notes: tuple[str, ...] = ()
    allow_empty: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if not self.utterances and not self.allow_empty:
            raise ManifestError(f"manifest '{self.name}' is empty")
        seen: set[str] = set()
        for i, utt in enumerate(self.utterances, start=1):
            if utt.utterance_id in seen:
                raise ManifestError(
                    f"duplicate utterance_id {utt.utterance_id!r}", row=i, field="utterance_id"
                )
            seen.add(utt.utterance_id)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def is_empty(self) -> bool:
        return not self.utterances

    @property
    def ids(self) -> list[str]:
        return [u.utterance_id for u in self.utterances]

    @property
    def mos(self) -> np.ndarray:
        return np.array([u.mos for u in self.utterances], dtype=np.float64)

    def by_id(self) -> dict[str, Utterance]:
        return {u.utterance_id: u for u in self.utterances}

    def split_counts(self) -> dict[Split, int]:
        counts = Counter(u.split for u in self.utterances)
        return {s: counts.get(s, 0) for s in Split}

    def split(self, split: Split | str) -> Manifest:
        """Return the subset belonging to ``split``; raise if the split is absent."""
        split = Split(split)
        subset = tuple(u for u in self.utterances if u.split is split)
        if not subset:
            raise SplitMissingError(f"manifest '{self.name}' has no {split.value} rows")
        return replace(self, name=f"{self.name}:{split.value}", utterances=subset, notes=())

    def subset(self, utterances: Iterable[Utterance], name: str | None = None) -> Manifest:
        return replace(
            self, name=name or self.name, utterances=tuple(utterances), notes=(), allow_empty=True
        )


@dataclass(frozen=True)
class UnlabeledManifest:
    name: str
    audio_paths: tuple[Path, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "audio_paths", tuple(Path(p) for p in self.audio_paths))
        if not self.audio_paths:
            raise ManifestError(f"unlabeled manifest '{self.name}' is empty")

    def __len__(self) -> int:
        return len(self.audio_paths)


def _resolve(path_text: str, base: Path) -> Path:
    p = Path(path_text)
    return p if p.is_absolute() else base / p


def _parse_row(row: dict[str, str], lineno: int, base: Path) -> Utterance:
    for col in MANIFEST_COLUMNS:
        if row.get(col) is None:
            raise ManifestError("missing value", row=lineno, field=col)
    try:
        mos = float(row["mos"])
    except ValueError:
        raise ManifestError(f"mos {row['mos']!r} is not a number", row=lineno, field="mos") from None
    try:
        system_type = SystemType(row["system_type"].strip().upper())
    except ValueError:
        raise ManifestError(
            f"unknown system_type {row['system_type']!r}", row=lineno, field="system_type"
        ) from None
    try:
        split = Split(row["split"].strip().upper())
    except ValueError:
        raise ManifestError(f"unknown split {row['split']!r}", row=lineno, field="split") from None
    raters_text = row["num_raters"].strip()
    num_raters = None
    if raters_text:
        try:
            num_raters = int(raters_text)
        except ValueError:
            raise ManifestError(
                f"num_raters {raters_text!r} is not an integer", row=lineno, field="num_raters"
            ) from None
    try:
        return Utterance(
            utterance_id=row["utterance_id"].strip(),
            audio_path=_resolve(row["audio_path"].strip(), base),
            system_id=row["system_id"].strip(),
            system_type=system_type,
            mos=mos,
            split=split,
            num_raters=num_raters,
        )
    except ManifestError as exc:
        raise ManifestError(str(exc).split("] ", 1)[-1], row=lineno, field=exc.field) from None


def load_manifest(path: str | Path, name: str | None = None, label_scale_note: str = "") -> Manifest:
    """Parse and validate a labeled manifest CSV.

    Relative ``audio_path`` entries are resolved against the manifest's directory.
    Row order is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in MANIFEST_COLUMNS:
            if col not in header:
                raise ManifestError(f"missing column '{col}' in {path}", field=col)
        utterances = []
        seen: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=1):
            utt = _parse_row(row, lineno, path.parent)
            if utt.utterance_id in seen:
                raise ManifestError(
                    f"duplicate utterance_id {utt.utterance_id!r} (first seen at row {seen[utt.utterance_id]})",
                    row=lineno,
                    field="utterance_id",
                )
            seen[utt.utterance_id] = lineno
            utterances.append(utt)
    return Manifest(name=name or path.stem, utterances=tuple(utterances), label_scale_note=label_scale_note)


def write_manifest(manifest: Manifest, path: str | Path, relative_to: Path | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for u in manifest.utterances:
            audio = u.audio_path
            if relative_to is not None:
                try:
                    audio = audio.relative_to(relative_to)
                except ValueError:
                    pass
            writer.writerow(
                [
                    u.utterance_id,
                    audio.as_posix(),
                    u.system_id,
                    u.system_type.value,
                    repr(u.mos),
                    u.split.value,
                    "" if u.num_raters is None else u.num_raters,
                ]
            )


def load_unlabeled_manifest(path: str | Path, name: str | None = None) -> UnlabeledManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if "audio_path" not in (reader.fieldnames or []):
            raise ManifestError(f"missing column 'audio_path' in {path}", field="audio_path")
        paths = []
        for lineno, row in enumerate(reader, start=1):
            text = (row.get("audio_path") or "").strip()
            if not text:
                raise ManifestError("empty audio_path", row=lineno, field="audio_path")
            paths.append(_resolve(text, path.parent))
    return UnlabeledManifest(name=name or path.stem, audio_paths=tuple(paths))


def write_unlabeled_manifest(paths: Sequence[Path], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("audio_path\n")
        for p in paths:
            fh.write(f"{Path(p).as_posix()}\n")


def mos_bin_index(mos: np.ndarray, bin_width: float) -> np.ndarray:
    """Bin index of each MOS value on a grid starting at 1; 5.0 folds into the last bin."""
    n_bins = int(math.ceil((MOS_MAX - MOS_MIN) / bin_width - 1e-9))
    idx = np.floor((np.asarray(mos, dtype=np.float64) - MOS_MIN) / bin_width).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def largest_remainder(counts: Sequence[int], target: int) -> list[int]:
    """Apportion ``target`` seats proportionally to ``counts`` (Hamilton method).

    Ties in the fractional remainder go to the lower bin index.
    """
    total = sum(counts)
    if total == 0:
        return [0] * len(counts)
    quotas = [target * c / total for c in counts]
    alloc = [int(math.floor(q)) for q in quotas]
    leftover = target - sum(alloc)
    order = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[:leftover]:
        alloc[i] += 1
    return alloc


def _cap_allocation(alloc: list[int], counts: Sequence[int]) -> tuple[list[int], list[int]]:
    """Clamp each bin to its population and hand the excess to bins with room."""
    alloc = list(alloc)
    capped = []
    excess = 0
    for i, (a, c) in enumerate(zip(alloc, counts)):
        if a > c:
            excess += a - c
            alloc[i] = c
            capped.append(i)
    while excess > 0:
        room = [c - a for a, c in zip(alloc, counts)]
        open_bins = [i for i, r in enumerate(room) if r > 0]
        if not open_bins:
            break
        extra = largest_remainder([room[i] for i in open_bins], excess)
        for i, e in zip(open_bins, extra):
            take = min(e, room[i])
            alloc[i] += take
            excess -= take
    return alloc, capped


def subsample_matched(
    manifest: Manifest,
    target_size: int,
    bin_width: float = 0.25,
    seed: int = 0,
    allocation: Sequence[int] | None = None,
) -> Manifest:
    """Draw ``target_size`` utterances preserving the MOS histogram of ``manifest``.

    Per-bin quotas come from largest-remainder apportionment; within a bin the
    utterances are drawn uniformly without replacement. The result keeps the
    source row order. ``allocation`` overrides the computed per-bin quotas and
    exists to exercise the overflow fallback.
    """
    if target_size <= 0:
        raise SubsampleError("target_size must be positive")
    if bin_width <= 0:
        raise SubsampleError("bin_width must be positive")
    if target_size > len(manifest):
        raise SubsampleError(
            f"target_size {target_size} exceeds population size {len(manifest)}"
        )
    bins = mos_bin_index(manifest.mos, bin_width)
    n_bins = int(bins.max()) + 1 if len(bins) else 0
    n_bins = max(n_bins, int(math.ceil((MOS_MAX - MOS_MIN) / bin_width - 1e-9)))
    members = [np.flatnonzero(bins == b) for b in range(n_bins)]
    counts = [len(m) for m in members]
    alloc = list(allocation) if allocation is not None else largest_remainder(counts, target_size)
    if sum(alloc) != target_size:
        raise SubsampleError("allocation does not sum to target_size")
    alloc, capped = _cap_allocation(alloc, counts)
    if capped:
        warnings.warn(
            f"bins {capped} had fewer utterances than allocated; took whole bins and "
            "reallocated the remainder",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for m, k in zip(members, alloc):
        if k == 0:
            continue
        chosen.extend(rng.choice(m, size=k, replace=False).tolist())
    chosen.sort()
    return replace(
        manifest,
        name=f"{manifest.name}:matched{target_size}",
        utterances=tuple(manifest.utterances[i] for i in chosen),
        notes=(f"subsample_matched target={target_size} bin_width={bin_width} seed={seed}",),
    )


def filter_by_system_type(manifest: Manifest, types: Iterable[SystemType | str]) -> Manifest:
    """Keep utterances whose system type is in ``types``; an empty result is flagged, not raised."""
    wanted = frozenset(SystemType(t) for t in types)
    if not wanted:
        raise ValueError("types must be non-empty")
    kept = tuple(u for u in manifest.utterances if u.system_type in wanted)
    label = "+".join(sorted(t.value for t in wanted))
    notes = () if kept else (f"no utterances of type {label}",)
    return replace(
        manifest, name=f"{manifest.name}[{label}]", utterances=kept, notes=notes, allow_empty=True
    )
