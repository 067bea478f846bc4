"""Command-line entry point: ``mosbench <command> --config run.yaml``.

Output layout under ``--out`` (default: the config's ``output_dir``)::

    checkpoints/<model>/seed_<s>/    metadata.json + params.pt
    checkpoints/autoencoder/         encoder.pt + metadata.json
    runs/<model>/seed_<s>.json       training record
    predictions/<model>/run_<s>.csv  test-set predictions
    reports/                         evaluation, comparison and tables
    analysis/                        figures plus the CSVs behind them

Exit codes: 0 success, 1 internal failure, 2 user or configuration error.
Failures print a JSON error document on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import torch
import yaml

from . import analysis
from .checkpoint import load_checkpoint, save_checkpoint
from .config import SCHEMA_VERSION, SUBSETS, RunConfig, example_config, load_config
from .errors import ConfigError, MosBenchError, StatsInputError
from .evaluation import (
    METRICS,
    EvalReport,
    Level,
    PredictionSet,
    evaluate,
    format_table,
    join_predictions,
    read_predictions_csv,
    write_predictions_csv,
)
from .features import PatchCache
from .stats import compare_models, render_pairwise_table
from .training import PretrainedEncoder, pretrain_autoencoder, predict, prepare, run_matrix

log = logging.getLogger("mosbench")


class UsageError(MosBenchError):
    """Bad command-line input or missing prerequisite artifacts."""

    def __init__(self, message: str, *, path=None):
        self.path = None if path is None else str(path)
        super().__init__(message)


# ---------------------------------------------------------------- helpers


def slug(model_id: str) -> str:
    """Filesystem-safe, reversible form of a model id (``ConvMaxPool*`` -> ``ConvMaxPool%2A``)."""
    return re.sub(r"[^A-Za-z0-9_.-]", lambda m: f"%{ord(m.group()):02X}", model_id)


def _clean(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, doc: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, **doc}
    path.write_text(json.dumps(_clean(body), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


class Layout:
    def __init__(self, root: Path):
        self.root = Path(root)

    def checkpoint(self, model_id: str, seed: int) -> Path:
        return self.root / "checkpoints" / slug(model_id) / f"seed_{seed}"

    def encoder(self) -> Path:
        return self.root / "checkpoints" / "autoencoder"

    def run_record(self, model_id: str, seed: int) -> Path:
        return self.root / "runs" / slug(model_id) / f"seed_{seed}.json"

    def predictions(self, model_id: str, seed: int) -> Path:
        return self.root / "predictions" / slug(model_id) / f"run_{seed}.csv"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def analysis(self) -> Path:
        return self.root / "analysis"


def _selected_models(cfg: RunConfig, ids: Sequence[str] | None):
    if not ids:
        return [m.spec for m in cfg.models]
    try:
        return [cfg.model(i).spec for i in ids]
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _levels(args) -> list[Level]:
    return [Level(args.level)] if args.level else list(Level)


def _cache(cfg: RunConfig) -> PatchCache | None:
    return PatchCache(cfg.cache_dir) if cfg.cache_dir else None


# ---------------------------------------------------------------- encoder persistence


def save_encoder(encoder: PretrainedEncoder, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": encoder.state_dict, "losses": encoder.losses}, directory / "encoder.pt")
    write_json(directory / "metadata.json", {"cnn": asdict(encoder.cnn), "losses": encoder.losses})
    return directory


def load_encoder_artifact(directory: Path, cfg: RunConfig) -> PretrainedEncoder:
    path = directory / "encoder.pt"
    if not path.is_file():
        raise UsageError(f"autoencoder weights not found at {path}; run `mosbench pretrain-ae` first", path=path)
    meta = json.loads((directory / "metadata.json").read_text())
    cnn = cfg.models[0].spec.cnn
    if meta.get("cnn") != json.loads(json.dumps(asdict(cnn))):
        raise UsageError(f"encoder at {directory} was trained for a different CNN configuration", path=path)
    blob = torch.load(path, map_location="cpu", weights_only=True)
    return PretrainedEncoder(cnn, blob["state_dict"], list(blob["losses"]))


# ---------------------------------------------------------------- commands


def cmd_pretrain_ae(cfg: RunConfig, args) -> dict:
    ae_cfg = cfg.ae_config()
    unlabeled = cfg.unlabeled(cfg.autoencoder.get("dataset", ""))
    encoder = pretrain_autoencoder(unlabeled, ae_cfg, cfg.mel, _cache(cfg))
    out = save_encoder(encoder, Layout(args.out).encoder())
    return {"command": "pretrain-ae", "encoder": str(out), "losses": encoder.losses}


def cmd_train(cfg: RunConfig, args) -> dict:
    layout = Layout(args.out)
    specs = _selected_models(cfg, args.model)
    selected = {s.model_id for s in specs}
    encoder = None
    if any(s.pretrain == "ae" for s in specs):
        encoder = load_encoder_artifact(layout.encoder(), cfg)
    base_models = {}
    for s in specs:
        if s.base_model and s.base_model not in selected:
            base_spec = cfg.model(s.base_model).spec
            for seed in cfg.seeds:
                d = layout.checkpoint(base_spec.model_id, seed)
                if not (d / "metadata.json").is_file():
                    raise UsageError(
                        f"{s.model_id} wraps {base_spec.model_id}, whose seed {seed} checkpoint is missing at {d}; "
                        f"train it first or include it in --model",
                        path=d,
                    )
                base_models[(base_spec.model_id, seed)] = load_checkpoint(d, base_spec)
    train_sets = {s.train_set: cfg.train_manifest(s) for s in specs}
    written = []

    def on_run(trained, record, pset):
        ck = save_checkpoint(trained, layout.checkpoint(trained.spec.model_id, record.seed))
        write_json(layout.run_record(record.model_id, record.seed), {"record": record.to_dict()})
        write_predictions_csv(pset, layout.predictions(pset.model_id, pset.run_id))
        written.append({"model_id": record.model_id, "seed": record.seed, "checkpoint": str(ck)})
        log.info("trained %s seed=%d best_epoch=%d", record.model_id, record.seed, record.best_epoch)

    result = run_matrix(
        specs,
        cfg.seeds,
        train_sets,
        cfg.val_manifest(),
        cfg.test_manifest(),
        cfg.train_config,
        mel_cfg=cfg.mel,
        encoder=encoder,
        cache=_cache(cfg),
        on_run=on_run,
        keep_models=False,
        base_models=base_models,
    )
    failures = [asdict(f) for f in result.failures]
    if failures:
        write_json(layout.root / "runs" / "failures.json", {"failures": failures})
    return {"command": "train", "runs": written, "failures": [{k: f[k] for k in ("model_id", "seed", "error")} for f in failures]}


def cmd_predict(cfg: RunConfig, args) -> dict:
    layout = Layout(args.out)
    test_manifest = cfg.test_manifest()
    written, missing = [], []
    for spec in _selected_models(cfg, args.model):
        for seed in cfg.seeds:
            d = layout.checkpoint(spec.model_id, seed)
            if not (d / "metadata.json").is_file():
                missing.append({"model_id": spec.model_id, "seed": seed, "checkpoint": str(d)})
                continue
            trained = load_checkpoint(d, spec)
            data = prepare(test_manifest, cfg.mel, trained.model.needs_patches, trained.model.needs_audio, _cache(cfg))
            preds = predict(trained.model, data)
            pset = join_predictions(test_manifest, spec.model_id, seed, dict(zip(data.ids, preds.tolist())))
            path = layout.predictions(spec.model_id, seed)
            write_predictions_csv(pset, path)
            written.append(str(path))
    for m in missing:
        log.warning("no checkpoint for %s seed %s", m["model_id"], m["seed"])
    if not written:
        raise UsageError("no checkpoints found for the selected models and seeds")
    return {"command": "predict", "written": written, "missing": missing}


def load_runs(cfg: RunConfig, layout: Layout, model_ids: Sequence[str] | None):
    """Collect prediction sets per model; report (model, seed) pairs without a CSV."""
    manifest = cfg.test_manifest()
    runs: dict[str, list[PredictionSet]] = {}
    missing = []
    for spec in _selected_models(cfg, model_ids):
        for seed in cfg.seeds:
            path = layout.predictions(spec.model_id, seed)
            if not path.is_file():
                missing.append({"model_id": spec.model_id, "seed": seed, "path": str(path)})
                continue
            for pset in read_predictions_csv(path, manifest):
                runs.setdefault(pset.model_id, []).append(pset)
    for m in missing:
        log.warning("missing predictions for %s run %s (%s)", m["model_id"], m["seed"], m["path"])
    if not runs:
        raise UsageError(f"no prediction CSVs found under {layout.root / 'predictions'}", path=layout.root / "predictions")
    return runs, missing


def _evaluate_all(runs, levels, subset, workers) -> dict[str, dict[Level, EvalReport]]:
    types = SUBSETS[subset]
    jobs = [(mid, lvl) for mid in runs for lvl in levels]

    def one(job):
        mid, lvl = job
        return evaluate(runs[mid], lvl, types, subset_name=subset)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, jobs))
    out: dict[str, dict[Level, EvalReport]] = {}
    for (mid, lvl), rep in zip(jobs, results):
        out.setdefault(mid, {})[lvl] = rep
    return out


def cmd_evaluate(cfg: RunConfig, args) -> dict:
    layout = Layout(args.out)
    runs, missing = load_runs(cfg, layout, args.model)
    reports = _evaluate_all(runs, _levels(args), args.subset, args.workers)
    paths = []
    for mid, by_level in reports.items():
        doc = {
            "model_id": mid,
            "subset": args.subset,
            "levels": {lvl.value: rep.to_dict() for lvl, rep in by_level.items()},
        }
        paths.append(str(write_json(layout.reports / f"eval_{slug(mid)}_{args.subset}.json", doc)))
    table = format_table(reports)
    paths.append(str(write_text(layout.reports / f"table_results_{args.subset}.txt", table)))
    summary = {"models": list(reports), "missing_runs": missing, "subset": args.subset}
    paths.append(str(write_json(layout.reports / f"evaluation_{args.subset}.json", summary)))
    return {"command": "evaluate", "written": paths, "missing_runs": missing, "table": table}


def cmd_compare(cfg: RunConfig, args) -> dict:
    layout = Layout(args.out)
    runs, missing = load_runs(cfg, layout, args.model)
    if len(runs) < 2:
        raise UsageError(f"comparison needs at least two models with predictions, found {sorted(runs)}")
    levels = _levels(args)
    reports = _evaluate_all(runs, levels, args.subset, args.workers)
    values = {
        (m, lvl.value): {mid: reports[mid][lvl].per_run(m) for mid in reports} for lvl in levels for m in METRICS
    }
    comparisons = compare_models(values, cfg.alpha)
    doc = {
        "subset": args.subset,
        "models": list(runs),
        "missing_runs": missing,
        "comparisons": [rep.to_dict() for rep in comparisons.values()],
    }
    paths = [str(write_json(layout.reports / f"comparison_{args.subset}.json", doc))]
    table = render_pairwise_table(comparisons, only_with_equal=True)
    paths.append(str(write_text(layout.reports / f"table_pairwise_{args.subset}.txt", table)))
    full = render_pairwise_table(comparisons, only_with_equal=False)
    paths.append(str(write_text(layout.reports / f"table_pairwise_all_{args.subset}.txt", full)))
    return {"command": "compare", "written": paths, "missing_runs": missing, "table": table}


def cmd_analyze(cfg: RunConfig, args) -> dict:
    layout = Layout(args.out)
    out_dir = layout.analysis
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    notes: list[str] = []
    for name, entry in cfg.datasets.items():
        if entry.manifest is None:
            continue
        paths += analysis.write_histogram(analysis.mos_histogram(cfg.manifest(name)), out_dir, name)
    test_name = cfg.test[0]
    try:
        report = analysis.percentile_bins_by_system(cfg.test_manifest())
        paths += analysis.write_percentile_bins(report, out_dir, test_name)
    except MosBenchError as exc:
        notes.append(f"percentile bins skipped: {exc}")
    runs, missing = load_runs(cfg, layout, args.model)
    partitions = cfg.partitions
    if args.subset != "all":
        partitions = {args.subset: partitions[args.subset]}
    level = Level(args.level) if args.level else Level.UTTERANCE
    breakdowns = {mid: analysis.system_type_breakdown(r, partitions, level) for mid, r in runs.items()}
    for mid, br in breakdowns.items():
        notes += [f"{mid}: {n}" for n in br.notes]
    paths += analysis.write_breakdown(breakdowns, out_dir, f"{test_name}_{level.value}")
    audits = {mid: analysis.worst_systems_audit(r, k=5) for mid, r in runs.items()}
    for mid, a in audits.items():
        notes += [f"{mid}: {n}" for n in a.notes]
    paths.append(analysis.write_audit(audits, out_dir, test_name))
    doc = {
        "subset": args.subset,
        "level": level.value,
        "partitions": list(partitions),
        "breakdown": {
            mid: {part: rep.to_dict() for part, rep in br.reports.items()} for mid, br in breakdowns.items()
        },
        "missing_runs": missing,
        "notes": notes,
    }
    paths.append(write_json(out_dir / f"analysis_{args.subset}.json", doc))
    return {"command": "analyze", "written": [str(p) for p in paths], "notes": notes}


def cmd_report(cfg: RunConfig, args) -> dict:
    out = {"command": "report", "evaluate": cmd_evaluate(cfg, args)}
    try:
        out["compare"] = cmd_compare(cfg, args)
    except (UsageError, StatsInputError) as exc:
        log.warning("comparison skipped: %s", exc)
        out["compare"] = {"skipped": str(exc)}
    out["analyze"] = cmd_analyze(cfg, args)
    return out


def cmd_make_synthetic(args) -> dict:
    from .synthetic import SyntheticCorpusConfig, generate_corpus, generate_unlabeled

    root = Path(args.out)
    corpus = generate_corpus(root / "corpus", SyntheticCorpusConfig(n_utterances=args.n_utterances, seed=args.data_seed))
    unlabeled = generate_unlabeled(root / "unlabeled", n=args.n_unlabeled, seed=args.data_seed + 1)
    doc = example_config("corpus/manifest.csv", "unlabeled/unlabeled.csv", seeds=_seed_list(args.seed_list) or range(3))
    doc["datasets"] = {"voicemos": doc["datasets"]["voicemos"], "librispeech100": doc["datasets"]["librispeech100"]}
    wanted = [m.strip() for m in args.models.split(",")] if args.models else None
    models = [m for m in doc["models"] if m["train_set"] == "voicemos"]
    if wanted:
        models = [m for m in models if m["id"] in wanted]
        bases = {m["base_model"] for m in models if m.get("base_model")}
        models = [m for m in doc["models"] if m["id"] in bases and m["id"] not in wanted] + models
    doc["models"] = models
    doc["training"] = {"patience_epochs": args.patience, "max_epochs": args.max_epochs}
    doc["features"] = {"cache_dir": "cache"}
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return {
        "command": "make-synthetic",
        "config": str(config_path),
        "utterances": len(corpus.utterances),
        "unlabeled_manifest": str(unlabeled),
    }


COMMANDS = {
    "train": cmd_train,
    "pretrain-ae": cmd_pretrain_ae,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


# ---------------------------------------------------------------- argument parsing


def _seed_list(text: str | None) -> list[int] | None:
    if text is None:
        return None
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (YAML or JSON)")
    common.add_argument("--out", type=Path, help="output directory (default: the config's output_dir)")
    common.add_argument("--seed-list", help="seeds to use, e.g. '0,1,2' or '0-9'")
    common.add_argument("--level", choices=[lvl.value for lvl in Level], help="restrict to one evaluation level")
    common.add_argument("--subset", choices=sorted(SUBSETS), default="all", help="system-type subset")
    common.add_argument("--model", action="append", help="model id to include (repeatable; default: all)")
    common.add_argument("--workers", type=int, default=1, help="worker threads for evaluation fan-out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mosbench", description="MOS prediction benchmark pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    synth = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic corpus and a config for it")
    synth.add_argument("--n-utterances", type=int, default=600)
    synth.add_argument("--n-unlabeled", type=int, default=40)
    synth.add_argument("--data-seed", type=int, default=0)
    synth.add_argument("--models", help="comma-separated model ids (default: every model trained on the corpus)")
    synth.add_argument("--max-epochs", type=int, default=10_000)
    synth.add_argument("--patience", type=int, default=20)
    return parser


def _error_document(exc: BaseException, code: int) -> str:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is not None:
        err["path"] = str(path)
    return json.dumps({"schema_version": SCHEMA_VERSION, "error": err}, sort_keys=True)


def run(argv: Sequence[str] | None = None) -> tuple[int, dict | None]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2, None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "make-synthetic":
            if args.out is None:
                raise UsageError("make-synthetic needs --out")
            result = cmd_make_synthetic(args)
        else:
            if args.config is None:
                raise UsageError(f"{args.command} needs --config")
            cfg = load_config(args.config, args.out, _seed_list(args.seed_list))
            args.out = cfg.output_dir
            result = COMMANDS[args.command](cfg, args)
    except (MosBenchError, FileNotFoundError, argparse.ArgumentTypeError) as exc:
        print(_error_document(exc, 2), file=sys.stderr)
        return 2, None
    except Exception as exc:  # anything unexpected is an internal failure
        log.debug("internal failure", exc_info=True)
        print(_error_document(exc, 1), file=sys.stderr)
        return 1, None
    if result.get("failures"):
        print(json.dumps(_clean({"schema_version": SCHEMA_VERSION, **result}), sort_keys=True))
        return 1, result
    return 0, result


def main(argv: Sequence[str] | None = None) -> int:
    code, result = run(argv)
    if result is not None and code == 0:
        shown = {k: v for k, v in result.items() if k != "table"}
        print(json.dumps(_clean({"schema_version": SCHEMA_VERSION, **shown}), sort_keys=True, indent=2))
        if "table" in result:
            print(result["table"], end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
