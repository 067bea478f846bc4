"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are written
straight to the terminal even when output capture is on.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch
import yaml

import oracles
from conftest import make_manifest
from test_data import bin_counts
from test_models import fusion_step, gradient_check
from mosbench.analysis import percentile_bins_by_system, system_type_breakdown
from mosbench.cli import run as cli_run
from mosbench.data import Split, SystemType, subsample_matched
from mosbench.evaluation import (
    Level,
    apply_mapping,
    fit_p1401,
    join_predictions,
    lcc,
    mse,
    srcc,
    write_predictions_csv,
)
from mosbench.models import ConvMaxPool, Fusion, FusionConfig, Nisqa, count_parameters
from mosbench.models.layers import FramewiseCnn, FramewiseCnnConfig
from mosbench.models.ops import framewise_cnn_forward
from mosbench.stats import MetricSamples, one_way_anova, tukey_hsd
from mosbench.training import TrainConfig, predict, prepare, run_epochs, train
from mosbench.models import Architecture, ModelSpec


@contextmanager
def criterion(capsys, number: int, title: str):
    detail: list[str] = []
    try:
        yield detail
    except BaseException as exc:
        with capsys.disabled():
            print(f"\nFAIL criterion {number}: {title} ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})")
        raise
    with capsys.disabled():
        extra = f" [{'; '.join(detail)}]" if detail else ""
        print(f"\nPASS criterion {number}: {title}{extra}")


def test_criterion_01_metric_oracles(capsys):
    with criterion(capsys, 1, "mse/lcc/srcc match brute-force definitions on 1000 pairs") as detail:
        rng = np.random.default_rng(101)
        pairs = []
        for k in range(1000):
            if k % 2:
                pairs.append((rng.integers(1, 6, 100).astype(float), rng.integers(1, 6, 100).astype(float), True))
            else:
                pairs.append((rng.normal(size=100), rng.normal(size=100), False))
        start = time.perf_counter()
        got = [(mse(x, y), lcc(x, y), srcc(x, y)) for x, y, _ in pairs]
        elapsed = time.perf_counter() - start
        worst = [0.0, 0.0, 0.0, 0.0]
        for (x, y, ties), (m, r, s) in zip(pairs, got):
            xl, yl = x.tolist(), y.tolist()
            worst[0] = max(worst[0], abs(m - oracles.mse(xl, yl)))
            worst[1] = max(worst[1], abs(r - oracles.pearson(xl, yl)))
            ref = oracles.pearson(oracles.midranks_sorted(xl), oracles.midranks_sorted(yl))
            worst[3 if ties else 2] = max(worst[3 if ties else 2], abs(s - ref))
        detail.append(f"max errors mse {worst[0]:.1e} lcc {worst[1]:.1e} srcc {worst[2]:.1e} srcc-ties {worst[3]:.1e}")
        detail.append(f"{elapsed:.2f}s")
        assert worst[0] <= 1e-10 and worst[1] <= 1e-10 and worst[2] <= 1e-10
        assert worst[3] <= 1e-6
        assert elapsed < 10.0


def test_criterion_02_first_degree_mapping(capsys):
    with criterion(capsys, 2, "first-degree mapping removes affine error and preserves correlations") as detail:
        rng = np.random.default_rng(202)
        worst_mse = worst_corr = 0.0
        for _ in range(200):
            pred = rng.uniform(1, 5, 80)
            a, b = rng.uniform(-2, 2), rng.uniform(0.1, 3)
            truth = a + b * pred
            mapped = apply_mapping(pred, fit_p1401(pred, truth))
            worst_mse = max(worst_mse, mse(mapped, truth))
            worst_corr = max(worst_corr, abs(lcc(mapped, truth) - lcc(pred, truth)), abs(srcc(mapped, truth) - srcc(pred, truth)))
        noisy_ok = True
        for _ in range(500):
            pred = rng.uniform(1, 5, 60)
            truth = rng.uniform(0.5, 2) * pred + rng.normal(0, rng.uniform(0.1, 2), 60)
            mapped = apply_mapping(pred, fit_p1401(pred, truth))
            noisy_ok &= mse(mapped, truth) <= mse(pred, truth)
        detail.append(f"max mapped MSE {worst_mse:.1e}, max correlation change {worst_corr:.1e}")
        assert worst_mse < 1e-20
        assert worst_corr <= 1e-12
        assert noisy_ok


def test_criterion_03_statistics_fixtures(capsys):
    with criterion(capsys, 3, "ANOVA F=3 with df (2,6); Tukey keeps (A,C); k=2 Tukey equals pooled t-test") as detail:
        groups = {"A": (1.0, 2.0, 3.0), "B": (2.0, 3.0, 4.0), "C": (3.0, 4.0, 5.0)}
        s = MetricSamples("srcc", "system", groups)
        res = one_way_anova(s)
        assert abs(res.f - 3.0) <= 1e-9 and (res.df_between, res.df_within) == (2, 6)
        ac = next(p for p in tukey_hsd(s, 0.05) if {p.a, p.b} == {"A", "C"})
        detail.append(f"q(A,C)={ac.q:.3f} vs critical {ac.q_crit:.3f}")
        assert abs(ac.q - 3.464) < 1e-3 and abs(ac.q_crit - 4.339) < 5e-3 and not ac.rejected
        rng = np.random.default_rng(303)
        agree = 0
        for _ in range(200):
            n = int(rng.integers(3, 7))
            a, b = rng.normal(0, 1, n), rng.normal(rng.uniform(0, 2.5), 1, n)
            t, df = oracles.pooled_t(a.tolist(), b.tolist())
            (pair,) = tukey_hsd(MetricSamples("m", "u", {"a": tuple(a), "b": tuple(b)}), 0.05)
            agree += pair.rejected == (abs(t) > oracles.T_975[df])
        detail.append(f"k=2 agreement {agree}/200")
        assert agree == 200


def test_criterion_04_architecture_shapes_and_budget(capsys):
    with criterion(capsys, 4, "CNN 48x15 -> 6x1x64 (384); ConvMaxPool/NISQA ratio in [0.55, 0.70]; fusion dims 65/833") as detail:
        maps = framewise_cnn_forward(FramewiseCnn(FramewiseCnnConfig()), np.random.default_rng(4).normal(size=(3, 48, 15)))
        assert maps.shape == (3, 6, 1, 64) and maps[0].size == 384
        cmp, nis = count_parameters(ConvMaxPool()).trainable, count_parameters(Nisqa()).trainable
        ratio = cmp / nis
        detail.append(f"ConvMaxPool {cmp}, NISQA {nis}, ratio {ratio:.3f}")
        assert 0.55 <= ratio <= 0.70
        assert Fusion(FusionConfig("fusion1")).fc.in_features == 65
        assert Fusion(FusionConfig("fusion2")).fc.in_features == 833


def test_criterion_05_gradient_checks(capsys):
    with criterion(capsys, 5, "L1 gradients match central differences (h=1e-4, rel 1e-4) on >=50 coordinates") as detail:
        start = time.perf_counter()
        for name in ("convmaxpool", "nisqa", "w2vmos", "fusion1", "fusion2"):
            checked, skipped, bad = gradient_check(name)
            detail.append(f"{name} {checked} checked/{skipped} skipped")
            assert not bad, (name, bad[:3])
            assert checked >= 50, name
        elapsed = time.perf_counter() - start
        detail.append(f"{elapsed:.1f}s")
        assert elapsed < 120


def test_criterion_06_freezing(capsys):
    with criterion(capsys, 6, "one step on FUSION1/FUSION2 changes only trainable parameters") as detail:
        rng = np.random.default_rng(6)
        for variant in ("fusion1", "fusion2"):
            model, before, after = fusion_step(variant, rng)
            params = dict(model.named_parameters())
            trainable = {n for n, p in params.items() if p.requires_grad}
            changed = {n for n in params if not torch.equal(before[n], after[n])}
            # every backbone state entry, buffers included, must be untouched
            frozen_w2v = [n for n in before if n.startswith("w2v.")]
            assert changed <= trainable, changed - trainable
            assert all(torch.equal(before[n], after[n]) for n in frozen_w2v)
            assert changed, "no trainable parameter moved"
            detail.append(f"{variant}: {len(changed)} tensors changed, {len(frozen_w2v)} backbone tensors identical")


def test_criterion_07_determinism_and_early_stopping(capsys, small_corpus, tmp_path):
    with criterion(capsys, 7, "patience-20 stops at the predicted epoch; same seed gives byte-identical CSVs") as detail:
        rng = np.random.default_rng(7)
        for _ in range(50):
            best_at = int(rng.integers(1, 40))
            losses = [2.0 - k / best_at for k in range(1, best_at + 1)] + list(rng.uniform(1.5, 3.0, 60))
            it = iter(losses)
            rec = run_epochs(lambda e: 0.5, lambda e: next(it), TrainConfig(patience_epochs=20, max_epochs=500))
            assert rec.best_epoch == best_at and rec.epochs_run == best_at + 20
        data = {s: prepare(small_corpus.split(s)) for s in Split}
        test = small_corpus.split(Split.TEST)
        blobs = []
        for k in range(2):
            trained, _ = train(ModelSpec("cmp", Architecture.CONVMAXPOOL), data[Split.TRAIN], data[Split.VAL],
                               TrainConfig(max_epochs=3, seed=11))
            preds = predict(trained.model, data[Split.TEST])
            path = tmp_path / f"run{k}.csv"
            write_predictions_csv(join_predictions(test, "cmp", 11, dict(zip(data[Split.TEST].ids, preds.tolist()))), path)
            blobs.append(path.read_bytes())
        detail.append(f"{len(blobs[0])} bytes per CSV")
        assert blobs[0] == blobs[1]


@pytest.mark.slow
def test_criterion_08_desk_scale_end_to_end(capsys, tmp_path):
    with criterion(capsys, 8, "600-utterance synthetic pipeline: ConvMaxPool SRCC > 0.9 / 0.95 within 15 min") as detail:
        start = time.perf_counter()
        code, _ = cli_run([
            "make-synthetic", "--out", str(tmp_path), "--models", "ConvMaxPool",
            "--max-epochs", "15", "--patience", "5", "--seed-list", "0-2",
        ])
        assert code == 0
        cfg_path = tmp_path / "config.yaml"
        doc = yaml.safe_load(cfg_path.read_text())
        # a deliberately under-trained copy gives the comparison stage a second model
        doc["models"].append({"id": "ConvMaxPool_3ep", "architecture": "convmaxpool", "train_set": "voicemos",
                              "train": {"max_epochs": 3}})
        cfg_path.write_text(yaml.safe_dump(doc, sort_keys=False))
        for command in ("train", "evaluate", "compare", "analyze"):
            code, _ = cli_run([command, "--config", str(cfg_path)])
            assert code == 0, command
        elapsed = time.perf_counter() - start
        ev = json.loads((tmp_path / "out" / "reports" / "eval_ConvMaxPool_all.json").read_text())
        utt = [r["srcc"] for r in ev["levels"]["utterance"]["runs"]]
        sys_ = [r["srcc"] for r in ev["levels"]["system"]["runs"]]
        comparison = json.loads((tmp_path / "out" / "reports" / "comparison_all.json").read_text())
        detail.append(f"utterance SRCC {min(utt):.3f}..{max(utt):.3f}, system SRCC {min(sys_):.3f}..{max(sys_):.3f}")
        detail.append(f"{elapsed / 60:.1f} min")
        assert len(utt) == 3 and min(utt) > 0.9
        assert len(sys_) == 3 and min(sys_) > 0.95
        assert len(comparison["comparisons"]) == 6
        assert (tmp_path / "out" / "analysis" / "analysis_all.json").is_file()
        assert elapsed < 15 * 60


def test_criterion_09_analysis_fixtures(capsys):
    with criterion(capsys, 9, "5 systems fill 5 bins; SRCC(VC) > SRCC(TTS) with overlapping MSE") as detail:
        rep = percentile_bins_by_system(make_manifest([1.3, 2.1, 2.9, 3.7, 4.6]))
        assert sorted(rep.system_bin.values()) == [0, 1, 2, 3, 4]
        rng = np.random.default_rng(909)
        tts_truth = np.round(rng.uniform(3.4, 4.6, 40), 3)
        vc_truth = np.round(np.linspace(1.2, 4.8, 40), 3)
        truth = np.concatenate([tts_truth, vc_truth])
        types = [SystemType.BC] * 40 + [SystemType.VCC] * 40
        systems = [f"t{i % 8}" for i in range(40)] + [f"v{i % 8}" for i in range(40)]
        runs = []
        for k in range(10):
            pred = np.concatenate([rng.permutation(tts_truth), vc_truth + rng.normal(0, 0.36, 40)])
            m = make_manifest(truth, systems=systems, types=types)
            runs.append(join_predictions(m, "fixture", k, dict(zip(m.ids, pred.tolist()))))
        br = system_type_breakdown(runs, level=Level.UTTERANCE)
        tts, vc = br.reports["tts"].summary, br.reports["vc"].summary
        detail.append(f"SRCC tts {tts['srcc'].mean:.2f} vc {vc['srcc'].mean:.2f}")
        detail.append(f"MSE tts {tts['mse'].mean:.3f}±{tts['mse'].ci95:.3f} vc {vc['mse'].mean:.3f}±{vc['mse'].ci95:.3f}")
        assert vc["srcc"].mean > tts["srcc"].mean
        assert abs(tts["mse"].mean - vc["mse"].mean) <= tts["mse"].ci95 + vc["mse"].ci95


def test_criterion_10_subsampler(capsys):
    with criterion(capsys, 10, "7k-from-80k subsample keeps 0.25-bin proportions within largest-remainder slack") as detail:
        rng = np.random.default_rng(1010)
        mos = np.clip(np.concatenate([rng.normal(3.6, 0.6, 60_000), rng.normal(2.0, 0.5, 20_000)]), 1.0, 5.0)
        population = make_manifest(np.round(mos, 4))
        sub = subsample_matched(population, 7000, bin_width=0.25, seed=0)
        full = bin_counts(population.mos.tolist())
        got = bin_counts(sub.mos.tolist())
        quotas = [7000 * c / len(population) for c in full]
        slack = max(abs(g - q) for g, q in zip(got, quotas))
        detail.append(f"max |count - quota| = {slack:.3f} over {sum(1 for c in full if c)} occupied bins")
        assert sum(got) == 7000 and len(set(sub.ids)) == 7000
        assert all(math.floor(q) <= g <= math.ceil(q) for g, q in zip(got, quotas))
