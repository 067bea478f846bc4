from __future__ import annotations

import numpy as np
import pytest
import torch

from mosbench.data import Manifest, Split, SystemType, Utterance
from mosbench.synthetic import SyntheticCorpusConfig, generate_corpus

torch.set_num_threads(1)


def make_utterance(uid: str, mos: float, system: str = "s0", stype=SystemType.BC, split=Split.TEST) -> Utterance:
    return Utterance(uid, f"/nonexistent/{uid}.wav", system, SystemType(stype), float(mos), Split(split))


def make_manifest(mos, systems=None, types=None, splits=None, name="fixture") -> Manifest:
    n = len(mos)
    systems = systems if systems is not None else [f"s{i}" for i in range(n)]
    types = types if types is not None else [SystemType.BC] * n
    splits = splits if splits is not None else [Split.TEST] * n
    return Manifest(
        name,
        tuple(make_utterance(f"u{i:05d}", m, s, t, sp) for i, (m, s, t, sp) in enumerate(zip(mos, systems, types, splits))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """96 short utterances over 12 synthetic systems, written to disk once per session."""
    root = tmp_path_factory.mktemp("small_corpus")
    cfg = SyntheticCorpusConfig(n_utterances=96, n_systems=12, min_seconds=0.3, max_seconds=0.45, seed=3)
    return generate_corpus(root, cfg, name="small")
