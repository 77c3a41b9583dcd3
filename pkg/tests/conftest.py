import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from framestack.core import GroupThresholds  # noqa: E402
from framestack.datagen import SynthConfig, split_dataset, synthesize  # noqa: E402
from framestack.trainer import FeatureSet  # noqa: E402


def tiny_config(**kw):
    base = dict(num_classes=4, counts=[20, 14, 10, 10], dim=8, length=20, signal_frac=0.6,
                noise=0.5, n_background=4, seed=3, thresholds=GroupThresholds(12, 8))
    base.update(kw)
    return SynthConfig(**base)


def tiny_splits(**kw):
    cfg = tiny_config(**kw)
    manifest, feats = synthesize(cfg)
    row = {r.video_id: i for i, r in enumerate(manifest.records)}
    return [FeatureSet.from_arrays(m, feats[[row[r.video_id] for r in m.records]])
            for m in split_dataset(manifest, cfg.ratios, cfg.seed)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data():
    return tiny_splits()
