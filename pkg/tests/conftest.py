import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from langvox.dataset import SyntheticSceneSpec, generate_synthetic_scene, scene_samples
from langvox.trainer import TrainConfig

CLASSES = ("floor", "wall", "chair", "table")


def tiny_samples(seed=0, frames=4, width=32, height=24):
    spec = SyntheticSceneSpec(classes=CLASSES, seed=seed, frames=frames, width=width, height=height,
                              focal=width * 0.75)
    return scene_samples(generate_synthetic_scene(spec), min_pairs=4)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=2, model_dim=8, model_dim_3d=8, model_dec_dim=8, model_enc3d_hidden=8,
                prompt_context_length=2)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny():
    return tiny_samples()
