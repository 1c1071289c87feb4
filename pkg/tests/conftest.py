import numpy as np
import pytest
import torch
from hypothesis import settings

from chronolapse import dataset as ds
from chronolapse.config import TrainConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.register_profile("fast", deadline=None, max_examples=10)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small labeled corpus: 12 sequences x 10 frames at 36 px."""
    root = tmp_path_factory.mktemp("toy")
    ds.generate_synthetic_corpus(root, 12, 10, 36, np.random.default_rng(1), cameras=6)
    return root


@pytest.fixture(scope="session")
def toy_unlabeled(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_unlabeled")
    ds.generate_synthetic_corpus(root, 4, 12, 36, np.random.default_rng(2), domain="unlabeled", prefix="vid")
    return root


@pytest.fixture
def toy_cfg():
    def make(**kw):
        base = dict(frames_per_example=4, batch_size=2, iterations=4, checkpoint_every=2)
        base.update(kw)
        return TrainConfig.toy(**base)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory, toy_corpus, toy_unlabeled):
    """A two-iteration multidomain toy checkpoint."""
    from chronolapse.trainer import train

    out = tmp_path_factory.mktemp("ckpt")
    cfg = TrainConfig.toy(frames_per_example=4, batch_size=2, iterations=2)
    return train(cfg, toy_corpus, toy_unlabeled, out).path


@pytest.fixture(scope="session")
def sample_image(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "input.png"
    rng = np.random.default_rng(8)
    img = np.clip(rng.normal(0, 0.3, (50, 70, 3)), -1, 1).astype(np.float32)
    ds.write_image(path, img)
    return path
