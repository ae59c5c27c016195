"""
Fixtures compartidas: generadores con semilla, denoiser diminuto y un corpus de 3 tripletas
"""
import numpy as np
import pytest

from app.models.denoiser import DenoiserConfig
from app.models.image import CorpusConfig
from app.models.mask import PerturbConfig
from app.models.training import TrainConfig
from app.services.corpus_service import CorpusService


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_denoiser_cfg():
    return DenoiserConfig(hidden_width=4, time_embed_dim=8)


@pytest.fixture
def corpus_cfg():
    return CorpusConfig(count=3, width=16, height=16, seed=7)


@pytest.fixture
def tiny_corpus(tmp_path, corpus_cfg):
    return CorpusService.make_corpus(corpus_cfg, tmp_path / "corpus")


@pytest.fixture
def tiny_train_cfg(tiny_denoiser_cfg):
    return TrainConfig(
        steps=6,
        seed=3,
        checkpoint_every=0,
        log_wall_time=False,
        learning_rate=1e-3,
        perturb=PerturbConfig(dilation_radius_k=1),
        denoiser=tiny_denoiser_cfg,
    )


def square_mask(size: int, top: int, left: int, side: int) -> np.ndarray:
    values = np.zeros((size, size), dtype=np.uint8)
    values[top:top + side, left:left + side] = 1
    return values
