"""
Pruebas de la ablación de los cuatro brazos
"""
import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models.image import CorpusConfig
from app.models.mask import PerturbConfig
from app.models.training import TrainConfig
from app.services.ablation_service import ABLATION_HEADER, ABLATION_TABLE, ARMS, AblationService
from app.services.corpus_service import CorpusService
from app.services.train_service import CHECKPOINT_NAME, TrainService


def _state_bytes(path):
    ckpt = TrainService.load_checkpoint(path)
    return ckpt.params.flat.tobytes() + ckpt.m.tobytes() + ckpt.v.tobytes()


def test_degenerate_perturbations_make_all_arms_identical(tmp_path, tiny_train_cfg, tiny_corpus):
    cfg = tiny_train_cfg.model_copy(update={"steps": 4, "perturb": PerturbConfig.degenerate()})
    rows = AblationService.run_ablation(cfg, tiny_corpus, tmp_path / "abl", seeds=[0], n_steps=2)

    assert [r.arm for r in rows] == list(ARMS)
    estados = {arm: _state_bytes(tmp_path / "abl" / "seed_0" / arm / CHECKPOINT_NAME) for arm in ARMS}
    assert len(set(estados.values())) == 1
    for row in rows:
        assert row.cons == 0.0
        assert row.gap == 0.0
        assert row.mse == rows[0].mse


def test_table_written_and_baseline_has_no_consistency(tmp_path, tiny_train_cfg, tiny_corpus):
    cfg = tiny_train_cfg.model_copy(update={"steps": 3})
    rows = AblationService.run_ablation(cfg, tiny_corpus, tmp_path / "abl", seeds=[0, 1], n_steps=2)

    lineas = (tmp_path / "abl" / ABLATION_TABLE).read_text(encoding="utf-8").splitlines()
    assert lineas[0] == ABLATION_HEADER
    assert [linea.split("\t")[0] for linea in lineas[1:]] == list(ARMS)
    por_brazo = {r.arm: r for r in rows}
    assert por_brazo["baseline"].cons == 0.0
    assert por_brazo["mcr"].cons > 0.0
    for seed in (0, 1):
        for arm in ARMS:
            assert (tmp_path / "abl" / f"seed_{seed}" / arm / "metrics.txt").exists()


def test_requires_seeds(tmp_path, tiny_train_cfg, tiny_corpus):
    with pytest.raises(ConfigError):
        AblationService.run_ablation(tiny_train_cfg, tiny_corpus, tmp_path / "abl", seeds=[])


@pytest.mark.slow
def test_consistency_narrows_gap_against_baseline(tmp_path):
    corpus = CorpusService.make_corpus(CorpusConfig(), tmp_path / "corpus")
    cfg = TrainConfig(steps=2000, log_wall_time=False, checkpoint_every=0)
    rows = {r.arm: r for r in AblationService.run_ablation(cfg, corpus, tmp_path / "abl", seeds=[0, 1, 2])}
    mcr, baseline = rows["mcr"], rows["baseline"]
    assert mcr.gap < baseline.gap
    assert mcr.gap <= rows["dilate_only"].gap
    assert mcr.gap <= rows["reshape_only"].gap
    assert mcr.psnr_masked >= baseline.psnr_masked - 0.5
    assert np.isfinite(mcr.psnr)
