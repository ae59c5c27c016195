"""
Pruebas de E/S de imágenes y del corpus procedural
"""
import numpy as np
import pytest

from app.core.exceptions import GenerationFailed, MalformedFile
from app.models.image import CorpusConfig
from app.models.mask import BinaryMask
from app.services.corpus_service import MANIFEST_NAME, CorpusService
from app.services.image_service import ImageService
from app.utils.seeding import generator_for


class TestImageIO:
    def test_round_trip_within_quantization(self, tmp_path, rng):
        for channels, name in ((1, "a.pgm"), (3, "b.ppm")):
            img = rng.random((channels, 9, 13))
            loaded = ImageService.load_image(ImageService.save_image(img, tmp_path / name))
            assert loaded.shape == img.shape
            assert np.max(np.abs(loaded - img)) <= 1.0 / 510.0 + 1e-12

    def test_zero_image(self, tmp_path):
        loaded = ImageService.load_image(ImageService.save_image(np.zeros((1, 4, 4)), tmp_path / "z.pgm"))
        assert not loaded.any()

    def test_crafted_p5(self, tmp_path):
        ruta = tmp_path / "crafted.pgm"
        ruta.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        loaded = ImageService.load_image(ruta)
        np.testing.assert_array_equal(loaded[0], np.array([[0, 128], [255, 64]]) / 255.0)

    def test_values_clamped_before_save(self, tmp_path):
        loaded = ImageService.load_image(ImageService.save_image(np.full((1, 3, 3), 1.7), tmp_path / "c.pgm"))
        assert np.all(loaded == 1.0)

    def test_bad_magic(self, tmp_path):
        ruta = tmp_path / "bad.pgm"
        ruta.write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
        with pytest.raises(MalformedFile):
            ImageService.load_image(ruta)

    def test_truncated(self, tmp_path):
        ruta = tmp_path / "short.pgm"
        ruta.write_bytes(b"P5\n4 4\n255\n" + bytes([1, 2, 3]))
        with pytest.raises(MalformedFile):
            ImageService.load_image(ruta)

    @pytest.mark.parametrize("maxval", [b"100", b"65535", b"x"])
    def test_maxval_other_than_255_rejected(self, tmp_path, maxval):
        ruta = tmp_path / "maxval.pgm"
        ruta.write_bytes(b"P5\n2 1\n" + maxval + b"\n" + bytes([0, 100]))
        with pytest.raises(MalformedFile):
            ImageService.load_image(ruta)
        with pytest.raises(MalformedFile):
            ImageService.load_mask(ruta)

    def test_header_comments_are_skipped(self, tmp_path):
        ruta = tmp_path / "comentado.pgm"
        ruta.write_bytes(b"P5\n# creado a mano\n2 1\n# maxval abajo\n255\n" + bytes([0, 255]))
        np.testing.assert_array_equal(ImageService.load_image(ruta)[0], [[0.0, 1.0]])

    def test_truncated_header(self, tmp_path):
        ruta = tmp_path / "corto.pgm"
        ruta.write_bytes(b"P5\n2 1\n")
        with pytest.raises(MalformedFile):
            ImageService.load_image(ruta)

    def test_mask_threshold_and_encoding(self, tmp_path):
        ruta = tmp_path / "m.pgm"
        ruta.write_bytes(b"P5\n3 1\n255\n" + bytes([127, 128, 255]))
        mask = ImageService.load_mask(ruta)
        np.testing.assert_array_equal(mask.values, [[0, 1, 1]])
        ImageService.save_mask(mask, tmp_path / "m2.pgm")
        assert set(np.unique(np.asarray(ImageService.load_image(tmp_path / "m2.pgm")) * 255)) <= {0.0, 255.0}


class TestSynthTriplet:
    def test_composite_equals_truth_outside_mask(self):
        cfg = CorpusConfig(width=32, height=32, channels=3)
        for i in range(20):
            triplet = CorpusService.synth_triplet(cfg, generator_for(0, i))
            fuera = ~triplet.mask.as_bool()
            np.testing.assert_array_equal(triplet.composite[:, fuera], triplet.ground_truth[:, fuera])

    def test_mask_area_and_contrast(self):
        cfg = CorpusConfig(width=32, height=32)
        lo, hi = cfg.shape_area_fraction_range
        for i in range(20):
            triplet = CorpusService.synth_triplet(cfg, generator_for(1, i))
            assert not triplet.mask.is_empty()
            assert lo <= triplet.mask.coverage <= hi
            dentro = triplet.mask.as_bool()
            contraste = np.abs(triplet.composite[:, dentro] - triplet.ground_truth[:, dentro])
            assert contraste.min() >= 0.2 - 1e-12

    def test_deterministic(self):
        cfg = CorpusConfig(width=32, height=32)
        a = CorpusService.synth_triplet(cfg, generator_for(3))
        b = CorpusService.synth_triplet(cfg, generator_for(3))
        np.testing.assert_array_equal(a.composite, b.composite)
        assert a.mask == b.mask

    def test_values_on_8bit_grid(self):
        triplet = CorpusService.synth_triplet(CorpusConfig(width=32, height=32), generator_for(4))
        np.testing.assert_array_equal(np.round(triplet.composite * 255) / 255, triplet.composite)

    def test_unsatisfiable_contrast_fails(self, monkeypatch):
        from app.services import corpus_service

        monkeypatch.setattr(corpus_service, "_foreground_value", lambda pixels, rng: None)
        with pytest.raises(GenerationFailed):
            CorpusService.synth_triplet(CorpusConfig(width=16, height=16), generator_for(0))


class TestCorpus:
    def test_file_count(self, tmp_path, corpus_cfg):
        CorpusService.make_corpus(corpus_cfg, tmp_path / "c")
        files = sorted(p.name for p in (tmp_path / "c").iterdir())
        assert len(files) == 10
        assert MANIFEST_NAME in files
        assert "0002_composite.pgm" in files and "0002_mask.pgm" in files

    def test_regeneration_is_byte_identical(self, tmp_path, corpus_cfg):
        CorpusService.make_corpus(corpus_cfg, tmp_path / "a")
        seed = CorpusService.read_manifest(tmp_path / "a").seed
        CorpusService.make_corpus(corpus_cfg.model_copy(update={"seed": seed}), tmp_path / "b")
        for ruta in (tmp_path / "a").iterdir():
            assert ruta.read_bytes() == (tmp_path / "b" / ruta.name).read_bytes()

    def test_manifest_and_reload(self, tiny_corpus, corpus_cfg):
        manifest = CorpusService.read_manifest(tiny_corpus.directory)
        assert manifest.seed == corpus_cfg.seed
        assert manifest.config["width"] == "16"
        assert [e.index for e in manifest.entries] == [0, 1, 2]
        for triplet in CorpusService.load_corpus(tiny_corpus.directory):
            assert not triplet.mask.is_empty()
            fuera = ~triplet.mask.as_bool()
            np.testing.assert_array_equal(triplet.composite[:, fuera], triplet.ground_truth[:, fuera])

    def test_reload_matches_generation(self, tiny_corpus, corpus_cfg):
        reloaded = CorpusService.load_corpus(tiny_corpus.directory)[1]
        generated = CorpusService.synth_triplet(corpus_cfg, generator_for(corpus_cfg.seed, 1))
        np.testing.assert_array_equal(reloaded.ground_truth, generated.ground_truth)
        assert reloaded.mask == generated.mask

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            CorpusConfig(count=0)
        with pytest.raises(ValueError):
            CorpusConfig(shape_area_fraction_range=(0.1, 0.7))
        with pytest.raises(ValueError):
            CorpusConfig(channels=2)

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text("no-seed\n", encoding="utf-8")
        with pytest.raises(MalformedFile):
            CorpusService.read_manifest(tmp_path)

    def test_mask_is_binary_mask(self, tiny_corpus):
        triplet = CorpusService.load_corpus(tiny_corpus.directory)[0]
        assert isinstance(triplet.mask, BinaryMask)
