import dataclasses

import pytest

from ttpmap.backends import HttpChatBackend, StubChatBackend
from ttpmap.config import PipelineConfig, load_config, save_config


class TestRoundTrip:
    def test_parse_serialize_parse_fixed_point(self, tmp_path):
        config = PipelineConfig(taxonomy_path="tax.csv", corpus_paths=["a.jsonl"],
                                K=10, k=2, window=8, overlap=4,
                                reranker_url="http://r", generator_url="http://g",
                                max_output_tokens=256)
        first = tmp_path / "c1.json"
        second = tmp_path / "c2.json"
        save_config(config, first)
        loaded = load_config(first)
        assert loaded == config
        save_config(loaded, second)
        assert load_config(second) == loaded
        assert first.read_text() == second.read_text()

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"taxonomy_path": "t.csv", "surprise": 1}',
                        encoding="utf-8")
        with pytest.raises(ValueError, match="surprise"):
            load_config(path)


class TestValidation:
    def test_k_must_not_exceed_capital_k(self):
        with pytest.raises(ValueError):
            PipelineConfig(K=2, k=3)

    def test_overlap_below_window(self):
        with pytest.raises(ValueError):
            PipelineConfig(window=10, overlap=10)

    def test_defaults_mirror_reference_settings(self):
        config = PipelineConfig()
        assert (config.K, config.k) == (40, 3)
        assert (config.window, config.overlap) == (40, 20)
        assert config.context_budget == 2048
        assert (config.temperature, config.top_p) == (0.7, 0.1)
        assert not config.strict_candidate_filter
        assert config.oversample_multi == 3


class TestBackends:
    def test_stub_dir_switches_both(self, tmp_path):
        config = PipelineConfig(stub_dir=str(tmp_path))
        reranker, generator = config.backends()
        assert isinstance(reranker, StubChatBackend)
        assert reranker is generator

    def test_http_backends_from_urls(self):
        config = PipelineConfig(reranker_url="http://r/v1/chat/completions",
                                generator_url="http://g/v1/chat/completions")
        reranker, generator = config.backends()
        assert isinstance(reranker, HttpChatBackend)
        assert reranker.url == "http://r/v1/chat/completions"
        assert generator.url == "http://g/v1/chat/completions"

    def test_missing_urls_rejected(self):
        with pytest.raises(ValueError, match="stub_dir"):
            PipelineConfig().backends()

    def test_env_overrides_urls_and_models(self, monkeypatch):
        monkeypatch.setenv("TTPMAP_GENERATOR_URL", "http://env-g")
        monkeypatch.setenv("TTPMAP_GENERATOR_MODEL", "tuned-8b")
        config = PipelineConfig(reranker_url="http://r", generator_url="http://g")
        _, generator = config.backends()
        assert generator.url == "http://env-g"
        assert config.hyper().generator_model == "tuned-8b"

    def test_hyper_mirrors_config(self):
        config = PipelineConfig(K=12, k=2, window=6, overlap=2,
                                temperature=0.3, strict_candidate_filter=True)
        hyper = config.hyper()
        assert (hyper.K, hyper.k, hyper.window, hyper.overlap) == (12, 2, 6, 2)
        assert hyper.generation.temperature == 0.3
        assert hyper.generation.strict_candidate_filter


def test_config_covers_all_fields_in_file(tmp_path):
    config = PipelineConfig()
    path = tmp_path / "c.json"
    save_config(config, path)
    loaded = load_config(path)
    for field in dataclasses.fields(PipelineConfig):
        assert getattr(loaded, field.name) == getattr(config, field.name)
