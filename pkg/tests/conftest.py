import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ttpmap.corpus import load_jsonl
from ttpmap.taxonomy import load_taxonomy

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def taxonomy_csv_path() -> Path:
    return DATA_DIR / "attack_mini.csv"


@pytest.fixture(scope="session")
def taxonomy(taxonomy_csv_path):
    return load_taxonomy(taxonomy_csv_path, "csv")


@pytest.fixture(scope="session")
def replay_corpus_path() -> Path:
    return DATA_DIR / "replay_corpus.jsonl"


@pytest.fixture(scope="session")
def replay_corpus(replay_corpus_path):
    return load_jsonl(replay_corpus_path, split="train", source="replay")


@pytest.fixture()
def write_jsonl(tmp_path):
    def _write(name: str, records: list[dict]) -> Path:
        path = tmp_path / name
        path.write_text("".join(json.dumps(r) + "\n" for r in records),
                        encoding="utf-8")
        return path

    return _write
