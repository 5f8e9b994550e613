"""Declarative pipeline configuration (JSON file, env overrides for secrets)."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .backends import ChatBackend, HttpChatBackend, StubChatBackend
from .generation import GenerationConfig, PipelineHyper

# Secrets never live in the config file; these env vars hold bearer tokens.
RERANKER_TOKEN_ENV = "TTPMAP_RERANKER_TOKEN"
GENERATOR_TOKEN_ENV = "TTPMAP_GENERATOR_TOKEN"
SHARED_TOKEN_ENV = "TTPMAP_API_TOKEN"


@dataclass
class PipelineConfig:
    """Everything a CLI run or service instance needs, minus secrets."""

    taxonomy_path: str = ""
    taxonomy_format: str = "csv"
    corpus_paths: list[str] = field(default_factory=list)
    K: int = 40
    k: int = 3
    window: int = 40
    overlap: int = 20
    context_budget: int = 2048
    include_names: bool = True
    temperature: float = 0.7
    top_p: float = 0.1
    max_output_tokens: Optional[int] = None
    strict_candidate_filter: bool = False
    oversample_multi: int = 3
    reranker_url: str = ""
    reranker_model: str = "reranker"
    generator_url: str = ""
    generator_model: str = "generator"
    stub_dir: Optional[str] = None
    output_dir: str = "out"
    concurrency: int = 4

    def __post_init__(self):
        if not self.K >= self.k >= 0:
            raise ValueError(f"need K >= k >= 0, got K={self.K} k={self.k}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.overlap < self.window:
            raise ValueError(f"overlap must be in [0, window), got {self.overlap}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")

    def hyper(self) -> PipelineHyper:
        return PipelineHyper(
            K=self.K,
            k=self.k,
            window=self.window,
            overlap=self.overlap,
            context_budget=self.context_budget,
            include_names=self.include_names,
            generation=GenerationConfig(
                temperature=self.temperature,
                top_p=self.top_p,
                max_output_tokens=self.max_output_tokens,
                strict_candidate_filter=self.strict_candidate_filter,
            ),
            reranker_model=os.environ.get("TTPMAP_RERANKER_MODEL", self.reranker_model),
            generator_model=os.environ.get("TTPMAP_GENERATOR_MODEL", self.generator_model),
        )

    def backends(self) -> tuple[ChatBackend, ChatBackend]:
        """(reranker backend, generator backend); stub_dir switches both to replay."""
        if self.stub_dir:
            stub = StubChatBackend(self.stub_dir)
            return stub, stub
        reranker_url = os.environ.get("TTPMAP_RERANKER_URL", self.reranker_url)
        generator_url = os.environ.get("TTPMAP_GENERATOR_URL", self.generator_url)
        if not reranker_url or not generator_url:
            raise ValueError("reranker_url and generator_url must be configured "
                             "(or use a stub_dir for offline replay)")
        reranker_env = RERANKER_TOKEN_ENV if os.environ.get(RERANKER_TOKEN_ENV) \
            else SHARED_TOKEN_ENV
        generator_env = GENERATOR_TOKEN_ENV if os.environ.get(GENERATOR_TOKEN_ENV) \
            else SHARED_TOKEN_ENV
        return (
            HttpChatBackend(reranker_url, token_env=reranker_env,
                            max_concurrency=self.concurrency),
            HttpChatBackend(generator_url, token_env=generator_env,
                            max_concurrency=self.concurrency),
        )


def load_config(path: Union[str, Path]) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return PipelineConfig(**data)


def save_config(config: PipelineConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
