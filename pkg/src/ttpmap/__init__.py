"""Retrieve, re-rank, generate: MITRE ATT&CK technique annotation for security text."""

from .backends import (ChatBackend, FunctionBackend, HttpChatBackend,
                       StubChatBackend, mirror_to_stub, payload_key,
                       request_payload)
from .config import PipelineConfig, load_config, save_config
from .context import GeneratorContext, build_context, render_labels
from .corpus import (AnnotatedExample, Corpus, CorpusStats, load_jsonl,
                     normalize_text, retrieval_view, save_jsonl, stats)
from .errors import (BackendError, DuplicateId, EmptyCorpus, EmptyPrediction,
                     FormatError, LevelMismatch, MalformedId, MissingPrediction,
                     QueryTooLong, TtpmapError, UnparseableResponse)
from .evaluation import (LabelSet, MetricsReport, evaluate, evaluate_at_k,
                         report_table, score_sets)
from .generation import (Annotation, GenerationConfig, PipelineHyper,
                         TrainingExport, annotate, export_training,
                         extract_predictions, run_pipeline)
from .reranker import (Candidate, CandidateList, RankedCandidates, WindowPlan,
                       build_prompt, build_rankgpt_prompt, candidates_from_pairs,
                       parse_ranking, reorder_pairs, rerank)
from .retriever import (Bm25Index, Retrieval, build_index, load_index,
                        save_index, search, tokenize)
from .taxonomy import (Taxonomy, TaxonomyEntry, TechniqueId, format_id,
                       load_taxonomy, parse_id, truncate)

__version__ = "0.1.0"
