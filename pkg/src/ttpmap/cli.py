"""Command-line surface: annotate, evaluate, export-train, serve, stats."""
from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .config import PipelineConfig, load_config
from .corpus import Corpus, load_jsonl, stats as corpus_stats
from .errors import TtpmapError
from .evaluation import evaluate, evaluate_at_k, report_table
from .generation import (Annotation, export_training, run_pipeline,
                         save_training_jsonl)
from .taxonomy import load_taxonomy, parse_id


def _load_corpus(config: PipelineConfig, split: str = "train") -> Corpus:
    examples = []
    for path in config.corpus_paths:
        examples.extend(load_jsonl(path, split=split).examples)
    return Corpus(examples)


def _config_with_overrides(config_path: str, stub_dir: str | None,
                           **fields) -> PipelineConfig:
    config = load_config(config_path)
    if stub_dir:
        config.stub_dir = stub_dir
    for name, value in fields.items():
        if value is not None:
            setattr(config, name, value)
    config.__post_init__()
    return config


def _hyper_options(command):
    for option in (
        click.option("--retrieve-k", "K", type=int, default=None,
                     help="Top-K retrieved pairs (config K)."),
        click.option("--exemplars", "k", type=int, default=None,
                     help="Exemplar pairs in the context (config k)."),
        click.option("--window", type=int, default=None,
                     help="Re-ranker window size."),
        click.option("--overlap", type=int, default=None,
                     help="Re-ranker window overlap."),
        click.option("--context-budget", type=int, default=None,
                     help="Generator context token budget."),
        click.option("--strict-filter/--no-strict-filter",
                     "strict_candidate_filter", default=None,
                     help="Drop predictions outside the candidate set."),
        click.option("--concurrency", type=int, default=None,
                     help="Parallel queries against the backends."),
    ):
        command = option(command)
    return command


@click.group()
def main():
    """Annotate security text with MITRE ATT&CK (sub-)technique IDs."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--text", default=None, help="Annotate a single text.")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSONL of {text, id?} records.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="Annotations JSONL; stdout when omitted.")
@click.option("--stub-dir", default=None, help="Replay canned backend responses.")
@click.option("--trace", "with_trace", is_flag=True,
              help="Emit per-query execution traces beside the output.")
@_hyper_options
def annotate(config_path, text, input_path, output_path, stub_dir, with_trace,
             **overrides):
    """Annotate one text or a JSONL batch."""
    if (text is None) == (input_path is None):
        raise click.UsageError("provide exactly one of --text or --input")
    config = _config_with_overrides(config_path, stub_dir, **overrides)
    taxonomy = load_taxonomy(config.taxonomy_path, config.taxonomy_format)
    corpus = _load_corpus(config)
    reranker_backend, generator_backend = config.backends()
    hyper = config.hyper()

    queries: list[tuple[str, str]] = []
    failures: list[dict] = []
    if text is not None:
        queries.append(("query:1", text))
    else:
        with open(input_path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    if not isinstance(record, dict) or not record.get("text"):
                        raise ValueError("record must be an object with a 'text' field")
                    queries.append((str(record.get("id") or f"line:{line_no}"),
                                    str(record["text"])))
                except (json.JSONDecodeError, ValueError) as exc:
                    failures.append({"line": line_no, "error": str(exc)})

    def annotate_one(item):
        query_id, query = item
        return run_pipeline(query, corpus, taxonomy, reranker_backend,
                            generator_backend, hyper, query_id=query_id,
                            with_trace=with_trace)

    # Bounded parallelism; outputs keep input order regardless of completion.
    outcomes = []
    if config.concurrency > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
            futures = [(query_id, pool.submit(annotate_one, (query_id, query)))
                       for query_id, query in queries]
            for query_id, future in futures:
                try:
                    outcomes.append((query_id, future.result(), None))
                except TtpmapError as exc:
                    outcomes.append((query_id, None, str(exc)))
    else:
        for item in queries:
            try:
                outcomes.append((item[0], annotate_one(item), None))
            except TtpmapError as exc:
                outcomes.append((item[0], None, str(exc)))

    records = []
    traces = []
    for query_id, annotation, error in outcomes:
        if annotation is None:
            failures.append({"id": query_id, "error": error})
            continue
        records.append({
            "id": annotation.query_id,
            "predicted": [str(t) for t in annotation.predicted],
            "filtered_count": annotation.filtered_count,
            "degraded": annotation.degraded,
        })
        if with_trace and annotation.trace is not None:
            traces.append(annotation.trace)

    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    if output_path:
        Path(output_path).write_text("".join(line + "\n" for line in lines),
                                     encoding="utf-8")
        if with_trace:
            Path(output_path + ".traces.jsonl").write_text(
                "".join(json.dumps(t, ensure_ascii=False) + "\n" for t in traces),
                encoding="utf-8")
        if failures:
            Path(output_path + ".failures.json").write_text(
                json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    else:
        for line in lines:
            click.echo(line)
    if failures:
        click.echo(f"{len(failures)} input(s) failed"
                   + (f"; see {output_path}.failures.json" if output_path else
                      ": " + json.dumps(failures)), err=True)
    if not records and failures:
        sys.exit(1)


def _load_predictions(path: str) -> dict[str, list]:
    from .errors import FormatError

    predictions = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                predictions[str(record["id"])] = \
                    [parse_id(t) for t in record["predicted"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{line_no}: bad prediction record: "
                                  f"{exc}") from exc
    return predictions


@main.command("evaluate")
@click.option("--predictions", "predictions_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help='JSONL of {"id", "predicted": [ids]}.')
@click.option("--gold", "gold_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--level", type=click.Choice(["technique", "sub", "both"]),
              default="both", show_default=True)
@click.option("--mode", type=click.Choice(["end_to_end", "at_k"]),
              default="end_to_end", show_default=True)
@click.option("--k", "k_values", multiple=True, type=int,
              help="k values for at_k mode (default 1 and 3).")
@click.option("--average", type=click.Choice(["micro", "example"]), default="micro",
              show_default=True)
@click.option("--dataset", default="", help="Dataset label for the report rows.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None,
              help="Write the CSV report here.")
def evaluate_cmd(predictions_path, gold_path, level, mode, k_values, average,
                 dataset, report_path):
    """Score a predictions file against a gold dataset."""
    levels = ["technique", "sub"] if level == "both" else [level]
    reports = []
    try:
        gold = load_jsonl(gold_path, split="test")
        predictions = _load_predictions(predictions_path)
        for lvl in levels:
            if mode == "end_to_end":
                annotations = [Annotation(query_id=i, predicted=p, raw_response="")
                               for i, p in predictions.items()]
                reports.append(evaluate(annotations, gold, level=lvl, average=average,
                                        dataset=dataset))
            else:
                for k in (k_values or (1, 3)):
                    reports.append(evaluate_at_k(predictions, gold, k=k, level=lvl,
                                                 average=average, dataset=dataset))
    except TtpmapError as exc:
        raise click.ClickException(str(exc))
    csv_text, pretty = report_table(reports)
    click.echo(pretty)
    if report_path:
        Path(report_path).write_text(csv_text, encoding="utf-8")


@main.command("export-train")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--oversample", type=int, default=None,
              help="Copies of each multi-label example (default from config).")
@click.option("--stub-dir", default=None)
@_hyper_options
def export_train(config_path, output_path, oversample, stub_dir, **overrides):
    """Emit fine-tuning records in the inference prompt format."""
    config = _config_with_overrides(config_path, stub_dir, **overrides)
    taxonomy = load_taxonomy(config.taxonomy_path, config.taxonomy_format)
    corpus = _load_corpus(config, split="train")
    reranker_backend, _ = config.backends()
    factor = oversample if oversample is not None else config.oversample_multi
    export = export_training(corpus, taxonomy, reranker_backend, config.hyper(),
                             oversample_multi=factor,
                             concurrency=config.concurrency)
    save_training_jsonl(export, output_path)
    if export.failures:
        Path(output_path + ".failures.json").write_text(
            json.dumps(export.failures, indent=2) + "\n", encoding="utf-8")
    click.echo(f"wrote {len(export.records)} records to {output_path}"
               + (f" ({len(export.failures)} example(s) skipped)"
                  if export.failures else ""))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--stub-dir", default=None)
def serve(config_path, host, port, stub_dir):
    """Run the annotation HTTP service."""
    import uvicorn

    from .service import create_app

    config = _config_with_overrides(config_path, stub_dir)
    uvicorn.run(create_app(config), host=host, port=port)


@main.command()
@click.option("--input", "input_paths", multiple=True,
              type=click.Path(exists=True, dir_okay=False), required=True)
def stats(input_paths):
    """Dataset statistics: examples, labels, tokens."""
    for path in input_paths:
        corpus = load_jsonl(path)
        summary = corpus_stats(corpus)
        click.echo(f"{path}: examples={summary.n_examples} "
                   f"avg_labels={summary.mean_label_count:.2f} "
                   f"avg_tokens={summary.mean_token_count:.2f} "
                   f"unique_labels={summary.unique_label_count}")


if __name__ == "__main__":
    main()
