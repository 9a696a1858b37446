"""Command-line entry point: index building, runs, evaluation, costs, mocks.

Every command takes ``--json`` for machine-readable stdout; human tables are
the default. Exit codes: 0 success, 1 runtime failure, 2 usage error.
A declarative config file (JSON always; TOML when the interpreter ships
``tomllib``) supplies per-command defaults; explicit flags win. See
``docs/config.md``.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

import refta
from refta.backends import EndpointConfig, ScorerClient, resolve_token
from refta.corpus import load_monolingual, load_parallel
from refta.errors import ReftaError
from refta.index import (
    ExclusionList,
    HnswParams,
    build_index,
    load_index,
    save_index,
)
from refta.metrics.report import (
    attach_neural_scores,
    compare_runs,
    evaluate_hypotheses,
    format_comparison_table,
    write_comparison,
)
from refta.cost import CostModel, cost_report
from refta.mockserver import MockBehavior, MockServer
from refta.pipeline import RunConfig, read_hypotheses, translate_corpus

DEFAULT_MODELS = {
    "drafter": "nllb-200-1.3b",
    "refiner": "llama-3.3-70b",
    "embedder": "bge-m3",
    "scorer": "neural-scorer",
}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise click.UsageError(f"config file not found: {path}")
    if p.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ImportError as exc:
            raise click.UsageError(
                "TOML config requires Python 3.11+; use a JSON config file"
            ) from exc
        return tomllib.loads(p.read_text(encoding="utf-8"))
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise click.UsageError(f"config file {path} is not valid JSON: {exc}")


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _runtime_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ReftaError as exc:
            _fail(str(exc))
    return wrapper


def _endpoint(role: str, url: str, model: str | None, timeout: float,
              max_retries: int, parallelism: int) -> EndpointConfig:
    return EndpointConfig(
        base_url=url,
        model_id=model or DEFAULT_MODELS[role],
        timeout=timeout,
        max_retries=max_retries,
        request_parallelism=parallelism,
        auth_token=resolve_token(role),
    )


def _parallel_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "jsonl" if path.endswith(".jsonl") else "tsv"


@click.group()
@click.version_option(version=refta.__version__, prog_name="refta")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON (or TOML on 3.11+) file with per-command defaults.")
@click.pass_context
def main(ctx, config_path):
    """Retrieval-augmented draft-refinement translation engine."""
    ctx.default_map = _load_config_file(config_path)


@main.command("index-build")
@click.option("--corpus", "corpora", multiple=True, required=True,
              type=click.Path(exists=True), help="Monolingual corpus file(s).")
@click.option("--format", "corpus_format", type=click.Choice(["jsonl", "plain-lines"]),
              default="jsonl", show_default=True)
@click.option("--exclude", "exclude_path", type=click.Path(exists=True), default=None,
              help="Test set whose ids/texts must never enter the index.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--embedder", "embedder_url", required=True, help="Embedder base URL.")
@click.option("--embed-model", default=None)
@click.option("--near-dup-threshold", type=float, default=0.9, show_default=True)
@click.option("--m", type=int, default=16, show_default=True)
@click.option("--ef-construction", type=int, default=200, show_default=True)
@click.option("--ef-search", type=int, default=128, show_default=True)
@click.option("--index-seed", type=int, default=0, show_default=True)
@click.option("--timeout", type=float, default=30.0, show_default=True)
@click.option("--max-retries", type=int, default=3, show_default=True)
@click.option("--parallelism", type=int, default=4, show_default=True)
@click.option("--force", is_flag=True, help="Allow writing into an existing index dir.")
@click.option("--json", "as_json", is_flag=True)
@_runtime_errors
def cmd_index_build(corpora, corpus_format, exclude_path, out_dir, embedder_url,
                    embed_model, near_dup_threshold, m, ef_construction, ef_search,
                    index_seed, timeout, max_retries, parallelism, force, as_json):
    """Build and persist the retrieval index."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        _fail(f"{out} already exists and is not empty; pass --force to rebuild")

    exclusions = ExclusionList.empty()
    if exclude_path:
        exclusions = _load_exclusions(exclude_path)

    from refta.backends import EmbedderClient

    embedder = EmbedderClient(_endpoint(
        "embedder", embedder_url, embed_model, timeout, max_retries, parallelism
    ))

    def segments():
        for corpus_path in corpora:
            skipped: list = []
            yield from load_monolingual(corpus_path, corpus_format, skipped=skipped)

    index, report = build_index(
        segments(),
        embedder,
        exclusions,
        params=HnswParams(m=m, ef_construction=ef_construction,
                          ef_search=ef_search, seed=index_seed),
        near_dup_threshold=near_dup_threshold,
    )
    save_index(index, out)
    payload = {
        "out": str(out),
        "indexed": report.indexed,
        "excluded": report.excluded_exact,
        "near_dup_dropped": report.excluded_near_dup,
        "rows_seen": report.rows_seen,
        "dim": index.dim,
        "model_id": index.model_id,
    }
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        click.echo(
            f"indexed {report.indexed} segments into {out} "
            f"(excluded: {report.excluded_exact}, "
            f"near-dup dropped: {report.excluded_near_dup}, dim: {index.dim})"
        )


def _load_exclusions(path: str) -> ExclusionList:
    if path.endswith(".tsv"):
        return ExclusionList.from_pairs(load_parallel(path, "tsv"))
    if path.endswith(".jsonl"):
        try:
            return ExclusionList.from_pairs(load_parallel(path, "jsonl"))
        except ReftaError:
            return ExclusionList.from_segments(load_monolingual(path, "jsonl"))
    return ExclusionList.from_segments(load_monolingual(path, "plain-lines"))


@main.command("translate")
@click.option("--test-set", "test_set", required=True, type=click.Path(exists=True))
@click.option("--test-format", type=click.Choice(["tsv", "jsonl"]), default=None)
@click.option("--index", "index_dir", type=click.Path(exists=True), default=None)
@click.option("--condition", required=True,
              type=click.Choice(["zero_shot", "draft_only", "rag"]))
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--jaccard-threshold", type=float, default=0.3, show_default=True)
@click.option("--temp", "temperatures", multiple=True, type=float,
              help="Sampling temperature; repeat for one run dir per value.")
@click.option("--top-p", type=float, default=1.0, show_default=True)
@click.option("--max-output-tokens", type=int, default=256, show_default=True)
@click.option("--input-budget", type=int, default=1300, show_default=True)
@click.option("--candidate-pool", type=int, default=None)
@click.option("--run-id", required=True)
@click.option("--runs-root", type=click.Path(), default="runs", show_default=True)
@click.option("--drafter", "drafter_url", default=None)
@click.option("--refiner", "refiner_url", default=None)
@click.option("--embedder", "embedder_url", default=None)
@click.option("--drafter-model", default=None)
@click.option("--refiner-model", default=None)
@click.option("--embed-model", default=None)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--timeout", type=float, default=30.0, show_default=True)
@click.option("--max-retries", type=int, default=3, show_default=True)
@click.option("--parallelism", type=int, default=4, show_default=True)
@click.option("--fail-fast", is_flag=True)
@click.option("--force", is_flag=True, help="Overwrite existing run directories.")
@click.option("--json", "as_json", is_flag=True)
@_runtime_errors
def cmd_translate(test_set, test_format, index_dir, condition, k, jaccard_threshold,
                  temperatures, top_p, max_output_tokens, input_budget, candidate_pool,
                  run_id, runs_root, drafter_url, refiner_url, embedder_url,
                  drafter_model, refiner_model, embed_model, workers, seed,
                  timeout, max_retries, parallelism, fail_fast, force, as_json):
    """Translate a test set under one experimental condition."""
    if condition == "rag" and not index_dir:
        raise click.UsageError("--condition rag requires --index")
    if not refiner_url:
        raise click.UsageError("--refiner URL is required")
    if condition in ("draft_only", "rag") and not drafter_url:
        raise click.UsageError(f"--condition {condition} requires --drafter")
    if condition == "rag" and not embedder_url:
        raise click.UsageError("--condition rag requires --embedder")

    endpoints = {"refiner": _endpoint("refiner", refiner_url, refiner_model,
                                      timeout, max_retries, parallelism)}
    if drafter_url:
        endpoints["drafter"] = _endpoint("drafter", drafter_url, drafter_model,
                                         timeout, max_retries, parallelism)
    if embedder_url:
        endpoints["embedder"] = _endpoint("embedder", embedder_url, embed_model,
                                          timeout, max_retries, parallelism)

    pairs = load_parallel(test_set, _parallel_format(test_set, test_format))
    index = load_index(index_dir) if index_dir else None
    temps = list(temperatures) if temperatures else [0.0]

    cfg = RunConfig(
        condition=condition,
        run_id=run_id,
        endpoints=endpoints,
        k=k,
        jaccard_threshold=jaccard_threshold,
        temperature=temps[0],
        top_p=top_p,
        max_output_tokens=max_output_tokens,
        input_budget=input_budget,
        candidate_pool=candidate_pool,
        workers=workers,
        seed=seed,
        fail_fast=fail_fast,
    )
    results = translate_corpus(cfg, pairs, index, runs_root=runs_root,
                               temperatures=temps, force=force)
    payload = [
        {
            "run_dir": str(r.run_dir),
            "temperature": r.temperature,
            "succeeded": r.succeeded,
            "failed": r.failed,
        }
        for r in results
    ]
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for row in payload:
            click.echo(
                f"{row['run_dir']} (temp {row['temperature']}): "
                f"{row['succeeded']} ok, {row['failed']} failed"
            )
    if any(r.failed for r in results):
        sys.exit(1)


@main.command("evaluate")
@click.option("--run", "run_dir", required=True, type=click.Path())
@click.option("--test-set", required=True, type=click.Path(exists=True))
@click.option("--test-format", type=click.Choice(["tsv", "jsonl"]), default=None)
@click.option("--scorer", "scorer_url", default=None)
@click.option("--scorer-model", default=None)
@click.option("--metrics", default="", help="Comma-separated neural metrics.")
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_runtime_errors
def cmd_evaluate(run_dir, test_set, test_format, scorer_url, scorer_model,
                 metrics, timeout, as_json):
    """Score a run against its test set; writes metrics.json into the run dir."""
    pairs = load_parallel(test_set, _parallel_format(test_set, test_format))
    hyps = read_hypotheses(run_dir)
    if len(hyps) != len(pairs):
        _fail(f"{run_dir} holds {len(hyps)} hypotheses for {len(pairs)} pairs")
    references = [list(p.references) for p in pairs]
    report = evaluate_hypotheses(Path(run_dir).name, hyps, references)
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    if scorer_url and wanted:
        scorer = ScorerClient(_endpoint("scorer", scorer_url, scorer_model,
                                        timeout, 3, 4))
        report = attach_neural_scores(
            report, scorer, wanted,
            [p.source.text for p in pairs], hyps, [p.references[0] for p in pairs],
        )
    (Path(run_dir) / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    if as_json:
        click.echo(json.dumps(report.to_dict()["corpus_scores"], sort_keys=True))
    else:
        cells = [f"{name} {value:.4f}" if name not in ("bleu", "chrf++")
                 else f"{name} {value:.2f}"
                 for name, value in sorted(report.corpus_scores.items())]
        click.echo(f"{Path(run_dir).name}: " + "  ".join(cells))
        for warning in report.warnings:
            click.echo(f"warning: {warning}", err=True)


@main.command("compare")
@click.option("--runs", "run_dirs", multiple=True, required=True,
              type=click.Path())
@click.option("--baseline", required=True, type=click.Path())
@click.option("--test-set", required=True, type=click.Path(exists=True))
@click.option("--test-format", type=click.Choice(["tsv", "jsonl"]), default=None)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--scorer", "scorer_url", default=None)
@click.option("--scorer-model", default=None)
@click.option("--metrics", default="", help="Comma-separated neural metrics.")
@click.option("--out", "out_path", type=click.Path(), default="comparison.json",
              show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_runtime_errors
def cmd_compare(run_dirs, baseline, test_set, test_format, seed, scorer_url,
                scorer_model, metrics, out_path, timeout, as_json):
    """Compare runs against a baseline with significance tests."""
    pairs = load_parallel(test_set, _parallel_format(test_set, test_format))
    scorer = None
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    if scorer_url and wanted:
        scorer = ScorerClient(_endpoint("scorer", scorer_url, scorer_model,
                                        timeout, 3, 4))
    comparison = compare_runs(
        list(run_dirs), pairs, baseline, seed=seed,
        scorer=scorer, neural_metrics=wanted,
    )
    write_comparison(comparison, out_path)
    if as_json:
        click.echo(json.dumps(comparison.to_dict(), sort_keys=True))
    else:
        click.echo(format_comparison_table(comparison))
        click.echo(f"wrote {out_path}")


@main.command("cost")
@click.option("--run", "run_dir", required=True, type=click.Path())
@click.option("--input-rate", required=True, help="Dollars per 1M input tokens.")
@click.option("--output-rate", required=True, help="Dollars per 1M output tokens.")
@click.option("--batching-discount", default="0.5", show_default=True)
@click.option("--fixed-hourly", default=None, help="Dollars per hour for local serving.")
@click.option("--power-rate", default=None, help="Dollars per kWh.")
@click.option("--power-kw", default=None, help="Measured draw in kW.")
@click.option("--json", "as_json", is_flag=True)
@_runtime_errors
def cmd_cost(run_dir, input_rate, output_rate, batching_discount, fixed_hourly,
             power_rate, power_kw, as_json):
    """Token-based cost figures for a run; writes costs.json into the run dir."""
    model = CostModel(
        input_rate=input_rate,
        output_rate=output_rate,
        batching_discount=batching_discount,
        fixed_hourly=fixed_hourly,
        power_rate=power_rate,
    )
    report = cost_report(run_dir, model, measured_power_kw=power_kw)
    if as_json:
        click.echo(json.dumps(report.to_dict(), sort_keys=True))
    else:
        for line in report.summary_lines():
            click.echo(line)


@main.command("mock-serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8089, show_default=True)
@click.option("--behavior", type=click.Choice(["default", "echo-refiner"]),
              default="default", show_default=True)
@click.option("--embed-dim", type=int, default=64, show_default=True)
@click.option("--fail-rate", type=float, default=0.0, show_default=True)
@click.option("--fail-first", type=int, default=0, show_default=True)
@click.option("--fail-status", type=int, default=500, show_default=True)
@click.option("--latency-ms", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_runtime_errors
def cmd_mock_serve(host, port, behavior, embed_dim, fail_rate, fail_first,
                   fail_status, latency_ms, seed):
    """Serve deterministic mock backends for offline testing."""
    mock = MockBehavior(
        embed_dim=embed_dim,
        refiner="echo" if behavior == "echo-refiner" else "template",
        fail_rate=fail_rate,
        fail_first=fail_first,
        fail_status=fail_status,
        latency_ms=latency_ms,
        seed=seed,
    )
    server = MockServer(mock, host=host, port=port)
    click.echo(f"mock backends listening on {server.base_url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
