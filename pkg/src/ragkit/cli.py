"""Operator command line: ingest, index, ask, chat REPL, evaluation-set
generation, evaluation, comparison, glossary maintenance, and serving the
HTTP API. One config file drives every command; flags win over config."""

from __future__ import annotations

import json
import logging
import random
from pathlib import Path

import click

from . import evaluation as eval_mod
from .agents import PromptLibrary
from .config import ConfigError, EngineConfig, load_config, resolve_path
from .corpus import ChunkingConfig, CorpusError, build_corpus, read_chunk_store, write_chunk_store, write_stats
from .engine import Engine, EngineError, build_gateway
from .gateway import ChatTurn, Clock, FakeClock, GatewayError
from .glossary import AcronymEntry, Glossary, GlossaryError
from .index import IndexError_, VectorIndex
from .orchestrator import PipelineError, PipelineRun, read_run_log
from .service import SessionManager, create_app

logger = logging.getLogger(__name__)

_USER_ERRORS = (CorpusError, ConfigError, EngineError, GatewayError, GlossaryError,
                IndexError_, PipelineError, eval_mod.EvaluationError)


class _Context:
    def __init__(self, config_path: str | None):
        self.config_path = Path(config_path) if config_path else None
        self.config: EngineConfig = load_config(self.config_path)
        self.base_dir = self.config_path.parent if self.config_path else Path.cwd()

    def path(self, value: str) -> Path:
        return resolve_path(self.base_dir, value)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              envvar="RAGKIT_CONFIG", help="YAML config file; flags override it.")
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, verbose: bool) -> None:
    """ragkit: retrieval-augmented generation engine and evaluation harness."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        ctx.obj = _Context(config_path)
    except _USER_ERRORS as exc:
        raise click.ClickException(str(exc)) from exc


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


@main.command()
@click.option("--input", "input_dir", type=click.Path(), default=None,
              help="Corpus directory (default: paths.corpus_dir).")
@click.option("--target-words", type=int, default=None)
@click.option("--overlap-words", type=int, default=None)
@click.option("--json", "as_json", is_flag=True, help="Emit machine-readable stats.")
@click.pass_obj
def ingest(ctx: _Context, input_dir: str | None, target_words: int | None,
           overlap_words: int | None, as_json: bool) -> None:
    """Parse the corpus directory into the chunk store and stats file."""
    cfg = ctx.config
    directory = Path(input_dir) if input_dir else ctx.path(cfg.paths.corpus_dir)
    try:
        chunking = ChunkingConfig(
            target_words=target_words or cfg.chunking.target_words,
            overlap_words=overlap_words if overlap_words is not None
            else cfg.chunking.overlap_words,
        )
        warnings: list[str] = []
        documents, chunks, stats = build_corpus(directory, chunking, warnings)
        write_chunk_store(chunks, ctx.path(cfg.paths.chunk_store))
        write_stats(stats, ctx.path(cfg.paths.stats_file))
    except (CorpusError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    if as_json:
        click.echo(json.dumps({
            "doc_count": stats.doc_count,
            "chunk_count": stats.chunk_count,
            "mean_chunks_per_doc": round(stats.mean_chunks_per_doc, 4),
            "chunk_store": str(ctx.path(cfg.paths.chunk_store)),
        }, sort_keys=True))
    else:
        click.echo(f"ingested {stats.doc_count} documents into {stats.chunk_count} chunks "
                   f"(mean {stats.mean_chunks_per_doc:.2f} chunks/doc)")
        click.echo(f"chunk store: {ctx.path(cfg.paths.chunk_store)}")
        click.echo(f"stats: {ctx.path(cfg.paths.stats_file)}")


@main.command(name="index")
@click.pass_obj
def index_cmd(ctx: _Context) -> None:
    """Embed the chunk store and build the vector index."""
    cfg = ctx.config
    chunk_store = ctx.path(cfg.paths.chunk_store)
    if not chunk_store.is_file():
        raise _fail(f"chunk store not found at {chunk_store}; run `ragkit ingest` first")
    try:
        chunks = read_chunk_store(chunk_store)
        gateway = build_gateway(cfg, ctx.base_dir, FakeClock() if cfg.deterministic else Clock())
        index = VectorIndex.build(
            chunks,
            gateway,
            embed_batch=cfg.gateway.embed_batch,
            embed_retries=cfg.gateway.embed_retries,
            embed_parallelism=cfg.gateway.embed_parallelism,
        )
        index.save(ctx.path(cfg.paths.index_file))
    except (CorpusError, IndexError_, GatewayError, EngineError) as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"indexed {len(index)} chunks (dim {index.dim}) -> {ctx.path(cfg.paths.index_file)}")


def _load_engine(ctx: _Context, require_index: bool = True) -> Engine:
    try:
        return Engine.from_config(ctx.config, ctx.base_dir, require_index=require_index)
    except _USER_ERRORS as exc:
        raise _fail(str(exc)) from exc


def _print_run(run: PipelineRun, as_json: bool) -> None:
    if as_json:
        from .orchestrator import run_to_dict
        click.echo(json.dumps(run_to_dict(run), ensure_ascii=False, sort_keys=True))
        return
    answer = run.final_answer
    click.echo(answer.text if answer else "(no answer)")
    if answer and answer.citations:
        click.echo("\nCitations:")
        for i, link in enumerate(answer.citations, start=1):
            click.echo(f"  [{i}] {link}")
    click.echo("\nTop-5 retrieved links:")
    for link in run.retrieved_links_top5:
        click.echo(f"  - {link}")
    if run.final_score is not None:
        click.echo(f"\nQA score: {run.final_score.score}/10")
    click.echo(f"Latency: {run.total_latency_ms} ms   "
               f"(run {run.run_id}, mode {run.mode}, refinements {run.refinements_used})")


@main.command()
@click.option("--question", required=True, help="The question to ask.")
@click.option("--mode", type=click.Choice(["brag", "arag"]), default=None,
              help="Pipeline to run (default: pipeline.mode).")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def ask(ctx: _Context, question: str, mode: str | None, as_json: bool) -> None:
    """Ask a single question through the selected pipeline."""
    if not question.strip():
        raise click.UsageError("question must be non-empty")
    engine = _load_engine(ctx)
    try:
        run = engine.ask(question, history=(), mode=mode)
    except PipelineError as exc:
        raise _fail(f"pipeline failed: {exc}"
                    + (f" (partial run {exc.run.run_id})" if exc.run else "")) from exc
    _print_run(run, as_json)


@main.command()
@click.option("--mode", type=click.Choice(["brag", "arag"]), default=None)
@click.pass_obj
def chat(ctx: _Context, mode: str | None) -> None:
    """Interactive multi-turn REPL over the session logic (no HTTP)."""
    engine = _load_engine(ctx)
    sessions = SessionManager(engine)
    session = sessions.create(mode or ctx.config.pipeline.mode)
    click.echo(f"session {session.session_id} (mode {session.mode_default}); "
               "':mode brag|arag' switches, ':quit' exits")
    while True:
        try:
            line = click.prompt("you", prompt_suffix="> ", default="", show_default=False)
        except (EOFError, click.Abort):
            break
        line = line.strip()
        if not line:
            continue
        if line in (":quit", ":q", "exit"):
            break
        if line.startswith(":mode"):
            parts = line.split()
            if len(parts) == 2 and parts[1] in ("brag", "arag"):
                session.mode_default = parts[1]  # type: ignore[assignment]
                click.echo(f"mode set to {parts[1]}")
            else:
                click.echo("usage: :mode brag|arag")
            continue
        try:
            run = sessions.ask(session.session_id, line)
        except PipelineError as exc:
            click.echo(f"error: {exc}", err=True)
            continue
        _print_run(run, as_json=False)


@main.command()
@click.option("--sample", "sample_size", type=int, default=20,
              help="Number of chunks to sample.")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--skip-qc", is_flag=True, help="Skip the quality-control filter.")
@click.pass_obj
def evalgen(ctx: _Context, sample_size: int, seed: int, out_path: str, skip_qc: bool) -> None:
    """Generate a synthetic evaluation set from sampled chunks."""
    cfg = ctx.config
    chunk_store = ctx.path(cfg.paths.chunk_store)
    if not chunk_store.is_file():
        raise _fail(f"chunk store not found at {chunk_store}; run `ragkit ingest` first")
    try:
        chunks = read_chunk_store(chunk_store)
        rng = random.Random(seed)
        sample = rng.sample(chunks, min(sample_size, len(chunks)))
        gateway = build_gateway(cfg, ctx.base_dir, FakeClock() if cfg.deterministic else Clock())
        prompts = PromptLibrary(
            ctx.path(cfg.paths.prompts_dir) if cfg.paths.prompts_dir else None)
        items = eval_mod.generate_eval_items(sample, gateway, prompts)
        generated = len(items)
        if not skip_qc:
            source_chunks = {f"gen-{c.chunk_id}": c for c in sample}
            items = eval_mod.qc_filter(items, source_chunks, gateway, prompts)
        eval_mod.write_eval_items(items, Path(out_path))
    except _USER_ERRORS as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"generated {generated} candidates, retained {len(items)} -> {out_path}")


@main.command()
@click.option("--runs", "runs_path", type=click.Path(), required=True,
              help="Run log produced by ask/chat/serve.")
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--overrides", "overrides_path", type=click.Path(), default=None)
@click.option("--scores", "scores_path", type=click.Path(), default=None,
              help="Precomputed judge scores; skips judging.")
@click.option("--skip-judge", is_flag=True,
              help="Skip semantic accuracy entirely (no model needed).")
@click.option("--save-scores", "save_scores_path", type=click.Path(), default=None)
@click.option("--k", type=int, default=5)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def evaluate(ctx: _Context, runs_path: str, dataset_path: str, overrides_path: str | None,
             scores_path: str | None, skip_judge: bool, save_scores_path: str | None,
             k: int, as_json: bool) -> None:
    """Compute hit@k, adjusted accuracy, coverage, and semantic accuracy."""
    try:
        runs = read_run_log(Path(runs_path))
        items = eval_mod.read_eval_items(Path(dataset_path))
        overrides = eval_mod.read_overrides(Path(overrides_path)) if overrides_path else None
        scores = None
        if scores_path:
            scores = eval_mod.read_scores(Path(scores_path))
        elif not skip_judge:
            gateway = build_gateway(ctx.config, ctx.base_dir,
                                    FakeClock() if ctx.config.deterministic else Clock())
            prompts = PromptLibrary(
                ctx.path(ctx.config.paths.prompts_dir) if ctx.config.paths.prompts_dir else None)
            scores = eval_mod.judge(items, runs, gateway, prompts)
            if save_scores_path:
                eval_mod.write_scores(scores, Path(save_scores_path))
        report = eval_mod.build_report(runs, items, overrides=overrides, scores=scores, k=k)
    except _USER_ERRORS as exc:
        raise _fail(str(exc)) from exc
    if as_json:
        click.echo(json.dumps(eval_mod.report_to_dict(report), ensure_ascii=False, sort_keys=True))
    else:
        click.echo(eval_mod.render_report_text(report))


@main.command()
@click.option("--scores-a", "scores_a_path", type=click.Path(), required=True)
@click.option("--scores-b", "scores_b_path", type=click.Path(), required=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def compare(ctx: _Context, scores_a_path: str, scores_b_path: str, as_json: bool) -> None:
    """Per-question score deltas and win/tie/loss split between two systems."""
    try:
        scores_a = eval_mod.read_scores(Path(scores_a_path))
        scores_b = eval_mod.read_scores(Path(scores_b_path))
        result = eval_mod.compare(scores_a, scores_b)
    except _USER_ERRORS as exc:
        raise _fail(str(exc)) from exc
    if as_json:
        click.echo(json.dumps(eval_mod.comparison_to_dict(result), ensure_ascii=False,
                              sort_keys=True))
    else:
        click.echo(eval_mod.render_comparison_text(result))


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="Directory with the built chat UI (served at /ui).")
@click.pass_obj
def serve(ctx: _Context, host: str, port: int, ui_dir: str | None) -> None:
    """Serve the HTTP API (and the chat UI when built)."""
    import uvicorn

    engine = _load_engine(ctx)
    default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    ui_path = Path(ui_dir) if ui_dir else (default_ui if default_ui.is_dir() else None)
    app = create_app(engine, ui_dir=ui_path)
    click.echo(f"serving on http://{host}:{port} (docs at /docs)")
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.group()
def glossary() -> None:
    """Inspect and edit the acronym glossary."""


@glossary.command(name="list")
@click.pass_obj
def glossary_list(ctx: _Context) -> None:
    path = ctx.config.paths.glossary_file
    if not path:
        raise _fail("paths.glossary_file is not configured")
    try:
        entries = Glossary.load(ctx.path(path)).entries()
    except GlossaryError as exc:
        raise _fail(str(exc)) from exc
    for entry in entries:
        note = f"  # {entry.domain_note}" if entry.domain_note else ""
        click.echo(f"{entry.acronym}: {' | '.join(entry.expansions)}{note}")


@glossary.command(name="add")
@click.option("--acronym", required=True)
@click.option("--expansion", "expansions", multiple=True, required=True)
@click.option("--note", default="")
@click.pass_obj
def glossary_add(ctx: _Context, acronym: str, expansions: tuple[str, ...], note: str) -> None:
    """Add or extend an entry; the file is rewritten atomically."""
    path_value = ctx.config.paths.glossary_file
    if not path_value:
        raise _fail("paths.glossary_file is not configured")
    path = ctx.path(path_value)
    try:
        glossary_obj = Glossary.load(path) if path.is_file() else Glossary()
        glossary_obj = glossary_obj.with_entry(
            AcronymEntry(acronym=acronym, expansions=tuple(expansions), domain_note=note))
        glossary_obj.save(path)
    except GlossaryError as exc:
        raise _fail(str(exc)) from exc
    entry = glossary_obj.get(acronym)
    click.echo(f"{acronym}: {' | '.join(entry.expansions)}")


if __name__ == "__main__":
    main()
