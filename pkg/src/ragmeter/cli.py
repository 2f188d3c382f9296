"""Command-line entry point.

One subcommand per pipeline stage, all operating on the run derived from
--config (content-addressed run id unless --run-id pins one). Exit codes:
0 success, 1 usage or config error, 2 stage failure (partial artifacts are
left in place for inspection).
"""

from __future__ import annotations

import logging
import sys
from dataclasses import replace

import click

from .errors import ConfigError, RagmeterError, StageError
from .runner import Runner, load_config


def _apply_backend_overrides(config, overrides: tuple[str, ...]):
    backends = dict(config.backends)
    for entry in overrides:
        backend_id, sep, url = entry.partition("=")
        if not sep or not backend_id or not url:
            raise ConfigError(f"--backend expects id=url, got {entry!r}")
        if backend_id not in backends:
            raise ConfigError(f"--backend names unknown backend {backend_id!r}")
        backends[backend_id] = replace(backends[backend_id], base_url=url)
    return replace(config, backends=backends)


@click.group()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=False), help="Experiment config (JSON).")
@click.option("--run-id", default=None, help="Pin the run id instead of hashing the config.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--backend", "backend_overrides", multiple=True, metavar="ID=URL",
              help="Override a backend's base_url; repeatable.")
@click.option("--k1", type=float, default=None, help="Override the BM25 k1 parameter.")
@click.option("--b", type=float, default=None, help="Override the BM25 b parameter.")
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
@click.pass_context
def cli(ctx, config_path, run_id, seed, backend_overrides, k1, b, verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = load_config(config_path)
    if backend_overrides:
        config = _apply_backend_overrides(config, backend_overrides)
    if k1 is not None:
        config = replace(config, bm25_k1=k1)
    if b is not None:
        config = replace(config, bm25_b=b)
    ctx.obj = Runner(config, run_id=run_id, seed=seed)


def _finish(runner: Runner, stage_name: str) -> None:
    stage = runner.record.stages[stage_name]
    counters = " ".join(f"{k}={v}" for k, v in stage.counters.items())
    click.echo(f"[{runner.run_id}] {stage_name}: {stage.status} {counters}")
    for artifact in stage.artifacts:
        click.echo(f"  {runner.root / artifact}")


@cli.command("ingest")
@click.pass_obj
def cmd_ingest(runner: Runner):
    """Normalize documents and chunk them at every configured budget."""
    runner.run_ingest()
    _finish(runner, "ingest")


@cli.command("index")
@click.pass_obj
def cmd_index(runner: Runner):
    """Build the lexical index for every chunked corpus."""
    runner.run_index()
    _finish(runner, "index")


@cli.command("embed")
@click.pass_obj
def cmd_embed(runner: Runner):
    """Embed every corpus with every dense retriever backend."""
    runner.run_embed()
    _finish(runner, "embed")


@cli.command("mine")
@click.pass_obj
def cmd_mine(runner: Runner):
    """Mine labeled positives and negatives for the context classifier."""
    runner.run_mine()
    _finish(runner, "mine")


@cli.command("ground-truth")
@click.pass_obj
def cmd_ground_truth(runner: Runner):
    """Build reranker-based relevance judgments over lexical candidates."""
    runner.run_ground_truth()
    _finish(runner, "ground_truth")


@cli.command("eval-retrieval")
@click.pass_obj
def cmd_eval_retrieval(runner: Runner):
    """Rank with every retriever and score against the judgments."""
    runner.run_retrieval_eval()
    _finish(runner, "retrieval_eval")


@cli.command("judge-relevance")
@click.pass_obj
def cmd_judge_relevance(runner: Runner):
    """Grade retrieved passages 0-3 and tabulate score frequencies."""
    runner.run_relevance_judging()
    _finish(runner, "relevance_judging")


@cli.command("eval-answers")
@click.pass_obj
def cmd_eval_answers(runner: Runner):
    """Generate answers with and without noisy context and grade them."""
    runner.run_answer_eval()
    _finish(runner, "answer_eval")


@cli.command("eval-classifier")
@click.pass_obj
def cmd_eval_classifier(runner: Runner):
    """Score labeled datasets with each reranker as a binary classifier."""
    runner.run_classifier_eval()
    _finish(runner, "classifier_eval")


@cli.command("report")
@click.pass_obj
def cmd_report(runner: Runner):
    """Re-render every report from the run's persisted artifacts."""
    rendered = runner.render_reports()
    if not rendered:
        raise StageError("no artifacts to render; run the eval stages first")
    for path in rendered:
        click.echo(path)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except StageError as exc:
        click.echo(f"stage failure: {exc}", err=True)
        return 2
    except RagmeterError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
