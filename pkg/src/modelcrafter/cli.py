"""Command-line surface: one subcommand per workflow endpoint, plus demo/serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .demo import run_demo
from .errors import ModelcrafterError, PreconditionError
from .gateway import GatewayConfig
from .service import ProjectService


def _emit(ctx: click.Context, data: dict, text: str | None = None) -> None:
    if ctx.obj["format"] == "records":
        click.echo(json.dumps(data, sort_keys=True))
    else:
        click.echo(text if text is not None else json.dumps(data, indent=2, sort_keys=True))


def _service(ctx: click.Context) -> ProjectService:
    config = GatewayConfig.from_file(ctx.obj["config"])
    return ProjectService(ctx.obj["home"], gateway_config=config)


class _TypedError(click.ClickException):
    def show(self, file=None) -> None:
        click.echo(self.message, err=True)


class _ErrorReportingGroup(click.Group):
    """Render package errors as `error[code]: message` with exit code 1."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ModelcrafterError as exc:
            raise _TypedError(f"error[{exc.code}]: {exc}") from exc


@click.group(cls=_ErrorReportingGroup)
@click.option(
    "--home",
    envvar="MC_HOME",
    default="./mc-home",
    show_default=True,
    help="Store root (env: MC_HOME).",
)
@click.option("--config", type=click.Path(exists=True), default=None, help="Gateway config file.")
@click.option(
    "--format",
    "output_format",
    type=click.Choice(["text", "records"]),
    default="text",
    show_default=True,
)
@click.pass_context
def cli(ctx: click.Context, home: str, config: str | None, output_format: str) -> None:
    """Build lightweight binary image classifiers from subjective concepts."""
    ctx.ensure_object(dict)
    ctx.obj.update({"home": Path(home), "config": config, "format": output_format})


@cli.command()
@click.argument("name")
@click.option("--description", default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_context
def create(ctx: click.Context, name: str, description: str | None, seed: int) -> None:
    """Create a project for a new concept."""
    project_id = _service(ctx).create_project(name, description, seed)
    _emit(ctx, {"project_id": project_id}, project_id)


@cli.command()
@click.argument("project")
@click.option("--text", default=None, help="Concept description; generated when omitted.")
@click.pass_context
def describe(ctx: click.Context, project: str, text: str | None) -> None:
    """Set/generate the description and extract attributes and carve-outs."""
    concept = _service(ctx).describe(project, text)
    positives = ", ".join(a["text"] for a in concept["positive_attributes"])
    carveouts = ", ".join(a["text"] for a in concept["carve_outs"]) or "none"
    _emit(
        ctx,
        {"concept": concept},
        f"attributes: {positives}\ncarve-outs: {carveouts}",
    )


@cli.command("attach-corpus")
@click.argument("project")
@click.argument("path", type=click.Path(exists=True))
@click.pass_context
def attach_corpus(ctx: click.Context, project: str, path: str) -> None:
    """Ingest a corpus file into the project."""
    manifest = _service(ctx).attach_corpus(project, path)
    _emit(ctx, {"manifest": manifest}, f"{manifest['record_count']} records, dim {manifest['dim']}")


@cli.command()
@click.argument("project")
@click.option("--per-query-k", type=int, default=50, show_default=True)
@click.option("--mutation-rounds", type=int, default=1, show_default=True)
@click.pass_context
def mine(ctx: click.Context, project: str, per_query_k: int, mutation_rounds: int) -> None:
    """Generate and mutate search queries, retrieve and merge candidates."""
    summary = _service(ctx).run_mining(project, per_query_k, mutation_rounds)
    _emit(
        ctx,
        summary,
        f"{summary['queries']} queries -> {summary['candidates']} candidates "
        f"({summary['validation_queue']} queued for validation)",
    )


@cli.command("label-validation")
@click.argument("project")
@click.option("--file", "labels_file", type=click.Path(exists=True), default=None,
              help="TSV of image_id<TAB>positive|negative lines.")
@click.option("--label", "labels", multiple=True, help="Inline image_id=positive|negative.")
@click.pass_context
def label_validation(
    ctx: click.Context, project: str, labels_file: str | None, labels: tuple[str, ...]
) -> None:
    """Submit user validation labels."""
    pairs: list[tuple[str, str]] = []
    if labels_file:
        for line in Path(labels_file).read_text(encoding="utf-8").splitlines():
            if line.strip():
                image_id, label = line.split("\t")
                pairs.append((image_id.strip(), label.strip()))
    for item in labels:
        image_id, _, label = item.partition("=")
        if not label:
            raise PreconditionError(f"bad --label {item!r}; expected image_id=positive|negative")
        pairs.append((image_id, label))
    counts = _service(ctx).submit_validation_labels(project, pairs)
    _emit(ctx, counts, f"{counts['total']} labeled ({counts['positive']}+/{counts['negative']}-)")


@cli.command("select-strategy")
@click.argument("project")
@click.pass_context
def select_strategy_cmd(ctx: click.Context, project: str) -> None:
    """Pick the best annotation strategy on the validation set."""
    result = _service(ctx).run_strategy_selection(project)
    rows = "\n".join(f"  {i}\t{result['table'][i]:.4f}" for i in sorted(result["table"]))
    _emit(ctx, result, f"strategy\tF1\n{rows}\nchosen: {result['chosen']}")


@cli.command()
@click.argument("project")
@click.option("--n", type=int, required=True, help="How many candidates to annotate.")
@click.pass_context
def annotate(ctx: click.Context, project: str, n: int) -> None:
    """Teacher-annotate mined candidates."""
    summary = _service(ctx).run_teacher_annotation(project, n)
    _emit(
        ctx,
        summary,
        f"annotated {summary['annotated']} ({summary['positive']}+/{summary['negative']}-), "
        f"{summary['failed']} failed",
    )


@cli.command()
@click.argument("project")
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--max-epochs", type=int, default=None)
@click.pass_context
def train(
    ctx: click.Context,
    project: str,
    learning_rate: float | None,
    batch_size: int | None,
    max_epochs: int | None,
) -> None:
    """Train the distilled student model on all labeled examples."""
    params = {
        k: v
        for k, v in {
            "learning_rate": learning_rate,
            "batch_size": batch_size,
            "max_epochs": max_epochs,
        }.items()
        if v is not None
    }
    entry = _service(ctx).train_student(project, params)
    metrics = entry["metrics"]
    text = f"model {entry['ref']} on {entry['n_examples']} examples"
    if metrics:
        text += f"; validation auPR {metrics['aupr']:.4f}, F1 {metrics['f1']:.4f}"
    _emit(ctx, {"model": entry}, text)


@cli.command("al-round")
@click.argument("project")
@click.option("--sampler", type=click.Choice(["stratified", "margin"]), default="stratified",
              show_default=True)
@click.option("--n", type=int, default=100, show_default=True)
@click.pass_context
def al_round(ctx: click.Context, project: str, sampler: str, n: int) -> None:
    """Run one active-learning round: score, sample, annotate, retrain."""
    record = _service(ctx).run_al_round(project, sampler, n)
    metrics = record["metrics"]
    _emit(
        ctx,
        {"round": record},
        f"round {record['round_index']} ({record['sampler']}, n={len(record['sampled_ids'])}): "
        f"auPR {metrics['aupr']:.4f}, F1 {metrics['f1']:.4f}",
    )


@cli.command()
@click.argument("project")
@click.pass_context
def metrics(ctx: click.Context, project: str) -> None:
    """Metric history across trained models and AL rounds."""
    history = _service(ctx).get_metrics(project)
    lines = ["ref\tauPR\tF1"]
    for model in history["models"]:
        m = model["metrics"] or {}
        aupr = f"{m['aupr']:.4f}" if m.get("aupr") is not None else "-"
        f1 = f"{m['f1']:.4f}" if m.get("f1") is not None else "-"
        lines.append(f"{model['ref']}\t{aupr}\t{f1}")
    text = "\n".join(lines)
    if history["rounds"]:
        text += "\n\n" + history["rounds_table"].rstrip("\n")
    _emit(ctx, history, text)


@cli.command("mining-stats")
@click.argument("project")
@click.pass_context
def mining_stats(ctx: click.Context, project: str) -> None:
    """Per-query hit counts for every mining run."""
    stats = _service(ctx).mining_stats(project)
    _emit(ctx, stats, stats["table"].rstrip("\n"))


@cli.command("export-model")
@click.argument("project")
@click.argument("out", type=click.Path())
@click.pass_context
def export_model(ctx: click.Context, project: str, out: str) -> None:
    """Copy the active model file to OUT."""
    path = _service(ctx).export_model(project, out)
    _emit(ctx, {"path": str(path)}, str(path))


@cli.command("import-model")
@click.argument("project")
@click.argument("path", type=click.Path(exists=True))
@click.pass_context
def import_model(ctx: click.Context, project: str, path: str) -> None:
    """Register a previously exported model as the project's active model."""
    entry = _service(ctx).import_model(project, path)
    _emit(ctx, {"model": entry}, f"imported as {entry['ref']}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.pass_context
def serve(ctx: click.Context, host: str, port: int) -> None:
    """Serve the wire API for the web UI."""
    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(_service(ctx)), host=host, port=port, log_level="warning")


@cli.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corpus-size", type=int, default=600, show_default=True)
@click.pass_context
def demo(ctx: click.Context, seed: int, corpus_size: int) -> None:
    """Build a synthetic corpus plus mock scripts and run the whole pipeline."""
    result = run_demo(ctx.obj["home"], seed=seed, corpus_size=corpus_size)
    _emit(ctx, {k: v for k, v in result.items() if k != "table"}, result["table"])


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
