"""Command-line workflow: ingest, run, diff, adjudicate, gold, evaluate,
report.

Exit codes: 0 success, 1 user error (bad flags, malformed inputs, parse
errors), 2 run failure (backend transport trouble, suspended runs).
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path
from typing import Optional

import click

from .backends import Backend, build_backend, load_backend_configs
from .domain import (
    Codebook,
    load_codebook,
    load_default_codebook,
    parse_orchestration_spec,
)
from .errors import (
    ContractError,
    DigestMismatchError,
    RunSuspendedError,
    TransportError,
    UserInputError,
    VerilabelError,
)
from .goldsmith import (
    blind_and_randomize,
    derive_gold,
    extract_disagreements,
    load_packet,
    load_sealed_map,
    save_packet,
    save_sealed_map,
)
from .ingest import corpus_digest, load_transcripts
from .metrics import format_percent, load_label_series, save_label_series, summarize
from .orchestrator import (
    RunConfig,
    diff_runs,
    load_run_result,
    resume as resume_run,
    run as execute_run,
)
from .prompting import load_templates
from .report import render_report_text, write_report
from .service import DEFAULT_HOST, DEFAULT_PORT, PacketStore, create_app


def _load_codebook(path: Optional[str]) -> Codebook:
    book = load_codebook(path) if path else load_default_codebook()
    return book.require_valid()


def _load_corpus(path: str, format: Optional[str]):
    return load_transcripts(path, format=format)


def _build_backends(config_path: str, spec_text: str, codebook: Codebook) -> dict[str, Backend]:
    spec = parse_orchestration_spec(spec_text)
    configs = load_backend_configs(config_path)
    backends: dict[str, Backend] = {}
    for backend_id in spec.backend_ids:
        if backend_id not in configs:
            raise UserInputError(
                f"spec names backend {backend_id!r}, not present in {config_path}"
            )
        backends[backend_id] = build_backend(configs[backend_id], codebook.names)
    return backends


@click.group()
def cli() -> None:
    """Rubric-grounded annotation runs with verification and evaluation."""


@cli.command()
@click.argument("corpus", type=click.Path(exists=False))
@click.option("--format", "format_", type=click.Choice(["jsonl", "csv", "tsv"]), default=None)
def ingest(corpus: str, format_: Optional[str]) -> None:
    """Validate a corpus file and print its shape and digest."""
    transcripts = _load_corpus(corpus, format_)
    turns = sum(len(t) for t in transcripts)
    tutor = sum(len(t.tutor_indices()) for t in transcripts)
    click.echo(f"sessions: {len(transcripts)}")
    click.echo(f"utterances: {turns}")
    click.echo(f"tutor turns: {tutor}")
    click.echo(f"corpus digest: {corpus_digest(transcripts)}")


@cli.command(name="run")
@click.option("--corpus", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "csv", "tsv"]), default=None)
@click.option("--spec", "spec_text", help='orchestration spec, e.g. "verifier(annotator)"')
@click.option("--backends", "backends_path", type=click.Path(), help="backend config YAML")
@click.option("--codebook", "codebook_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), help="run directory to create")
@click.option("--resume", "resume_dir", type=click.Path(), default=None,
              help="continue a suspended run directory instead of starting fresh")
@click.option("--run-id", default=None)
@click.option("--parallelism", type=int, default=4, show_default=True)
@click.option("--reask-budget", type=int, default=2, show_default=True)
@click.option("--chunk-target", type=int, default=80, show_default=True)
@click.option("--chunk-overlap", type=int, default=2, show_default=True)
@click.option("--gold-eligible", is_flag=True, default=False,
              help="mark the run as a gold-label source (forbids synthetic backends)")
@click.option("--cache-dir", type=click.Path(), default=None,
              help="reuse annotation passes across runs sharing an annotator")
@click.option("--template-dir", type=click.Path(), default=None)
@click.option("--template-version", default="v1", show_default=True)
def run_command(
    corpus: str,
    format_: Optional[str],
    spec_text: Optional[str],
    backends_path: Optional[str],
    codebook_path: Optional[str],
    out_dir: Optional[str],
    resume_dir: Optional[str],
    run_id: Optional[str],
    parallelism: int,
    reask_budget: int,
    chunk_target: int,
    chunk_overlap: int,
    gold_eligible: bool,
    cache_dir: Optional[str],
    template_dir: Optional[str],
    template_version: str,
) -> None:
    """Execute (or resume) an annotation/verification run."""
    if backends_path is None:
        raise click.UsageError("--backends is required")
    codebook = _load_codebook(codebook_path)
    transcripts = _load_corpus(corpus, format_)
    templates = (
        load_templates(template_dir, template_version) if template_dir else None
    )

    if resume_dir is not None:
        from .orchestrator import load_manifest

        manifest = load_manifest(Path(resume_dir))
        backends = _build_backends(backends_path, manifest.spec, codebook)
        result = resume_run(Path(resume_dir), transcripts, codebook, backends, templates)
        run_dir = Path(resume_dir)
    else:
        if spec_text is None or out_dir is None:
            raise click.UsageError("--spec and --out are required (unless resuming)")
        backends = _build_backends(backends_path, spec_text, codebook)
        config = RunConfig(
            run_id=run_id,
            parallelism=parallelism,
            reask_budget=reask_budget,
            chunk_target=chunk_target,
            chunk_overlap=chunk_overlap,
            gold_eligible=gold_eligible,
            cache_dir=Path(cache_dir) if cache_dir else None,
            template_version=template_version,
        )
        result = execute_run(
            transcripts, codebook, spec_text, backends,
            run_dir=Path(out_dir), config=config, templates=templates,
        )
        run_dir = Path(out_dir)

    counts = result.counts
    click.echo(f"run {result.manifest.run_id} complete in {run_dir}")
    click.echo(
        f"annotated {counts['annotated']}, verified {counts['verified']}, "
        f"revised {counts['revised']}, unparseable {counts['unparseable_final']}"
    )


@cli.command()
@click.argument("run_a", type=click.Path())
@click.argument("run_b", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write disagreements as CSV")
def diff(run_a: str, run_b: str, out_path: Optional[str]) -> None:
    """List utterances where two runs' final labels differ."""
    result_a = load_run_result(Path(run_a))
    result_b = load_run_result(Path(run_b))
    disagreements = diff_runs(result_a, result_b)
    total = len(result_a.records)
    rate = len(disagreements) / total if total else 0.0
    click.echo(
        f"{len(disagreements)} disagreements over {total} tutor turns "
        f"({format_percent(rate)})"
    )
    if out_path:
        with Path(out_path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["session_id", "turn_index", "label_a", "label_b"])
            for d in disagreements:
                writer.writerow([d.session_id, d.turn_index, d.label_a, d.label_b])
        click.echo(f"wrote {out_path}")
    else:
        for d in disagreements[:20]:
            click.echo(f"  {d.session_id}:{d.turn_index}  {d.label_a} | {d.label_b}")
        if len(disagreements) > 20:
            click.echo(f"  … {len(disagreements) - 20} more (use --out for the full list)")


@cli.group()
def adjudicate() -> None:
    """Blinded human adjudication of disagreements."""


@adjudicate.command()
@click.option("--run-a", "run_a", required=True, type=click.Path())
@click.option("--run-b", "run_b", required=True, type=click.Path())
@click.option("--corpus", required=True, type=click.Path())
@click.option("--format", "format_", type=click.Choice(["jsonl", "csv", "tsv"]), default=None)
@click.option("--seed", type=int, required=True, help="blinding seed")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--source-a-id", default=None, help="identifier kept in the sealed map only")
@click.option("--source-b-id", default=None)
def prepare(
    run_a: str,
    run_b: str,
    corpus: str,
    format_: Optional[str],
    seed: int,
    out_dir: str,
    source_a_id: Optional[str],
    source_b_id: Optional[str],
) -> None:
    """Extract disagreements between two runs and blind them for review."""
    result_a = load_run_result(Path(run_a))
    result_b = load_run_result(Path(run_b))
    if result_a.manifest.corpus_digest != result_b.manifest.corpus_digest:
        raise UserInputError("runs cover different corpora (digest mismatch)")
    transcripts = _load_corpus(corpus, format_)
    if corpus_digest(transcripts) != result_a.manifest.corpus_digest:
        raise UserInputError("corpus file does not match the runs' corpus digest")

    agreements, skeletons = extract_disagreements(
        result_a.final_series(), result_b.final_series(), transcripts
    )
    packet, sealed = blind_and_randomize(
        skeletons,
        seed,
        source_a=source_a_id or result_a.manifest.run_id,
        source_b=source_b_id or result_b.manifest.run_id,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_packet(packet, out / "packet.json")
    save_sealed_map(sealed, out / "sealed_map.json")
    save_label_series(agreements, out / "agreements.csv")

    total = len(agreements) + len(packet.items)
    rate = len(packet.items) / total if total else 0.0
    click.echo(
        f"{len(packet.items)} disagreements over {total} labeled turns "
        f"({format_percent(rate)}); {len(agreements)} agreements"
    )
    click.echo(f"packet:     {out / 'packet.json'}")
    click.echo(f"sealed map: {out / 'sealed_map.json'} (keep away from the reviewer)")
    click.echo(f"agreements: {out / 'agreements.csv'}")


@adjudicate.command()
@click.option("--packet", "packet_path", required=True, type=click.Path())
@click.option("--host", default=DEFAULT_HOST, show_default=True)
@click.option("--port", type=int, default=DEFAULT_PORT, show_default=True)
@click.option("--ui-dir", type=click.Path(), default=None,
              help="directory of built UI assets to serve at /")
def serve(packet_path: str, host: str, port: int, ui_dir: Optional[str]) -> None:
    """Serve the adjudication API (and UI, if built) over loopback."""
    import uvicorn

    app = create_app(PacketStore(packet_path), ui_dir=ui_dir)
    click.echo(f"serving adjudication on http://{host}:{port}/ (ctrl-c to stop)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@cli.group()
def gold() -> None:
    """Gold label derivation."""


@gold.command()
@click.option("--packet", "packet_path", required=True, type=click.Path())
@click.option("--sealed", "sealed_path", required=True, type=click.Path())
@click.option("--agreements", "agreements_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def derive(packet_path: str, sealed_path: str, agreements_path: str, out_path: str) -> None:
    """Combine agreements and adjudicated choices into a gold label file."""
    packet = load_packet(packet_path)
    sealed = load_sealed_map(sealed_path)
    agreements = load_label_series(agreements_path)
    gold_set, stats = derive_gold(agreements, packet, sealed)
    gold_set.save(out_path)
    click.echo(
        f"gold labels: {len(gold_set)} "
        f"({len(agreements)} agreements + {stats.total} adjudicated)"
    )
    for source, rendered in sorted(stats.to_dict()["rendered"].items()):
        click.echo(f"reviewer aligned with {source}: {rendered}")
    click.echo(f"wrote {out_path}")


def _evaluate_report(
    run_dir: str,
    gold_path: str,
    baseline_dir: Optional[str],
    codebook_path: Optional[str],
):
    codebook = _load_codebook(codebook_path)
    result = load_run_result(Path(run_dir))
    gold_series = load_label_series(gold_path)
    baseline = None
    if baseline_dir is not None:
        baseline_result = load_run_result(Path(baseline_dir))
        if baseline_result.manifest.corpus_digest != result.manifest.corpus_digest:
            raise UserInputError("baseline run covers a different corpus")
        baseline = baseline_result.final_series()
    try:
        return summarize(result.final_series(), gold_series, codebook, baseline=baseline)
    except ContractError as exc:
        raise UserInputError(str(exc)) from exc


@cli.command()
@click.argument("run_dir", type=click.Path())
@click.option("--gold", "gold_path", required=True, type=click.Path())
@click.option("--baseline", "baseline_dir", type=click.Path(), default=None,
              help="an unverified run of the same annotator")
@click.option("--codebook", "codebook_path", type=click.Path(), default=None)
@click.option("--out-dir", required=True, type=click.Path())
def evaluate(
    run_dir: str,
    gold_path: str,
    baseline_dir: Optional[str],
    codebook_path: Optional[str],
    out_dir: str,
) -> None:
    """Score a run against gold; write per-category tables and a summary."""
    report = _evaluate_report(run_dir, gold_path, baseline_dir, codebook_path)
    written = write_report(report, Path(out_dir), figures=False)
    click.echo(render_report_text(report))
    click.echo("")
    for path in written["paths"]:
        click.echo(f"wrote {path}")
    click.echo(f"report digest: {written['digest']}")


@cli.command(name="report")
@click.argument("run_dir", type=click.Path())
@click.option("--gold", "gold_path", required=True, type=click.Path())
@click.option("--baseline", "baseline_dir", type=click.Path(), default=None)
@click.option("--codebook", "codebook_path", type=click.Path(), default=None)
@click.option("--out-dir", required=True, type=click.Path())
def report_command(
    run_dir: str,
    gold_path: str,
    baseline_dir: Optional[str],
    codebook_path: Optional[str],
    out_dir: str,
) -> None:
    """Like evaluate, plus rendered figures."""
    report = _evaluate_report(run_dir, gold_path, baseline_dir, codebook_path)
    written = write_report(report, Path(out_dir), figures=True)
    click.echo(render_report_text(report))
    click.echo("")
    for path in written["paths"]:
        click.echo(f"wrote {path}")
    click.echo(f"report digest: {written['digest']}")


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        rv = cli.main(args=argv, prog_name="verilabel", standalone_mode=False)
        return rv if isinstance(rv, int) else 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except RunSuspendedError as exc:
        click.echo(f"error: {exc}", err=True)
        if exc.run_dir is not None:
            click.echo(
                f"hint: resume with `verilabel run --resume {exc.run_dir} "
                "--corpus <corpus> --backends <config>`",
                err=True,
            )
        return 2
    except (UserInputError, DigestMismatchError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except TransportError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except VerilabelError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
