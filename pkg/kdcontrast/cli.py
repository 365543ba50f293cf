"""kdcontrast command line interface"""

import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np

from .config import TrainConfig, load_config
from .encoder import load_checkpoint, save_checkpoint
from .evaluation import evaluate, load_sts_pairs
from .exceptions import KdContrastError
from .formatter import CsvFormatter, SummaryFormatter
from .gradcheck import run_suite, summary_rows
from .models import DatasetManifest, Modality, StsPair
from .similarity import pairwise_cosine, similarity_histogram, true_caption_rank
from .synthetic import build_grounded_fixture, write_fixture
from .teacher_store import Emb1Codec, FeatureTable, gather, load_features
from .trainer import DEFAULT_MARGINS, build_student, load_manifest, margin_sweep, train
from .utils import ensure_dir_exists, resolve_out_dir

logger = logging.getLogger(__name__)

_LEVEL_COLORS = {
    logging.DEBUG: "white",
    logging.INFO: "cyan",
    logging.WARNING: "yellow",
    logging.ERROR: "red",
}


class ClickHandler(logging.Handler):
    """Echo log records to stderr, coloured by level"""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            message = self.format(record)
            color = _LEVEL_COLORS.get(record.levelno, "red")
            click.echo(click.style(message, fg=color), err=True)
        except Exception:
            self.handleError(record)


def setup_logging(verbose: bool = False) -> None:
    package_logger = logging.getLogger("kdcontrast")
    for handler in list(package_logger.handlers):
        if isinstance(handler, ClickHandler):
            package_logger.removeHandler(handler)
    package_logger.addHandler(ClickHandler())
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def error_line(kind: str, exit_code: int, message: str) -> str:
    """One machine-parseable line describing a failure"""
    flat = " ".join(str(message).split())
    return f"error | kind={kind} | exit={exit_code} | message={flat}"


class KdContrastGroup(click.Group):
    """Maps library errors to exit status 1 (validation) or 2 (runtime)"""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except KdContrastError as e:
            click.echo(click.style(error_line(type(e).__name__, e.exit_code, e), fg="red"), err=True)
            ctx.exit(e.exit_code)

    def main(self, args=None, prog_name=None, standalone_mode=True, **extra):
        try:
            result = super().main(args=args, prog_name=prog_name, standalone_mode=False, **extra)
            code = result if isinstance(result, int) else 0
        except click.ClickException as e:
            e.show()
            click.echo(error_line(type(e).__name__, 1, e.format_message()), err=True)
            code = 1
        except click.Abort:
            click.echo(error_line("Abort", 1, "aborted"), err=True)
            code = 1
        if standalone_mode:
            sys.exit(code)
        return code


def _config_options(func):
    func = click.option("--seed", type=int, default=None, help="Override the seed.")(func)
    func = click.option("--objective", default=None, help="Override the objective.")(func)
    func = click.option(
        "--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Config override, repeatable."
    )(func)
    func = click.option(
        "--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
        help="Flat key = value config file.",
    )(func)
    return func


def _data_options(func):
    func = click.option("--sts", "sts_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="Dev pairs, id_a<TAB>id_b<TAB>score.")(func)
    func = click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False, path_type=Path),
                        required=True, help="Dataset manifest JSON.")(func)
    func = click.option("--visual-features", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="Teacher visual features (EMB1 or TSV).")(func)
    func = click.option("--text-features", type=click.Path(dir_okay=False, path_type=Path), default=None,
                        help="Teacher text features (EMB1 or TSV).")(func)
    return func


def _resolve_config(
    config_path: Optional[Path], overrides: Sequence[str], objective: Optional[str], seed: Optional[int]
) -> TrainConfig:
    assignments = list(overrides)
    if objective is not None:
        assignments.append(f"objective={objective}")
    if seed is not None:
        assignments.append(f"seed={seed}")
    return load_config(config_path, assignments)


def _load_tables(text_features: Optional[Path], visual_features: Optional[Path]):
    text = load_features(text_features, Modality.TEXT) if text_features else None
    visual = load_features(visual_features, Modality.VISUAL) if visual_features else None
    return text, visual


def _load_dev(sts_path: Optional[Path]) -> List[StsPair]:
    return load_sts_pairs(sts_path) if sts_path else []


@click.group(cls=KdContrastGroup)
@click.option("--verbose", "-v", is_flag=True, help="Log debug events.")
def cli(verbose):
    """Contrastive sentence-embedding training with teacher-guided negatives"""
    setup_logging(verbose)


@cli.command("train")
@_config_options
@_data_options
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory.")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar.")
def train_command(config_path, overrides, objective, seed, text_features, visual_features,
                  manifest_path, sts_path, out, progress):
    """Train a student and write history CSVs and the best checkpoint"""
    config = _resolve_config(config_path, overrides, objective, seed)
    text, visual = _load_tables(text_features, visual_features)
    manifest = load_manifest(manifest_path)
    dev = _load_dev(sts_path)
    out = resolve_out_dir(out, "train", config.seed)

    student = build_student(config, manifest, text, visual, dev)
    history = train(config, manifest, text, visual, student, dev, progress=progress)

    CsvFormatter.write(out / "history_steps.csv", *CsvFormatter.steps(history.steps))
    CsvFormatter.write(out / "history_eval.csv", *CsvFormatter.evals(history.evals))
    save_checkpoint(student, out / "checkpoint.bin", history.best_params)
    logger.info("train_done | out=%s | steps=%d | best_step=%s", out, len(history.steps), history.best_step)
    if history.evals:
        header, rows = CsvFormatter.evals(history.evals)
        click.echo(SummaryFormatter.table(header, rows), err=True)


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--sts", "sts_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
def eval_command(checkpoint, sts_path, overrides, config_path):
    """Print dev Spearman, alignment and uniformity of a checkpoint"""
    config = load_config(config_path, overrides)
    student = load_checkpoint(checkpoint)
    rho, align, uniform = evaluate(student, load_sts_pairs(sts_path), config.alignment_min_score)
    click.echo(SummaryFormatter.eval_line(rho, align, uniform))


def _stats_rows(text: FeatureTable, visual: FeatureTable, manifest: Optional[DatasetManifest]):
    """Caption and image ids plus the gold captions of every image"""
    if manifest is not None:
        captions = list(dict.fromkeys(sid for sid, _ in manifest.multimodal_pairs))
        images = manifest.image_ids()
        pairs = manifest.multimodal_pairs
    else:
        captions = list(text.ids)
        images = list(visual.ids)
        pairs = [(iid, iid) for iid in images if iid in text]
    caption_index = {sid: k for k, sid in enumerate(captions)}
    image_index = {iid: k for k, iid in enumerate(images)}
    gold = {}
    for sid, iid in pairs:
        gold.setdefault(image_index[iid], []).append(caption_index[sid])
    return captions, images, gold


@cli.command("stats")
@click.option("--text-features", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--visual-features", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--bins", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
def stats_command(text_features, visual_features, manifest_path, bins, out):
    """Soft-label histograms and the rank of each image's true caption"""
    text, visual = _load_tables(text_features, visual_features)
    manifest = load_manifest(manifest_path) if manifest_path else None
    out = resolve_out_dir(out, "stats", 0)

    captions, images, gold = _stats_rows(text, visual, manifest)
    caption_rows = gather(text, captions)
    tv = pairwise_cosine(caption_rows, gather(visual, images), Modality.TEXT, Modality.VISUAL)
    tt = pairwise_cosine(caption_rows, caption_rows, Modality.TEXT, Modality.TEXT)

    CsvFormatter.write(out / "histogram_tv.csv", *CsvFormatter.histogram(similarity_histogram(tv, bins)))
    CsvFormatter.write(out / "histogram_tt.csv", *CsvFormatter.histogram(similarity_histogram(tt, bins)))
    ranks = true_caption_rank(tv, gold)
    CsvFormatter.write(
        out / "caption_rank.csv",
        ["image_id", "max_rank"],
        [(images[column], rank) for column, rank in sorted(ranks.items())],
    )
    logger.info("stats_done | out=%s | captions=%d | images=%d", out, len(captions), len(images))


@cli.command("gradcheck")
@_config_options
@click.option("--cases", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--epsilon", type=float, default=1e-4, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.pass_context
def gradcheck_command(ctx, config_path, overrides, objective, seed, cases, epsilon, tolerance):
    """Finite-difference check of every objective; exit 1 on any failure"""
    config = _resolve_config(config_path, overrides, objective, seed)
    reports = run_suite(config.objective_config, cases=cases, seed=config.seed,
                        epsilon=epsilon, tolerance=tolerance)
    click.echo(CsvFormatter.render(["objective", "slot", "max_rel_err", "pass"], summary_rows(reports)), nl=False)
    failed = [report.objective for report in reports if not report.passed]
    if failed:
        click.echo(error_line("GradCheckFailed", 1, f"failed: {', '.join(failed)}"), err=True)
        ctx.exit(1)


@cli.command("export")
@click.option("--checkpoint", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="EMB1 output file.")
@click.option("--views", type=click.IntRange(min=0), default=0, show_default=True,
              help="Dropout views per sentence in addition to the clean vector.")
@click.option("--seed", type=click.IntRange(min=0, max=2 ** 64 - 1), default=0, show_default=True)
def export_command(checkpoint, out, views, seed):
    """Write student hidden vectors as an EMB1 file"""
    student = load_checkpoint(checkpoint)
    ids = list(student.sentence_ids)
    rows = [student.embed(ids)]
    names = list(ids)
    rng = np.random.default_rng(seed)
    for k in range(1, views + 1):
        seeds = rng.integers(0, 2 ** 63 - 1, size=len(ids))
        rows.append(student.forward(ids, seeds, record=False).output)
        names.extend(f"{sid}#{k}" for sid in ids)
    ensure_dir_exists(out.parent)
    out.write_bytes(Emb1Codec.encode(names, np.vstack(rows)))
    logger.info("export_done | out=%s | rows=%d", out, len(names))


@cli.command("sweep")
@_config_options
@_data_options
@click.option("--margins", default=None, help="Comma-separated margins in radians.")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None)
def sweep_command(config_path, overrides, objective, seed, text_features, visual_features,
                  manifest_path, sts_path, margins, out):
    """Best dev Spearman for each angular margin"""
    config = _resolve_config(config_path, overrides, objective, seed)
    try:
        grid = [float(m) for m in margins.split(",")] if margins else list(DEFAULT_MARGINS)
    except ValueError:
        raise click.BadParameter(f"not a comma-separated list of numbers: {margins!r}", param_hint="--margins")
    text, visual = _load_tables(text_features, visual_features)
    manifest = load_manifest(manifest_path)
    dev = _load_dev(sts_path)
    out = resolve_out_dir(out, "sweep", config.seed)
    results = margin_sweep(config, manifest, text, visual, dev, grid)
    CsvFormatter.write(out / "sweep.csv", ["margin", "spearman"], results)
    click.echo(SummaryFormatter.table(["margin", "spearman"], results), err=True)


@cli.command("synth")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--concepts", type=click.IntRange(min=2), default=64, show_default=True)
def synth_command(out, seed, concepts):
    """Write a synthetic grounded dataset for smoke runs"""
    fixture = build_grounded_fixture(seed=seed, concepts=concepts)
    write_fixture(fixture, out)
    logger.info("synth_done | out=%s | pairs=%d", out, fixture.manifest.size_multimodal)


def main(argv: Optional[Sequence[str]] = None) -> None:
    cli.main(args=list(argv) if argv is not None else None, prog_name="kdcontrast")


if __name__ == "__main__":
    main()
