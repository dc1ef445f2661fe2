"""
Command-line interface.

Every command maps package errors to the process exit status:
0 success, 1 validation findings or invalid input, 2 fatal I/O, 3 bad config.
"""

import json
import logging
import logging.config
from contextlib import contextmanager
from importlib import resources
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.table import Table

from . import __version__
from .coco import parse_coco, project_prediction
from .config import load_config
from .court import detect_court_details, draw_overlay
from .errors import (
    CocoFormatError,
    ConfigError,
    CourtPriorError,
    DocumentLoadError,
    ImageLoadError,
    OutputWriteError,
)
from .imgproc import ImageBuffer
from .pipeline import compute_stats, export_roi, run_pipeline, validate
from .schemas import Prediction, RectTable, RunManifest
from .storage import (
    DirectoryImageSource,
    load_image,
    read_bytes,
    read_model,
    write_bytes,
    write_model,
    write_png,
)


logger = logging.getLogger(__name__)

app = typer.Typer(help="Court-aware cropping and augmentation for sports instance segmentation.")
console = Console()
err_console = Console(stderr=True)

EXIT_FINDINGS = 1
EXIT_IO = 2
EXIT_CONFIG = 3


@contextmanager
def _exit_codes():
    try:
        yield
    except ConfigError as exc:
        err_console.print(f"[red]config error:[/red] {exc}")
        raise typer.Exit(EXIT_CONFIG)
    except (DocumentLoadError, ImageLoadError, OutputWriteError) as exc:
        err_console.print(f"[red]I/O error:[/red] {exc}")
        raise typer.Exit(EXIT_IO)
    except CourtPriorError as exc:
        err_console.print(f"[red]error:[/red] {exc}")
        raise typer.Exit(EXIT_FINDINGS)


def _configure_logging(verbose: bool) -> None:
    with resources.as_file(resources.files("courtprior").joinpath("logging.ini")) as path:
        logging.config.fileConfig(path, disable_existing_loggers=False)
    if verbose:
        logging.getLogger("courtprior").setLevel(logging.DEBUG)


def _version(value: bool) -> None:
    if value:
        console.print(f"courtprior {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log debug messages."),
    version: bool = typer.Option(False, "--version", callback=_version, is_eager=True),
):
    _configure_logging(verbose)


def _load_dataset(path: Path):
    try:
        return parse_coco(read_bytes(path))
    except CocoFormatError as exc:
        raise CocoFormatError(f"{path}: {exc}") from exc


@app.command("detect-court")
def detect_court_command(
    image: Path = typer.Argument(..., help="Frame to analyse."),
    mode: Optional[str] = typer.Option(None, help="Crop formula: as-written or hull-union."),
    config: Optional[Path] = typer.Option(None, help="TOML run config."),
    overlay: Optional[Path] = typer.Option(None, help="Write a PNG with the detection drawn on."),
):
    """Detect the court in one frame and print the crop rectangle as JSON."""
    with _exit_codes():
        overrides = {"crop": {"mode": mode}} if mode else {}
        cfg = load_config(config, **overrides)
        img = load_image(image)
        result = detect_court_details(img, cfg.crop)
        if overlay is not None:
            write_png(ImageBuffer(draw_overlay(img, result)), overlay)
        console.print_json(
            json.dumps(
                {
                    "rect": result.rect.model_dump(),
                    "fallback": result.fallback,
                    "segments": len(result.segments),
                    "crop_ratio": result.rect.area / (img.width * img.height),
                }
            )
        )


@app.command()
def crop(
    config: Optional[Path] = typer.Option(None, help="TOML run config."),
    input_path: Path = typer.Option(..., "--in", help="COCO document."),
    img_dir: Path = typer.Option(..., help="Directory the file names are relative to."),
    out_dir: Path = typer.Option(..., help="Output directory."),
):
    """Crop every image to its court and write the rect table (no augmentation)."""
    with _exit_codes():
        cfg = load_config(config)
        dataset = _load_dataset(input_path)
        table, cropped = export_roi(dataset, cfg, DirectoryImageSource(img_dir), out_dir)
        console.print(
            f"exported {len(table.entries)} of {len(dataset.images)} images, "
            f"{len(cropped.annotations)} annotations to {out_dir}"
        )


@app.command()
def augment(
    config: Optional[Path] = typer.Option(None, help="TOML run config."),
    input_path: Path = typer.Option(..., "--in", help="COCO document."),
    img_dir: Path = typer.Option(..., help="Directory the file names are relative to."),
    out_dir: Optional[Path] = typer.Option(None, help="Output directory (overrides [run].output_dir)."),
    workers: Optional[int] = typer.Option(None, min=1, help="Worker processes (overrides [run].workers)."),
    seed: Optional[int] = typer.Option(None, min=0, help="Run seed (overrides [run].seed)."),
):
    """Run the full pipeline: detect, crop, duplicate and augment."""
    run_overrides = {
        key: value
        for key, value in (("output_dir", out_dir), ("workers", workers), ("seed", seed))
        if value is not None
    }
    with _exit_codes():
        cfg = load_config(config, run=run_overrides)
        dataset = _load_dataset(input_path)
        result = run_pipeline(cfg, dataset, DirectoryImageSource(img_dir), split=input_path.stem)
        manifest = result.manifest
        console.print(
            f"wrote {len(manifest.records)} images, {len(result.dataset.annotations)} annotations "
            f"to {cfg.run.output_dir} ({len(manifest.failures)} source images skipped)"
        )


@app.command()
def stats(
    manifest: List[Path] = typer.Option(..., help="Run manifest; repeat for several splits."),
    group_regex: Optional[str] = typer.Option(None, help="Regex over file names giving the group key."),
    output: Optional[Path] = typer.Option(None, "--out", help="Also write the report as JSON."),
):
    """Report mean crop-area ratios per group and identity counts."""
    with _exit_codes():
        manifests = [read_model(path, RunManifest) for path in manifest]
        report = compute_stats(manifests, group_regex)
        if output is not None:
            write_model(report, output)

    table = Table(title=f"Crop-area ratio by {report.grouping}")
    table.add_column("Group")
    table.add_column("Images", justify="right")
    table.add_column("Mean ratio", justify="right")
    for group in report.groups:
        table.add_row(group.key, str(group.images), f"{group.mean_ratio:.2%}")
    console.print(table)
    if report.identity_counts:
        counts = ", ".join(f"{k}: {v}" for k, v in report.identity_counts.items())
        console.print(f"identities: {counts}")


@app.command("project-back")
def project_back_command(
    rects: Path = typer.Option(..., help="Rect table written by `crop`."),
    input_path: Path = typer.Option(..., "--in", help="Predictions on the ROI images (JSON list)."),
    output: Path = typer.Option(..., "--out", help="Where to write original-frame predictions."),
):
    """Map ROI-frame predictions back to the original frames."""
    with _exit_codes():
        table = read_model(rects, RectTable).by_image_id()
        try:
            raw = json.loads(read_bytes(input_path))
            predictions = [Prediction.model_validate(item) for item in raw]
        except ValueError as exc:
            raise DocumentLoadError(f"{input_path} is not a prediction list: {exc}") from exc
        projected = []
        for pred in predictions:
            entry = table.get(pred.image_id)
            if entry is None:
                raise CocoFormatError(f"prediction for unknown image id {pred.image_id}")
            projected.append(
                project_prediction(pred, entry.rect, entry.width, entry.height).model_dump(
                    mode="json", exclude_none=True
                )
            )
        write_bytes(json.dumps(projected).encode("utf-8"), output)
        console.print(f"projected {len(projected)} predictions to {output}")


@app.command("validate")
def validate_command(dataset: Path = typer.Argument(..., help="COCO document to check.")):
    """Check a COCO document; exit status 1 when anything is wrong."""
    report = validate(dataset)
    for finding in report.findings:
        where = f" (annotation {finding.annotation_id})" if finding.annotation_id is not None else ""
        console.print(f"[yellow]{finding.kind}[/yellow]{where}: {finding.message}")
    if report.status:
        err_console.print(f"{len(report.findings)} findings in {dataset}")
        unreadable = any(f.kind == "io" for f in report.findings)
        raise typer.Exit(EXIT_IO if unreadable else report.status)
    console.print(f"{dataset}: ok")
