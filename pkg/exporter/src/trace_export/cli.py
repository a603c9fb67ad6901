"""``trace-export``: write strided attention stacks for a set of images."""

from __future__ import annotations

import glob
import sys
from pathlib import Path

import click

from .errors import TraceExportError
from .export import ExportJob, export


@click.command()
@click.option("--model", "model_id", default="toy-unet", show_default=True,
              help="Backbone id (toy-unet, toy-dit, or a diffusers id).")
@click.option("--images", "images_glob", required=True,
              help="Glob of input images.")
@click.option("--stride", type=int, default=100, show_default=True,
              help="Timestep stride; must divide the scheduler's step count.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--blocks", default=None,
              help="Comma-separated attention block names (default: all).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cli(model_id, images_glob, stride, seed, blocks, out_dir):
    """Export head-averaged self-attention maps in the ATNS format."""
    paths = sorted(glob.glob(images_glob))
    job = ExportJob(
        model_id=model_id,
        image_paths=paths,
        output_dir=Path(out_dir),
        stride=stride,
        seed=seed,
        block_names=blocks.split(",") if blocks else None,
    )
    records = export(job)
    failures = [r for r in records if r.status != "ok"]
    for r in failures:
        click.echo(f"error: {r.source}: {r.error}", err=True)
    click.echo(f"exported {len(records) - len(failures)}/{len(records)} images")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        return 130
    except (TraceExportError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
