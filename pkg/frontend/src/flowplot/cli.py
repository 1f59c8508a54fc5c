import sys

import click

from .io import read_run
from .panels import PANEL_KINDS, render


@click.group()
def main():
    """Figure rendering for harness run artifacts."""


@main.command("plot")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=".", show_default=True,
              help="Output directory for panel images.")
@click.option("--panels", default=",".join(PANEL_KINDS), show_default=True,
              help="Comma-separated panel kinds.")
def plot(csv_path, out_dir, panels):
    """Render the standard panels from a run CSV (with its JSON sidecar)."""
    kinds = [p.strip() for p in panels.split(",") if p.strip()]
    run = read_run(csv_path)
    result = render(run, out_dir, kinds)
    for w in result.warnings:
        click.echo(f"warning: {w}", err=True)
    for p in result.paths:
        click.echo(p)
    if not result.paths and result.warnings:
        sys.exit(2)


if __name__ == "__main__":
    main()
