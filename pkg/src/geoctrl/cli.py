"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .harness import (ConfigError, compare, fit_slope, run_experiment,
                      verify_record)


@click.group()
def main():
    """Online-control experiments: run cells, fit slopes, compare, audit."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--workers", default=1, show_default=True,
              help="process pool size for independent cells")
@click.option("--output-root", default=None,
              help="override the output root (also env GEOCTRL_OUTPUT_ROOT)")
def run(config_path, workers, output_root):
    """Execute every (controller, horizon, seed) cell of a config."""
    try:
        config = json.loads(Path(config_path).read_text())
    except json.JSONDecodeError as exc:
        click.echo(f"config error: invalid JSON: {exc}", err=True)
        sys.exit(2)
    try:
        record = run_experiment(config, output_root=output_root,
                                workers=workers)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 3
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    click.echo(f"summary: {record['summary_csv']}")
    click.echo(f"record:  {record['record_path']}")


@main.command()
@click.argument("summary_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--controller", required=True)
@click.option("--use-avg", is_flag=True, help="fit the surrogate-cost regret")
@click.option("--figure/--no-figure", default=True, show_default=True,
              help="render the log-log figure next to the CSV")
def slope(summary_csv, controller, use_avg, figure):
    """Fit the regret-vs-horizon power law for one controller."""
    try:
        fit = fit_slope(summary_csv, controller, use_avg=use_avg)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    for w in fit["warnings"]:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"controller={controller} slope={fit['slope']:.4f} "
               f"ci95=[{fit['ci_lo']:.4f}, {fit['ci_hi']:.4f}]")
    for T in fit["horizons"]:
        click.echo(f"  T={T}: mean regret {fit['means'][T]:.4f}")
    if figure:
        from .figures import slope_figure
        out = str(Path(summary_csv).with_suffix("")) + f"_{controller}_slope.png"
        slope_figure(fit, out)
        click.echo(f"figure:  {out}")


@main.command(name="compare")
@click.argument("summaries", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="write the comparison table CSV here")
@click.option("--figure/--no-figure", default=True, show_default=True)
def compare_cmd(summaries, out, figure):
    """Tabulate mean regret per controller and the win-rate matrix."""
    try:
        cmp = compare(list(summaries))
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    controllers = cmp["controllers"]
    lines = ["T," + ",".join(f"{c}_mean,{c}_stderr" for c in controllers)]
    for entry in cmp["table"]:
        cells = [str(entry["T"])]
        for c in controllers:
            if c in entry:
                cells += [f"{entry[c][0]:.6g}", f"{entry[c][1]:.6g}"]
            else:
                cells += ["", ""]
        lines.append(",".join(cells))
    table_csv = "\n".join(lines)
    click.echo(table_csv)
    click.echo("win-rate matrix (row beats column):")
    for a in controllers:
        row = " ".join(f"{cmp['win_rate'][a][b]:.2f}" for b in controllers)
        click.echo(f"  {a}: {row}")
    if out:
        Path(out).write_text(table_csv + "\n")
        click.echo(f"table:   {out}")
        if figure:
            from .figures import compare_figure
            png = str(Path(out).with_suffix(".png"))
            compare_figure(cmp, png)
            click.echo(f"figure:  {png}")
    elif figure and summaries:
        from .figures import compare_figure
        png = str(Path(summaries[0]).with_suffix("")) + "_compare.png"
        compare_figure(cmp, png)
        click.echo(f"figure:  {png}")


@main.command()
@click.argument("record_path", type=click.Path(exists=True, dir_okay=False))
def verify(record_path):
    """Recompute one deterministically chosen cell and diff its CSV."""
    try:
        res = verify_record(record_path)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    click.echo(f"cell={res['cell']}: {res['detail']}")
    if not res["ok"]:
        sys.exit(3)


@main.command(name="spanner-audit")
@click.argument("record_path", type=click.Path(exists=True, dir_okay=False))
def spanner_audit(record_path):
    """Print the per-epoch exploration audit of every cell."""
    try:
        record = json.loads(Path(record_path).read_text())
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(3)
    for cell in record.get("cells", []):
        name = f"{cell['controller']} T={cell['T']} seed={cell['seed']}"
        click.echo(name)
        for e in cell.get("epochs", []):
            click.echo(
                f"  epoch {e['r']}: t=[{e['t_start']}, {e['t_end']}] "
                f"eps={e['epsilon']:.4g} "
                f"min={_maybe(e.get('region_min_value'))} "
                f"thr={_maybe(e.get('threshold'))} "
                f"logdet={_maybe(e.get('spanner_logdet'))} "
                f"calls={e.get('spanner_calls')}")
        for ev in cell.get("events", []):
            click.echo(f"  event: {ev}")


def _maybe(x):
    return "-" if x is None else f"{x:.4g}"


if __name__ == "__main__":
    main()
