"""Command line interface: run experiments, build reference fronts,
compare fronts and precompute full-order models."""

from __future__ import annotations

import json
import pathlib

import click
import numpy as np

from . import driver, moo
from .fem import FullOrderModel


@click.group()
def main():
    """Pareto fronts of PDE-constrained problems via a hierarchical
    reference-point method with a trust-region reduced-basis solver."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True), help="TOML or JSON experiment "
              "config.")
@click.option("--backend", type=click.Choice(driver.BACKENDS), default=None,
              help="Override the configured backend.")
@click.option("--removal", "removal_strategy",
              type=click.Choice(["none", "t1", "t2", "t2a", "t2b", "t3"]),
              default=None, help="Override the removal strategy.")
@click.option("--jobs", type=int, default=None,
              help="Parallel reference-point solves (fe backend).")
@click.option("--rb-checkpoint", type=click.Path(), default=None,
              help="Load/store the common reduced space at this path.")
@click.option("--out", "out_dir", type=click.Path(), default="out",
              help="Output directory.")
@click.option("--plots/--no-plots", default=True, help="Render figures.")
def run(config_path, backend, removal_strategy, jobs, rb_checkpoint, out_dir,
        plots):
    """Run the hierarchical method and export front, report and traces."""
    cfg = driver.load_config(config_path)
    if backend:
        cfg.backend = backend
    if removal_strategy:
        cfg.removal = removal_strategy
    if jobs:
        cfg.jobs = jobs
    if rb_checkpoint:
        cfg.rb_checkpoint = rb_checkpoint
    report = driver.run_hierarchy(cfg)
    paths = driver.export_report(report, out_dir, render_plots=plots)
    click.echo(f"front points: {report.totals['front_size']} "
               f"(archive {report.totals['archive_size']})")
    click.echo(f"full-order solves: {report.totals['full_solves']}")
    click.echo(f"wrote {paths['front']}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--density", type=int, default=21,
              help="Lattice points per free parameter.")
@click.option("--out", "out_path", type=click.Path(), default="oracle.csv")
def oracle(config_path, density, out_path):
    """Brute-force reference front on a parameter lattice."""
    cfg = driver.load_config(config_path)
    fom, cost = driver.build_problem(cfg)
    n_free = int(np.sum(cost.u_b > cost.u_a))
    if density ** n_free > 200000:
        click.echo(f"warning: {density}^{n_free} lattice points is costly",
                   err=True)
    params, J = driver.brute_force_front(fom, cost, density)
    import csv

    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"u_{j + 1}" for j in range(params.shape[1])]
                   + [f"J_{j + 1}" for j in range(J.shape[1])])
        for u, row in zip(params, J):
            w.writerow([repr(float(v)) for v in u]
                       + [repr(float(v)) for v in row])
    click.echo(f"wrote {out_path} ({len(J)} non-dominated points)")


@main.command()
@click.option("--front", "fronts", type=click.Path(exists=True), multiple=True,
              required=True, help="Give twice: reference then approximation.")
def compare(fronts):
    """Coverage between two front CSV files, in both directions."""
    if len(fronts) != 2:
        raise click.UsageError("exactly two --front files are required")
    a = driver.load_front_csv(fronts[0])
    b = driver.load_front_csv(fronts[1])
    click.echo(f"coverage({fronts[0]} -> {fronts[1]}): "
               f"{moo.coverage(a, b):.6g}")
    click.echo(f"coverage({fronts[1]} -> {fronts[0]}): "
               f"{moo.coverage(b, a):.6g}")


@main.command("build-fom")
@click.option("--n", "n_per_side", type=int, default=None,
              help="Override the configured mesh resolution.")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default="fom.json")
def build_fom(n_per_side, config_path, out_path):
    """Assemble the full-order model once and store it as JSON."""
    cfg = driver.load_config(config_path)
    if n_per_side:
        cfg.n_per_side = n_per_side
    fom, _ = driver.build_problem(cfg)
    fom.save(out_path)
    click.echo(f"wrote {out_path} (dim {fom.dim})")


if __name__ == "__main__":
    main()
