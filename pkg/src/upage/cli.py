"""``upage`` command line: bench, compare, meta."""
from __future__ import annotations

import json
import os
import sys

import click

from . import bench
from .codeobj import CodeObjectError, emit_code_object, parse_code_object
from .hostmem import OutOfMemory
from .interposer import ENV_FALLBACK, ENV_MODE, ENV_MODEL, ENV_TRACE
from .sim.model import DeviceModel
from .trace import rows_to_csv
from .workloads.base import WORKLOADS, WorkloadError, default_spec


def _model(spec: str | None) -> DeviceModel:
    spec = spec or os.environ.get(ENV_MODEL) or "mi100"
    try:
        return DeviceModel.resolve(spec)
    except (OSError, ValueError) as exc:
        raise click.BadParameter(str(exc), param_hint="--model") from None


def _spec(workload, size, iterations, cadence, seed):
    try:
        return default_spec(workload, size=size, iterations=iterations, cadence=cadence, seed=seed)
    except WorkloadError as exc:
        raise click.UsageError(str(exc)) from None


def workload_options(f):
    f = click.option("--seed", type=int, default=None, help="Input data seed.")(f)
    f = click.option("--cadence", type=int, default=None,
                     help="Host-access period in iterations (hydro).")(f)
    f = click.option("--iterations", type=int, default=None)(f)
    f = click.option("--size", type=int, default=None,
                     help="Elements (stream), grid side (cg, hydro) or poses (dock).")(f)
    f = click.option("--model", default=None,
                     help=f"Preset name or TOML path [env {ENV_MODEL}; default mi100].")(f)
    f = click.option("--workload", type=click.Choice(WORKLOADS), default="stream",
                     show_default=True)(f)
    return f


@click.group()
def main():
    """Transparent host/device paging on a simulated GPU."""


@main.command("bench")
@workload_options
@click.option("--scheme", type=click.Choice(bench.SCHEMES), default=None,
              help=f"Memory scheme [env {ENV_MODE}; default mirror].")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None,
              help=f"JSON-lines trace output [env {ENV_TRACE}].")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="CSV summary output.")
@click.option("--fallback-on-oom", is_flag=True,
              help=f"Degrade device allocations that do not fit to mirror [env {ENV_FALLBACK}].")
def bench_cmd(workload, model, size, iterations, cadence, seed, scheme, trace_path, csv_path,
              fallback_on_oom):
    """Run one workload under one scheme and validate it against the host oracle."""
    spec = _spec(workload, size, iterations, cadence, seed)
    scheme = scheme or os.environ.get(ENV_MODE) or "mirror"
    if scheme not in bench.SCHEMES:
        raise click.BadParameter(f"{scheme!r} is not a scheme", param_hint=ENV_MODE)
    trace_path = trace_path or os.environ.get(ENV_TRACE) or None
    if not fallback_on_oom:
        fallback_on_oom = os.environ.get(ENV_FALLBACK, "").lower() in ("1", "true", "yes")
    try:
        rep = bench.run_workload(spec, scheme, _model(model), trace_path=trace_path,
                                 fallback_on_device_oom=fallback_on_oom)
    except OutOfMemory as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    rows = bench.summarize(rep)
    if csv_path:
        rows_to_csv(rows, csv_path)
    click.echo(rows_to_csv(rows), nl=False)
    if not rep.valid:
        for p in rep.problems:
            click.echo(f"validation failed: {p}", err=True)
        sys.exit(1)


@main.command("compare")
@workload_options
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def compare_cmd(workload, model, size, iterations, cadence, seed, csv_path):
    """Run every scheme and report sim_time normalised to the device scheme."""
    spec = _spec(workload, size, iterations, cadence, seed)
    try:
        cmp = bench.compare_schemes(spec, _model(model))
    except bench.CoherenceFailure as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(1)
    rows = cmp.rows()
    lines = ["scheme,sim_time,normalized,bytes_h2d,bytes_d2h,faults"]
    lines += [f"{r['scheme']},{r['sim_time']!r},{r['normalized']!r},{r['bytes_h2d']},"
              f"{r['bytes_d2h']},{r['faults']}" for r in rows]
    text = "\n".join(lines) + "\n"
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(text)
    click.echo(text, nl=False)


@main.group()
def meta():
    """Inspect or produce code-object metadata."""


@meta.command("dump")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def meta_dump(path):
    """Print kernel argument layouts from a code object as JSON."""
    with open(path, "rb") as f:
        image = f.read()
    try:
        kernels = parse_code_object(image)
    except CodeObjectError as exc:
        click.echo(f"{path}: {exc}", err=True)
        sys.exit(1)
    doc = {"kernels": [kernels[name].to_json() for name in sorted(kernels)]}
    click.echo(json.dumps(doc, indent=2))


@meta.command("emit")
@click.argument("workload", type=click.Choice(WORKLOADS))
@click.argument("path", type=click.Path(dir_okay=False))
def meta_emit(workload, path):
    """Write the code object a workload loads."""
    spec = default_spec(workload)
    with open(path, "wb") as f:
        f.write(emit_code_object(bench.MODULES[workload].kernels(spec)))


if __name__ == "__main__":
    main()
