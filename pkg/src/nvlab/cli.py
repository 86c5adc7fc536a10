"""Command-line entry points.

Exit codes: 0 success, 2 configuration problem, 3 schema/validation
problem, 4 runtime failure.  The config file is taken from --config or
the NVLAB_CONFIG environment variable, falling back to built-in
defaults.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import config as cfgmod
from . import fitting as ft
from . import photophysics as ph
from . import pulses as pl
from .datasets import Dataset, DatasetExistsError, canonical_json
from .experiments import ExperimentError, ExperimentRunner, ExperimentSpec

EXIT_CONFIG = 2
EXIT_SCHEMA = 3
EXIT_RUNTIME = 4


def _fail(code: int, message: str):
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(code)


def _load_cfg(config_path):
    if config_path is None:
        return cfgmod.default_config()
    try:
        return cfgmod.load_config(config_path)
    except cfgmod.ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))


def _read_structured(path):
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        return yaml.safe_load(text)
    return json.loads(text)


@click.group()
@click.option("--config", "-c", envvar="NVLAB_CONFIG", default=None,
              type=click.Path(), help="apparatus config YAML")
@click.pass_context
def main(ctx, config):
    """Virtual NV-center lab."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8064, type=int)
@click.option("--data-dir", default="./nvlab-data", type=click.Path())
@click.option("--token", default=None, help="optional bearer token")
@click.pass_context
def serve(ctx, host, port, data_dir, token):
    """Run the lab service."""
    import uvicorn

    from .service import create_app

    cfg = _load_cfg(ctx.obj["config_path"])
    app = create_app(cfg, data_dir, auth_token=token)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def _run_spec(cfg, spec_dict, seed, data_dir):
    try:
        spec = ExperimentSpec.from_dict(spec_dict)
        if seed is not None:
            spec.seed = int(seed)
    except ExperimentError as exc:
        _fail(EXIT_SCHEMA, str(exc))
    apparatus = cfgmod.build_apparatus(cfg)
    session = apparatus.session()
    runner = ExperimentRunner(session, cal=cfgmod.assumed_calibration(cfg))
    dataset = runner.run(spec)
    try:
        path = dataset.save(data_dir)
    except DatasetExistsError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    log = {
        "schema": "nvlab-command-log/1",
        "config": cfg,
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "dataset_id": dataset.dataset_id,
        "session_log": session.export_log(),
    }
    log_path = Path(data_dir) / f"{dataset.dataset_id}.log.json"
    log_path.write_text(canonical_json(log))
    return dataset, path, log_path


@main.command()
@click.argument("spec_file", type=click.Path(exists=True))
@click.option("--seed", default=None, type=int,
              help="override the spec seed")
@click.option("--data-dir", default="./nvlab-data", type=click.Path())
@click.pass_context
def run(ctx, spec_file, seed, data_dir):
    """Run an experiment spec (JSON or YAML) and persist the dataset."""
    cfg = _load_cfg(ctx.obj["config_path"])
    try:
        spec_dict = _read_structured(spec_file)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        _fail(EXIT_SCHEMA, f"spec file is not valid JSON/YAML: {exc}")
    try:
        dataset, path, log_path = _run_spec(cfg, spec_dict, seed, data_dir)
    except ExperimentError as exc:
        _fail(EXIT_SCHEMA, str(exc))
    except pl.SequenceError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(json.dumps({"dataset_id": dataset.dataset_id,
                           "path": str(path), "log": str(log_path)}))


@main.command()
@click.option("--center", nargs=2, type=float, default=(100.0, 100.0),
              help="scan center x y (um)")
@click.option("--span", default=10.0, type=float)
@click.option("--step", default=0.05, type=float)
@click.option("--dwell", default=0.003, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--data-dir", default="./nvlab-data", type=click.Path())
@click.pass_context
def scan(ctx, center, span, step, dwell, seed, data_dir):
    """Confocal raster scan shortcut."""
    cfg = _load_cfg(ctx.obj["config_path"])
    spec_dict = {"kind": "confocal_scan",
                 "parameters": {"center_um": list(center), "span_um": span,
                                "step_um": step, "dwell_s": dwell},
                 "repetitions": 1, "seed": seed}
    dataset, path, _ = _run_spec(cfg, spec_dict, None, data_dir)
    counts = np.asarray(dataset.signal)
    click.echo(json.dumps({
        "dataset_id": dataset.dataset_id, "path": str(path),
        "max_rate_cps": float(counts.max() / dwell),
        "pixels": len(counts)}))


@main.command()
@click.argument("model", type=click.Choice(sorted(ft.MODELS)))
@click.argument("dataset_file", type=click.Path(exists=True))
@click.option("--csv-out", default=None, type=click.Path(),
              help="write (x, y, y_fit, residual) CSV")
def fit(model, dataset_file, csv_out):
    """Fit a model to a stored dataset."""
    try:
        ds = Dataset.load(dataset_file)
    except Exception as exc:  # noqa: BLE001
        _fail(EXIT_SCHEMA, f"cannot read dataset: {exc}")
    try:
        result = ft.fit(ft.MODELS[model], ds.x(), ds.y())
    except ft.FitError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(json.dumps(result.as_dict()))
    if csv_out:
        y_fit = ft.MODELS[model].fn(ds.x(), result.params)
        lines = ["x,y,y_fit,residual"]
        for x, y, yf in zip(ds.x(), ds.y(), y_fit):
            lines.append(f"{x!r},{y!r},{yf!r},{y - yf!r}")
        Path(csv_out).write_text("\n".join(lines) + "\n")


@main.command()
@click.argument("log_file", type=click.Path(exists=True))
@click.option("--data-dir", default="./nvlab-data-replay",
              type=click.Path())
def replay(log_file, data_dir):
    """Reproduce a dataset bit-exactly from a command log."""
    try:
        log = json.loads(Path(log_file).read_text())
    except json.JSONDecodeError as exc:
        _fail(EXIT_SCHEMA, f"log file is not valid JSON: {exc}")
    if log.get("schema") != "nvlab-command-log/1":
        _fail(EXIT_SCHEMA, f"unsupported log schema {log.get('schema')!r}")
    dataset, path, _ = _run_spec(log["config"], log["spec"], log["seed"],
                                 data_dir)
    if dataset.dataset_id != log["dataset_id"]:
        _fail(EXIT_RUNTIME,
              f"replay produced {dataset.dataset_id}, log recorded "
              f"{log['dataset_id']}")
    click.echo(json.dumps({"dataset_id": dataset.dataset_id,
                           "path": str(path), "match": True}))


@main.command("calibrate-photophysics")
@click.option("--polarization", default=0.815, type=float)
@click.option("--contrast", default=0.325, type=float)
@click.option("--window", default=300e-9, type=float)
@click.option("--write", "write_path", default=None, type=click.Path(),
              help="write the rates into this config file")
@click.pass_context
def calibrate_photophysics(ctx, polarization, contrast, window, write_path):
    """Solve ISC rates and singlet branching for the polarization and
    readout-contrast targets."""
    try:
        rates = ph.calibrate_rates(polarization, contrast, window)
    except RuntimeError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    pol = ph.polarize(ph.LevelPopulations.ground(0.0, 1.0), rates)
    stats = ph.readout_window(rates, window)
    out = {
        "isc_e1_hz": rates.isc_e1,
        "isc_e0_hz": rates.isc_e0,
        "singlet_branch_g0": rates.singlet_branch_g0,
        "polarization": pol.ground_spin_zero_fraction,
        "contrast": stats["contrast"],
    }
    click.echo(json.dumps(out))
    if write_path:
        cfg = (cfgmod.load_config(write_path) if Path(write_path).exists()
               else cfgmod.default_config())
        cfg.setdefault("rates", {}).update({
            "isc_e1_hz": rates.isc_e1,
            "isc_e0_hz": rates.isc_e0,
            "singlet_branch_g0": rates.singlet_branch_g0,
        })
        cfgmod.save_config(cfg, write_path)


@main.group()
def pulse():
    """Compile or inspect pulse sequences."""


def _backend_by_name(name):
    if name not in pl.BACKENDS:
        _fail(EXIT_CONFIG, f"unknown backend {name!r}")
    return pl.BACKENDS[name]()


@pulse.command("compile")
@click.argument("ir_file", type=click.Path(exists=True))
@click.option("--backend", default="discovery2",
              type=click.Choice(sorted(pl.BACKENDS)))
@click.option("--out", default=None, type=click.Path())
def pulse_compile(ir_file, backend, out):
    """Compile an IR file to a channel pattern."""
    try:
        ir = pl.SequenceIR.from_dict(_read_structured(ir_file))
    except (pl.SequenceError, KeyError, TypeError, json.JSONDecodeError,
            yaml.YAMLError) as exc:
        _fail(EXIT_SCHEMA, f"bad IR file: {exc}")
    try:
        pattern = pl.compile_ir(ir, _backend_by_name(backend),
                                pl.DelayCalibration.default())
    except pl.SequenceError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    payload = json.dumps(pattern.to_dict(), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(payload)
        click.echo(json.dumps({"out": out,
                               "total_samples": pattern.total_samples}))
    else:
        click.echo(payload)


@pulse.command("diagram")
@click.argument("ir_file", type=click.Path(exists=True))
@click.option("--backend", default="discovery2",
              type=click.Choice(sorted(pl.BACKENDS)))
def pulse_diagram(ir_file, backend):
    """Render a channel timeline for an IR file."""
    try:
        ir = pl.SequenceIR.from_dict(_read_structured(ir_file))
    except (pl.SequenceError, KeyError, TypeError, json.JSONDecodeError,
            yaml.YAMLError) as exc:
        _fail(EXIT_SCHEMA, f"bad IR file: {exc}")
    try:
        diagram = pl.timing_diagram(ir, _backend_by_name(backend),
                                    pl.DelayCalibration.default())
    except pl.SequenceError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    click.echo(diagram.render())


if __name__ == "__main__":
    main()
