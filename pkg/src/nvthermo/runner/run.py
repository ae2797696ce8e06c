"""Run directories: digest-stamped text outputs with completion markers."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from . import config as C
from .scenarios import RUNNERS, RunOutput

INCOMPLETE = "RUN_INCOMPLETE"
COMPLETE = "RUN_COMPLETE"
OUTPUT_ROOT_ENV = "NVTHERMO_OUTPUT_ROOT"


class RunDirectoryError(RuntimeError):
    pass


def output_dir_for(cfg: dict, out=None) -> Path:
    """``out`` wins over the config; relative paths sit under ``$NVTHERMO_OUTPUT_ROOT`` if set."""
    path = Path(out if out is not None else cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def prepare_run_dir(path: Path, force: bool = False) -> None:
    if (path / COMPLETE).exists() and not force:
        raise RunDirectoryError(f"{path} holds a completed run; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    (path / COMPLETE).unlink(missing_ok=True)
    (path / "error.txt").unlink(missing_ok=True)
    (path / INCOMPLETE).write_text("run started; outputs are partial until RUN_COMPLETE appears\n")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def provenance(digest: str, seed: int) -> str:
    return f"# config_digest: {digest}\n# master_seed: {seed}\n"


def format_table(header, rows, digest: str, seed: int) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return provenance(digest, seed) + "\n".join(lines) + "\n"


def read_table(path) -> tuple:
    """Inverse of :func:`format_table`: ``(header, float array)``."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.array([[float(v) for v in ln.strip().split(",")] for ln in lines[1:]], ndmin=2)
    return header, data


def write_outputs(path: Path, cfg: dict, digest: str, output: RunOutput) -> None:
    seed = cfg["master_seed"]
    for name, (header, rows) in output.tables.items():
        (path / name).write_text(format_table(header, rows, digest, seed))
    for name, text in output.texts.items():
        (path / name).write_text(provenance(digest, seed) + text)
    summary = [f"scenario: {cfg['scenario']}", *output.summary]
    (path / "summary.txt").write_text(provenance(digest, seed) + "\n".join(summary) + "\n")
    resolved = {"config_digest": digest, "config": cfg}
    (path / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def run_scenario(cfg: dict, out=None, force: bool = False, workers: int = 1) -> Path:
    """Execute a resolved config and write its run directory; returns the directory.

    On failure the directory keeps its ``RUN_INCOMPLETE`` marker and an ``error.txt``.
    """
    path = output_dir_for(cfg, out)
    prepare_run_dir(path, force)
    digest = C.config_digest(cfg)
    try:
        output = RUNNERS[cfg["scenario"]](cfg, workers=workers)
        write_outputs(path, cfg, digest, output)
    except Exception as exc:
        (path / "error.txt").write_text(provenance(digest, cfg["master_seed"])
                                        + f"{type(exc).__name__}: {exc}\n")
        raise
    (path / INCOMPLETE).unlink()
    (path / COMPLETE).write_text(f"config_digest: {digest}\n")
    return path
