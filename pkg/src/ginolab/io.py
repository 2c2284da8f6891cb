"""
Binary field files, model checkpoints and report serialization.

A field file is a 24-byte header followed by the two channel planes::

    magic  "GFLD"   4 bytes
    version u16     1
    n       u32
    channels u32    2
    dtype   u8      1 = little-endian float64
    reserved        9 zero bytes

Each plane is stored with x2 varying fastest, then x1.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .cnn import CoordCnnModel
from .errors import CorruptFile
from .gino import GinoModel, LinearGinoModel
from .grid import MetricSpec, resolution_of
from .hodge import HodgeModel

MAGIC = b"GFLD"
VERSION = 1
DTYPE_F64_LE = 1
HEADER = struct.Struct("<4sHIIB9x")


# ---------------------------------------------------------------------------
# field files


def field_bytes(f: np.ndarray) -> bytes:
    n = resolution_of(f)
    if f.ndim != 3:
        raise ValueError(f"write one field at a time, got shape {f.shape}")
    payload = np.ascontiguousarray(np.moveaxis(f, -1, 0), dtype="<f8").tobytes()
    return HEADER.pack(MAGIC, VERSION, n, 2, DTYPE_F64_LE) + payload


def write_field(path, f: np.ndarray):
    Path(path).write_bytes(field_bytes(f))


def parse_field(data: bytes) -> np.ndarray:
    if len(data) < HEADER.size:
        raise CorruptFile(f"file has {len(data)} bytes, shorter than the {HEADER.size}-byte header",
                          offset=len(data))
    magic, version, n, channels, dtype = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptFile(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise CorruptFile(f"unsupported version {version}, expected {VERSION}", offset=4)
    if channels != 2:
        raise CorruptFile(f"expected 2 channels, header says {channels}", offset=10)
    if dtype != DTYPE_F64_LE:
        raise CorruptFile(f"unknown dtype code {dtype}", offset=14)
    expected = HEADER.size + 16 * n * n
    if len(data) != expected:
        raise CorruptFile(f"expected {expected} bytes for n={n}, got {len(data)}",
                          offset=min(len(data), expected))
    planes = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(2, n, n)
    return np.moveaxis(planes, 0, -1).astype(np.float64)


def read_field(path) -> np.ndarray:
    return parse_field(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# checkpoints

_KINDS = {"gino": GinoModel, "linear_gino": LinearGinoModel, "hodge": HodgeModel, "cnn": CoordCnnModel}


def _kind(model) -> str:
    for name, cls in _KINDS.items():
        if type(model) is cls:
            return name
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _meta(model) -> dict:
    meta = {}
    if hasattr(model, "lambda_max"):
        meta["lambda_max"] = [model.lambda_max]
    if hasattr(model, "metric"):
        meta["metric.m"] = model.metric.m.ravel().tolist()
        meta["metric.a"] = model.metric.a.ravel().tolist()
        meta["metric.alpha"] = [model.metric.alpha]
    if isinstance(model, HodgeModel):
        meta["frame"] = [model.frame]
    return meta


def _build(kind: str, params: dict, meta: dict):
    if kind == "cnn":
        return CoordCnnModel(params)
    # the stored inverse keeps the symbol bit-identical to the saved model's
    metric = MetricSpec(np.reshape(meta["metric.m"], (2, 2)), np.reshape(meta["metric.a"], (2, 2)),
                        meta["metric.alpha"][0])
    if kind == "hodge":
        return HodgeModel(params, meta["lambda_max"][0], meta["frame"][0], metric)
    return _KINDS[kind](params, meta["lambda_max"][0], metric)


def checkpoint_text(model) -> str:
    """``key = values`` lines; ``@`` keys hold metadata, ``key.shape`` the array shape."""
    lines = [f"@kind = {_kind(model)}"]
    for key, values in _meta(model).items():
        lines.append(f"@{key} = " + " ".join(repr(float(v)) for v in values))
    for key in sorted(model.params):
        a = np.asarray(model.params[key], dtype=np.float64)
        lines.append(f"{key}.shape = " + " ".join(str(d) for d in a.shape))
        lines.append(f"{key} = " + " ".join(repr(float(v)) for v in a.ravel()))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str):
    entries = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            entries[key.strip()] = value.split()
    kind = entries.pop("@kind")[0]
    meta = {k[1:]: [float(v) for v in vals] for k, vals in entries.items() if k.startswith("@")}
    params = {}
    for key, vals in entries.items():
        if key.startswith("@") or key.endswith(".shape"):
            continue
        shape = tuple(int(d) for d in entries[f"{key}.shape"])
        params[key] = np.array([float(v) for v in vals]).reshape(shape)
    return _build(kind, params, meta)


def save_checkpoint(model, path):
    """Text checkpoint at ``path`` plus a binary twin with suffix ``.npz``."""
    path = Path(path)
    path.write_text(checkpoint_text(model))
    arrays = {f"param:{k}": np.asarray(v) for k, v in model.params.items()}
    arrays.update({f"meta:{k}": np.asarray(v) for k, v in _meta(model).items()})
    arrays["kind"] = np.asarray(_kind(model))
    np.savez(path.with_suffix(".npz"), **arrays)


def load_checkpoint(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            kind = str(data["kind"])
            params = {k[6:]: data[k].astype(np.float64) for k in data.files if k.startswith("param:")}
            meta = {k[5:]: data[k].tolist() for k in data.files if k.startswith("meta:")}
        return _build(kind, params, meta)
    return parse_checkpoint(path.read_text())


# ---------------------------------------------------------------------------
# reports


def _plain(v):
    """Python scalar for JSON; non-finite floats become ``None``."""
    if isinstance(v, (np.generic,)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def format_cell(v) -> str:
    if isinstance(v, (np.generic,)):
        v = v.item()
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def metrics_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def summary_json(report) -> str:
    summary = {"experiment_id": report.experiment_id, "seed": report.config_snapshot.get("seed")}
    summary.update({k: _plain(v) for k, v in report.summary.items()})
    summary["config_snapshot"] = report.config_snapshot
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_report(report, out_dir, plot: bool = False) -> list:
    """Write ``config.json``, ``metrics.csv``, ``summary.json`` and optional plots.

    Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "config.json": json.dumps(report.config_snapshot, indent=2, sort_keys=True) + "\n",
        "metrics.csv": metrics_csv(report),
        "summary.json": summary_json(report),
    }
    written = []
    for name, text in files.items():
        path = out / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
        written.append(path)
    if plot:
        written.extend(render_plots(report, out / "plots"))
    return written


def render_plots(report, plot_dir) -> list:
    """Line charts of every numeric column against the first one, split by ``model``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    cols = list(report.columns)
    group_col = next((c for c in ("model", "lemma", "kind") if c in cols), None)
    numeric = [c for c in cols if c != group_col and all(
        isinstance(r[cols.index(c)], (int, float, np.number)) for r in report.rows)]
    if len(numeric) < 2:
        return []
    x_col, y_cols = numeric[0], numeric[1:]
    groups = sorted({r[cols.index(group_col)] for r in report.rows}) if group_col else [None]
    paths = []
    for y_col in y_cols:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for g in groups:
            rows = [r for r in report.rows if g is None or r[cols.index(group_col)] == g]
            ax.plot([r[cols.index(x_col)] for r in rows], [r[cols.index(y_col)] for r in rows],
                    marker="o", ms=3, label=g)
        ax.set_xlabel(x_col)
        ax.set_ylabel(y_col)
        if all(r[cols.index(y_col)] > 0 for r in report.rows):
            ax.set_yscale("log")
        if group_col:
            ax.legend()
        ax.set_title(f"{report.experiment_id}: {y_col}")
        fig.tight_layout()
        path = plot_dir / f"{report.experiment_id}_{y_col}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
