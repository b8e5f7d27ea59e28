"""On-disk formats: measure CSVs, raw float64 tensors with JSON sidecars, traces."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .dual import DualPotentials, TransportPlan
from .measures import CostTensor, DiscreteMeasure, ProblemInstance
from .sinkhorn import TRACE_COLUMNS

FORMAT_VERSION = 1
MEASURE_FILES = {"mu": "mu.csv", "nu": "nu.csv", "rho": "rho.csv"}
COST_FILE = "cost.bin"
PLAN_FILE = "plan.bin"


def format_float(v: float) -> str:
    return repr(float(v))


def write_measure(path, measure: DiscreteMeasure) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "weight"])
        for p, q in zip(measure.points, measure.weights):
            w.writerow([format_float(p), format_float(q)])


def read_measure(path) -> DiscreteMeasure:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"point", "weight"}:
        raise ValueError(f"{path}: expected header 'point,weight'")
    return DiscreteMeasure([float(r["point"]) for r in rows],
                           [float(r["weight"]) for r in rows])


def write_tensor(path, values: np.ndarray, extra: dict | None = None) -> None:
    """Row-major little-endian float64 plus ``<path>.json`` sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(arr.tobytes(order="C"))
    meta = {"shape": list(arr.shape), "order": "ijk", "dtype": "float64-le",
            "format_version": FORMAT_VERSION}
    if extra:
        meta.update(extra)
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def read_tensor(path):
    """Return ``(array, metadata)`` for a tensor written by ``write_tensor``."""
    path = Path(path)
    meta = json.loads(sidecar(path).read_text(encoding="utf-8"))
    if meta.get("order", "ijk") != "ijk":
        raise ValueError(f"{path}: unsupported order {meta['order']!r}")
    shape = tuple(meta["shape"])
    arr = np.frombuffer(path.read_bytes(), dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {arr.size} values, sidecar says shape {shape}")
    return arr.reshape(shape).astype(float), meta


def write_instance(directory, inst: ProblemInstance, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, fname in MEASURE_FILES.items():
        write_measure(d / fname, getattr(inst, name))
    write_tensor(d / COST_FILE, inst.cost.values, extra)


def read_instance(directory) -> ProblemInstance:
    d = Path(directory)
    ms = {name: read_measure(d / fname) for name, fname in MEASURE_FILES.items()}
    values, _ = read_tensor(d / COST_FILE)
    return ProblemInstance(ms["mu"], ms["nu"], ms["rho"], CostTensor(values))


def write_plan(path, plan: TransportPlan, extra: dict | None = None) -> None:
    meta = plan.metadata()
    if extra:
        meta.update(extra)
    write_tensor(path, plan.pi, meta)


def write_potentials(directory, inst: ProblemInstance, pot: DualPotentials) -> None:
    d = Path(directory)
    with open(d / "potentials_x.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "x", "f", "h"])
        for i, (x, f, h) in enumerate(zip(inst.x, pot.f, pot.h)):
            w.writerow([i, format_float(x), format_float(f), format_float(h)])
    with open(d / "potentials_y.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "y", "g"])
        for j, (y, g) in enumerate(zip(inst.y, pot.g)):
            w.writerow([j, format_float(y), format_float(g)])


def read_potentials(directory) -> DualPotentials:
    d = Path(directory)
    with open(d / "potentials_x.csv", newline="", encoding="utf-8") as fh:
        xs = list(csv.DictReader(fh))
    with open(d / "potentials_y.csv", newline="", encoding="utf-8") as fh:
        ys = list(csv.DictReader(fh))
    return DualPotentials([float(r["f"]) for r in xs], [float(r["g"]) for r in ys],
                          [float(r["h"]) for r in xs])


def write_trace(path, trace, timing: bool = True) -> None:
    """Trace CSV; with ``timing=False`` the ms column is zeroed for byte-stable output."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            vals = list(row)
            if not timing:
                vals[-1] = 0.0
            w.writerow([int(vals[0])] + [format_float(v) for v in vals[1:]])


def read_trace(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        rows = [[float(v) for v in r] for r in reader]
    return np.array(rows).reshape(-1, len(TRACE_COLUMNS))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def digest_files(paths) -> str:
    """Combined sha256 over (name, content) of ``paths`` in sorted order."""
    h = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()
