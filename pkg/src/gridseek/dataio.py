"""On-disk task format.

Per-task binary file (little-endian):

    magic  "VASF"   4 bytes
    version u16     = 1
    rows    u16
    cols    u16
    d       u32
    features        N*d float32, cell-major / feature-minor
    labels          N u8

A dataset is a directory with a UTF-8 JSON manifest listing the task files:

    {"tasks": [{"id": ..., "file": ...}, ...], "split": ..., ...}
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .task import Task

TASK_MAGIC = b"VASF"
TASK_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class TaskDataset:
    """A collection of same-shaped tasks plus split/provenance metadata."""

    tasks: list[Task]
    split: str = "train"
    provenance: str = "synthetic"   # "synthetic" | "ingested"
    config_hash: str = ""

    def __post_init__(self):
        if self.tasks:
            shape = self.tasks[0].grid_shape
            d = self.tasks[0].feature_dim
            for t in self.tasks:
                if t.grid_shape != shape or t.feature_dim != d:
                    raise FormatError(
                        f"task {t.id} has shape {t.grid_shape}/d={t.feature_dim}, "
                        f"expected {shape}/d={d}")

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def grid_shape(self):
        return self.tasks[0].grid_shape

    @property
    def feature_dim(self):
        return self.tasks[0].feature_dim


def write_task(task: Task, path: str) -> None:
    rows, cols = task.grid_shape
    d = task.feature_dim
    with open(path, "wb") as f:
        f.write(TASK_MAGIC)
        f.write(struct.pack("<HHHI", TASK_VERSION, rows, cols, d))
        f.write(task.features.astype("<f4").tobytes())
        f.write(task.labels.astype("u1").tobytes())


def read_task(path: str, task_id: str | None = None) -> Task:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TASK_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", path=path, offset=0)
    header_end = 4 + struct.calcsize("<HHHI")
    if len(blob) < header_end:
        raise FormatError("truncated header", path=path, offset=len(blob))
    version, rows, cols, d = struct.unpack("<HHHI", blob[4:header_end])
    if version != TASK_VERSION:
        raise FormatError(f"unsupported version {version}", path=path, offset=4)
    n = rows * cols
    feat_bytes = n * d * 4
    label_end = header_end + feat_bytes + n
    if len(blob) < label_end:
        raise FormatError(
            f"payload truncated: need {label_end} bytes, have {len(blob)}",
            path=path, offset=len(blob))
    if len(blob) > label_end:
        raise FormatError(
            f"trailing bytes after payload", path=path, offset=label_end)
    features = np.frombuffer(
        blob, dtype="<f4", count=n * d, offset=header_end
    ).reshape(n, d).astype(np.float64)
    labels = np.frombuffer(blob, dtype="u1", count=n, offset=header_end + feat_bytes)
    if not np.all((labels == 0) | (labels == 1)):
        raise FormatError("labels outside {0,1}", path=path,
                          offset=header_end + feat_bytes)
    if task_id is None:
        task_id = os.path.splitext(os.path.basename(path))[0]
    return Task(id=task_id, grid_shape=(rows, cols), features=features,
                labels=labels)


def write_dataset(ds: TaskDataset, path: str) -> None:
    """Write one VASF file per task plus a JSON manifest into directory `path`."""
    os.makedirs(path, exist_ok=True)
    entries = []
    for i, task in enumerate(ds.tasks):
        fname = f"task_{i:05d}.vasf"
        write_task(task, os.path.join(path, fname))
        entries.append({"id": task.id, "file": fname})
    manifest = {
        "tasks": entries,
        "split": ds.split,
        "provenance": ds.provenance,
        "config_hash": ds.config_hash,
    }
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def _read_manifest(manifest_path: str) -> dict:
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise FormatError("manifest not found", path=manifest_path)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}", path=manifest_path)
    if not isinstance(manifest, dict) or "tasks" not in manifest:
        raise FormatError("manifest lacks a 'tasks' list", path=manifest_path)
    return manifest


def read_dataset(path: str) -> TaskDataset:
    """Read a dataset directory (or an explicit manifest path)."""
    manifest_path = path
    if os.path.isdir(path):
        manifest_path = os.path.join(path, MANIFEST_NAME)
    return _load_from_manifest(manifest_path, default_provenance="synthetic")


def ingest_features(manifest_path: str) -> TaskDataset:
    """Load externally produced feature/label files listed in a manifest."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    ds = _load_from_manifest(manifest_path, default_provenance="ingested")
    ds.provenance = "ingested"
    return ds


def _load_from_manifest(manifest_path: str, default_provenance: str) -> TaskDataset:
    manifest = _read_manifest(manifest_path)
    base = os.path.dirname(manifest_path)
    tasks = []
    for entry in manifest["tasks"]:
        fpath = os.path.join(base, entry["file"])
        if not os.path.exists(fpath):
            raise FormatError("referenced task file missing", path=fpath)
        tasks.append(read_task(fpath, task_id=entry.get("id")))
    return TaskDataset(
        tasks=tasks,
        split=manifest.get("split", "train"),
        provenance=manifest.get("provenance", default_provenance),
        config_hash=manifest.get("config_hash", ""),
    )
