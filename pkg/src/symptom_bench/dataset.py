"""Subsystem/signal bookkeeping, window containers and on-disk dataset format.

A dataset directory holds::

    meta.json          config echo, schema version, subsystem map, scaler
    train.csv          window_id,t,<signals...>
    val.csv            window_id,t,<signals...>
    test.csv           window_id,t,<signals...>
    test_labels.csv    window_id,fault_kind,label_a,label_b,label_all
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

SCHEMA_VERSION = 1


def label_columns(smap: SubsystemSignalsMap) -> tuple[str, ...]:
    return ("window_id", "fault_kind", *(f"label_{s}" for s in smap.subsystems), "label_all")


class DatasetError(ValueError):
    """Raised when a dataset directory is missing, malformed or inconsistent."""


@dataclass(frozen=True)
class SubsystemSignalsMap:
    """Partition of signal ids into subsystems.

    The map owns column order: ``signals`` is the concatenation of every
    subsystem's signal list in subsystem order.
    """

    assignment: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        frozen = {str(s): tuple(str(p) for p in sigs) for s, sigs in dict(self.assignment).items()}
        if not frozen:
            raise ValueError("subsystem map must contain at least one subsystem")
        seen: set[str] = set()
        for s, sigs in frozen.items():
            if not sigs:
                raise ValueError(f"subsystem {s!r} has no signals")
            dup = seen.intersection(sigs) | {p for p in sigs if sigs.count(p) > 1}
            if dup:
                raise ValueError(f"signals assigned more than once: {sorted(dup)}")
            seen.update(sigs)
        object.__setattr__(self, "assignment", MappingProxyType(frozen))

    @classmethod
    def from_json(cls, obj: Mapping) -> SubsystemSignalsMap:
        return cls(obj["subsystems"])

    def to_json(self) -> dict:
        return {"subsystems": {s: list(p) for s, p in self.assignment.items()}}

    @property
    def subsystems(self) -> tuple[str, ...]:
        return tuple(self.assignment)

    @property
    def signals(self) -> tuple[str, ...]:
        return tuple(p for sigs in self.assignment.values() for p in sigs)

    def signals_of(self, subsystem: str) -> tuple[str, ...]:
        try:
            return self.assignment[subsystem]
        except KeyError:
            raise KeyError(f"unknown subsystem {subsystem!r}; known: {list(self.assignment)}") from None

    def columns_of(self, subsystem: str) -> list[int]:
        """Column indices of ``subsystem`` in the full signal order."""
        idx = {p: j for j, p in enumerate(self.signals)}
        return [idx[p] for p in self.signals_of(subsystem)]

    def subsystem_of(self, signal: str) -> str:
        for s, sigs in self.assignment.items():
            if signal in sigs:
                return s
        raise KeyError(f"unknown signal {signal!r}")


DEFAULT_MAP = SubsystemSignalsMap({"a": ("a1", "a2", "a3"), "b": ("b1", "b2", "b3")})


@dataclass(frozen=True)
class WindowBatch:
    """Stack of sensor windows, shape ``(n_windows, window_len, n_signals)``."""

    values: np.ndarray
    signals: tuple[str, ...]
    window_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"window values must be 3-D (n, t, signals), got shape {v.shape}")
        if v.shape[2] != len(self.signals):
            raise ValueError(f"{v.shape[2]} columns but {len(self.signals)} signal names")
        if not np.all(np.isfinite(v)):
            raise ValueError("window values contain non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "signals", tuple(self.signals))
        ids = tuple(int(i) for i in self.window_ids) or tuple(range(v.shape[0]))
        if len(ids) != v.shape[0]:
            raise ValueError(f"{len(ids)} window ids for {v.shape[0]} windows")
        object.__setattr__(self, "window_ids", ids)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def window_len(self) -> int:
        return self.values.shape[1]

    def column(self, signal: str) -> np.ndarray:
        return self.values[:, :, self.signals.index(signal)]

    def select(self, index) -> WindowBatch:
        idx = np.arange(len(self))[index]
        return WindowBatch(self.values[idx], self.signals, tuple(self.window_ids[i] for i in idx))


def slice_subsystem(batch: WindowBatch, smap: SubsystemSignalsMap, subsystem: str) -> WindowBatch:
    """Columns of ``subsystem`` in map order."""
    wanted = smap.signals_of(subsystem)
    missing = [p for p in wanted if p not in batch.signals]
    if missing:
        raise KeyError(f"batch lacks signals {missing}")
    cols = [batch.signals.index(p) for p in wanted]
    return WindowBatch(batch.values[:, :, cols], wanted, batch.window_ids)


def concat_subsystems(parts: Mapping[str, WindowBatch], smap: SubsystemSignalsMap) -> WindowBatch:
    """Inverse of slicing every subsystem."""
    blocks = [parts[s].values for s in smap.subsystems]
    first = parts[smap.subsystems[0]]
    return WindowBatch(np.concatenate(blocks, axis=2), smap.signals, first.window_ids)


@dataclass(frozen=True)
class HealthVector:
    """Binary health states, 0 = OK and 1 = not OK, keyed by subsystem id."""

    window_id: int
    per_subsystem: Mapping[str, int]
    global_flag: int

    def __post_init__(self) -> None:
        bits = {str(k): int(v) for k, v in dict(self.per_subsystem).items()}
        if any(v not in (0, 1) for v in bits.values()) or self.global_flag not in (0, 1):
            raise ValueError("health states must be 0 or 1")
        object.__setattr__(self, "per_subsystem", MappingProxyType(bits))

    def covers(self, subsystems: Iterable[str]) -> bool:
        return set(subsystems) == set(self.per_subsystem)


@dataclass(frozen=True)
class Dataset:
    train: WindowBatch
    val: WindowBatch
    test: WindowBatch
    labels: dict[int, dict]  # window_id -> {"fault_kind", "label_a", "label_b", "label_all"}
    smap: SubsystemSignalsMap
    meta: dict = field(default_factory=dict)

    def test_labels(self, target: str) -> np.ndarray:
        """Label column ``label_<target>`` aligned with ``test.window_ids``."""
        key = f"label_{target}"
        return np.array([self.labels[w][key] for w in self.test.window_ids], dtype=int)

    def test_kinds(self) -> list[str]:
        return [self.labels[w]["fault_kind"] for w in self.test.window_ids]


# ---------------------------------------------------------------- persistence


def _write_split(path: Path, batch: WindowBatch) -> None:
    n, t, p = batch.values.shape
    # positional notation, shortest repr that round-trips exactly
    fmt = np.vectorize(lambda x: np.format_float_positional(x, unique=True, trim="-"), otypes=[object])
    text = fmt(batch.values.reshape(-1, p)) if batch.values.size else np.empty((0, p), dtype=object)
    with path.open("w", newline="") as fh:
        fh.write(",".join(["window_id", "t", *batch.signals]) + "\n")
        row = 0
        for i in range(n):
            wid = batch.window_ids[i]
            for k in range(t):
                fh.write(f"{wid},{k}," + ",".join(text[row]) + "\n")
                row += 1


def _read_split(path: Path, signals: tuple[str, ...]) -> WindowBatch:
    if not path.exists():
        raise DatasetError(f"missing file {path}")
    expected = ["window_id", "t", *signals]
    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise DatasetError(f"{path.name}: empty file")
    for j, col in enumerate(expected):
        if j >= len(header) or header[j] != col:
            got = header[j] if j < len(header) else "<missing>"
            raise DatasetError(f"{path.name}: bad header column {j}: expected {col!r}, got {got!r}")
    if len(header) != len(expected):
        raise DatasetError(f"{path.name}: unexpected extra column(s) {header[len(expected):]}")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.size == 0:
        return WindowBatch(np.zeros((0, 0, len(signals))), signals)
    if not np.all(np.isfinite(raw)):
        bad = int(raw[~np.all(np.isfinite(raw), axis=1)][0, 0])
        raise DatasetError(f"{path.name}: non-finite value in window {bad}")
    wids = raw[:, 0].astype(np.int64)
    order = np.unique(wids, return_index=True)[1]
    ids = wids[np.sort(order)]
    t_len = int(raw[:, 1].max()) + 1
    if raw.shape[0] != len(ids) * t_len:
        raise DatasetError(f"{path.name}: windows have unequal lengths")
    values = raw[:, 2:].reshape(len(ids), t_len, len(signals))
    return WindowBatch(values, signals, tuple(int(i) for i in ids))


def write_dataset(path: str | Path, ds: Dataset) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta["schema_version"] = SCHEMA_VERSION
    meta.update(ds.smap.to_json())
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for name in ("train", "val", "test"):
        _write_split(out / f"{name}.csv", getattr(ds, name))
    with (out / "test_labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = label_columns(ds.smap)
        w.writerow(cols)
        for wid in ds.test.window_ids:
            row = ds.labels[wid]
            w.writerow([wid, *(row[c] for c in cols[1:])])
    return out


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"missing file {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"schema version mismatch: file has {meta.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    smap = SubsystemSignalsMap.from_json(meta)
    splits = {name: _read_split(root / f"{name}.csv", smap.signals) for name in ("train", "val", "test")}

    label_path = root / "test_labels.csv"
    if not label_path.exists():
        raise DatasetError(f"missing file {label_path}")
    labels: dict[int, dict] = {}
    with label_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        cols = label_columns(smap)
        if header is None or tuple(header) != cols:
            bad = [c for c in (header or []) if c not in cols] or [c for c in cols if c not in (header or [])]
            raise DatasetError(f"test_labels.csv: bad header, offending column(s) {bad}")
        for row in reader:
            labels[int(row[0])] = {"fault_kind": row[1], **{c: int(v) for c, v in zip(cols[2:], row[2:])}}
    test_ids = set(splits["test"].window_ids)
    unlabeled = sorted(test_ids - set(labels))
    orphan = sorted(set(labels) - test_ids)
    if unlabeled or orphan:
        raise DatasetError(f"label/window id mismatch: unlabeled windows {unlabeled}, orphan labels {orphan}")
    return Dataset(splits["train"], splits["val"], splits["test"], labels, smap, meta)
