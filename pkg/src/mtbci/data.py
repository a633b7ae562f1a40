"""Domain types, dataset I/O and train/test splitting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError

INIT_MODES = ("uninformative", "ridge_init")


@dataclass(frozen=True)
class Trial:
    features: np.ndarray  # (E, F)
    label: int


@dataclass(frozen=True)
class TaskDataset:
    """Labelled trials of one subject or session.

    Trials are stored as a stacked ``(n, E, F)`` array with an aligned
    label vector; iterate :attr:`trials` for per-trial access.
    """

    task_id: str
    features: np.ndarray
    labels: np.ndarray
    electrode_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if feats.ndim != 3:
            raise ValidationError(f"task {self.task_id!r}: features must be (n, E, F), got shape {feats.shape}")
        if feats.shape[0] != labels.shape[0]:
            raise ValidationError(f"task {self.task_id!r}: {feats.shape[0]} trials but {labels.shape[0]} labels")
        if feats.shape[1] < 1 or feats.shape[2] < 1:
            raise ValidationError(f"task {self.task_id!r}: empty feature matrix")
        bad = np.flatnonzero(~np.all(np.isfinite(feats), axis=(1, 2)))
        if bad.size:
            raise ValidationError(f"task {self.task_id!r}, trial {bad[0]}: non-finite feature value")
        bad = np.flatnonzero((labels != 1) & (labels != -1))
        if bad.size:
            raise ValidationError(
                f"task {self.task_id!r}, trial {bad[0]}: label {labels[bad[0]]} not in {{-1, +1}}")
        if self.electrode_names is not None and len(self.electrode_names) != feats.shape[1]:
            raise ValidationError(f"task {self.task_id!r}: {len(self.electrode_names)} electrode names for E={feats.shape[1]}")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if self.electrode_names is not None:
            object.__setattr__(self, "electrode_names", tuple(self.electrode_names))

    @classmethod
    def from_trials(cls, task_id: str, trials: Sequence[Trial], shape: tuple[int, int] | None = None,
                    electrode_names=None) -> "TaskDataset":
        if trials:
            feats = np.stack([np.asarray(t.features, dtype=float) for t in trials])
        elif shape is not None:
            feats = np.zeros((0, *shape))
        else:
            raise ValidationError(f"task {task_id!r}: cannot infer shape of an empty trial list")
        return cls(task_id, feats, np.array([t.label for t in trials], dtype=int), electrode_names)

    @property
    def trials(self) -> Iterator[Trial]:
        for x, y in zip(self.features, self.labels):
            yield Trial(x, int(y))

    @property
    def shape(self) -> tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]

    @property
    def n_trials(self) -> int:
        return self.features.shape[0]

    def __len__(self):
        return self.n_trials

    def subset(self, index, task_id: str | None = None) -> "TaskDataset":
        index = np.asarray(index, dtype=int)
        return TaskDataset(task_id or self.task_id, self.features[index], self.labels[index], self.electrode_names)

    def has_both_classes(self) -> bool:
        return bool(np.any(self.labels == 1) and np.any(self.labels == -1))


@dataclass(frozen=True)
class TaskCollection:
    tasks: tuple[TaskDataset, ...]
    band_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ValidationError("collection must contain at least one task")
        shape = tasks[0].shape
        seen = set()
        for i, task in enumerate(tasks):
            if task.shape != shape:
                raise ValidationError(
                    f"dimension mismatch: task {task.task_id!r} (#{i + 1}) has (E, F)={task.shape}, expected {shape}")
            if task.task_id in seen:
                raise ValidationError(f"duplicate task id {task.task_id!r}")
            seen.add(task.task_id)
        if self.band_labels is not None and len(self.band_labels) != shape[1]:
            raise ValidationError(f"{len(self.band_labels)} band labels for F={shape[1]}")
        object.__setattr__(self, "tasks", tasks)
        if self.band_labels is not None:
            object.__setattr__(self, "band_labels", tuple(self.band_labels))

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    @property
    def shape(self) -> tuple[int, int]:
        return self.tasks[0].shape

    @property
    def dim(self) -> int:
        e, f = self.shape
        return e * f

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    @property
    def electrode_names(self):
        return self.tasks[0].electrode_names

    def without(self, index: int) -> "TaskCollection":
        rest = self.tasks[:index] + self.tasks[index + 1:]
        return TaskCollection(rest, self.band_labels)


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValidationError("prior contains non-finite values")
        scale = max(np.max(np.abs(cov)), 1e-300)
        if np.max(np.abs(cov - cov.T)) > 1e-10 * scale:
            raise ValidationError("prior covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def identity(cls, dim: int) -> "GaussianPrior":
        return cls(np.zeros(dim), np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_positive_definite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.covariance)[0] > 0)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianPrior":
        return cls(np.array(d["mean"], dtype=float), np.array(d["covariance"], dtype=float))


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    epsilon: float = 1e-3
    outer_tol: float = 1e-6
    inner_tol: float = 1e-6
    max_outer_iter: int = 200
    max_inner_iter: int = 100
    init_mode: str = "ridge_init"
    seed: int = 0

    def __post_init__(self):
        for name in ("lam", "epsilon", "outer_tol", "inner_tol"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive real, got {value}")
        for name in ("outer_tol", "inner_tol"):
            if getattr(self, name) >= 1:
                raise ValidationError(f"{name} must be < 1")
        for name in ("max_outer_iter", "max_inner_iter"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.init_mode not in INIT_MODES:
            raise ValidationError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if int(self.seed) < 0:
            raise ValidationError("seed must be unsigned")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    # JSON uses "lambda"; it is a keyword in Python.
    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Flattening and splitting


def flatten_trials(task: TaskDataset) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``(n, E*F)`` design matrix (electrode-major) and label vector."""
    e, f = task.shape
    return task.features.reshape(task.n_trials, e * f), task.labels.astype(float)


def unflatten(X: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    X = np.asarray(X)
    return X.reshape(X.shape[0], *shape)


def split_task(task: TaskDataset, n_train_per_class: int, seed: int) -> tuple[TaskDataset, TaskDataset]:
    """Stratified split with exactly ``n_train_per_class`` training trials per class.

    Selection is a seeded shuffle within each class; both halves keep the
    original trial order.
    """
    if n_train_per_class < 0:
        raise ValidationError("n_train_per_class must be non-negative")
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in (-1, 1):
        idx = np.flatnonzero(task.labels == cls)
        if idx.size < n_train_per_class:
            raise ValidationError(
                f"task {task.task_id!r}: {idx.size} trials of class {cls:+d}, need {n_train_per_class}")
        chosen.append(rng.permutation(idx)[:n_train_per_class])
    train_mask = np.zeros(task.n_trials, dtype=bool)
    train_mask[np.concatenate(chosen)] = True
    return (task.subset(np.flatnonzero(train_mask)),
            task.subset(np.flatnonzero(~train_mask)))


# --------------------------------------------------------------------------
# Manifest / CSV I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def write_task_csv(task: TaskDataset, path) -> None:
    X, _ = flatten_trials(task)
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f_{j}" for j in range(d)])
        for row, label in zip(X, task.labels):
            writer.writerow([int(label)] + [_fmt(v) for v in row])


def read_task_csv(path, task_id: str, shape: tuple[int, int], electrode_names=None) -> TaskDataset:
    e, f = shape
    d = e * f
    labels, rows = [], []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"task {task_id!r}: cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "label":
            raise ValidationError(f"task {task_id!r}: missing 'label,f_0,...' header in {path}")
        if len(header) - 1 != d:
            raise ValidationError(
                f"dimension mismatch: task {task_id!r} has {len(header) - 1} features, expected E*F={d}")
        for i, row in enumerate(reader):
            if len(row) != d + 1:
                raise ValidationError(f"task {task_id!r}, trial {i}: expected {d + 1} fields, got {len(row)}")
            try:
                label = float(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"task {task_id!r}, trial {i}: {exc}") from exc
            if label not in (1.0, -1.0):
                raise ValidationError(f"task {task_id!r}, trial {i}: label {row[0]} not in {{-1, +1}}")
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"task {task_id!r}, trial {i}: non-finite feature value")
            labels.append(int(label))
            rows.append(values)
    feats = np.array(rows, dtype=float).reshape(len(rows), e, f)
    return TaskDataset(task_id, feats, np.array(labels, dtype=int), electrode_names)


def load_collection(manifest_path) -> TaskCollection:
    """Read a manifest and every trial CSV it lists.

    Task paths are resolved relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    try:
        e = int(manifest["electrodes"])
        f = int(manifest["features_per_electrode"])
        entries = manifest["tasks"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"manifest {manifest_path}: missing or invalid field {exc}") from exc
    if e < 1 or f < 1:
        raise ValidationError("electrodes and features_per_electrode must be >= 1")
    names = manifest.get("electrode_names")
    base = manifest_path.parent
    tasks = []
    for entry in entries:
        path = Path(entry["path"])
        if not path.is_absolute():
            path = base / path
        tasks.append(read_task_csv(path, str(entry["id"]), (e, f), names))
    return TaskCollection(tuple(tasks), manifest.get("band_labels"))


def save_collection(collection: TaskCollection, directory, manifest_name: str = "manifest.json") -> Path:
    """Write one CSV per task plus a manifest into ``directory``; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    e, f = collection.shape
    entries = []
    for task in collection:
        fname = f"{task.task_id}.csv"
        write_task_csv(task, directory / fname)
        entries.append({"id": task.task_id, "path": fname})
    manifest = {"tasks": entries, "electrodes": e, "features_per_electrode": f}
    if collection.band_labels is not None:
        manifest["band_labels"] = list(collection.band_labels)
    if collection.electrode_names is not None:
        manifest["electrode_names"] = list(collection.electrode_names)
    out = directory / manifest_name
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out
