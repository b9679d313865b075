"""Multimodal sequence samples, the JSON dataset format and a synthetic task.

A sample holds one feature matrix per modality (audio, video, text).  The
matrices may have different lengths: nothing here assumes the streams are
aligned.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset content."""


class Modality(enum.IntEnum):
    AUDIO = 0
    VIDEO = 1
    TEXT = 2

    @property
    def code(self) -> str:
        return "AVT"[self.value]

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: Union[str, "Modality"]) -> "Modality":
        if isinstance(value, Modality):
            return value
        v = value.strip().lower()
        for m in cls:
            if v in (m.key, m.code.lower()):
                return m
        raise ValueError(f"unknown modality {value!r}")


MODALITIES = tuple(Modality)


@dataclass(frozen=True)
class Task:
    """Either ``regression`` or ``multilabel`` with ``n_classes`` outputs."""

    kind: str = "regression"
    n_classes: int = 1

    def __post_init__(self):
        if self.kind not in ("regression", "multilabel"):
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == "multilabel" and self.n_classes < 1:
            raise DataError("multilabel task needs at least one class")

    @property
    def output_dim(self) -> int:
        return 1 if self.kind == "regression" else self.n_classes

    def to_json(self):
        if self.kind == "regression":
            return "regression"
        return {"multilabel": self.n_classes}

    @classmethod
    def from_json(cls, obj) -> "Task":
        if obj == "regression":
            return cls()
        if isinstance(obj, Mapping) and set(obj) == {"multilabel"}:
            k = obj["multilabel"]
            if not isinstance(k, int) or isinstance(k, bool):
                raise DataError(f"multilabel class count must be an int, got {k!r}")
            return cls("multilabel", k)
        raise DataError(f"bad task field: {obj!r}")


Label = Union[float, tuple]


@dataclass(frozen=True, eq=False)
class MultimodalSample:
    id: str
    sequences: dict  # Modality -> float64 array (length, dim)
    label: Label
    meta: dict = field(default_factory=dict)

    def lengths(self) -> tuple:
        return tuple(self.sequences[m].shape[0] for m in MODALITIES)

    def __eq__(self, other):
        if not isinstance(other, MultimodalSample):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.meta == other.meta
            and all(np.array_equal(self.sequences[m], other.sequences[m]) for m in MODALITIES)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple
    dims: dict  # Modality -> int
    splits: dict  # sample id -> split name
    task: Task = Task()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        validate_dataset(self)

    def __len__(self):
        return len(self.samples)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return [s for s in self.samples if self.splits[s.id] == name]

    def get(self, sample_id: str) -> MultimodalSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task == other.task
            and self.dims == other.dims
            and self.splits == other.splits
            and self.meta == other.meta
            and self.samples == other.samples
        )


def _check_sequence(sample_id: str, m: Modality, x: np.ndarray, dim: int) -> None:
    if x.ndim != 2:
        raise DataError(f"sample {sample_id!r}: {m.key} features must be a matrix")
    if x.shape[0] == 0:
        raise DataError(f"sample {sample_id!r}: {m.key} sequence is empty")
    if x.shape[1] != dim:
        raise DataError(
            f"sample {sample_id!r}: {m.key} dimension mismatch "
            f"(expected {dim}, got {x.shape[1]})"
        )
    if not np.all(np.isfinite(x)):
        raise DataError(f"sample {sample_id!r}: {m.key} has non-finite feature values")


def _check_label(sample_id: str, label, task: Task) -> None:
    if task.kind == "regression":
        if isinstance(label, bool) or not isinstance(label, (int, float)) or not math.isfinite(label):
            raise DataError(f"sample {sample_id!r}: regression label must be a finite number")
    else:
        if not isinstance(label, tuple) or len(label) != task.n_classes:
            raise DataError(f"sample {sample_id!r}: expected {task.n_classes} multilabel bits")
        if any(b not in (0, 1) or isinstance(b, bool) for b in label):
            raise DataError(f"sample {sample_id!r}: multilabel bits must be 0 or 1")


def validate_dataset(ds: Dataset) -> None:
    if set(ds.dims) != set(MODALITIES):
        raise DataError("dims must give audio, video and text")
    for m, d in ds.dims.items():
        if d < 1:
            raise DataError(f"{m.key} dim must be >= 1")
    seen = set()
    for s in ds.samples:
        if s.id in seen:
            raise DataError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if set(s.sequences) != set(MODALITIES):
            raise DataError(f"sample {s.id!r}: all three modalities are required")
        for m in MODALITIES:
            _check_sequence(s.id, m, s.sequences[m], ds.dims[m])
        _check_label(s.id, s.label, ds.task)
        if ds.splits.get(s.id) not in SPLITS:
            raise DataError(f"sample {s.id!r}: missing or unknown split")
    if set(ds.splits) != seen:
        raise DataError("split map must name exactly the dataset's samples")


# -- JSON format ------------------------------------------------------------

def dataset_to_json(ds: Dataset) -> dict:
    out: dict[str, Any] = {
        "task": ds.task.to_json(),
        "dims": {m.key: int(ds.dims[m]) for m in MODALITIES},
        "samples": [],
    }
    if ds.meta:
        out["meta"] = ds.meta
    for s in ds.samples:
        rec: dict[str, Any] = {"id": s.id, "split": ds.splits[s.id]}
        rec["label"] = float(s.label) if ds.task.kind == "regression" else list(s.label)
        for m in MODALITIES:
            rec[m.key] = s.sequences[m].tolist()
        if s.meta:
            rec["meta"] = s.meta
        out["samples"].append(rec)
    return out


def _matrix(sample_id: str, m: Modality, rows) -> np.ndarray:
    if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
        raise DataError(f"sample {sample_id!r}: {m.key} must be a list of rows")
    if len(rows) == 0:
        raise DataError(f"sample {sample_id!r}: {m.key} sequence is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"sample {sample_id!r}: {m.key} dimension mismatch (ragged rows {sorted(widths)})")
    try:
        return np.array(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"sample {sample_id!r}: {m.key} holds non-numeric values") from exc


def dataset_from_json(obj: Mapping) -> Dataset:
    if not isinstance(obj, Mapping):
        raise DataError("dataset file must hold a JSON object")
    for key in ("task", "dims", "samples"):
        if key not in obj:
            raise DataError(f"dataset file is missing {key!r}")
    task = Task.from_json(obj["task"])
    try:
        dims = {m: int(obj["dims"][m.key]) for m in MODALITIES}
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError("dims must give integer audio, video and text sizes") from exc
    samples, splits = [], {}
    for rec in obj["samples"]:
        sid = rec.get("id")
        if not isinstance(sid, str):
            raise DataError("every sample needs a string id")
        seqs = {}
        for m in MODALITIES:
            if m.key not in rec:
                raise DataError(f"sample {sid!r}: missing {m.key}")
            seqs[m] = _matrix(sid, m, rec[m.key])
            _check_sequence(sid, m, seqs[m], dims[m])
        raw = rec.get("label")
        label = tuple(raw) if isinstance(raw, list) else raw
        if task.kind == "regression" and isinstance(label, int) and not isinstance(label, bool):
            label = float(label)
        samples.append(MultimodalSample(sid, seqs, label, dict(rec.get("meta") or {})))
        splits[sid] = rec.get("split")
    return Dataset(samples, dims, splits, task, dict(obj.get("meta") or {}))


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc})") from exc
    return dataset_from_json(obj)


def save_dataset(ds: Dataset, path) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    Path(path).write_text(json.dumps(dataset_to_json(ds), allow_nan=False), encoding="utf-8")


# -- synthetic task ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the trigger-ordering task.

    Each sample has Gaussian background rows in every modality.  The vector
    ``trigger_scale * e_0`` replaces one text row and ``trigger_scale * e_1``
    one video row.  The default scale of 4 puts the triggers above the
    typical background row norm (about ``sqrt(dim)``); at scale 1 they hide
    among the noise rows and the task is not learnable at the reference
    model size.
    The label is +2 when the text trigger sits relatively earlier in its
    sequence than the video trigger does in its own, otherwise -2.
    """

    dim: int = 8
    min_len: int = 8
    max_len: int = 16
    n_samples: int = 1000
    fractions: Sequence[float] = (0.6, 0.2, 0.2)
    trigger_scale: float = 4.0

    def validate(self) -> None:
        if self.dim < 2:
            raise DataError("synthetic dim must be >= 2 to hold both triggers")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise DataError("need 2 <= min_len <= max_len")
        if self.n_samples < 1:
            raise DataError("n_samples must be positive")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise DataError("fractions must be three non-negative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1")
        if not self.trigger_scale > 0:
            raise DataError("trigger_scale must be positive")


def trigger_vectors(dim: int, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Text and video trigger vectors: scaled first two basis vectors."""
    u_text = np.zeros(dim)
    u_text[0] = scale
    u_video = np.zeros(dim)
    u_video[1] = scale
    return u_text, u_video


def trigger_label(t_text: int, len_text: int, t_video: int, len_video: int) -> float:
    # cross-multiplied to keep the comparison exact
    return 2.0 if t_text * len_video < t_video * len_text else -2.0


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def gen_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    u_text, u_video = trigger_vectors(spec.dim, spec.trigger_scale)
    n_train, n_val, _ = split_sizes(spec.n_samples, spec.fractions)
    width = len(str(spec.n_samples - 1))
    samples, splits = [], {}
    for i in range(spec.n_samples):
        lengths = rng.integers(spec.min_len, spec.max_len + 1, size=3)
        seqs = {m: rng.standard_normal((int(lengths[m]), spec.dim)) for m in MODALITIES}
        t_text = int(rng.integers(lengths[Modality.TEXT]))
        t_video = int(rng.integers(lengths[Modality.VIDEO]))
        seqs[Modality.TEXT][t_text] = u_text
        seqs[Modality.VIDEO][t_video] = u_video
        label = trigger_label(t_text, int(lengths[Modality.TEXT]), t_video, int(lengths[Modality.VIDEO]))
        sid = f"syn-{i:0{width}d}"
        samples.append(MultimodalSample(sid, seqs, label, {"trigger_text": t_text, "trigger_video": t_video}))
        splits[sid] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    meta = {
        "generator": "trigger-order",
        "seed": int(seed),
        "trigger_text": u_text.tolist(),
        "trigger_video": u_video.tolist(),
    }
    return Dataset(samples, {m: spec.dim for m in MODALITIES}, splits, Task(), meta)
