"""Two-view sequence datasets: synthetic generation with view-specific
informative frames, fixed-length normalization, and a binary file format
with a JSON manifest beside it."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CAMDATA\n"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """File-level failure; ``code`` is one of corrupt-header,
    shape-mismatch, unknown-version."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


class SynthSpecError(ValueError):
    """Invalid synthetic-generation parameters; names the offending field."""


@dataclass
class ViewSample:
    id: str
    label: int
    x_r: np.ndarray  # (T, d_r)
    x_d: np.ndarray  # (T, d_d)


@dataclass
class Dataset:
    n_classes: int
    seq_len: int
    d_r: int
    d_d: int
    train: list
    test: list
    meta: dict = field(default_factory=dict)

    def split(self, name):
        if name == "train":
            return self.train
        if name == "test":
            return self.test
        raise ValueError(f"unknown split {name!r}")

    @property
    def all_samples(self):
        return self.train + self.test

    def validate(self):
        labels = set()
        for split_name, samples in (("train", self.train), ("test", self.test)):
            for s in samples:
                if s.x_r.shape != (self.seq_len, self.d_r):
                    raise DatasetFormatError(
                        "shape-mismatch",
                        f"sample {s.id}: rgb shape {s.x_r.shape} != "
                        f"({self.seq_len}, {self.d_r})")
                if s.x_d.shape != (self.seq_len, self.d_d):
                    raise DatasetFormatError(
                        "shape-mismatch",
                        f"sample {s.id}: depth shape {s.x_d.shape} != "
                        f"({self.seq_len}, {self.d_d})")
                if not (0 <= s.label < self.n_classes):
                    raise DatasetFormatError(
                        "corrupt-header", f"sample {s.id}: label {s.label} out of range")
                if not (np.all(np.isfinite(s.x_r)) and np.all(np.isfinite(s.x_d))):
                    raise DatasetFormatError(
                        "corrupt-header", f"sample {s.id}: non-finite feature values")
                if split_name == "train":
                    labels.add(s.label)
        if self.train and labels != set(range(self.n_classes)):
            missing = sorted(set(range(self.n_classes)) - labels)
            raise DatasetFormatError(
                "corrupt-header", f"train split missing classes {missing}")
        return self


@dataclass
class SynthSpec:
    """Recipe for a two-view set with view-specific informative frames.

    Each (class, view) pair gets a fixed random unit pattern planted at
    view-specific frame positions; the two views' positions overlap by
    ``overlap`` (0 = disjoint, 1 = identical). All other entries are
    Gaussian noise.
    """
    n_classes: int = 5
    seq_len: int = 20
    d_r: int = 16
    d_d: int = 16
    samples_per_class: int = 100
    noise_std: float = 0.5
    signal_frames: int = 4
    overlap: float = 0.0
    seed: int = 0
    train_fraction: float = 0.8

    def validate(self):
        if self.n_classes < 2:
            raise SynthSpecError("n_classes: need at least 2 classes")
        if self.seq_len < 1:
            raise SynthSpecError("seq_len: must be positive")
        if self.d_r < 1 or self.d_d < 1:
            raise SynthSpecError("d_r/d_d: feature dims must be positive")
        if self.samples_per_class < 1:
            raise SynthSpecError("samples_per_class: must be positive")
        if self.noise_std < 0:
            raise SynthSpecError("noise_std: must be non-negative")
        if not 0 <= self.overlap <= 1:
            raise SynthSpecError("overlap: must lie in [0, 1]")
        if not (0 < self.train_fraction <= 1):
            raise SynthSpecError("train_fraction: must lie in (0, 1]")
        if self.signal_frames < 1 or self.signal_frames > self.seq_len:
            raise SynthSpecError(
                f"signal_frames: {self.signal_frames} not in [1, {self.seq_len}]")
        shared = round(self.overlap * self.signal_frames)
        if 2 * self.signal_frames - shared > self.seq_len:
            raise SynthSpecError(
                "signal_frames: the two views' frame sets do not fit in seq_len")
        return self

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def normalize_length(X, target_len):
    """Fix a sequence's length: keep the first ``target_len`` frames, or tile
    the whole sequence end-to-end and truncate when it is too short."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("normalize_length: need a non-empty (T, d) matrix")
    if target_len < 1:
        raise ValueError("normalize_length: target length must be positive")
    t = X.shape[0]
    if t >= target_len:
        return X[:target_len].copy()
    reps = -(-target_len // t)  # ceil
    return np.tile(X, (reps, 1))[:target_len].copy()


def _unit_vector(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _frame_layout(rng, spec):
    """Per-class informative frame positions for both views."""
    k = spec.signal_frames
    shared_n = round(spec.overlap * k)
    layout = {}
    for c in range(spec.n_classes):
        perm = rng.permutation(spec.seq_len)
        shared = perm[:shared_n]
        rgb_only = perm[shared_n:k]
        depth_only = perm[k:2 * k - shared_n]
        layout[c] = {
            "rgb": sorted(int(i) for i in np.concatenate([shared, rgb_only])),
            "depth": sorted(int(i) for i in np.concatenate([shared, depth_only])),
        }
    return layout


def generate_synthetic(spec):
    """Deterministic synthetic dataset; the manifest-bound metadata records
    the informative frames per (class, view) and the train-split z-scoring
    stats applied to both splits."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    layout = _frame_layout(rng, spec)
    patterns = {c: {"rgb": _unit_vector(rng, spec.d_r),
                    "depth": _unit_vector(rng, spec.d_d)}
                for c in range(spec.n_classes)}

    n_train = max(1, round(spec.train_fraction * spec.samples_per_class))
    train, test = [], []
    for c in range(spec.n_classes):
        for j in range(spec.samples_per_class):
            x_r = rng.normal(0.0, spec.noise_std, size=(spec.seq_len, spec.d_r))
            x_d = rng.normal(0.0, spec.noise_std, size=(spec.seq_len, spec.d_d))
            x_r[layout[c]["rgb"]] += patterns[c]["rgb"]
            x_d[layout[c]["depth"]] += patterns[c]["depth"]
            sample = ViewSample(f"c{c}-s{j:04d}", c, x_r, x_d)
            (train if j < n_train else test).append(sample)

    stats = _fit_standardizer(train)
    for s in train + test:
        _apply_standardizer(s, stats)

    meta = {
        "synthetic_spec": spec.as_dict(),
        "informative_frames": {str(c): layout[c] for c in layout},
        "standardization": {k: v.tolist() for k, v in stats.items()},
        "class_names": [f"class_{c}" for c in range(spec.n_classes)],
    }
    return Dataset(spec.n_classes, spec.seq_len, spec.d_r, spec.d_d,
                   train, test, meta).validate()


def _fit_standardizer(train):
    stacked_r = np.concatenate([s.x_r for s in train], axis=0)
    stacked_d = np.concatenate([s.x_d for s in train], axis=0)
    stats = {}
    for key, stacked in (("rgb", stacked_r), ("depth", stacked_d)):
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        stats[f"{key}_mean"] = mean
        stats[f"{key}_std"] = std
    return stats


def _apply_standardizer(sample, stats):
    sample.x_r = (sample.x_r - stats["rgb_mean"]) / stats["rgb_std"]
    sample.x_d = (sample.x_d - stats["depth_mean"]) / stats["depth_std"]


def manifest_path(path):
    return Path(path).with_suffix(Path(path).suffix + ".manifest.json")


def save_dataset(dataset, path):
    """Write the binary container plus a human-readable JSON manifest."""
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "endianness": "LE",
        "n_classes": dataset.n_classes,
        "seq_len": dataset.seq_len,
        "d_r": dataset.d_r,
        "d_d": dataset.d_d,
        "n_train": len(dataset.train),
        "n_test": len(dataset.test),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for split_tag, samples in ((0, dataset.train), (1, dataset.test)):
            for s in samples:
                sid = s.id.encode("utf-8")
                fh.write(struct.pack("<I", len(sid)))
                fh.write(sid)
                fh.write(struct.pack("<BIIII", split_tag, s.label,
                                     s.x_r.shape[0], s.x_r.shape[1], s.x_d.shape[1]))
                fh.write(np.ascontiguousarray(s.x_r, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(s.x_d, dtype="<f8").tobytes())
    manifest = {
        "header": header,
        **{k: v for k, v in dataset.meta.items()},
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise DatasetFormatError("corrupt-header", f"truncated file while reading {what}")
    return data


def load_dataset(path):
    """Read a dataset container; round-trips save_dataset bit-exactly."""
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise DatasetFormatError("corrupt-header", f"{path} is not a dataset file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise DatasetFormatError(
                "unknown-version", f"format version {version}, expected {FORMAT_VERSION}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError("corrupt-header", f"bad header JSON: {exc}") from exc
        for key in ("n_classes", "seq_len", "d_r", "d_d", "n_train", "n_test"):
            if key not in header:
                raise DatasetFormatError("corrupt-header", f"header missing {key}")
        seq_len, d_r, d_d = header["seq_len"], header["d_r"], header["d_d"]
        train, test = [], []
        for _ in range(header["n_train"] + header["n_test"]):
            (id_len,) = struct.unpack("<I", _read_exact(fh, 4, "record id length"))
            sid = _read_exact(fh, id_len, "record id").decode("utf-8")
            split_tag, label, rec_t, rec_dr, rec_dd = struct.unpack(
                "<BIIII", _read_exact(fh, 17, f"record {sid}"))
            if (rec_t, rec_dr, rec_dd) != (seq_len, d_r, d_d):
                raise DatasetFormatError(
                    "shape-mismatch",
                    f"sample {sid}: dims ({rec_t}, {rec_dr}, {rec_dd}) != header "
                    f"({seq_len}, {d_r}, {d_d})")
            x_r = np.frombuffer(
                _read_exact(fh, 8 * seq_len * d_r, f"rgb payload of {sid}"),
                dtype="<f8").reshape(seq_len, d_r).copy()
            x_d = np.frombuffer(
                _read_exact(fh, 8 * seq_len * d_d, f"depth payload of {sid}"),
                dtype="<f8").reshape(seq_len, d_d).copy()
            sample = ViewSample(sid, int(label), x_r, x_d)
            (train if split_tag == 0 else test).append(sample)
        if fh.read(1):
            raise DatasetFormatError("corrupt-header", "trailing bytes after last record")
    meta = {}
    mpath = manifest_path(path)
    if mpath.exists():
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
        meta = {k: v for k, v in manifest.items() if k != "header"}
    return Dataset(header["n_classes"], seq_len, d_r, d_d, train, test, meta).validate()
