"""Recordings, window extraction, stratified splits, file formats and a synthetic EEG source.

File formats
------------
Recording file
    CSV, UTF-8, no header.  One row per channel, comma-separated decimal
    samples.  All rows have the same length.
Manifest
    CSV with header ``path,subject_id,label,sampling_hz``.  ``path`` is
    relative to the manifest's directory (absolute paths are honoured);
    ``label`` is 0 or 1.
Dataset cache
    ``b"EWDS"``, uint16 version (1), uint16 reserved, uint32 record count,
    uint32 window length, uint32 metadata byte length, UTF-8 JSON metadata
    (labels, subjects, channels), then record-count x window-length float32
    samples.  All integers and floats little-endian.

Synthetic generator
-------------------
All randomness comes from SplitMix64 keyed by the seed: the i-th draw
(i = 0, 1, ...) is ``mix(seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``
and a uniform is the top 53 bits times 2**-53.  Draws are consumed in this
order, subjects first to last (class 0 subjects, then class 1), channels in
order within a subject:

* per subject: gain ``0.9 + 0.2u``, alpha centre ``9.5 + 2u`` Hz,
  theta centre ``5 + 1.5u`` Hz;
* per channel: gain ``0.9 + 0.2u``; then for alpha, then theta, three
  components k = 0, 1, 2 each drawing a frequency jitter, a phase and a
  weight: frequency ``centre + 0.6 (k - 1) + 0.2 (u - 0.5)`` Hz, phase
  ``2 pi u``, weight ``0.5 + 0.5u``; weights are scaled to unit sum of
  squares so every band carries the same power;
* per channel: T noise draws ``2u - 1`` filtered by
  ``y[n] = w[n] + 0.95 y[n-1]`` and scaled by ``0.5 sqrt(1 - 0.95**2)``.

The channel signal is ``subject_gain * channel_gain * (A_alpha * alpha +
A_theta * theta) + noise`` rounded to float32, where ``A_alpha = 1`` and
``A_theta = 0.8`` for class 0, and class 1 multiplies ``A_alpha`` by
``1 + separation`` and divides ``A_theta`` by it.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import (
    DataError,
    LabelError,
    MalformedRowError,
    MissingFileError,
    NonFiniteSampleError,
    ParseError,
)

MANIFEST_HEADER = ["path", "subject_id", "label", "sampling_hz"]
CACHE_MAGIC = b"EWDS"
CACHE_VERSION = 1


@dataclass
class Recording:
    subject_id: str
    label: int
    samples: np.ndarray  # [channels, T] float32
    sampling_hz: float = 250.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise DataError(f"subject {self.subject_id}: samples must be [channels, T], got {self.samples.shape}")
        if self.label not in (0, 1):
            raise DataError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"subject {self.subject_id}: non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass
class WindowDataset:
    """One fixed-length window per (subject, channel), labelled by subject."""

    windows: np.ndarray  # [n, L] float32
    labels: np.ndarray  # [n] int64
    subjects: list[str]
    channels: np.ndarray  # [n] int64
    window_length: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def records(self) -> list[tuple[np.ndarray, int, str, int]]:
        return [
            (self.windows[i], int(self.labels[i]), self.subjects[i], int(self.channels[i]))
            for i in range(len(self))
        ]

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowDataset(
            self.windows[idx], self.labels[idx], [self.subjects[i] for i in idx], self.channels[idx], self.window_length
        )


@dataclass
class Split:
    train: np.ndarray
    test: np.ndarray
    val: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


# ----------------------------------------------------------------------------
# windows and splits


def extract_windows(recordings: Sequence[Recording], window_length: int = 2000, offset: int = 0) -> WindowDataset:
    """Cut ``samples[ch, offset:offset+L]`` from every channel of every recording."""
    if window_length < 1 or offset < 0:
        raise DataError(f"window length must be positive and offset nonnegative, got {window_length}, {offset}")
    windows, labels, subjects, channels = [], [], [], []
    for rec in recordings:
        if offset + window_length > rec.n_samples:
            raise DataError(
                f"subject {rec.subject_id}: window [{offset}, {offset + window_length}) exceeds "
                f"recording length {rec.n_samples}"
            )
        windows.append(rec.samples[:, offset : offset + window_length])
        labels.extend([rec.label] * rec.n_channels)
        subjects.extend([rec.subject_id] * rec.n_channels)
        channels.extend(range(rec.n_channels))
    if windows:
        stacked = np.concatenate(windows, axis=0).astype(np.float32)
    else:
        stacked = np.zeros((0, window_length), dtype=np.float32)
    return WindowDataset(
        stacked, np.asarray(labels, dtype=np.int64), subjects, np.asarray(channels, dtype=np.int64), window_length
    )


def _class_quotas(counts: list[int], n_held: int) -> list[int]:
    # largest-remainder apportionment of n_held across classes
    total = sum(counts)
    exact = [c * n_held / total for c in counts]
    quotas = [math.floor(e) for e in exact]
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - quotas[i]), i))
    for i in order[: n_held - sum(quotas)]:
        quotas[i] += 1
    return quotas


def stratified_indices(labels, fraction: float, seed: int, pool=None) -> tuple[np.ndarray, np.ndarray]:
    """Split ``pool`` (default: all positions) into (kept, held-out) by class.

    The held-out size is ``round(fraction * len(pool))`` and is apportioned to
    classes by largest remainder, so every class gets the floor or ceiling of
    its proportional share.
    """
    labels = np.asarray(labels)
    pool = np.arange(len(labels)) if pool is None else np.asarray(pool, dtype=np.int64)
    n = len(pool)
    n_held = int(math.floor(fraction * n + 0.5))
    classes = sorted(set(labels[pool].tolist()))
    members = [pool[labels[pool] == c] for c in classes]
    quotas = _class_quotas([len(m) for m in members], n_held) if n else []
    rng = np.random.default_rng(seed)
    held = []
    for m, q in zip(members, quotas):
        held.append(rng.permutation(m)[:q])
    held_idx = np.sort(np.concatenate(held)) if held else np.zeros(0, dtype=np.int64)
    kept_idx = np.setdiff1d(pool, held_idx)
    return kept_idx.astype(np.int64), held_idx.astype(np.int64)


def stratified_split(
    ds: WindowDataset, test_fraction: float = 0.30, seed: int = 0, by_subject: bool = False
) -> Split:
    """Stratified train/test split at window level (default) or subject level."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must lie in (0, 1), got {test_fraction}")
    if len(set(ds.labels.tolist())) < 2:
        raise DataError("stratified split needs both classes present")
    if not by_subject:
        train, test = stratified_indices(ds.labels, test_fraction, seed)
        return Split(train, test)
    subj_ids = sorted(set(ds.subjects))
    subj_label = {}
    for s, y in zip(ds.subjects, ds.labels.tolist()):
        if subj_label.setdefault(s, y) != y:
            raise DataError(f"subject {s} has windows with both labels")
    keep_s, held_s = stratified_indices([subj_label[s] for s in subj_ids], test_fraction, seed)
    held_names = {subj_ids[i] for i in held_s}
    is_test = np.array([s in held_names for s in ds.subjects], dtype=bool)
    return Split(np.flatnonzero(~is_test), np.flatnonzero(is_test))


def carve_validation(split: Split, labels, fraction: float, seed: int) -> Split:
    """Move a stratified ``fraction`` of the training indices into validation."""
    if fraction <= 0:
        return Split(split.train, split.test)
    train, val = stratified_indices(labels, fraction, seed, pool=split.train)
    return Split(train, split.test, val)


# ----------------------------------------------------------------------------
# synthetic recordings

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """Counter-based SplitMix64 stream producing float64 uniforms in [0, 1)."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed % 2**64)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = self.seed + i * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _band(stream: SplitMix64, centre: float, t: np.ndarray) -> np.ndarray:
    u = stream.uniform(9).reshape(3, 3)
    freqs = centre + 0.6 * np.arange(-1, 2) + 0.2 * (u[:, 0] - 0.5)
    phases = 2 * np.pi * u[:, 1]
    weights = 0.5 + 0.5 * u[:, 2]
    weights = weights / np.sqrt(np.sum(weights * weights))
    out = np.zeros_like(t)
    for f, ph, w in zip(freqs, phases, weights):
        out += w * np.sin(2 * np.pi * f * t + ph)
    return out


def synth_generate(
    n_subjects_per_class: int,
    n_channels: int,
    n_samples: int,
    seed: int = 0,
    separation: float = 1.0,
    sampling_hz: float = 250.0,
) -> list[Recording]:
    """Deterministic two-class EEG-like recordings (algorithm in the module docstring)."""
    if min(n_subjects_per_class, n_channels, n_samples) < 1:
        raise DataError("subjects per class, channels and samples must all be positive")
    if separation < 0:
        raise DataError(f"separation must be nonnegative, got {separation}")
    stream = SplitMix64(seed)
    t = np.arange(n_samples, dtype=np.float64) / sampling_hz
    noise_scale = 0.5 * math.sqrt(1 - 0.95**2)
    recordings = []
    for s in range(2 * n_subjects_per_class):
        label = 0 if s < n_subjects_per_class else 1
        amp_alpha, amp_theta = 1.0, 0.8
        if label == 1:
            amp_alpha *= 1 + separation
            amp_theta /= 1 + separation
        u = stream.uniform(3)
        subj_gain = 0.9 + 0.2 * u[0]
        alpha_c = 9.5 + 2.0 * u[1]
        theta_c = 5.0 + 1.5 * u[2]
        rows = np.empty((n_channels, n_samples), dtype=np.float32)
        for c in range(n_channels):
            ch_gain = 0.9 + 0.2 * stream.uniform(1)[0]
            alpha = _band(stream, alpha_c, t)
            theta = _band(stream, theta_c, t)
            white = 2 * stream.uniform(n_samples) - 1
            noise = lfilter([1.0], [1.0, -0.95], white) * noise_scale
            rows[c] = subj_gain * ch_gain * (amp_alpha * alpha + amp_theta * theta) + noise
        recordings.append(Recording(f"s{s:03d}", label, rows, sampling_hz))
    return recordings


# ----------------------------------------------------------------------------
# files


def _format_row(row: np.ndarray) -> str:
    # str() of a float32 scalar is its shortest round-tripping decimal
    return ",".join(str(v) for v in row.astype(np.float32))


def write_recordings(recordings: Sequence[Recording], out_dir, prefix: str = "rec") -> Path:
    """Write one CSV per recording plus ``manifest.csv``; return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as mf:
        writer = csv.writer(mf, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for i, rec in enumerate(recordings):
            name = f"{prefix}_{i:04d}_{rec.subject_id}.csv"
            with open(out / name, "w", encoding="utf-8", newline="") as f:
                for row in rec.samples:
                    f.write(_format_row(row) + "\n")
            writer.writerow([name, rec.subject_id, rec.label, repr(float(rec.sampling_hz))])
    return manifest


def read_recording_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError("recording file not found", path)
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = np.array([float(c) for c in row], dtype=np.float64)
            except ValueError:
                raise MalformedRowError("non-numeric sample", path, lineno) from None
            if not np.all(np.isfinite(values)):
                raise NonFiniteSampleError("non-finite sample", path, lineno)
            if rows and len(values) != len(rows[0]):
                raise MalformedRowError(f"row has {len(values)} samples, expected {len(rows[0])}", path, lineno)
            rows.append(values)
    if not rows:
        raise MalformedRowError("recording file has no channels", path)
    samples = np.vstack(rows)
    as32 = samples.astype(np.float32)
    if not np.all(np.isfinite(as32)):
        raise NonFiniteSampleError("sample overflows 32-bit float", path)
    return as32


def load_recordings(manifest_path) -> list[Recording]:
    """Parse a manifest and every recording it references."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFileError("manifest not found", manifest_path)
    base = manifest_path.parent
    recordings: list[Recording] = []
    with open(manifest_path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return recordings
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise MalformedRowError(f"manifest header must be {','.join(MANIFEST_HEADER)}", manifest_path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise MalformedRowError(f"expected 4 fields, got {len(row)}", manifest_path, lineno)
            rel, subject, label_s, hz_s = (c.strip() for c in row)
            if label_s not in ("0", "1"):
                raise LabelError(f"label must be 0 or 1, got {label_s!r}", manifest_path, lineno)
            try:
                hz = float(hz_s)
            except ValueError:
                raise MalformedRowError(f"bad sampling rate {hz_s!r}", manifest_path, lineno) from None
            if not (math.isfinite(hz) and hz > 0):
                raise MalformedRowError(f"sampling rate must be positive, got {hz_s!r}", manifest_path, lineno)
            path = Path(rel)
            if not path.is_absolute():
                path = base / path
            samples = read_recording_csv(path)
            if recordings and samples.shape[0] != recordings[0].n_channels:
                raise MalformedRowError(
                    f"{path} has {samples.shape[0]} channels, expected {recordings[0].n_channels}",
                    manifest_path,
                    lineno,
                )
            recordings.append(Recording(subject, int(label_s), samples, hz))
    return recordings


def save_cache(ds: WindowDataset, path) -> None:
    meta = json.dumps(
        {"labels": ds.labels.tolist(), "subjects": list(ds.subjects), "channels": ds.channels.tolist()},
        separators=(",", ":"),
    ).encode("utf-8")
    n, length = len(ds), ds.window_length
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<HHIII", CACHE_VERSION, 0, n, length, len(meta)))
        f.write(meta)
        f.write(np.ascontiguousarray(ds.windows, dtype="<f4").tobytes())


def load_cache(path) -> WindowDataset:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError("cache file not found", path)
    raw = path.read_bytes()
    head = 4 + struct.calcsize("<HHIII")
    if len(raw) < head or raw[:4] != CACHE_MAGIC:
        raise ParseError("not a window cache file", path)
    version, _, n, length, meta_len = struct.unpack("<HHIII", raw[4:head])
    if version != CACHE_VERSION:
        raise ParseError(f"unsupported cache version {version}", path)
    body = raw[head + meta_len :]
    if len(body) != 4 * n * length:
        raise ParseError(f"expected {4 * n * length} sample bytes, found {len(body)}", path)
    try:
        meta = json.loads(raw[head : head + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad metadata: {exc}", path) from None
    windows = np.frombuffer(body, dtype="<f4").reshape(n, length).astype(np.float32)
    return WindowDataset(
        windows,
        np.asarray(meta["labels"], dtype=np.int64),
        list(meta["subjects"]),
        np.asarray(meta["channels"], dtype=np.int64),
        length,
    )
