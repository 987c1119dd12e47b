"""Binary and CSV serialization for recordings, labels, and window sets.

Recording files (".engs") hold one multi-channel signal:

    offset  size  field
    0       4     magic b"ENGS"
    4       2     format version (u16, currently 1)
    6       2     channel count K (u16)
    8       4     sampling rate in Hz (u32)
    12      8     samples per channel (u64)
    20      1     unit code (u8, 0 = volts)
    21      ...   payload: K * n_samples float32, channel-major

All integers are little-endian. The payload is float32 regardless of the
in-memory dtype; writing casts, reading returns float64 for headroom.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ENGS"
FORMAT_VERSION = 1
UNIT_VOLTS = 0

_HEADER = struct.Struct("<4sHHIQB")


class FormatError(ValueError):
    """Raised when a file does not parse as the advertised format."""


def write_recording(path: str | Path, data: np.ndarray, fs_hz: float) -> None:
    """Write a (K, n_samples) array in volts to an .engs file."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"expected a (channels, samples) array, got shape {data.shape}")
    k, n = data.shape
    fs = int(round(fs_hz))
    if fs <= 0 or abs(fs - fs_hz) > 1e-9:
        raise ValueError(f"sampling rate must be a positive integer Hz, got {fs_hz}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, k, fs, n, UNIT_VOLTS)
    payload = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_recording(path: str | Path) -> tuple[np.ndarray, float]:
    """Read an .engs file. Returns (data (K, n) float64 volts, fs_hz)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, k, fs, n, unit = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if unit != UNIT_VOLTS:
        raise FormatError(f"{path}: unknown unit code {unit}")
    expected = _HEADER.size + 4 * k * n
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(k, n)
    return data.astype(np.float64), float(fs)


def export_csv(path: str | Path, data: np.ndarray, fs_hz: float) -> None:
    """Dump a recording as CSV: time_s, ch00, ch01, ..."""
    data = np.asarray(data)
    k, n = data.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s"] + [f"ch{c:02d}" for c in range(k)])
        t = np.arange(n) / fs_hz
        for i in range(n):
            writer.writerow([f"{t[i]:.9f}"] + [f"{v:.9e}" for v in data[:, i]])


def write_window_labels(path: str | Path, labels: np.ndarray) -> None:
    """Write the per-window label sidecar: window_index,label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "label"])
        for i, lab in enumerate(np.asarray(labels)):
            writer.writerow([i, int(lab)])


def read_window_labels(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["window_index", "label"]:
            raise FormatError(f"{path}: unexpected label header {header}")
        rows = [(int(idx), int(lab)) for idx, lab in reader]
    if rows != sorted(rows):
        rows.sort()
    labels = np.array([lab for _, lab in rows], dtype=np.int64)
    indices = np.array([idx for idx, _ in rows])
    if not np.array_equal(indices, np.arange(len(rows))):
        raise FormatError(f"{path}: window indices are not 0..{len(rows) - 1}")
    return labels
