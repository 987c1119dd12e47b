"""Sequential model container and checkpoint serialization.

Checkpoints are single files: a magic tag, a format version, a JSON manifest
describing every array (name, dtype, shape, byte offset), then the raw
little-endian array bytes in manifest order. Writing the same model state
twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from typing import Sequence

import numpy as np

from .layers import Layer

CHECKPOINT_MAGIC = b"ENGC"
CHECKPOINT_VERSION = 1
_HEAD = struct.Struct("<4sHQ")


class ModelGraph:
    """A named chain of layers with shared build/forward/backward plumbing."""

    def __init__(self, layers: Sequence[Layer], name: str = "model"):
        if not layers:
            raise ValueError("model needs at least one layer")
        self.layers = list(layers)
        self.name = name
        self.built = False
        self.input_shape: tuple | None = None
        self.output_shape: tuple | None = None
        self.dtype = None

    def build(
        self,
        input_shape: tuple,
        dtype=np.float32,
        seed: int | np.random.SeedSequence = 0,
    ) -> "ModelGraph":
        if self.built:
            raise RuntimeError("model is already built")
        if isinstance(seed, np.random.SeedSequence):
            ss = seed
        else:
            ss = np.random.SeedSequence(seed)
        children = ss.spawn(len(self.layers))
        shape = tuple(input_shape)
        for layer, child in zip(self.layers, children):
            shape = layer.build(shape, dtype, np.random.default_rng(child))
        self.input_shape = tuple(input_shape)
        self.output_shape = shape
        self.dtype = np.dtype(dtype)
        self.built = True
        return self

    def _require_built(self):
        if not self.built:
            raise RuntimeError("model must be built first")

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._require_built()
        expect = self.input_shape
        if expect[0] == "maps":
            got = (x.shape[0],) + x.shape[2:]
            want = (expect[1], expect[2], expect[3])
            if got != want:
                raise ValueError(
                    f"input maps {got} do not match built shape {want}"
                )
        h = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            h = layer.forward(h, training)
        return h

    def backward(self, dy: np.ndarray, start: int | None = None):
        """Backpropagate dy through the stack, beginning at layer ``start``.

        ``start`` defaults to the top layer. A caller that already folded
        the last layer into its loss gradient (a softmax paired with
        cross-entropy) passes the index below it instead.
        """
        self._require_built()
        if start is None:
            start = len(self.layers) - 1
        dh = dy
        for i in range(start, -1, -1):
            dh = self.layers[i].backward(dh, need_dx=i > 0)
        return dh

    def parameters(self):
        self._require_built()
        ps = []
        for layer in self.layers:
            ps += layer.parameters()
        return ps

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All arrays a checkpoint must carry, with stable names."""
        self._require_built()
        out = []
        for i, layer in enumerate(self.layers):
            prefix = f"layer{i:02d}"
            for p in layer.parameters():
                out.append((f"{prefix}.{p.name}", p.value))
            for bname, buf in layer.buffers().items():
                out.append((f"{prefix}.buf.{bname}", buf))
        return out

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays()}

    def set_state(self, state: dict[str, np.ndarray]):
        current = self.state_arrays()
        names = {name for name, _ in current}
        missing = names - set(state)
        extra = set(state) - names
        if missing or extra:
            raise ValueError(
                f"state mismatch: missing {sorted(missing)}, "
                f"unknown {sorted(extra)}"
            )
        for name, arr in current:
            src = state[name]
            if src.shape != arr.shape:
                raise ValueError(
                    f"{name}: shape {src.shape} does not match {arr.shape}"
                )
            arr[...] = src

    def predict_proba(
        self, windows: np.ndarray, batch_size: int = 64
    ) -> np.ndarray:
        """Class probabilities for windows shaped (n, contacts, samples)."""
        self._require_built()
        if self.input_shape[0] != "maps":
            raise ValueError("predict_proba expects a maps-input model")
        n = windows.shape[0]
        out = None
        for start in range(0, n, batch_size):
            chunk = windows[start:start + batch_size]
            x = np.asarray(chunk, dtype=self.dtype)[None, :, :, :]
            probs = self.forward(x, training=False)
            if out is None:
                out = np.empty((n, probs.shape[1]), dtype=probs.dtype)
            out[start:start + chunk.shape[0]] = probs
        return out

    def predict(self, windows: np.ndarray, batch_size: int = 64) -> np.ndarray:
        return self.predict_proba(windows, batch_size).argmax(axis=1)

    def summary(self) -> str:
        self._require_built()
        lines = [f"{self.name}: input {self.input_shape}"]
        for i, layer in enumerate(self.layers):
            lines.append(
                f"  {i:2d} {layer.name:<18} out {str(layer.out_shape):<28} "
                f"params {layer.param_count()}"
            )
        lines.append(f"total parameters: {self.param_count()}")
        return "\n".join(lines)


def save_checkpoint(model: ModelGraph, path, meta: dict | None = None):
    """Write model state and JSON-serializable metadata to one file."""
    arrays = model.state_arrays()
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays:
        blob = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"))
        raw = blob.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str.replace(">", "<"),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "model_name": model.name,
        "input_shape": list(model.input_shape),
        "dtype": model.dtype.str,
        "arrays": entries,
        "meta": meta or {},
    }
    header = json.dumps(
        manifest, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint. Returns (manifest, arrays by name)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) != _HEAD.size:
            raise ValueError("checkpoint file truncated")
        magic, version, header_len = _HEAD.unpack(head)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in manifest["arrays"]:
        start = entry["offset"]
        raw = payload[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValueError(f"array {entry['name']} truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return manifest, arrays


def restore_checkpoint(model: ModelGraph, path) -> dict:
    """Load checkpoint arrays into an already-built model; returns meta."""
    manifest, arrays = load_checkpoint(path)
    model.set_state(arrays)
    return manifest["meta"]
