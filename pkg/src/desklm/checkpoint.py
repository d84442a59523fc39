"""Single-file binary checkpoints with an integrity checksum.

Layout: 8-byte magic ``XMCKPT01`` · 8-byte little-endian header length ·
UTF-8 JSON header · raw little-endian tensor bytes · 8-byte little-endian
FNV-1a checksum over every preceding byte.  The header maps tensor names to
{dtype, shape, offset, length} (offsets relative to the payload start) and
carries non-tensor state under reserved keys: optimizer moments live at
``__opt__/m/<param>`` and ``__opt__/v/<param>`` in the tensor index, and
JSON-serializable extras under the header keys ``__meta__`` and
``__configs__``.  Loading verifies magic, completeness, and checksum before
returning anything.
"""

from __future__ import annotations

import json

import numpy as np

from .tokenizer.lattice import fnv1a64

MAGIC = b"XMCKPT01"
OPT_M = "__opt__/m/"
OPT_V = "__opt__/v/"
_ALLOWED_DTYPES = {"<f8", "<f4", "<i8"}


class CheckpointError(ValueError):
    """Malformed, truncated, or corrupted checkpoint file."""


def _dtype_tag(arr: np.ndarray) -> str:
    tag = np.dtype(arr.dtype).newbyteorder("<").str
    if tag not in _ALLOWED_DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return tag


def save_checkpoint(path, tensors: dict, meta: dict | None = None,
                    configs: dict | None = None) -> None:
    """Writes ``tensors`` (name → numpy array) plus JSON-able extras."""
    index = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = _dtype_tag(arr)
        blob = np.ascontiguousarray(arr).astype(tag, copy=False).tobytes()
        index[name] = {"dtype": tag, "shape": list(arr.shape),
                       "offset": offset, "length": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    header = {"tensors": index,
              "__meta__": meta or {},
              "__configs__": configs or {}}
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    body = MAGIC + len(header_bytes).to_bytes(8, "little") + header_bytes \
        + b"".join(blobs)
    checksum = fnv1a64(body)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(int(checksum).to_bytes(8, "little"))


def load_checkpoint(path):
    """Returns (tensors: name → numpy array, meta, configs).

    Raises CheckpointError on any structural or checksum problem; never
    returns partial state.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 16:
        raise CheckpointError("checkpoint file truncated")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    body, stored = raw[:-8], int.from_bytes(raw[-8:], "little")
    if fnv1a64(body) != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    header_len = int.from_bytes(raw[8:16], "little")
    header_end = 16 + header_len
    if header_end > len(body):
        raise CheckpointError("checkpoint header overruns file")
    try:
        header = json.loads(body[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    payload = body[header_end:]
    tensors = {}
    for name, rec in header.get("tensors", {}).items():
        tag, shape = rec["dtype"], tuple(rec["shape"])
        lo, n = rec["offset"], rec["length"]
        if tag not in _ALLOWED_DTYPES:
            raise CheckpointError(f"tensor {name}: bad dtype {tag}")
        if lo < 0 or lo + n > len(payload):
            raise CheckpointError(f"tensor {name}: slice outside payload")
        arr = np.frombuffer(payload[lo: lo + n], dtype=tag).reshape(shape)
        tensors[name] = arr.copy()  # writable, detached from the file buffer
    return tensors, header.get("__meta__", {}), header.get("__configs__", {})
