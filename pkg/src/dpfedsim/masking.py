"""Frozen/trainable coordinate partition and sparse update transport.

A PartitionMask marks the trainable subset of a flat parameter vector as the
union of whole named layers.  Client-to-server updates carry only masked
coordinates; the wire encodings are documented in the README (values travel
as little-endian float32, training stays float64 in memory).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ShapeError
from .models import Layout, ParameterVector

ENCODINGS = ("dense-f32", "sparse-idx32-f32")

MAGIC = b"FDPS"
WIRE_VERSION = 1
_ENCODING_CODES = {"dense-f32": 1, "sparse-idx32-f32": 2}
_CODE_ENCODINGS = {v: k for k, v in _ENCODING_CODES.items()}
_HEADER = struct.Struct("<4sHHII")  # magic, version, encoding, client_id, round
_BODY = struct.Struct("<IIII")  # tau, n_k, total_dim, entry_count
SPARSE_HEADER_BYTES = 16


@dataclass(frozen=True)
class PartitionMask:
    """Boolean coordinate mask selecting the trainable subset of a layout."""

    selected_layers: tuple[str, ...]
    coordinate_mask: np.ndarray
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mask = np.asarray(self.coordinate_mask, dtype=bool)
        object.__setattr__(self, "coordinate_mask", mask)
        object.__setattr__(self, "indices", np.flatnonzero(mask).astype(np.int64))

    @property
    def total_count(self) -> int:
        return int(self.coordinate_mask.size)

    @property
    def trainable_count(self) -> int:
        return int(self.indices.size)

    @property
    def trainable_fraction(self) -> float:
        return self.trainable_count / self.total_count


def make_mask(layout: Layout, selected_layers: list[str] | tuple[str, ...]) -> PartitionMask:
    """Mask covering exactly the named layers' coordinate ranges."""
    known = {name: (offset, length) for name, offset, length in layout}
    total = sum(length for _, _, length in layout)
    mask = np.zeros(total, dtype=bool)
    for name in selected_layers:
        if name not in known:
            raise ShapeError(
                f"unknown layer {name!r}; valid layers are {sorted(known)}"
            )
        offset, length = known[name]
        mask[offset : offset + length] = True
    return PartitionMask(tuple(selected_layers), mask)


@dataclass
class MaskedUpdate:
    """A client's trainable-coordinate delta for one round.

    Zero deltas inside the mask are kept, so the entry count is always the
    mask's trainable count and payload size is a pure function of the mask.
    """

    client_id: int
    round_index: int
    indices: np.ndarray
    deltas: np.ndarray
    tau: int
    n_k: int

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.indices.shape != self.deltas.shape or self.indices.ndim != 1:
            raise ShapeError("indices and deltas must be 1-D arrays of equal length")
        if self.indices.size and np.any(np.diff(self.indices) <= 0):
            raise ShapeError("update indices must be strictly increasing")
        if not np.all(np.isfinite(self.deltas)):
            raise ShapeError("update deltas must be finite")

    @property
    def entry_count(self) -> int:
        return int(self.indices.size)


def extract_masked_update(
    w_new: ParameterVector,
    w_old: ParameterVector,
    mask: PartitionMask,
    client_id: int,
    round_index: int,
    tau: int,
    n_k: int,
) -> MaskedUpdate:
    """Masked difference w_new - w_old, restricted to trainable coordinates."""
    if w_new.layout != w_old.layout:
        raise ShapeError("parameter vectors do not share a layout")
    if mask.total_count != w_old.dim:
        raise ShapeError(
            f"mask covers {mask.total_count} coordinates, parameters have {w_old.dim}"
        )
    deltas = w_new.values[mask.indices] - w_old.values[mask.indices]
    return MaskedUpdate(client_id, round_index, mask.indices.copy(), deltas, tau, n_k)


def apply_masked_update(w_old: ParameterVector, update: MaskedUpdate) -> ParameterVector:
    """Add the update onto w_old; coordinates outside it stay bit-identical."""
    if update.entry_count and int(update.indices[-1]) >= w_old.dim:
        raise ShapeError("update index out of range for the parameter vector")
    values = w_old.values.copy()
    values[update.indices] += update.deltas
    return ParameterVector(values, w_old.layout)


def payload_bytes(update: MaskedUpdate, encoding: str = "dense-f32") -> int:
    """Modeled upstream bytes for one update.

    dense-f32 sends values only (coordinate order is implied by the
    round-invariant mask); sparse-idx32-f32 sends (index, value) pairs plus a
    fixed 16-byte header.
    """
    if encoding == "dense-f32":
        return 4 * update.entry_count
    if encoding == "sparse-idx32-f32":
        return SPARSE_HEADER_BYTES + 8 * update.entry_count
    raise ShapeError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")


def serialize_update(update: MaskedUpdate, total_dim: int, encoding: str = "dense-f32") -> bytes:
    """Binary wire form: 16-byte header, 16-byte body, then the payload.

    Layout (all little-endian):
      magic "FDPS" | version u16 | encoding u16 | client_id u32 | round u32
      tau u32 | n_k u32 | total_dim u32 | entry_count u32
      dense-f32:        entry_count float32 values in index order
      sparse-idx32-f32: entry_count u32 indices, then entry_count f32 values
    """
    if encoding not in _ENCODING_CODES:
        raise ShapeError(f"unknown encoding {encoding!r}; expected one of {ENCODINGS}")
    head = _HEADER.pack(
        MAGIC, WIRE_VERSION, _ENCODING_CODES[encoding], update.client_id, update.round_index
    )
    body = _BODY.pack(update.tau, update.n_k, total_dim, update.entry_count)
    values = update.deltas.astype("<f4").tobytes()
    if encoding == "dense-f32":
        return head + body + values
    return head + body + update.indices.astype("<u4").tobytes() + values


def deserialize_update(blob: bytes, mask: PartitionMask | None = None) -> MaskedUpdate:
    """Inverse of serialize_update; dense payloads need the mask for indices."""
    if len(blob) < _HEADER.size + _BODY.size:
        raise ProtocolError("update blob shorter than the fixed header")
    magic, version, code, client_id, round_index = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    if code not in _CODE_ENCODINGS:
        raise ProtocolError(f"unknown encoding code {code}")
    tau, n_k, total_dim, count = _BODY.unpack_from(blob, _HEADER.size)
    payload = blob[_HEADER.size + _BODY.size :]
    if _CODE_ENCODINGS[code] == "dense-f32":
        if mask is None:
            raise ProtocolError("dense-f32 payloads need the mask to recover indices")
        if mask.trainable_count != count or mask.total_count != total_dim:
            raise ProtocolError("mask does not match the serialized update")
        if len(payload) != 4 * count:
            raise ProtocolError("dense payload has the wrong size")
        values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        indices = mask.indices.copy()
    else:
        if len(payload) != 8 * count:
            raise ProtocolError("sparse payload has the wrong size")
        indices = np.frombuffer(payload[: 4 * count], dtype="<u4").astype(np.int64)
        values = np.frombuffer(payload[4 * count :], dtype="<f4").astype(np.float64)
    return MaskedUpdate(client_id, round_index, indices, values, tau, n_k)
