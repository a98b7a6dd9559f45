"""
VRC1 checkpoints, little-endian throughout:

    b"VRC1" | u8 kind | u32 K | u32 K_mf | u32 D | u32 F | u32 n_widths | n_widths x u32
    | u8 has_bias | 32-byte index digest | u32 n_tensors | n_tensors x [u32 rows, u32 cols, f64...]

Tensors follow `ModelParams.named_tensors()` order; vectors are stored as 1 x n.
"""

import struct
from logging import getLogger
from pathlib import Path

import numpy as np

from visualrec.exceptions import CheckpointError, ModelKindMismatchError, VisRecException
from visualrec.models.base import ModelDims, ModelKind, ModelParams
from visualrec.models.factory import empty_params
from visualrec.numeric.core import FloatArray


logger = getLogger(__name__)

MAGIC = b"VRC1"
DIGEST_SIZE = 32
NO_DIGEST = bytes(DIGEST_SIZE)

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<IIIII")


def encode_checkpoint(params: ModelParams, index_digest: bytes = NO_DIGEST) -> bytes:
    if len(index_digest) != DIGEST_SIZE:
        raise CheckpointError(f"index digest must be {DIGEST_SIZE} bytes, got {len(index_digest)}")
    dims = params.dims
    widths = dims.tower_widths
    chunks = [
        MAGIC,
        _U8.pack(int(params.kind)),
        _DIMS.pack(dims.latent_dim, dims.mf_latent_dim, dims.visual_dim, dims.dim_f, len(widths)),
        *(_U32.pack(w) for w in widths),
        _U8.pack(1 if dims.use_bias else 0),
        index_digest,
    ]
    tensors = params.named_tensors()
    chunks.append(_U32.pack(len(tensors)))
    for _, t in tensors:
        rows, cols = t.shape if t.ndim == 2 else (1, t.size)
        chunks.append(_U32.pack(rows))
        chunks.append(_U32.pack(cols))
        chunks.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(
    params: ModelParams, path: Path | str, index_digest: bytes = NO_DIGEST
) -> None:
    """Write the checkpoint to a sibling temporary file first, then move it into place."""
    path = Path(path)
    data = encode_checkpoint(params, index_digest)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    logger.info("Saved %s checkpoint to %s", params.kind.label, path)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint while reading {what} at byte {self.offset}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self, what: str) -> int:
        return int(_U8.unpack(self.take(_U8.size, what))[0])

    def u32(self, what: str) -> int:
        return int(_U32.unpack(self.take(_U32.size, what))[0])


def decode_checkpoint(
    data: bytes, expected_kind: ModelKind | None = None
) -> tuple[ModelParams, bytes]:
    reader = _Reader(data)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, not a VRC1 checkpoint")

    tag = reader.u8("model kind")
    try:
        kind = ModelKind(tag)
    except ValueError as e:
        raise CheckpointError(f"unknown model kind tag {tag}") from e
    if expected_kind is not None and kind is not expected_kind:
        raise ModelKindMismatchError(
            f"checkpoint holds a {kind.label} model, expected {expected_kind.label}"
        )

    latent_dim, mf_latent_dim, visual_dim, dim_f, n_widths = _DIMS.unpack(
        reader.take(_DIMS.size, "config block")
    )
    widths = tuple(reader.u32("tower widths") for _ in range(n_widths))
    use_bias = reader.u8("bias flag") == 1
    digest = reader.take(DIGEST_SIZE, "index digest")

    n_tensors = reader.u32("tensor count")
    tensors: list[FloatArray] = []
    for n in range(n_tensors):
        rows = reader.u32(f"tensor {n} rows")
        cols = reader.u32(f"tensor {n} cols")
        raw = reader.take(rows * cols * 8, f"tensor {n} values")
        tensors.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols))
    if reader.offset != len(data):
        raise CheckpointError(f"{len(data) - reader.offset} trailing bytes after the last tensor")
    if len(tensors) < 2:
        raise CheckpointError(f"checkpoint holds {len(tensors)} tensors, need embedding tables")

    dims = ModelDims(
        latent_dim=latent_dim,
        mf_latent_dim=mf_latent_dim,
        visual_dim=visual_dim,
        dim_f=dim_f,
        tower_widths=widths,
        use_bias=use_bias,
    )
    # the first two tensors are always the user and item embedding tables
    n_users, n_items = tensors[0].shape[0], tensors[1].shape[0]
    try:
        params = empty_params(kind, n_users, n_items, dims)
    except VisRecException as e:
        raise CheckpointError(f"inconsistent checkpoint config block: {e}") from e

    slots = params.named_tensors()
    if len(slots) != len(tensors):
        raise CheckpointError(f"{kind.label} needs {len(slots)} tensors, found {len(tensors)}")
    for (name, slot), stored in zip(slots, tensors, strict=True):
        if stored.size != slot.size or stored.shape[0] != (slot.shape[0] if slot.ndim == 2 else 1):
            raise CheckpointError(f"tensor {name} stored as {stored.shape}, expected {slot.shape}")
        slot[...] = stored.reshape(slot.shape)
    if not np.all(np.isfinite(params.flatten())):
        raise CheckpointError("checkpoint holds non-finite parameters")
    return params, digest


def read_checkpoint(
    path: Path | str, expected_kind: ModelKind | None = None
) -> tuple[ModelParams, bytes]:
    """Parameters and the index digest recorded at save time."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path} ({e})") from e
    params, digest = decode_checkpoint(data, expected_kind)
    logger.debug("Loaded %s checkpoint from %s", params.kind.label, path)
    return params, digest


def load_checkpoint(path: Path | str, expected_kind: ModelKind | None = None) -> ModelParams:
    return read_checkpoint(path, expected_kind)[0]
