"""Fixed-dimension embedding stores keyed by utterance id.

Two on-disk layouts are supported.

Text: one record per line, ``<utt_id> <v1> ... <vD>``.

Binary (little-endian throughout)::

    b"SASV"  u8 version=1  u32 dim  u64 count
    count x { u16 id_len, id_len bytes UTF-8 id, dim x float32 }

Values are held as float64 in memory; the binary writer narrows to float32.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import EmbeddingError
from .protocol import EnrolmentModel

MAGIC = b"SASV"
VERSION = 1
_HEADER = struct.Struct("<4sBIQ")
_IDLEN = struct.Struct("<H")


class EmbeddingStore:
    """Immutable map from utterance id to a ``dim``-dimensional vector."""

    def __init__(self, ids: Iterable[str], matrix, dim: int | None = None):
        ids = tuple(ids)
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim == 1 and matrix.size == 0:
            matrix = matrix.reshape(0, dim or 0)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise EmbeddingError(
                f"matrix of shape {matrix.shape} does not match {len(ids)} ids")
        if dim is None:
            dim = matrix.shape[1]
        if dim < 1 or matrix.shape[1] != dim:
            raise EmbeddingError(f"bad dimension {matrix.shape[1]} (expected {dim})")
        bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
        if bad.size:
            raise EmbeddingError(f"record {bad[0]} ({ids[bad[0]]!r}) has non-finite values")
        index = {}
        for i, u in enumerate(ids):
            if u in index:
                raise EmbeddingError(f"record {i}: duplicate utterance id {u!r}")
            index[u] = i
        matrix.flags.writeable = False
        self.dim = int(dim)
        self.ids = ids
        self.matrix = matrix
        self._index = index

    @classmethod
    def from_dict(cls, entries: Mapping[str, np.ndarray], dim: int | None = None) -> "EmbeddingStore":
        ids = list(entries)
        if not ids:
            if dim is None:
                raise EmbeddingError("cannot infer dimension of an empty store")
            return cls([], np.zeros((0, dim)), dim)
        return cls(ids, np.stack([np.asarray(entries[u], dtype=np.float64) for u in ids]), dim)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, utt: str) -> bool:
        return utt in self._index

    def __getitem__(self, utt: str) -> np.ndarray:
        try:
            return self.matrix[self._index[utt]]
        except KeyError:
            raise KeyError(utt) from None

    def get(self, utt: str, what: str = "store") -> np.ndarray:
        """Like ``store[utt]`` but raises :class:`EmbeddingError` naming the id."""
        if utt not in self._index:
            raise EmbeddingError(f"utterance {utt!r} not found in {what}")
        return self.matrix[self._index[utt]]

    def rows(self, utts: Iterable[str]) -> np.ndarray:
        return self.matrix[[self._index[u] for u in utts]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.dim == other.dim and self.ids == other.ids
                and np.array_equal(self.matrix, other.matrix))

    def __repr__(self) -> str:
        return f"EmbeddingStore(dim={self.dim}, n={len(self)})"


def mean_enrolment(store: EmbeddingStore, model: EnrolmentModel, normalize: bool = False) -> np.ndarray:
    """Element-wise mean of the model's enrolment embeddings.

    With ``normalize=True`` every embedding is scaled to unit length before
    averaging. A single-utterance model returns its embedding unchanged when
    ``normalize`` is off.
    """
    vecs = np.stack([store.get(u, "speaker store") for u in model.enrol_utts])
    if normalize:
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise EmbeddingError(f"zero-norm enrolment embedding for model {model.speaker_model!r}")
        vecs = vecs / norms
    if len(vecs) == 1:
        return vecs[0].copy()
    return vecs.mean(axis=0)


# -- text format ---------------------------------------------------------------

def load_text(path) -> EmbeddingStore:
    path = Path(path)
    ids, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            rec = len(ids)
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise EmbeddingError(f"{path}:{lineno}: record {rec} has no values")
            if len(parts) - 1 != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: record {rec} has {len(parts) - 1} values, expected {dim}")
            try:
                vals = [float(x) for x in parts[1:]]
            except ValueError as e:
                raise EmbeddingError(f"{path}:{lineno}: record {rec}: {e}") from None
            if not all(np.isfinite(vals)):
                raise EmbeddingError(f"{path}:{lineno}: record {rec} has non-finite values")
            ids.append(parts[0])
            rows.append(vals)
    if dim is None:
        raise EmbeddingError(f"{path}: empty text store, dimension is indeterminate")
    return EmbeddingStore(ids, np.array(rows, dtype=np.float64), dim)


def save_text(store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt, row in zip(store.ids, store.matrix):
            f.write(utt + " " + " ".join(repr(v) for v in row.tolist()) + "\n")


# -- binary format -------------------------------------------------------------

def load_binary(path) -> EmbeddingStore:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise EmbeddingError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EmbeddingError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise EmbeddingError(f"{path}: unsupported format version {version}")
    if dim < 1:
        raise EmbeddingError(f"{path}: header declares dimension {dim}")
    vec_bytes = 4 * dim
    pos = _HEADER.size
    ids = []
    if count * (_IDLEN.size + vec_bytes) > len(data) - pos:
        raise EmbeddingError(f"{path}: corrupt records: header declares {count} x {dim}-d, file too short")
    matrix = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        if pos + _IDLEN.size > len(data):
            raise EmbeddingError(f"{path}: corrupt record {i}: truncated id length")
        (n,) = _IDLEN.unpack_from(data, pos)
        pos += _IDLEN.size
        if pos + n + vec_bytes > len(data):
            raise EmbeddingError(f"{path}: corrupt record {i}: truncated payload")
        try:
            ids.append(data[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise EmbeddingError(f"{path}: corrupt record {i}: id is not UTF-8") from None
        pos += n
        matrix[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += vec_bytes
    if pos != len(data):
        raise EmbeddingError(f"{path}: {len(data) - pos} trailing bytes after record {count - 1}")
    return EmbeddingStore(ids, matrix, dim)


def save_binary(store: EmbeddingStore, path) -> None:
    parts = [_HEADER.pack(MAGIC, VERSION, store.dim, len(store))]
    vals = store.matrix.astype("<f4")
    for utt, row in zip(store.ids, vals):
        b = utt.encode("utf-8")
        parts.append(_IDLEN.pack(len(b)))
        parts.append(b)
        parts.append(row.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_store(path, format: str = "text") -> EmbeddingStore:
    path = Path(path)
    if not path.is_file():
        raise EmbeddingError(f"embedding file not found: {path}")
    if format == "text":
        return load_text(path)
    if format == "binary":
        return load_binary(path)
    raise ValueError(f"unknown format {format!r}")


def save_store(store: EmbeddingStore, path, format: str = "text") -> None:
    if format == "text":
        save_text(store, path)
    elif format == "binary":
        save_binary(store, path)
    else:
        raise ValueError(f"unknown format {format!r}")
