"""Frozen, precomputed teacher features read from disk.

Two on-disk formats are supported. The binary ``EMB1`` layout is::

    b"EMB1" | rows:u32le | dim:u32le | rows x (len:u16le | utf-8 id) | rows*dim f32le

stored row-major. Files ending in ``.tsv`` or ``.txt`` are read as
``id<TAB>v1<TAB>v2...`` lines instead, which is handy for small fixtures.
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .exceptions import DuplicateId, MalformedFile, UnknownId, ValidationError, ZeroNormRow
from .models import Modality

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
TEXT_SUFFIXES = (".tsv", ".txt")
_HEADER = struct.Struct("<4sII")
_ID_LENGTH = struct.Struct("<H")
_MAX_ID_BYTES = 0xFFFF


@dataclass(frozen=True)
class FeatureTable:
    """Immutable matrix of teacher features keyed by item id"""

    modality: Modality
    ids: Tuple[str, ...]
    matrix: np.ndarray
    normalized: bool = False
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or len(matrix) != len(self.ids):
            raise MalformedFile(
                f"{len(self.ids)} ids do not match a matrix of shape {matrix.shape}"
            )
        index: Dict[str, int] = {}
        for row, item_id in enumerate(self.ids):
            if item_id in index:
                raise DuplicateId(f"duplicate id {item_id!r}", item_id)
            index[item_id] = row
        norms = np.linalg.norm(matrix, axis=1)
        bad = np.flatnonzero(~(norms > 0.0) | ~np.isfinite(norms))
        if bad.size:
            row = int(bad[0])
            raise ZeroNormRow(f"row {row} ({self.ids[row]!r}) has zero or non-finite norm", row)
        matrix.flags.writeable = False
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise UnknownId(f"unknown {self.modality.value} id {item_id!r}", item_id) from None

    def normalize(self) -> "FeatureTable":
        """Copy of the table with unit-norm rows"""
        norms = np.linalg.norm(self.matrix, axis=1, keepdims=True)
        return FeatureTable(self.modality, self.ids, self.matrix / norms, normalized=True)


class Emb1Codec:
    """Reader/writer for the EMB1 binary layout"""

    @staticmethod
    def encode(ids: Sequence[str], matrix: np.ndarray) -> bytes:
        matrix = np.asarray(matrix)
        rows, dim = matrix.shape
        if len(ids) != rows:
            raise ValidationError(f"{len(ids)} ids for {rows} rows")
        parts = [_HEADER.pack(MAGIC, rows, dim)]
        for item_id in ids:
            raw = str(item_id).encode("utf-8")
            if len(raw) > _MAX_ID_BYTES:
                raise ValidationError(f"id {str(item_id)[:32]!r}... is longer than {_MAX_ID_BYTES} bytes")
            parts.append(_ID_LENGTH.pack(len(raw)))
            parts.append(raw)
        parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
        return b"".join(parts)

    @staticmethod
    def decode(data: bytes, offset: int = 0, source: str = "<bytes>") -> Tuple[List[str], np.ndarray, int]:
        """Decode one EMB1 block starting at ``offset``.

        Returns:
            ids, float64 matrix, and the offset just past the block
        """
        try:
            magic, rows, dim = _HEADER.unpack_from(data, offset)
        except struct.error:
            raise MalformedFile(f"{source}: truncated header", source) from None
        if magic != MAGIC:
            raise MalformedFile(f"{source}: bad magic {magic!r}", source)
        if rows == 0 or dim == 0:
            raise MalformedFile(f"{source}: empty table ({rows}x{dim})", source)
        offset += _HEADER.size
        ids = []
        try:
            for _ in range(rows):
                (length,) = _ID_LENGTH.unpack_from(data, offset)
                offset += _ID_LENGTH.size
                raw = bytes(data[offset:offset + length])
                if len(raw) != length:
                    raise MalformedFile(f"{source}: truncated id", source)
                ids.append(raw.decode("utf-8"))
                offset += length
        except (struct.error, UnicodeDecodeError) as e:
            raise MalformedFile(f"{source}: bad id block: {e}", source) from None
        size = rows * dim * 4
        if len(data) - offset < size:
            raise MalformedFile(f"{source}: expected {rows}x{dim} values", source)
        values = np.frombuffer(data, dtype="<f4", count=rows * dim, offset=offset)
        matrix = values.astype(np.float64).reshape(rows, dim)
        return ids, matrix, offset + size


class TsvCodec:
    """Reader/writer for ``id<TAB>v1<TAB>v2...`` fixture files"""

    @staticmethod
    def encode(ids: Sequence[str], matrix: np.ndarray) -> str:
        lines = []
        for item_id, row in zip(ids, np.asarray(matrix, dtype=np.float64)):
            lines.append("\t".join([str(item_id)] + [repr(float(x)) for x in row]))
        return "\n".join(lines) + "\n"

    @staticmethod
    def decode(text: str, source: str = "<text>") -> Tuple[List[str], np.ndarray]:
        ids: List[str] = []
        rows: List[List[float]] = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) < 2:
                raise MalformedFile(f"{source}:{number}: expected id and values", source)
            try:
                rows.append([float(x) for x in fields[1:]])
            except ValueError as e:
                raise MalformedFile(f"{source}:{number}: {e}", source) from None
            if len(rows[-1]) != len(rows[0]):
                raise MalformedFile(f"{source}:{number}: inconsistent dimension", source)
            ids.append(fields[0])
        if not rows:
            raise MalformedFile(f"{source}: no rows", source)
        return ids, np.array(rows, dtype=np.float64)


def load_features(
    path: Union[str, Path], modality: Union[Modality, str], normalize: bool = True
) -> FeatureTable:
    """Load a teacher feature file and validate it.

    Args:
        path: EMB1 binary file, or TSV when the suffix is .tsv/.txt
        modality: text or visual
        normalize: L2-normalise every row after validation
    """
    path = Path(path)
    try:
        if path.suffix.lower() in TEXT_SUFFIXES:
            ids, matrix = TsvCodec.decode(path.read_text(encoding="utf-8"), str(path))
        else:
            data = path.read_bytes()
            ids, matrix, end = Emb1Codec.decode(data, source=str(path))
            if end != len(data):
                raise MalformedFile(f"{path}: {len(data) - end} trailing bytes", str(path))
    except OSError as e:
        raise MalformedFile(f"cannot read {path}: {e}", str(path)) from e
    try:
        table = FeatureTable(Modality(modality), tuple(ids), matrix)
    except (DuplicateId, ZeroNormRow) as e:
        # raised for file content: exits like MalformedFile
        e.exit_code = MalformedFile.exit_code
        raise
    logger.debug("features_loaded | path=%s | rows=%d | dim=%d", path, len(table), table.dim)
    return table.normalize() if normalize else table


def write_features(table: FeatureTable, path: Union[str, Path]) -> Path:
    """Write a table as EMB1, or as TSV when the suffix asks for it"""
    path = Path(path)
    if path.suffix.lower() in TEXT_SUFFIXES:
        path.write_text(TsvCodec.encode(table.ids, table.matrix), encoding="utf-8")
    else:
        path.write_bytes(Emb1Codec.encode(table.ids, table.matrix))
    return path


def gather(table: FeatureTable, ids: Sequence[str]) -> np.ndarray:
    """Rows for ``ids`` in the requested order, as a fresh array"""
    rows = [table.row_of(item_id) for item_id in ids]
    if not rows:
        return np.empty((0, table.dim), dtype=np.float64)
    return table.matrix[rows].copy()
