"""Toy trainable student: a sentence embedding table with dropout views and
four two-layer projection heads.

Parameters live in one flat ``dict`` of arrays so the optimizers can walk
them by name:

    base                      sentences x hidden_dim
    <head>.w1, <head>.b1      in_dim x out_dim, out_dim
    <head>.w2, <head>.b2      out_dim x out_dim, out_dim

A head computes ``tanh(x @ w1 + b1) @ w2 + b2``.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    DimensionMismatch,
    MalformedFile,
    MissingForwardState,
    UnknownSentenceId,
    ValidationError,
)
from .models import Head
from .teacher_store import Emb1Codec

logger = logging.getLogger(__name__)

_HEADER_LENGTH = struct.Struct("<I")


@dataclass(frozen=True)
class DropoutMask:
    """Seeded Bernoulli keep pattern; the same seed always gives the same mask"""

    seed: int
    rate: float = 0.1

    def keep_pattern(self, dim: int) -> np.ndarray:
        if self.rate == 0.0:
            return np.ones(dim, dtype=bool)
        return np.random.default_rng(self.seed).random(dim) >= self.rate

    def scale(self, dim: int) -> np.ndarray:
        """Keep pattern with inverted scaling (kept units divided by 1 - rate)"""
        return self.keep_pattern(dim) / (1.0 - self.rate)


@dataclass
class Trace:
    """Forward state needed to backpropagate into the parameters.

    ``rows``/``scale`` are set when the input came from the base table;
    ``head`` is None for a bare ``encode``.
    """

    inputs: np.ndarray
    output: np.ndarray
    rows: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    head: Optional[Head] = None
    activation: Optional[np.ndarray] = None
    recorded: bool = True


class StudentEncoder:
    """Embedding-table student with the simcse, grounded and teacher heads"""

    def __init__(
        self,
        sentence_ids: Sequence[str],
        params: Dict[str, np.ndarray],
        dropout_rate: float = 0.1,
    ):
        if not 0.0 <= dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        self.sentence_ids = list(sentence_ids)
        self._rows = {sid: row for row, sid in enumerate(self.sentence_ids)}
        if len(self._rows) != len(self.sentence_ids):
            raise ValidationError("sentence ids must be unique")
        self.params = params
        self.dropout_rate = dropout_rate
        if params["base"].shape[0] != len(self.sentence_ids):
            raise DimensionMismatch("base table rows do not match sentence ids")

    @classmethod
    def initialize(
        cls,
        sentence_ids: Sequence[str],
        hidden_dim: int = 64,
        grounded_dim: int = 32,
        text_dim: int = 32,
        visual_dim: int = 32,
        dropout_rate: float = 0.1,
        init_scale: float = 0.1,
        seed: int = 0,
    ) -> "StudentEncoder":
        """Random student: base rows ~ N(0, init_scale^2), head weights ~ N(0, 1/fan_in)"""
        rng = np.random.default_rng(seed)
        params = {"base": rng.normal(0.0, init_scale, size=(len(sentence_ids), hidden_dim))}
        shapes = {
            Head.SIMCSE: (hidden_dim, hidden_dim),
            Head.GROUNDED: (hidden_dim, grounded_dim),
            Head.TEACHER_TEXT: (text_dim, grounded_dim),
            Head.TEACHER_VISUAL: (visual_dim, grounded_dim),
        }
        for head, (fan_in, fan_out) in shapes.items():
            params[f"{head.value}.w1"] = rng.normal(0.0, fan_in ** -0.5, size=(fan_in, fan_out))
            params[f"{head.value}.b1"] = np.zeros(fan_out)
            params[f"{head.value}.w2"] = rng.normal(0.0, fan_out ** -0.5, size=(fan_out, fan_out))
            params[f"{head.value}.b2"] = np.zeros(fan_out)
        return cls(sentence_ids, params, dropout_rate)

    @property
    def hidden_dim(self) -> int:
        return self.params["base"].shape[1]

    def head_dims(self, head: Union[Head, str]) -> Tuple[int, int]:
        head = Head(head)
        return self.params[f"{head.value}.w1"].shape

    def row_of(self, sentence_id: str) -> int:
        try:
            return self._rows[sentence_id]
        except KeyError:
            raise UnknownSentenceId(f"unknown sentence id {sentence_id!r}", sentence_id) from None

    def mask(self, seed: int) -> DropoutMask:
        return DropoutMask(int(seed), self.dropout_rate)

    def encode(self, sentence_id: str, mask: DropoutMask) -> np.ndarray:
        """Hidden vector of one sentence under one dropout mask"""
        row = self.params["base"][self.row_of(sentence_id)]
        return row * mask.scale(len(row))

    def embed(self, sentence_ids: Sequence[str]) -> np.ndarray:
        """Dropout-free hidden vectors, as used for evaluation"""
        rows = [self.row_of(sid) for sid in sentence_ids]
        return self.params["base"][rows].copy()

    def project(self, h: np.ndarray, head: Union[Head, str]) -> np.ndarray:
        """Apply one projection head to a vector or a batch of vectors"""
        h = np.asarray(h, dtype=np.float64)
        trace = self._project(np.atleast_2d(h), Head(head))
        return trace.output[0] if h.ndim == 1 else trace.output

    def forward(
        self,
        sentence_ids: Sequence[str],
        seeds: Sequence[int],
        head: Optional[Union[Head, str]] = None,
        record: bool = True,
    ) -> Trace:
        """Encode a batch under per-sentence dropout seeds, then project"""
        if len(seeds) != len(sentence_ids):
            raise ValidationError("need one dropout seed per sentence")
        rows = np.array([self.row_of(sid) for sid in sentence_ids], dtype=np.int64)
        dim = self.hidden_dim
        scale = np.stack([self.mask(seed).scale(dim) for seed in seeds]) if len(seeds) else np.empty((0, dim))
        hidden = self.params["base"][rows] * scale
        if head is None:
            trace = Trace(inputs=hidden, output=hidden)
        else:
            trace = self._project(hidden, Head(head))
        trace.rows = rows
        trace.scale = scale
        trace.recorded = record
        return trace

    def _project(self, x: np.ndarray, head: Head) -> Trace:
        w1 = self.params[f"{head.value}.w1"]
        if x.shape[1] != w1.shape[0]:
            raise DimensionMismatch(
                f"{head.value} head expects dim {w1.shape[0]}, got {x.shape[1]}"
            )
        activation = np.tanh(x @ w1 + self.params[f"{head.value}.b1"])
        output = activation @ self.params[f"{head.value}.w2"] + self.params[f"{head.value}.b2"]
        return Trace(inputs=x, output=output, head=head, activation=activation)

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def backward(
        self,
        trace: Optional[Trace],
        upstream: np.ndarray,
        grads: Optional[Dict[str, np.ndarray]] = None,
    ) -> Dict[str, np.ndarray]:
        """Accumulate parameter gradients for one traced forward pass.

        Dropout masks are constants. Gradients are added into ``grads`` when
        given, otherwise into a fresh zero dict, which is returned.
        """
        if trace is None or not trace.recorded:
            raise MissingForwardState("backward needs a recorded forward pass")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != trace.output.shape:
            raise DimensionMismatch(
                f"upstream shape {upstream.shape} does not match output {trace.output.shape}"
            )
        if grads is None:
            grads = self.zero_grads()
        d_inputs = upstream
        if trace.head is not None:
            name = trace.head.value
            act = trace.activation
            grads[f"{name}.w2"] += act.T @ upstream
            grads[f"{name}.b2"] += upstream.sum(axis=0)
            d_pre = (upstream @ self.params[f"{name}.w2"].T) * (1.0 - act * act)
            grads[f"{name}.w1"] += trace.inputs.T @ d_pre
            grads[f"{name}.b1"] += d_pre.sum(axis=0)
            d_inputs = d_pre @ self.params[f"{name}.w1"].T
        if trace.rows is not None:
            np.add.at(grads["base"], trace.rows, d_inputs * trace.scale)
        return grads

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def with_params(self, params: Dict[str, np.ndarray]) -> "StudentEncoder":
        return StudentEncoder(self.sentence_ids, {k: v.copy() for k, v in params.items()}, self.dropout_rate)


def save_checkpoint(encoder: StudentEncoder, path: Union[str, Path], params: Optional[Dict[str, np.ndarray]] = None) -> Path:
    """Write parameters as a JSON manifest followed by one EMB1 block per tensor.

    The file starts with a u32le header length and the UTF-8 JSON header,
    which lists every tensor's name, shape and byte offset (relative to the
    end of the header).
    """
    params = params if params is not None else encoder.params
    blobs: List[bytes] = []
    tensors = []
    offset = 0
    for name in sorted(params):
        value = np.asarray(params[name])
        matrix = value.reshape(1, -1) if value.ndim == 1 else value
        row_ids = encoder.sentence_ids if name == "base" else [str(k) for k in range(len(matrix))]
        blob = Emb1Codec.encode(row_ids, matrix)
        tensors.append({"name": name, "shape": list(value.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "dropout_rate": encoder.dropout_rate,
            "hidden_dim": encoder.hidden_dim,
            "grounded_dim": encoder.head_dims(Head.GROUNDED)[1],
            "tensors": tensors,
        },
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.write_bytes(_HEADER_LENGTH.pack(len(header)) + header + b"".join(blobs))
    return path


def load_checkpoint(path: Union[str, Path]) -> StudentEncoder:
    """Rebuild a student from a checkpoint written by ``save_checkpoint``"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MalformedFile(f"cannot read {path}: {e}", str(path)) from e
    try:
        (length,) = _HEADER_LENGTH.unpack_from(data, 0)
        header = json.loads(data[_HEADER_LENGTH.size:_HEADER_LENGTH.size + length].decode("utf-8"))
        start = _HEADER_LENGTH.size + length
        params = {}
        sentence_ids: List[str] = []
        for tensor in header["tensors"]:
            ids, matrix, _ = Emb1Codec.decode(data, start + tensor["offset"], source=str(path))
            params[tensor["name"]] = matrix.reshape(tensor["shape"])
            if tensor["name"] == "base":
                sentence_ids = ids
        return StudentEncoder(sentence_ids, params, header["dropout_rate"])
    except (struct.error, ValueError, KeyError, TypeError) as e:
        raise MalformedFile(f"{path}: bad checkpoint: {e}", str(path)) from e
