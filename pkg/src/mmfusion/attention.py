"""Scaled dot-product attention over embedding rows, plus a factorized lookup table.

Self-attention projects one sequence into queries, keys, and values.
Cross-attention lets one sequence (the queries) read another (the key/value
source); its output adds the query back in and layer-normalises each row, so
the value width must equal the query width.

Both run on :class:`mmfusion.tensor.Tensor`, so gradients flow to every
projection matrix when the inputs require them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import Tensor, as_tensor, layer_norm, matmul, softmax_rows

VALUE_SOURCES = ("kv", "query")


@dataclass
class AttentionParams:
    """Projection matrices and output-norm parameters.

    wq maps query rows (width d_x) to d_k, wk maps key/value rows (width d_y)
    to d_k, and wv maps key/value rows to d_v.  ln_gain and ln_bias are only
    consumed by cross-attention, which requires d_v == d_x.
    """

    wq: object
    wk: object
    wv: object
    ln_gain: object = None
    ln_bias: object = None

    def __post_init__(self):
        self.wq = as_tensor(self.wq)
        self.wk = as_tensor(self.wk)
        self.wv = as_tensor(self.wv)
        if self.ln_gain is not None:
            self.ln_gain = as_tensor(self.ln_gain)
        if self.ln_bias is not None:
            self.ln_bias = as_tensor(self.ln_bias)
        for name in ("wq", "wk", "wv"):
            t = getattr(self, name)
            if t.ndim != 2:
                raise ShapeError(f"{name} must be a matrix, got shape {t.shape}")
        if self.wq.shape[1] != self.wk.shape[1]:
            raise ShapeError(
                f"wq and wk must share the key width, got {self.wq.shape} and {self.wk.shape}"
            )

    @property
    def d_k(self) -> int:
        return self.wq.shape[1]

    @property
    def d_v(self) -> int:
        return self.wv.shape[1]


def _scores(q: Tensor, k: Tensor, d_k: int) -> Tensor:
    return matmul(q, k.transpose_last()) * (1.0 / math.sqrt(d_k))


def self_attention(x, params: AttentionParams, return_weights: bool = False):
    """Attend a sequence to itself: softmax(Q K^T / sqrt(d_k)) V, no residual."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"expected [n, d] input rows, got shape {x.shape}")
    if x.shape[1] != params.wq.shape[0] or x.shape[1] != params.wk.shape[0]:
        raise ShapeError(
            f"input width {x.shape[1]} does not match wq {params.wq.shape} / wk {params.wk.shape}"
        )
    if x.shape[1] != params.wv.shape[0]:
        raise ShapeError(f"input width {x.shape[1]} does not match wv {params.wv.shape}")
    q = matmul(x, params.wq)
    k = matmul(x, params.wk)
    v = matmul(x, params.wv)
    weights = softmax_rows(_scores(q, k, params.d_k))
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def cross_attention(
    xq,
    ykv,
    params: AttentionParams,
    eps: float = 1e-5,
    value_source: str = "kv",
    return_weights: bool = False,
):
    """Let query rows read the key/value sequence, then add-and-normalise.

    Row i of the result is ``layer_norm((A V)_i + xq_i)`` with
    ``A = softmax(Q K^T / sqrt(d_k))``.  Values come from ``ykv``; the
    ``value_source="query"`` variant draws them from ``xq`` instead, which
    additionally requires the two sequences to have equal length and width.
    """
    xq = as_tensor(xq)
    ykv = as_tensor(ykv)
    if xq.ndim != 2 or ykv.ndim != 2:
        raise ShapeError(f"expected matrices, got {xq.shape} and {ykv.shape}")
    if value_source not in VALUE_SOURCES:
        raise DomainError(f"value_source must be one of {VALUE_SOURCES}, got {value_source!r}")
    d_x = xq.shape[1]
    if params.wq.shape[0] != d_x:
        raise ShapeError(f"wq {params.wq.shape} does not accept query width {d_x}")
    if params.wk.shape[0] != ykv.shape[1]:
        raise ShapeError(f"wk {params.wk.shape} does not accept key width {ykv.shape[1]}")
    if params.d_v != d_x:
        raise ShapeError(
            f"value width {params.d_v} must equal query width {d_x} for the residual add"
        )
    if params.ln_gain is None or params.ln_bias is None:
        raise ShapeError("cross_attention needs ln_gain and ln_bias")

    q = matmul(xq, params.wq)
    k = matmul(ykv, params.wk)
    if value_source == "kv":
        if params.wv.shape[0] != ykv.shape[1]:
            raise ShapeError(f"wv {params.wv.shape} does not accept rows of width {ykv.shape[1]}")
        v = matmul(ykv, params.wv)
    else:
        if xq.shape[0] != ykv.shape[0]:
            raise ShapeError(
                "value_source='query' needs equal sequence lengths, got "
                f"{xq.shape[0]} and {ykv.shape[0]}"
            )
        if params.wv.shape[0] != d_x:
            raise ShapeError(f"wv {params.wv.shape} does not accept rows of width {d_x}")
        v = matmul(xq, params.wv)
    weights = softmax_rows(_scores(q, k, params.d_k))
    mixed = matmul(weights, v)
    out = layer_norm(mixed + xq, params.ln_gain, params.ln_bias, eps=eps)
    return (out, weights) if return_weights else out


@dataclass
class FactorizedEmbedding:
    """Vocabulary lookup factorised through a narrow middle width.

    ``table`` is [vocab, e]; ``expand`` is [e, hidden] and is applied on the
    right, so a looked-up row maps to ``table[w] @ expand``.
    """

    table: object
    expand: object

    def __post_init__(self):
        self.table = as_tensor(self.table)
        self.expand = as_tensor(self.expand)
        if self.table.ndim != 2 or self.expand.ndim != 2:
            raise ShapeError(
                f"table and expand must be matrices, got {self.table.shape} and {self.expand.shape}"
            )
        if self.table.shape[1] != self.expand.shape[0]:
            raise ShapeError(
                f"middle widths differ: table {self.table.shape} vs expand {self.expand.shape}"
            )
        if self.table.shape[1] > self.expand.shape[1]:
            raise ShapeError(
                f"middle width {self.table.shape[1]} must not exceed hidden width {self.expand.shape[1]}"
            )

    @property
    def param_count(self) -> int:
        v, e = self.table.shape
        _, h = self.expand.shape
        return v * e + e * h


def factorized_embed(word: int, emb: FactorizedEmbedding) -> Tensor:
    """Look up one vocabulary row and expand it to the hidden width."""
    v = emb.table.shape[0]
    if not 0 <= word < v:
        raise DomainError(f"word id {word} outside vocabulary of size {v}")
    row = Tensor(emb.table.data[word : word + 1])
    return matmul(row, emb.expand).reshape(emb.expand.shape[1])
