"""FIR memory blocks.

A memory block of order N holds N+1 learnable taps ``a_0 .. a_N`` and encodes
the current hidden output together with its N predecessors:

    h~_t = f(a_0 h_t + a_1 h_{t-1} + ... + a_N h_{t-N})

Hidden outputs are stored time-major: ``H`` is ``D x T`` with one column per
time step, so the whole sentence is filtered by one right-multiplication
``H @ M`` where ``M`` is an upper-banded Toeplitz matrix. A mini-batch of
sentences uses the block-diagonal stack of per-sentence matrices, so memory
never crosses a sentence boundary. History before the first column is zero.

Three routes compute the same thing: ``fir_forward_naive`` (the explicit
tapped delay line, used as an oracle), dense ``H @ M`` for short sequences,
and a band-aware product that only touches the N+1 nonzero diagonals. The
first-order IIR recurrence is kept here as a comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import Matrix, ShapeError, activation, as_matrix, matmul

# Sequences longer than this never materialize their memory matrix.
DENSE_CAP = 512


@dataclass(frozen=True)
class FilterCoeffs:
    """Taps ``a_0 .. a_N`` of one memory block; ``order`` is N."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).reshape(-1)
        if taps.size == 0:
            raise ValueError("a filter needs at least one tap (order >= 0)")
        if not np.all(np.isfinite(taps)):
            raise ValueError("filter taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def order(self) -> int:
        return self.taps.size - 1

    @classmethod
    def identity(cls, order: int) -> "FilterCoeffs":
        taps = np.zeros(order + 1)
        taps[0] = 1.0
        return cls(taps)


def _coeffs(a) -> FilterCoeffs:
    return a if isinstance(a, FilterCoeffs) else FilterCoeffs(a)


@dataclass(frozen=True)
class MemoryMatrix:
    """The ``T x T`` matrix with ``M[t, t+i] = a_i`` for ``0 <= i <= N``."""

    coeffs: FilterCoeffs
    length: int

    @property
    def taps(self) -> np.ndarray:
        return self.coeffs.taps

    @property
    def bandwidth(self) -> int:
        return min(self.coeffs.order, self.length - 1) + 1

    def dense(self) -> Matrix:
        m = np.zeros((self.length, self.length))
        for i in range(self.bandwidth):
            idx = np.arange(self.length - i)
            m[idx, idx + i] = self.taps[i]
        return m


@dataclass(frozen=True)
class BlockDiagMemory:
    """Block-diagonal memory matrix for K sentences sharing one filter.

    Applied to the horizontal concatenation ``[H_1 ... H_K]``.
    """

    coeffs: FilterCoeffs
    lengths: tuple
    # position of each concatenated column within its own sentence
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lengths = tuple(int(n) for n in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(
            self, "offsets", np.concatenate([np.arange(n) for n in lengths])
        )

    @property
    def taps(self) -> np.ndarray:
        return self.coeffs.taps

    @property
    def total_length(self) -> int:
        return sum(self.lengths)

    @property
    def blocks(self) -> list:
        return [MemoryMatrix(self.coeffs, n) for n in self.lengths]

    def dense(self) -> Matrix:
        m = np.zeros((self.total_length, self.total_length))
        start = 0
        for block in self.blocks:
            stop = start + block.length
            m[start:stop, start:stop] = block.dense()
            start = stop
        return m


def build_memory_matrix(a, length: int) -> MemoryMatrix:
    if length < 1:
        raise ValueError(f"memory matrix length must be >= 1, got {length}")
    return MemoryMatrix(_coeffs(a), int(length))


def build_block_diagonal(a, lengths: Sequence[int]) -> BlockDiagMemory:
    lengths = list(lengths)
    if not lengths:
        raise ValueError("block-diagonal memory needs at least one sentence")
    if any(n < 1 for n in lengths):
        raise ValueError(f"every sentence length must be >= 1, got {lengths}")
    return BlockDiagMemory(_coeffs(a), tuple(lengths))


def _check_hidden(h) -> Matrix:
    h = as_matrix(h)
    if h.shape[0] == 0 or h.shape[1] == 0:
        raise ShapeError(f"hidden matrix must be non-empty, got shape {h.shape}")
    return h


def _offsets_of(m) -> np.ndarray:
    if isinstance(m, BlockDiagMemory):
        return m.offsets
    return np.arange(m.length)


def _length_of(m) -> int:
    return m.total_length if isinstance(m, BlockDiagMemory) else m.length


def fir_forward_naive(h, a, act: str = "relu") -> Matrix:
    """Tapped-delay-line evaluation, one time step and one tap at a time."""
    h = _check_hidden(h)
    taps = _coeffs(a).taps
    f = activation(act)
    d, t_len = h.shape
    out = np.zeros((d, t_len))
    for t in range(t_len):
        acc = np.zeros(d)
        for i in range(min(taps.size - 1, t) + 1):
            acc += taps[i] * h[:, t - i]
        out[:, t] = acc
    return f(out)


def band_product(h: Matrix, m) -> Matrix:
    """``h @ m`` using only the nonzero diagonals of ``m``.

    Works for a single ``MemoryMatrix`` and for a ``BlockDiagMemory``; in the
    latter case a shift by ``i`` is masked wherever the source column would
    belong to an earlier sentence.
    """
    offsets = _offsets_of(m)
    taps = m.taps
    t_len = h.shape[1]
    out = taps[0] * h
    for i in range(1, min(taps.size, t_len)):
        keep = offsets[i:] >= i
        out[:, i:] += taps[i] * (h[:, : t_len - i] * keep)
    return out


def memory_product(h, m, dense_cap: int = DENSE_CAP) -> Matrix:
    """Pre-activation ``h @ m`` for a memory matrix or block-diagonal stack."""
    h = _check_hidden(h)
    if h.shape[1] != _length_of(m):
        raise ShapeError(
            f"hidden matrix has {h.shape[1]} time steps but memory matrix has length {_length_of(m)}"
        )
    if isinstance(m, MemoryMatrix) and m.length <= dense_cap:
        return matmul(h, m.dense())
    return band_product(h, m)


def fir_forward_matrix(h, m, act: str = "relu", dense_cap: int = DENSE_CAP) -> Matrix:
    return activation(act)(memory_product(h, m, dense_cap))


def apply_per_sentence(h, a, lengths: Sequence[int], act: str = "relu") -> Matrix:
    """Filter each sentence of a concatenated batch independently."""
    h = _check_hidden(h)
    parts = []
    start = 0
    for n in lengths:
        parts.append(fir_forward_matrix(h[:, start : start + n], build_memory_matrix(a, n), act))
        start += n
    if start != h.shape[1]:
        raise ShapeError(f"lengths sum to {start} but hidden matrix has {h.shape[1]} columns")
    return np.concatenate(parts, axis=1)


def fir_backward(h, g_pre, m, dense_cap: int = DENSE_CAP):
    """Backward pass of ``Z = H @ M`` given ``g_pre = dL/dZ``.

    Returns ``(dH, dtaps)``. ``dH = g_pre @ M.T``; the tap gradient sums
    ``dL/dM = H.T @ g_pre`` along each tied superdiagonal, which for a
    block-diagonal stack also sums over sentences.
    """
    h = _check_hidden(h)
    g = as_matrix(g_pre)
    if g.shape != h.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match hidden shape {h.shape}")
    if h.shape[1] != _length_of(m):
        raise ShapeError(
            f"hidden matrix has {h.shape[1]} time steps but memory matrix has length {_length_of(m)}"
        )
    taps = m.taps
    t_len = h.shape[1]
    dtaps = np.zeros(taps.size)

    if isinstance(m, MemoryMatrix) and m.length <= dense_cap:
        dense = m.dense()
        dh = matmul(g, dense.T)
        dm = matmul(h.T, g)
        for i in range(min(taps.size, t_len)):
            dtaps[i] = np.trace(dm, offset=i)
        return dh, dtaps

    offsets = _offsets_of(m)
    dh = taps[0] * g
    dtaps[0] = np.sum(h * g)
    for i in range(1, min(taps.size, t_len)):
        keep = offsets[i:] >= i
        shifted = g[:, i:] * keep
        dh[:, : t_len - i] += taps[i] * shifted
        dtaps[i] = np.sum(h[:, : t_len - i] * shifted)
    return dh, dtaps


def iir_forward(h, w, act: str = "relu") -> Matrix:
    """First-order recurrence ``h~_t = f(h_t + W h~_{t-1})`` with zero initial state."""
    h = _check_hidden(h)
    w = as_matrix(w)
    d = h.shape[0]
    if w.shape != (d, d):
        raise ShapeError(f"recurrent weight must be {d}x{d}, got {w.shape[0]}x{w.shape[1]}")
    f = activation(act)
    out = np.zeros_like(h)
    prev = np.zeros((d, 1))
    for t in range(h.shape[1]):
        prev = f(h[:, t : t + 1] + w @ prev)
        out[:, t : t + 1] = prev
    return out
