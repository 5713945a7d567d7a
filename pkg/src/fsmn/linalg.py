"""Dense float64 matrix kernels.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Everything
above this module (memory blocks, the language model) is written in terms of
these few operations.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(x) -> Matrix:
    """Coerce ``x`` to a 2-D float64 array (a 1-D input becomes a row)."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    if 0 in a.shape or 0 in b.shape:
        raise ShapeError(f"empty operand in product: {a.shape} x {b.shape}")
    return a @ b


def relu(x: Matrix) -> Matrix:
    return np.maximum(x, 0.0)


def relu_backward(x: Matrix, g: Matrix) -> Matrix:
    """Gradient of ``relu`` at ``x`` applied to upstream ``g``.

    The subgradient at exactly zero is taken to be 0.
    """
    x = np.asarray(x)
    g = np.asarray(g)
    if x.shape != g.shape:
        raise ShapeError(f"relu_backward shape mismatch: {x.shape} vs {g.shape}")
    return np.where(x > 0.0, g, 0.0)


def identity(x: Matrix) -> Matrix:
    return np.array(x, dtype=np.float64, copy=True)


ACTIVATIONS = {"relu": relu, "identity": identity}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None
