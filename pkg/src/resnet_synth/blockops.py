"""Single-block realizations of the elementary operations on one state coordinate.

Each function returns exactly one :class:`ResidualBlock`.  Coordinates are
0-based.  With ``R`` the value held in coordinate ``coord``:

=================  =============================  ==============================
operation          effect on ``R``                weights (U, u, V)
=================  =============================  ==============================
shift              ``R + c``                      ``0, 1, c e``
max_linear         ``max(R, a R + b)``            ``(a - 1) e, b, e``
min_linear         ``min(R, a R + b)``            ``(1 - a) e, -b, -e``
max_const          ``max(R, c)``                  max_linear with ``a = 0``
min_const          ``min(R, c)``                  min_linear with ``a = 0``
add_relu           ``x_dst + relu(x_src)``        ``e_src, 0, e_dst``
=================  =============================  ==============================
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ResidualBlock


class BlockKind(enum.Enum):
    SHIFT = "shift"
    MAX_CONST = "max_const"
    MIN_CONST = "min_const"
    MAX_LINEAR = "max_linear"
    MIN_LINEAR = "min_linear"
    ADD_RELU = "add_relu"


def _check_coord(coord: int, dim: int, name: str = "coord") -> None:
    if not 0 <= coord < dim:
        raise IndexError(f"{name}={coord} out of range for dim {dim}")


def _unit(dim: int, coord: int, scale: float = 1.0) -> np.ndarray:
    e = np.zeros(dim)
    e[coord] = scale
    return e


def shift_block(c: float, coord: int, dim: int) -> ResidualBlock:
    _check_coord(coord, dim)
    # relu(0 . x + 1) == 1, so V carries the constant
    return ResidualBlock(np.zeros(dim), 1.0, _unit(dim, coord, c))


def max_linear_block(alpha: float, beta: float, coord: int, dim: int) -> ResidualBlock:
    _check_coord(coord, dim)
    return ResidualBlock(_unit(dim, coord, alpha - 1.0), beta, _unit(dim, coord))


def min_linear_block(alpha: float, beta: float, coord: int, dim: int) -> ResidualBlock:
    _check_coord(coord, dim)
    return ResidualBlock(_unit(dim, coord, 1.0 - alpha), -beta, _unit(dim, coord, -1.0))


def max_const_block(c: float, coord: int, dim: int) -> ResidualBlock:
    return max_linear_block(0.0, c, coord, dim)


def min_const_block(c: float, coord: int, dim: int) -> ResidualBlock:
    return min_linear_block(0.0, c, coord, dim)


def add_relu_block(src: int, dst: int, dim: int) -> ResidualBlock:
    _check_coord(src, dim, "src")
    _check_coord(dst, dim, "dst")
    if src == dst:
        raise ValueError("add_relu needs two distinct coordinates")
    return ResidualBlock(_unit(dim, src), 0.0, _unit(dim, dst))


@dataclass(frozen=True)
class BlockSpec:
    """Declarative description of one elementary operation."""

    kind: BlockKind
    dim: int
    src_coord: int = 0
    dst_coord: int | None = None
    c: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        _check_coord(self.src_coord, self.dim, "src_coord")
        if self.dst_coord is None:
            object.__setattr__(self, "dst_coord", self.src_coord)
        _check_coord(self.dst_coord, self.dim, "dst_coord")
        if self.kind is not BlockKind.ADD_RELU and self.dst_coord != self.src_coord:
            raise ValueError(f"{self.kind.value} acts on a single coordinate")
        if not all(np.isfinite([self.c, self.alpha, self.beta])):
            raise ValueError("parameters must be finite")

    def build(self) -> ResidualBlock:
        k, d, i = self.kind, self.dim, self.src_coord
        if k is BlockKind.SHIFT:
            return shift_block(self.c, i, d)
        if k is BlockKind.MAX_CONST:
            return max_const_block(self.c, i, d)
        if k is BlockKind.MIN_CONST:
            return min_const_block(self.c, i, d)
        if k is BlockKind.MAX_LINEAR:
            return max_linear_block(self.alpha, self.beta, i, d)
        if k is BlockKind.MIN_LINEAR:
            return min_linear_block(self.alpha, self.beta, i, d)
        return add_relu_block(i, self.dst_coord, d)

    def reference(self, states: np.ndarray) -> np.ndarray:
        """Closed-form result of the operation, computed without any block."""
        out = np.array(states, dtype=np.float64, copy=True)
        r = out[..., self.src_coord]
        k = self.kind
        if k is BlockKind.SHIFT:
            out[..., self.dst_coord] = r + self.c
        elif k is BlockKind.MAX_CONST:
            out[..., self.dst_coord] = np.maximum(r, self.c)
        elif k is BlockKind.MIN_CONST:
            out[..., self.dst_coord] = np.minimum(r, self.c)
        elif k is BlockKind.MAX_LINEAR:
            out[..., self.dst_coord] = np.maximum(r, self.alpha * r + self.beta)
        elif k is BlockKind.MIN_LINEAR:
            out[..., self.dst_coord] = np.minimum(r, self.alpha * r + self.beta)
        else:
            out[..., self.dst_coord] = out[..., self.dst_coord] + np.maximum(r, 0.0)
        return out
