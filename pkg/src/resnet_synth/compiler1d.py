"""Compile a 1-D piecewise-constant function into a one-neuron-per-block ResNet.

Pipeline on a chosen coordinate of the state, with ``H = max |h_k|``:

1. ``init_blocks``: ``R_0 = 0`` left of ``a_0`` and ``-(H / delta)(x - a_0)`` right of it.
2. ``induction_step`` for ``m = 0 .. M-1``: flip the negative tail, fold it at the
   midpoint of ``[a_m, a_{m+1}]`` and cap it at ``(m + 2) H``.  The result is a
   trapezoid of height ``(m + 2) H`` on cell ``m + 1`` followed by a new tail.
3. ``tail_removal``: ``max(R_M, 0)``, the increasing trapezoid function.
4. ``adjustment_step`` for ``k = M .. 1``: move the plateau of cell ``k`` from
   ``(k + 1) H`` to ``h_k`` while leaving every value ``<= k H`` untouched.

That is ``3 + 3M + 1 + M = 4M + 4`` blocks.  The final function is 0 outside
``(a_0, a_M)``, equals ``h_k`` on ``[a_{k-1} + delta, a_k - delta]`` and stays
within ``[-H, H]``, so its L1 distance to the target is at most ``4 M delta H``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import blockops
from .core import ResidualBlock, ResNet, projection
from .pwl import TooManyNodes, crossings, trace_network

# exact breakpoint tracing is abandoned past this many nodes (the count can double per adjustment)
MAX_TRACE_NODES = 4096


class DeltaError(ValueError):
    """delta violates ``0 < 2 delta < width`` for some cell (``interval`` is 1-based)."""

    def __init__(self, message: str, interval: int | None = None, axis: int | None = None):
        self.interval = interval
        self.axis = axis
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class PiecewiseConstant1D:
    """``h(x) = values[k-1]`` on ``[knots[k-1], knots[k])``, zero elsewhere."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=np.float64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if knots.size < 2:
            raise ValueError("need at least two knots")
        if values.size != knots.size - 1:
            raise ValueError(f"{knots.size} knots need {knots.size - 1} values, got {values.size}")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValueError("knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def M(self) -> int:
        return self.values.size

    @property
    def h_inf(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def min_width(self) -> float:
        return float(np.min(self.widths))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.knots, x, side="right") - 1
        inside = (idx >= 0) & (idx < self.M)
        return np.where(inside, self.values[np.clip(idx, 0, self.M - 1)], 0.0)

    def interior(self, k: int, delta: float) -> tuple[float, float]:
        """The delta-interior ``[a_{k-1} + delta, a_k - delta]`` of cell ``k`` (1-based)."""
        return self.knots[k - 1] + delta, self.knots[k] - delta

    def to_json(self) -> str:
        return json.dumps({"knots": self.knots.tolist(), "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseConstant1D":
        doc = json.loads(text)
        try:
            return cls(doc["knots"], doc["values"])
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]}") from None


@dataclass(frozen=True)
class ConstructionTrace:
    """Checkpoints of a compilation.

    ``checkpoints`` maps a stage label to the number of leading blocks of
    ``net`` that realize it, so every stage is itself a valid network.  For 1-D
    compilations the labels are ``R_0 .. R_M`` (induction) and
    ``R*_M .. R*_0`` (tail removal, then each adjustment).
    """

    delta: float
    h_inf: float
    net: ResNet
    checkpoints: dict = field(default_factory=dict)
    breakpoints: tuple = ()
    notes: dict = field(default_factory=dict)

    def stage_net(self, label: str) -> ResNet:
        return self.net.prefix(self.checkpoints[label])

    @property
    def stage_nets(self) -> dict:
        return {label: self.net.prefix(n) for label, n in self.checkpoints.items()}

    def with_net(self, net: ResNet) -> "ConstructionTrace":
        """Same checkpoint layout over different weights (e.g. a mutated copy)."""
        return replace(self, net=net)


def check_delta(knots: np.ndarray, delta: float, axis: int | None = None) -> None:
    if not delta > 0:
        raise DeltaError(f"delta must be positive, got {delta}", axis=axis)
    widths = np.diff(np.asarray(knots, dtype=np.float64))
    bad = np.flatnonzero(~(2.0 * delta < widths))
    if bad.size:
        k = int(bad[0]) + 1
        where = f"axis {axis} " if axis is not None else ""
        raise DeltaError(
            f"{where}interval {k} [{knots[k - 1]:.12g}, {knots[k]:.12g}) has width "
            f"{widths[k - 1]:.12g}, need 2*delta={2 * delta:.12g} < width",
            interval=k, axis=axis)


def init_blocks(a0: float, h_inf: float, delta: float, dim: int = 1, coord: int = 0) -> list[ResidualBlock]:
    if h_inf <= 0 or delta <= 0:
        raise ValueError("h_inf and delta must be positive")
    e = projection(dim, coord)
    return [
        blockops.max_const_block(a0, coord, dim),          # max(x, a0) = x + relu(a0 - x)
        blockops.shift_block(-a0, coord, dim),
        ResidualBlock(e, 0.0, -((h_inf + delta) / delta) * e),
    ]


def induction_step(m: int, a_m: float, a_m1: float, h_inf: float, delta: float,
                   dim: int = 1, coord: int = 0) -> list[ResidualBlock]:
    """Blocks taking ``R_m`` to ``R_{m+1}`` (new trapezoid on ``[a_m, a_{m+1}]``)."""
    if not 2.0 * delta < a_m1 - a_m:
        raise DeltaError(
            f"interval {m + 1} [{a_m:.12g}, {a_m1:.12g}) too narrow for delta={delta:.12g}",
            interval=m + 1)
    e = projection(dim, coord)
    top = (m + 2) * h_inf
    return [
        ResidualBlock(-e, 0.0, (2.0 + 1.0 / (m + 1)) * e),
        ResidualBlock(e, -top * (a_m1 - a_m) / (2.0 * delta), -2.0 * e),
        blockops.min_const_block(top, coord, dim),
    ]


def tail_removal(dim: int = 1, coord: int = 0) -> list[ResidualBlock]:
    return [blockops.max_const_block(0.0, coord, dim)]


def adjustment_step(k: int, h_k: float, h_inf: float, dim: int = 1, coord: int = 0) -> list[ResidualBlock]:
    """``R*_{k-1} = R*_k + ((h_k - (k+1) H) / H) relu(R*_k - k H)``."""
    if h_inf <= 0:
        raise ValueError("h_inf must be positive")
    e = projection(dim, coord)
    return [ResidualBlock(e, -k * h_inf, ((h_k - (k + 1) * h_inf) / h_inf) * e)]


def increasing_trapezoid(knots: Sequence[float], h_inf: float, delta: float,
                         dim: int = 1, coord: int = 0) -> tuple[list[ResidualBlock], dict]:
    """Blocks for ``R*_M`` (plateau ``(k+1) h_inf`` on cell k) plus their checkpoints."""
    knots = np.asarray(knots, dtype=np.float64)
    check_delta(knots, delta)
    blocks = init_blocks(knots[0], h_inf, delta, dim, coord)
    checkpoints = {"R_0": len(blocks)}
    M = knots.size - 1
    for m in range(M):
        blocks += induction_step(m, knots[m], knots[m + 1], h_inf, delta, dim, coord)
        checkpoints[f"R_{m + 1}"] = len(blocks)
    blocks += tail_removal(dim, coord)
    checkpoints[f"R*_{M}"] = len(blocks)
    return blocks, checkpoints


def adjustment_blocks(values: Sequence[float], h_inf: float, dim: int = 1, coord: int = 0,
                      start: int = 0) -> tuple[list[ResidualBlock], dict]:
    """Adjust plateaus from the top cell down; ``h_inf`` must bound ``|values|``."""
    M = len(values)
    blocks, checkpoints = [], {}
    for k in range(M, 0, -1):
        blocks += adjustment_step(k, values[k - 1], h_inf, dim, coord)
        checkpoints[f"R*_{k - 1}"] = start + len(blocks)
    return blocks, checkpoints


def compile_1d(target: PiecewiseConstant1D, delta: float) -> tuple[ResNet, ConstructionTrace]:
    check_delta(target.knots, delta)
    h_inf = target.h_inf
    if h_inf == 0.0:
        net = ResNet(1, (), np.zeros(1), 0.0)
        return net, ConstructionTrace(delta, 0.0, net)
    blocks, checkpoints = increasing_trapezoid(target.knots, h_inf, delta)
    adj, adj_points = adjustment_blocks(target.values, h_inf, start=len(blocks))
    blocks += adj
    checkpoints.update(adj_points)
    net = ResNet(1, tuple(blocks))
    bps, complete = final_breakpoints(net, target, checkpoints[f"R*_{target.M}"])
    # the function is constant outside [a_0, a_M]; crossings can round an ulp past it
    bps = np.unique(np.clip(bps, target.knots[0], target.knots[-1]))
    notes = {"breakpoints_complete": complete}
    if complete and bps.size > 1:
        notes["min_piece_width"] = float(np.min(np.diff(bps)))
    trace = ConstructionTrace(delta, h_inf, net, checkpoints, tuple(float(x) for x in bps), notes)
    return net, trace


def final_breakpoints(net: ResNet, target: PiecewiseConstant1D, n_trapezoid: int) -> tuple[np.ndarray, bool]:
    """Slope changes of the compiled function and whether the list is exhaustive.

    Each adjustment folds every higher ramp, so the exact list can grow like
    ``2^M``.  Past ``MAX_TRACE_NODES`` this falls back to the kinks of the
    increasing trapezoid plus the points where a ramp crosses an adjustment
    threshold ``k H``; deeper folds inside the delta-margins are left out.
    """
    anchor = float(target.knots[0])
    try:
        return trace_network(net, anchor, MAX_TRACE_NODES).kinks(), True
    except TooManyNodes:
        pass
    trap = trace_network(net.prefix(n_trapezoid), anchor)
    xs, ys = trap.xs, trap.ys
    found = [trap.kinks()]
    for k in range(1, target.M + 1):
        g = ys - k * target.h_inf
        i = np.flatnonzero(g[:-1] * g[1:] < 0.0)
        found.append(crossings(xs, ys, g, i)[0])
    return np.unique(np.concatenate(found)), False
