"""d-dimensional compilation: grid indicator by recursion on dimension, then
cell-by-cell value adjustment.

State layout: the running value of the whole network lives in coordinate 0.
At each recursion level the sub-network over axes ``2..d`` is embedded with
offset 1, so its own running value lives in coordinate 1, its sub-network's in
coordinate 2, and so on.  Input coordinates consumed by deeper levels are
overwritten by those levels' running values.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import blockops
from .compiler1d import (
    ConstructionTrace,
    PiecewiseConstant1D,
    adjustment_blocks,
    check_delta,
    compile_1d,
    increasing_trapezoid,
)
from .core import ResidualBlock, ResNet, eval_network, extend_block, projection


# threshold offset above the next plateau, as a fraction of the plateau gap
ADJUST_MARGIN = 1e-8


@dataclass(frozen=True, eq=False)
class PiecewiseConstantND:
    """Axis-aligned grid ``axis_knots`` with one constant per cell, zero outside."""

    axis_knots: tuple
    cell_values: np.ndarray

    def __post_init__(self):
        axes = []
        for i, kn in enumerate(self.axis_knots):
            kn = np.array(kn, dtype=np.float64).reshape(-1)
            if kn.size < 2 or np.any(np.diff(kn) <= 0) or not np.all(np.isfinite(kn)):
                raise ValueError(f"axis {i}: need >= 2 strictly increasing finite knots")
            kn.setflags(write=False)
            axes.append(kn)
        if not axes:
            raise ValueError("need at least one axis")
        values = np.array(self.cell_values, dtype=np.float64)
        shape = tuple(kn.size - 1 for kn in axes)
        if values.shape != shape:
            raise ValueError(f"cell_values has shape {values.shape}, grid needs {shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("cell values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "axis_knots", tuple(axes))
        object.__setattr__(self, "cell_values", values)

    @property
    def dims(self) -> int:
        return len(self.axis_knots)

    @property
    def shape(self) -> tuple:
        return self.cell_values.shape

    @property
    def n_cells(self) -> int:
        return int(self.cell_values.size)

    @property
    def h_inf(self) -> float:
        return float(np.max(np.abs(self.cell_values)))

    @property
    def min_width(self) -> float:
        return min(float(np.min(np.diff(kn))) for kn in self.axis_knots)

    @property
    def support(self) -> np.ndarray:
        """(d, 2) array of ``[a_0, a_M]`` per axis."""
        return np.array([[kn[0], kn[-1]] for kn in self.axis_knots])

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        idx, inside = self.locate(pts)
        out = np.zeros(pts.shape[0])
        out[inside] = self.cell_values[tuple(ix[inside] for ix in idx)]
        return out

    def locate(self, points: np.ndarray):
        """Per-axis 0-based cell indices and a mask of points inside the support."""
        idx = []
        inside = np.ones(points.shape[0], bool)
        for j, kn in enumerate(self.axis_knots):
            i = np.searchsorted(kn, points[:, j], side="right") - 1
            inside &= (i >= 0) & (i < kn.size - 1)
            idx.append(np.clip(i, 0, kn.size - 2))
        return idx, inside

    def cell_centers(self) -> np.ndarray:
        mids = [0.5 * (kn[1:] + kn[:-1]) for kn in self.axis_knots]
        grids = np.meshgrid(*mids, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def to_1d(self) -> PiecewiseConstant1D:
        if self.dims != 1:
            raise ValueError("not a 1-D target")
        return PiecewiseConstant1D(self.axis_knots[0], self.cell_values)

    @classmethod
    def from_1d(cls, target: PiecewiseConstant1D) -> "PiecewiseConstantND":
        return cls((target.knots,), target.values)

    def to_json(self) -> str:
        return json.dumps({"axis_knots": [kn.tolist() for kn in self.axis_knots],
                           "cell_values": self.cell_values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseConstantND":
        doc = json.loads(text)
        if "knots" in doc:
            return cls.from_1d(PiecewiseConstant1D.from_json(text))
        try:
            return cls(tuple(doc["axis_knots"]), doc["cell_values"])
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]}") from None


@dataclass(frozen=True)
class GridIndicatorSpec:
    """Plateau value of the grid indicator on each cell's delta-interior.

    ``threshold`` is the cut level applied before the final shift (0 for d=1,
    where no cut is needed).  ``stages`` maps checkpoint labels to block counts.
    """

    delta: float
    h_inf: float
    level_values: dict
    threshold: float
    stages: dict = field(default_factory=dict)

    def sorted_cells(self) -> list:
        return sorted(self.level_values, key=self.level_values.__getitem__, reverse=True)


def _check_all_axes(axis_knots, delta: float) -> None:
    for j, kn in enumerate(axis_knots):
        check_delta(kn, delta, axis=j)


def _flat_rank(shape: tuple) -> np.ndarray:
    """1-based position of each multi-index in C order."""
    return np.arange(1, int(np.prod(shape)) + 1).reshape(shape)


def _grid_indicator_blocks(axis_knots, h_inf: float, delta: float):
    """(blocks, level_values, threshold, stages) over ``len(axis_knots)`` dims."""
    d = len(axis_knots)
    shape = tuple(len(kn) - 1 for kn in axis_knots)
    if d == 1:
        blocks, cps = increasing_trapezoid(axis_knots[0], h_inf, delta)
        levels = {(i,): (i + 2) * h_inf for i in range(shape[0])}
        return blocks, levels, 0.0, {"indicator": len(blocks)}

    M1 = shape[0]
    inner_shape = shape[1:]
    M_rest = int(np.prod(inner_shape))
    inner_rank = _flat_rank(inner_shape)

    # R_{d-1}: value (l + 1) h on inner cell l, zero off the inner grid
    if d == 2:
        inner_blocks, _ = increasing_trapezoid(axis_knots[1], h_inf, delta)
    else:
        inner_target = PiecewiseConstantND(tuple(axis_knots[1:]), (inner_rank + 1) * h_inf)
        inner_net, _ = compile_nd(inner_target, delta)
        inner_blocks = list(inner_net.blocks)
    blocks = [extend_block(b, d, 1) for b in inner_blocks]
    stages = {"R_inner": len(blocks)}

    # R_1 on coordinate 0: plateaus (M_rest + 1 + i / (M1 + 1)) h, bounded by (M_rest + 2) h
    big = (M_rest + 2) * h_inf
    trap, _ = increasing_trapezoid(axis_knots[0], big, delta, d, 0)
    plateaus = [(M_rest + 1 + i / (M1 + 1)) * h_inf for i in range(1, M1 + 1)]
    adj, _ = adjustment_blocks(plateaus, big, d, 0)
    blocks += trap + adj
    stages["R_1"] = len(blocks)

    blocks.append(blockops.max_const_block(0.0, 1, d))
    blocks.append(blockops.add_relu_block(1, 0, d))
    stages["coupled"] = len(blocks)
    threshold = (M_rest + 2) * h_inf
    blocks.append(blockops.max_const_block(threshold, 0, d))
    blocks.append(blockops.shift_block(-threshold, 0, d))
    stages["cut_shift"] = len(blocks)

    levels = {}
    for idx in np.ndindex(shape):
        i = idx[0] + 1
        l = int(inner_rank[idx[1:]])
        levels[idx] = (l + i / (M1 + 1)) * h_inf
    # ceiling at the top plateau; keeps every adjustment inside its level band
    blocks.append(blockops.min_const_block(max(levels.values()), 0, d))
    stages["indicator"] = len(blocks)
    return blocks, levels, threshold, stages


def compile_grid_indicator(axis_knots: Sequence[Sequence[float]], h_inf: float,
                           delta: float) -> tuple[ResNet, GridIndicatorSpec]:
    """Network that is 0 off the grid and takes a distinct plateau on each cell."""
    axis_knots = [np.asarray(kn, dtype=np.float64) for kn in axis_knots]
    _check_all_axes(axis_knots, delta)
    if not h_inf > 0:
        raise ValueError("h_inf must be positive")
    blocks, levels, threshold, stages = _grid_indicator_blocks(axis_knots, h_inf, delta)
    d = len(axis_knots)
    net = ResNet(d, tuple(blocks), projection(d, 0), 0.0)
    return net, GridIndicatorSpec(delta, h_inf, levels, threshold, stages)


def adjust_cells(indicator: ResNet, spec: GridIndicatorSpec,
                 target: PiecewiseConstantND, margin: float = ADJUST_MARGIN) -> ResNet:
    """Append one block per cell, highest plateau first, moving it to the target value.

    For plateau ``g`` with next lower plateau ``p`` (``h_inf`` below the lowest),
    the threshold is ``t = p + margin (g - p)`` and the block is
    ``R + ((h - g) / (g - t)) relu(R - t)``.  Values ``<= t`` are untouched and
    ``(t, g]`` maps affinely onto the segment between ``t`` and ``h``.

    With ``margin = 0`` the threshold sits exactly on the next plateau, so a
    rounding error of either sign in that plateau trips this block and is
    amplified twice.  The default keeps thresholds just clear of it; values
    in the sliver ``(p, t]`` may then exceed ``h_inf`` by at most ``margin * t``.

    The slope uses the plateau the indicator actually produces at the cell
    center rather than the nominal ``g``.  Rounding of the indicator's weights
    shifts plateaus by ~1e-13 and the slope amplifies that by ``|h - g| / (g - t)``,
    enough to lift a cell adjusted to ``h_inf`` over the lowest threshold.
    """
    if not 0.0 <= margin < 1.0:
        raise ValueError("margin must lie in [0, 1)")
    cells = spec.sorted_cells()
    values = [spec.level_values[c] for c in cells]
    if len(set(values)) != len(values):
        raise ValueError("level values are not pairwise distinct")
    if set(cells) != set(np.ndindex(target.shape)):
        raise ValueError("indicator cells do not match the target grid")
    h_inf = spec.h_inf
    if values[-1] <= h_inf:
        raise ValueError("lowest plateau must lie above h_inf")
    if target.h_inf > h_inf:
        raise ValueError("target exceeds the indicator's h_inf")
    d = indicator.dim
    e = projection(d, 0)
    centers = np.array([[0.5 * (kn[i] + kn[i + 1]) for kn, i in zip(target.axis_knots, c)] for c in cells])
    measured = eval_network(indicator, centers)
    new = []
    for pos, cell in enumerate(cells):
        g = values[pos]
        p = values[pos + 1] if pos + 1 < len(values) else h_inf
        t = p + margin * (g - p)
        # a plateau far from nominal means a broken indicator; leave that to the checks
        g_net = measured[pos] if abs(measured[pos] - g) < 0.5 * (g - t) else g
        h = float(target.cell_values[cell])
        new.append(ResidualBlock(e, -t, ((h - g_net) / (g_net - t)) * e))
    return ResNet(d, indicator.blocks + tuple(new), indicator.out_weights, indicator.out_bias)


def compile_nd(target: PiecewiseConstantND, delta: float) -> tuple[ResNet, ConstructionTrace]:
    if target.dims == 1:
        return compile_1d(target.to_1d(), delta)
    _check_all_axes(target.axis_knots, delta)
    d = target.dims
    h_inf = target.h_inf
    if h_inf == 0.0:
        net = ResNet(d, (), np.zeros(d), 0.0)
        return net, ConstructionTrace(delta, 0.0, net)
    indicator, spec = compile_grid_indicator(target.axis_knots, h_inf, delta)
    net = adjust_cells(indicator, spec, target)
    checkpoints = dict(spec.stages)
    checkpoints["adjusted"] = len(net.blocks)
    notes = {"level_values": spec.level_values, "threshold": spec.threshold,
             "layout": "running value in coordinate 0; level-k sub-network in coordinate k"}
    return net, ConstructionTrace(delta, h_inf, net, checkpoints, (), notes)


# --- discretization --------------------------------------------------------

def discretize(f: Callable[[np.ndarray], np.ndarray], box, resolution: float) -> PiecewiseConstantND:
    """Uniform grid over ``box`` with cell side ``<= resolution``, valued at cell centers.

    ``f`` takes an (n, d) array and returns (n,) values.
    """
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a (d, 2) array of [lo, hi] with lo < hi")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    axes = []
    for lo, hi in box:
        side = hi - lo
        if resolution >= side:
            warnings.warn(f"resolution {resolution} exceeds box side {side}; using a single cell")
        n = max(1, math.ceil(side / resolution - 1e-9))
        axes.append(np.linspace(lo, hi, n + 1))
    proto = PiecewiseConstantND(tuple(axes), np.zeros(tuple(a.size - 1 for a in axes)))
    centers = proto.cell_centers()
    vals = np.asarray(f(centers), dtype=np.float64).reshape(proto.shape)
    return PiecewiseConstantND(tuple(axes), vals)


def modulus_of_continuity(f: Callable[[np.ndarray], np.ndarray], box, r: float,
                          n_pairs: int = 10_000, seed: int = 0) -> float:
    """Sampled lower bound on ``max |f(x) - f(y)|`` over ``x, y`` in box, ``|x - y| <= r``."""
    box = np.asarray(box, dtype=np.float64)
    d = box.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.uniform(box[:, 0], box[:, 1], size=(n_pairs, d))
    direction = rng.normal(size=(n_pairs, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    step = r * rng.uniform(size=(n_pairs, 1)) ** (1.0 / d)
    y = np.clip(x + step * direction, box[:, 0], box[:, 1])
    return float(np.max(np.abs(f(x) - f(y))))


def _unit_ball(points: np.ndarray) -> np.ndarray:
    return (np.linalg.norm(points, axis=1) <= 1.0).astype(np.float64)


def _gaussian(points: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * np.sum(points ** 2, axis=1))


BUILTIN_FUNCTIONS: dict = {
    "unit-ball": _unit_ball,
    "gaussian": _gaussian,
}
