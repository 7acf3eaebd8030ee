"""Exact analysis of scalar (dim 1) networks.

A dim-1 network is a chain of scalar maps ``s -> s + v relu(u s + b)``, each
affine on either side of ``-b / u``.  Two exact tools follow from that:

* :class:`PiecewiseLinear` propagates the network as a function of ``x``; every
  new node is a sign change of the pre-activation, solved in closed form.
* :func:`value_measures` pushes Lebesgue measure on each target cell forward
  through the chain.  It stays a piecewise-constant density plus atoms, so
  ``int |R - h|`` over a cell is ``int |y - h_k| dmu_k(y)`` in closed form.

The second is the one to integrate with: level adjustments fold every higher
ramp, so the number of linear pieces of ``R`` can double per block, while the
pushed-forward density only gains O(1) breakpoints per block and cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ResidualBlock, ResNet

ZERO_TOL = 1e-12


class TooManyNodes(RuntimeError):
    pass


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous PL function: values ``ys`` at sorted ``xs`` plus two outer rays."""

    xs: np.ndarray
    ys: np.ndarray
    left_slope: float
    right_slope: float

    @classmethod
    def identity(cls, anchor: float = 0.0) -> "PiecewiseLinear":
        return cls(np.array([anchor], float), np.array([anchor], float), 1.0, 1.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        y = np.interp(x, self.xs, self.ys)
        y = np.where(x < self.xs[0], self.ys[0] + self.left_slope * (x - self.xs[0]), y)
        y = np.where(x > self.xs[-1], self.ys[-1] + self.right_slope * (x - self.xs[-1]), y)
        return y

    def with_nodes(self, extra) -> "PiecewiseLinear":
        """Same function with additional nodes inserted (values interpolated)."""
        extra = np.asarray(extra, dtype=np.float64).reshape(-1)
        xs = np.unique(np.concatenate([self.xs, extra]))
        return PiecewiseLinear(xs, self(xs), self.left_slope, self.right_slope)

    def apply(self, u: float, b: float, v: float, zero_tol: float = ZERO_TOL) -> "PiecewiseLinear":
        if v == 0.0:
            return self
        xs, ys = self.xs, self.ys
        g = u * ys + b
        # a pre-activation within rounding of 0 (e.g. a plateau sitting exactly on
        # the threshold) is not a sign change; treating it as one adds spurious nodes
        g = np.where(np.abs(g) <= zero_tol * np.maximum(np.abs(u * ys), abs(b)), 0.0, g)
        new_x, new_y = [], []
        gl = u * self.left_slope
        if gl != 0.0:
            with np.errstate(over="ignore"):
                root = xs[0] - g[0] / gl
            if root < xs[0] and np.isfinite(root):
                new_x.append([root])
                new_y.append([ys[0] + self.left_slope * (root - xs[0])])
        i = np.flatnonzero(g[:-1] * g[1:] < 0.0)
        cx, cy = crossings(xs, ys, g, i)
        new_x.append(cx)
        new_y.append(cy)
        gr = u * self.right_slope
        if gr != 0.0:
            with np.errstate(over="ignore"):
                root = xs[-1] - g[-1] / gr
            if root > xs[-1] and np.isfinite(root):
                new_x.append([root])
                new_y.append([ys[-1] + self.right_slope * (root - xs[-1])])

        cx, cy = np.concatenate(new_x), np.concatenate(new_y)
        all_x = np.concatenate([xs, cx])
        all_y = np.concatenate([ys, cy])
        crossing = np.concatenate([np.zeros(xs.size, bool), np.ones(cx.size, bool)])
        order = np.argsort(all_x, kind="stable")
        all_x, all_y, crossing = all_x[order], all_y[order], crossing[order]
        pre = np.concatenate([g, np.zeros(cx.size)])[order]
        act = np.where(crossing, 0.0, np.maximum(pre, 0.0))
        out_y = all_y + v * act

        far_left = u * (all_y[0] - self.left_slope) + b  # pre-activation one unit left
        far_right = u * (all_y[-1] + self.right_slope) + b
        sl = self.left_slope * (1.0 + v * u) if _ray_active(u * all_y[0] + b, far_left) else self.left_slope
        sr = self.right_slope * (1.0 + v * u) if _ray_active(u * all_y[-1] + b, far_right) else self.right_slope
        return PiecewiseLinear(all_x, out_y, sl, sr)

    def apply_block(self, block: ResidualBlock) -> "PiecewiseLinear":
        if block.dim != 1:
            raise ValueError("only scalar networks can be traced")
        return self.apply(float(block.u_row[0]), block.bias, float(block.v_col[0]))

    def slopes(self) -> np.ndarray:
        """Slope of every interior segment (nan for zero-width ones)."""
        dx = np.diff(self.xs)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(dx > 0, np.diff(self.ys) / np.where(dx > 0, dx, 1.0), np.nan)

    def kinks(self, rtol: float = 1e-9) -> np.ndarray:
        """Abscissae where the slope actually changes."""
        xs = self.xs
        if xs.size == 0:
            return xs
        s = np.concatenate([[self.left_slope], self.slopes(), [self.right_slope]])
        a, c = s[:-1], s[1:]
        with np.errstate(invalid="ignore"):
            keep = np.abs(a - c) > rtol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(c)))
        keep |= np.isnan(a) | np.isnan(c)
        return np.unique(xs[keep])


def crossings(xs: np.ndarray, ys: np.ndarray, g: np.ndarray, i: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero of the affine ``g`` on each segment ``[i, i + 1]`` and the value of ``ys`` there.

    Interpolates from the endpoint where ``|g|`` is smaller; from the far end a
    long segment loses every digit of the offset to cancellation.
    """
    near_left = np.abs(g[i]) <= np.abs(g[i + 1])
    j = np.where(near_left, i, i + 1)
    k = np.where(near_left, i + 1, i)
    t = g[j] / (g[j] - g[k])
    return xs[j] + t * (xs[k] - xs[j]), ys[j] + t * (ys[k] - ys[j])


def _ray_active(g_at: float, g_far: float) -> bool:
    """Whether the ReLU is on along an outer ray (pre-activation is affine there)."""
    return g_far > 0.0 or (g_far == 0.0 and g_at > 0.0)


def trace_network(net: ResNet, anchor: float = 0.0, max_nodes: int | None = None) -> PiecewiseLinear:
    """The read-out of ``net`` as an exact PL function of its scalar input.

    Raises :class:`TooManyNodes` once the node count exceeds ``max_nodes``.
    """
    if net.dim != 1:
        raise ValueError("only scalar networks can be traced")
    f = PiecewiseLinear.identity(anchor)
    for i, blk in enumerate(net.blocks):
        f = f.apply_block(blk)
        if max_nodes is not None and f.xs.size > max_nodes:
            raise TooManyNodes(f"{f.xs.size} nodes after block {i}")
    w, c = float(net.out_weights[0]), net.out_bias
    return PiecewiseLinear(f.xs, w * f.ys + c, w * f.left_slope, w * f.right_slope)


def breakpoints(net: ResNet, anchor: float = 0.0, max_nodes: int | None = None) -> np.ndarray:
    return trace_network(net, anchor, max_nodes).kinks()


# --- pushed-forward measures -----------------------------------------------

@dataclass(frozen=True)
class ValueMeasures:
    """Per-tag measures on the value axis: disjoint density pieces plus atoms.

    Piece ``i`` has density ``rho[i]`` on ``[lo[i], hi[i]]`` and belongs to tag
    ``tag[i]``; atom ``j`` has mass ``mass[j]`` (possibly ``inf``) at ``pos[j]``.
    Pieces of one tag may overlap (densities add); :meth:`canonical` makes
    them disjoint and sorted, which only matters for size.
    """

    tag: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rho: np.ndarray
    atom_tag: np.ndarray
    pos: np.ndarray
    mass: np.ndarray

    @property
    def n_pieces(self) -> int:
        return int(self.lo.size)

    def map_affine(self, active_piece: np.ndarray, active_atom: np.ndarray,
                   alpha: float, beta: float) -> "ValueMeasures":
        """Apply ``y = alpha s + beta`` to the selected pieces and atoms, identity elsewhere."""
        lo, hi, rho = self.lo, self.hi, self.rho
        tag = self.tag
        pos = np.where(active_atom, alpha * self.pos + beta, self.pos)
        atom_tag, mass = self.atom_tag, self.mass
        if alpha == 0.0:
            width = np.where(active_piece, hi - lo, 0.0)
            atom_tag = np.concatenate([atom_tag, tag[active_piece]])
            pos = np.concatenate([pos, np.full(int(active_piece.sum()), beta)])
            mass = np.concatenate([mass, (rho * width)[active_piece]])
            keep = ~active_piece
            tag, lo, hi, rho = tag[keep], lo[keep], hi[keep], rho[keep]
        else:
            with np.errstate(invalid="ignore"):
                a = np.where(active_piece, alpha * lo + beta, lo)
                b = np.where(active_piece, alpha * hi + beta, hi)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            rho = np.where(active_piece, rho / abs(alpha), rho)
        return ValueMeasures(tag, lo, hi, rho, atom_tag, pos, mass)

    @property
    def size(self) -> int:
        return int(self.lo.size + self.pos.size)

    def apply(self, u: float, b: float, v: float) -> "ValueMeasures":
        """Push through ``s -> s + v relu(u s + b)``."""
        alpha, beta = 1.0 + v * u, v * b
        if u == 0.0:
            on = b > 0.0
            return self.map_affine(np.full(self.lo.size, on), np.full(self.pos.size, on), 1.0, beta)
        s0 = -b / u
        m = self._split(s0)
        rep = _representative(m.lo, m.hi)
        return m.map_affine(u * rep + b > 0.0, u * m.pos + b > 0.0, alpha, beta)

    def apply_block(self, block: ResidualBlock) -> "ValueMeasures":
        return self.apply(float(block.u_row[0]), block.bias, float(block.v_col[0]))

    def integrate_abs(self, centers: np.ndarray) -> np.ndarray:
        """``int |y - centers[t]| dmu_t(y)`` for every tag ``t``."""
        n = centers.size
        c = centers[self.tag]
        lo, hi, rho = self.lo - c, self.hi - c, self.rho
        with np.errstate(invalid="ignore"):
            same = lo * hi >= 0.0
            # antiderivative of |y| is sign(y) y^2 / 2; factor the same-sign case
            val = np.where(same, 0.5 * np.abs(hi - lo) * np.abs(hi + lo),
                           0.5 * (lo * lo + hi * hi))
        val = np.where(np.isfinite(lo) & np.isfinite(hi), rho * val, np.inf)
        out = np.bincount(self.tag, weights=val, minlength=n).astype(float)
        dist = np.abs(self.pos - centers[self.atom_tag])
        with np.errstate(invalid="ignore"):
            atom = np.where(dist == 0.0, 0.0, self.mass * dist)
        return out + np.bincount(self.atom_tag, weights=atom, minlength=n)

    def _split(self, s0: float) -> "ValueMeasures":
        cut = (self.lo < s0) & (self.hi > s0)
        if not cut.any():
            return self
        tag = np.concatenate([self.tag, self.tag[cut]])
        lo = np.concatenate([self.lo, np.full(int(cut.sum()), s0)])
        hi = np.concatenate([np.where(cut, s0, self.hi), self.hi[cut]])
        rho = np.concatenate([self.rho, self.rho[cut]])
        return ValueMeasures(tag, lo, hi, rho, self.atom_tag, self.pos, self.mass)

    def canonical(self) -> "ValueMeasures":
        """Sum overlapping pieces within each tag into disjoint ones; merge equal atoms."""
        keep = self.hi > self.lo
        tag, lo, hi, rho = self.tag[keep], self.lo[keep], self.hi[keep], self.rho[keep]
        pts_tag = np.concatenate([tag, tag])
        pts_x = np.concatenate([lo, hi])
        d_rho = np.concatenate([rho, -rho])
        d_cov = np.concatenate([np.ones(lo.size, np.int64), -np.ones(lo.size, np.int64)])
        order = np.lexsort((pts_x, pts_tag))
        pts_tag, pts_x, d_rho, d_cov = pts_tag[order], pts_x[order], d_rho[order], d_cov[order]
        if pts_x.size:
            new = np.ones(pts_x.size, bool)
            new[1:] = (pts_tag[1:] != pts_tag[:-1]) | (pts_x[1:] != pts_x[:-1])
            starts = np.flatnonzero(new)
            pts_tag, pts_x = pts_tag[starts], pts_x[starts]
            d_rho = np.add.reduceat(d_rho, starts)
            d_cov = np.add.reduceat(d_cov, starts)
            # cumulative sums restarted at each tag so no residue leaks across tags
            first = np.ones(pts_tag.size, bool)
            first[1:] = pts_tag[1:] != pts_tag[:-1]
            group = np.cumsum(first) - 1
            cs_rho = np.cumsum(d_rho)
            cs_cov = np.cumsum(d_cov)
            base = np.flatnonzero(first)
            rho_at = cs_rho - (cs_rho[base] - d_rho[base])[group]
            cov_at = cs_cov - (cs_cov[base] - d_cov[base])[group]
            seg = (pts_tag[:-1] == pts_tag[1:]) & (cov_at[:-1] > 0)
            tag, lo, hi, rho = pts_tag[:-1][seg], pts_x[:-1][seg], pts_x[1:][seg], rho_at[:-1][seg]
        atom_tag, pos, mass = self.atom_tag, self.pos, self.mass
        if pos.size > 1:
            order = np.lexsort((pos, atom_tag))
            atom_tag, pos, mass = atom_tag[order], pos[order], mass[order]
            new = np.ones(pos.size, bool)
            new[1:] = (atom_tag[1:] != atom_tag[:-1]) | (pos[1:] != pos[:-1])
            starts = np.flatnonzero(new)
            atom_tag, pos, mass = atom_tag[starts], pos[starts], np.add.reduceat(mass, starts)
        return ValueMeasures(tag, lo, hi, rho, atom_tag, pos, mass)


def _representative(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """An interior point of each (possibly unbounded) interval."""
    with np.errstate(invalid="ignore"):
        mid = 0.5 * lo + 0.5 * hi
    mid = np.where(np.isfinite(lo) & ~np.isfinite(hi), lo + 1.0, mid)
    mid = np.where(~np.isfinite(lo) & np.isfinite(hi), hi - 1.0, mid)
    return np.where(~np.isfinite(lo) & ~np.isfinite(hi), 0.0, mid)


def value_measures(net: ResNet, knots) -> ValueMeasures:
    """Push Lebesgue measure forward through ``net`` (including its read-out).

    Tags: 0 is ``(-inf, knots[0])``, ``k`` is ``[knots[k-1], knots[k]]`` and
    ``len(knots)`` is ``(knots[-1], inf)``.
    """
    if net.dim != 1:
        raise ValueError("only scalar networks can be pushed forward")
    kn = np.asarray(knots, dtype=np.float64)
    lo = np.concatenate([[-np.inf], kn])
    hi = np.concatenate([kn, [np.inf]])
    empty = np.empty(0)
    m = ValueMeasures(np.arange(lo.size), lo, hi, np.ones(lo.size),
                      np.empty(0, np.int64), empty, empty)
    settled = m.size
    for blk in net.blocks:
        m = m.apply_block(blk)
        # folds stack pieces on top of each other; merge once the count has doubled
        if m.size > 2 * settled:
            m = m.canonical()
            settled = m.size
    w, c = float(net.out_weights[0]), net.out_bias
    return m.map_affine(np.ones(m.lo.size, bool), np.ones(m.pos.size, bool), w, c).canonical()


def l1_distance(net: ResNet, knots, values) -> float:
    """Exact ``int_R |net(x) - h(x)| dx`` for the step function ``h`` (zero outside the knots)."""
    centers = np.concatenate([[0.0], np.asarray(values, dtype=np.float64), [0.0]])
    return float(np.sum(value_measures(net, knots).integrate_abs(centers)))
