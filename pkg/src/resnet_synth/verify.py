"""Quantitative checks on compiled networks.

* ``exact_l1_error_1d``: exact integral of ``|R - h|`` for scalar networks.
* ``mc_l1_error``: Monte-Carlo estimate for any dimension, reproducible per seed.
* ``check_conditions_1d``: every stage of a 1-D compilation against its closed form.
* ``check_grid_indicator`` / ``check_compiled_nd``: the d-dimensional analogues,
  evaluated on probes (sound in 1-D only, where probes straddle every kink).
* ``lipschitz_bound``: a product bound over blocks.

Value comparisons use a scaled error ``|got - want| / max(1, |want|)`` so that
large intermediate plateaus get the same relative slack as unit values.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import ordered_map
from .compiler1d import MAX_TRACE_NODES, ConstructionTrace, PiecewiseConstant1D
from .compilernd import ADJUST_MARGIN, GridIndicatorSpec, PiecewiseConstantND
from .core import ResNet, eval_network, eval_prefixes
from .pwl import TooManyNodes, l1_distance, trace_network

TOL = 1e-9
STRADDLE = 1e-7
MC_CHUNK = 1 << 16
# pieces narrower than this (relative to max |x|) are below what float probing resolves
RESOLVABLE_WIDTH = 1e-9


class BreakpointError(ValueError):
    """The network is not affine on an interval assumed to be kink-free."""

    def __init__(self, lo: float, hi: float, gap: float):
        self.interval = (lo, hi)
        self.gap = gap
        super().__init__(f"network is not affine on [{lo:.12g}, {hi:.12g}] "
                         f"(midpoint off the chord by {gap:.3g}); breakpoints are incomplete")


# --- report ----------------------------------------------------------------

_RELATIONS = {
    "<=": lambda m, t: m <= t,
    ">": lambda m, t: m > t,
    ">=": lambda m, t: m >= t,
}


@dataclass(frozen=True)
class Check:
    """One named invariant.  ``passed`` is derived from ``measured relation threshold``."""

    name: str
    measured: float
    threshold: float
    relation: str = "<="
    where: object = None
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.relation not in _RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        m = float(self.measured)
        ok = not math.isnan(m) and bool(_RELATIONS[self.relation](m, float(self.threshold)))
        object.__setattr__(self, "measured", m)
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "passed", ok)


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    l1_error: float | None = None
    l1_bound: float | None = None
    mc_stderr: float | None = None

    def add(self, name: str, measured: float, threshold: float, relation: str = "<=", where=None) -> Check:
        chk = Check(name, measured, threshold, relation, _plain(where))
        self.checks.append(chk)
        return chk

    def extend(self, other: "VerificationReport") -> "VerificationReport":
        self.checks.extend(other.checks)
        for key in ("l1_error", "l1_bound", "mc_stderr"):
            if getattr(other, key) is not None:
                setattr(self, key, getattr(other, key))
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __len__(self):
        return len(self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "l1_error": self.l1_error, "l1_bound": self.l1_bound,
                "mc_stderr": self.mc_stderr, "checks": [asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        rows = [("check", "status", "measured", "rel", "threshold", "worst at")]
        for c in self.checks:
            rows.append((c.name, "PASS" if c.passed else "FAIL", f"{c.measured:.6g}", c.relation,
                         f"{c.threshold:.6g}", "" if c.where is None else str(c.where)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows)


def _plain(where):
    if where is None:
        return None
    if isinstance(where, (tuple, list, np.ndarray)):
        return [float(v) for v in np.asarray(where).reshape(-1)]
    return float(where)


def _scaled_error(got: np.ndarray, want) -> np.ndarray:
    want = np.broadcast_to(np.asarray(want, dtype=np.float64), got.shape)
    return np.abs(got - want) / np.maximum(1.0, np.abs(want))


def _worst(err: np.ndarray, where: np.ndarray) -> tuple[float, object]:
    if err.size == 0:
        return 0.0, None
    i = int(np.nanargmax(err)) if not np.all(np.isnan(err)) else 0
    return float(err[i]), where[i]


def _add_value_check(report, name, got, want, where, tol=TOL):
    err, at = _worst(_scaled_error(got, want), where)
    report.add(name, err, tol, where=at)


def _add_range_check(report, name, got, lo, hi, where, tol=TOL):
    """Largest scaled excursion of ``got`` outside ``[lo, hi]``."""
    scale = max(1.0, abs(lo), abs(hi))
    over = np.maximum(np.maximum(lo - got, got - hi), 0.0) / scale
    err, at = _worst(over, where)
    report.add(name, err, tol, where=at)


# --- exact 1-D integration -------------------------------------------------

def _segment_abs_integral(p: np.ndarray, q: np.ndarray, width: np.ndarray) -> np.ndarray:
    """Integral of ``|f|`` for affine ``f`` with end values ``p, q`` over ``width``."""
    same = p * q >= 0.0
    out = np.empty_like(p)
    out[same] = 0.5 * (np.abs(p[same]) + np.abs(q[same])) * width[same]
    ps, qs = p[~same], q[~same]
    out[~same] = 0.5 * (ps * ps + qs * qs) / (np.abs(ps) + np.abs(qs)) * width[~same]
    return out


def l1_error_on_partition(net: ResNet, target: PiecewiseConstant1D, points) -> float:
    """Exact ``int |R - h|`` given abscissae that include every kink of ``R`` and every knot.

    Raises :class:`BreakpointError` if the midpoint of some interval is off the
    chord, and returns ``inf`` if ``R`` does not vanish on the outer rays.
    """
    if net.dim != 1:
        raise ValueError("exact integration needs a scalar network")
    pts = np.unique(np.concatenate([np.asarray(points, dtype=np.float64).reshape(-1), target.knots]))
    r = eval_network(net, pts[:, None])
    for x0, step in ((pts[0], -1.0), (pts[-1], 1.0)):
        far = eval_network(net, np.array([[x0 + step]]))[0]
        near = eval_network(net, np.array([[x0]]))[0]
        if abs(far) > TOL or abs(near) > TOL:
            return math.inf
    lo, hi = pts[:-1], pts[1:]
    mid = 0.5 * (lo + hi)
    r_mid = eval_network(net, mid[:, None])
    chord = 0.5 * (r[:-1] + r[1:])
    scale = np.maximum(1.0, np.maximum(np.abs(r[:-1]), np.abs(r[1:])))
    # evaluating at a rounded input costs |slope| ulp(x); steep pieces need that slack
    chord_slope = np.abs(r[1:] - r[:-1]) / (hi - lo)
    slope = chord_slope.copy()
    slope[1:] = np.maximum(slope[1:], chord_slope[:-1])
    slope[:-1] = np.maximum(slope[:-1], chord_slope[1:])
    slack = TOL + 64.0 * np.finfo(np.float64).eps * slope * np.maximum(1.0, np.abs(mid)) / scale
    gap = np.abs(r_mid - chord) / scale
    bad = np.flatnonzero(gap > slack)
    if bad.size:
        i = int(bad[np.argmax(gap[bad])])
        raise BreakpointError(float(lo[i]), float(hi[i]), float(gap[i]))
    h = target(mid)
    return float(np.sum(_segment_abs_integral(r[:-1] - h, r[1:] - h, hi - lo)))


def _resolvable(trace: ConstructionTrace, target: PiecewiseConstant1D) -> bool:
    """Whether the breakpoint list is exhaustive and every piece is wide enough to probe in float."""
    if not (trace.breakpoints and trace.notes.get("breakpoints_complete")):
        return False
    scale = max(1.0, float(np.max(np.abs(target.knots))))
    return trace.notes.get("min_piece_width", math.inf) >= RESOLVABLE_WIDTH * scale


def exact_l1_error_1d(net: ResNet, trace: ConstructionTrace | None, target: PiecewiseConstant1D) -> float:
    """Exact L1 distance between a scalar network and a 1-D target.

    Integrates the pushed-forward value measure of every cell, which needs no
    breakpoint list.  When ``trace`` carries an exhaustive breakpoint list the
    result is cross-checked against integration between those breakpoints,
    whose midpoint self-check raises :class:`BreakpointError` on a missing kink.
    The cross-check is skipped when some piece is narrower than float
    evaluation can resolve (deep adjustment folds produce such pieces).
    """
    l1 = l1_distance(net, target.knots, target.values)
    if trace is not None and _resolvable(trace, target):
        ref = l1_error_on_partition(net, target, trace.breakpoints)
        if not abs(ref - l1) <= 1e-9 * max(1.0, l1):
            raise BreakpointError(float(target.knots[0]), float(target.knots[-1]), abs(ref - l1))
    return l1


def l1_bound_1d(target: PiecewiseConstant1D, delta: float) -> float:
    return 4.0 * target.M * delta * target.h_inf


def tolerant_volume_bound(target: PiecewiseConstantND, delta: float) -> float:
    """``2 ||h|| vol(I minus the union of delta-interiors)``; equals ``4 M delta ||h||`` in 1-D.

    Valid because the compiled network matches ``h`` on every delta-interior,
    vanishes outside ``I`` and is bounded by ``||h||`` (up to the adjustment margin).
    """
    total = 0.0
    for idx in np.ndindex(target.shape):
        sides = np.array([kn[i + 1] - kn[i] for kn, i in zip(target.axis_knots, idx)])
        total += np.prod(sides) - np.prod(sides - 2.0 * delta)
    return 2.0 * target.h_inf * float(total)


# --- Monte Carlo -----------------------------------------------------------

def _as_nd(target) -> PiecewiseConstantND:
    if isinstance(target, PiecewiseConstant1D):
        return PiecewiseConstantND.from_1d(target)
    return target


def mc_l1_error(net: ResNet, target, box, n: int, seed: int) -> tuple[float, float]:
    """``(estimate, stderr)`` of ``int_box |R - h|`` from ``n`` uniform samples.

    Sample ``i`` belongs to chunk ``i // 65536`` and chunk ``j`` draws from a
    generator keyed by ``(seed, j)``, so the result does not depend on the
    number of workers.
    """
    n = int(n)
    if n < 100:
        raise ValueError("mc_l1_error needs n >= 100")
    target = _as_nd(target)
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    if box.shape[0] != net.dim or target.dims != net.dim:
        raise ValueError("box, target and network dimensions differ")
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi <= lo):
        raise ValueError("box must have lo < hi on every axis")
    vol = float(np.prod(hi - lo))
    sizes = [min(MC_CHUNK, n - s) for s in range(0, n, MC_CHUNK)]

    def work(job):
        j, size = job
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(j,)))
        x = rng.uniform(lo, hi, size=(size, net.dim))
        e = np.abs(eval_network(net, x) - target(x))
        m = float(np.mean(e))
        return size, m, float(np.sum((e - m) ** 2))

    parts = ordered_map(work, list(enumerate(sizes)))
    # Chan et al. pairwise merge of (count, mean, M2); merge order is fixed
    count, mean, m2 = 0, 0.0, 0.0
    for c, m, s in parts:
        tot = count + c
        d = m - mean
        mean += d * c / tot
        m2 += s + d * d * count * c / tot
        count = tot
    var = m2 / (count - 1)
    return vol * mean, vol * math.sqrt(var / count)


# --- 1-D stage checks ------------------------------------------------------

def probe_points_1d(knots, breakpoints=(), per_interval: int = 1000) -> np.ndarray:
    """Dense probes on every cell, on both exterior rays, and straddling every breakpoint."""
    knots = np.asarray(knots, dtype=np.float64)
    span = knots[-1] - knots[0]
    parts = [np.linspace(a, b, per_interval) for a, b in zip(knots[:-1], knots[1:])]
    parts.append(np.linspace(knots[0] - span, knots[0], per_interval))
    parts.append(np.linspace(knots[-1], knots[-1] + span, per_interval))
    bps = np.asarray(breakpoints, dtype=np.float64)
    parts += [bps, bps - STRADDLE, bps + STRADDLE, knots]
    return np.unique(np.concatenate(parts))


def _trapezoid(x, lo, hi, height, delta):
    return height * np.clip(np.minimum((x - lo) / delta, (hi - x) / delta), 0.0, 1.0)


def check_conditions_1d(trace: ConstructionTrace, target: PiecewiseConstant1D,
                        probes_per_interval: int = 1000) -> VerificationReport:
    """Check every checkpoint of a 1-D compilation against its closed form.

    Induction stages ``R_m``: C1 zero left of ``a_0``; C2 trapezoid of height
    ``(k+1)H`` on each ``I_k``, ``k <= m``; C3 plateau ``(k+1)H`` on each
    delta-interior; C4 ``0 <= R_m <= (m+1)H`` left of ``a_m``; C5 the tail
    ``-(m+1)H (x - a_m) / delta`` right of ``a_m``.

    Adjustment stages ``R*_k``: (a) zero outside ``(a_0, a_M)``; (b) ``h_j`` on
    ``I_j^delta`` for ``j > k``; (c) ``(j+1)H`` there for ``j <= k``; (d)
    ``-H <= R*_k <= (k+1)H``.  Plus level-set containment on ``R*_M``,
    locality of each adjustment, and the three final properties on ``R*_0``.
    """
    report = VerificationReport()
    if not trace.checkpoints:
        return report
    knots, H, delta, M = target.knots, trace.h_inf, trace.delta, target.M
    x = probe_points_1d(knots, trace.breakpoints, probes_per_interval)
    labels = list(trace.checkpoints)
    vals = dict(zip(labels, eval_prefixes(trace.net, x[:, None], [trace.checkpoints[k] for k in labels])))
    a0, aM = knots[0], knots[-1]
    interior = [(x >= knots[k - 1] + delta) & (x <= knots[k] - delta) for k in range(1, M + 1)]
    in_cell = [(x >= knots[k - 1]) & (x <= knots[k]) for k in range(1, M + 1)]

    for m in range(M + 1):
        label = f"R_{m}"
        if label not in vals:
            continue
        r, am = vals[label], knots[m]
        left = x <= a0
        _add_value_check(report, f"{label}.C1", r[left], 0.0, x[left])
        sel = np.zeros_like(x, bool)
        want = np.zeros_like(x)
        for k in range(1, m + 1):
            sel |= in_cell[k - 1]
            want = np.where(in_cell[k - 1], _trapezoid(x, knots[k - 1], knots[k], (k + 1) * H, delta), want)
        _add_value_check(report, f"{label}.C2", r[sel], want[sel], x[sel])
        sel = np.zeros_like(x, bool)
        want = np.zeros_like(x)
        for k in range(1, m + 1):
            sel |= interior[k - 1]
            want = np.where(interior[k - 1], (k + 1) * H, want)
        _add_value_check(report, f"{label}.C3", r[sel], want[sel], x[sel])
        sel = x <= am
        _add_range_check(report, f"{label}.C4", r[sel], 0.0, (m + 1) * H, x[sel])
        sel = x >= am
        _add_value_check(report, f"{label}.C5", r[sel], -(m + 1) * H / delta * (x[sel] - am), x[sel])

    outside = (x <= a0) | (x >= aM)
    for k in range(M, -1, -1):
        label = f"R*_{k}"
        if label not in vals:
            continue
        r = vals[label]
        _add_value_check(report, f"{label}.a", r[outside], 0.0, x[outside])
        sel = np.zeros_like(x, bool)
        want = np.zeros_like(x)
        for j in range(k + 1, M + 1):
            sel |= interior[j - 1]
            want = np.where(interior[j - 1], target.values[j - 1], want)
        _add_value_check(report, f"{label}.b", r[sel], want[sel], x[sel])
        sel = np.zeros_like(x, bool)
        want = np.zeros_like(x)
        for j in range(1, k + 1):
            sel |= interior[j - 1]
            want = np.where(interior[j - 1], (j + 1) * H, want)
        _add_value_check(report, f"{label}.c", r[sel], want[sel], x[sel])
        _add_range_check(report, f"{label}.d", r, -H, (k + 1) * H, x)

    top = f"R*_{M}"
    if top in vals:
        r = vals[top]
        sel = np.zeros_like(x, bool)
        lo = np.zeros_like(x)
        for k in range(1, M + 1):
            sel |= interior[k - 1]
            lo = np.where(interior[k - 1], k * H, lo)
        # k H < R <= (k+1) H; the upper side is C3 already, the lower one is strict
        margin = (r[sel] - lo[sel]) / max(H, 1.0)
        m, at = (float(np.min(margin)), x[sel][np.argmin(margin)]) if margin.size else (math.inf, None)
        report.add(f"{top}.level_sets", m, 0.0, ">", at)
    for k in range(M, 0, -1):
        hi_label, lo_label = f"R*_{k}", f"R*_{k - 1}"
        if hi_label in vals and lo_label in vals:
            frozen = vals[hi_label] <= k * H
            _add_value_check(report, f"{lo_label}.locality", vals[lo_label][frozen],
                             vals[hi_label][frozen], x[frozen])
    if "R*_0" in vals:
        report.extend(check_final_1d(trace.net.prefix(trace.checkpoints["R*_0"]), target, delta, x))
    return report


def check_final_1d(net: ResNet, target: PiecewiseConstant1D, delta: float, probes=None,
                   values=None) -> VerificationReport:
    """The three end-to-end properties: zero off ``(a_0, a_M)``, ``h_k`` on ``I_k^delta``, ``|R| <= H``."""
    report = VerificationReport()
    knots, H = target.knots, target.h_inf
    x = probe_points_1d(knots) if probes is None else np.asarray(probes, dtype=np.float64)
    r = eval_network(net, x[:, None]) if values is None else values
    outside = (x <= knots[0]) | (x >= knots[-1])
    _add_value_check(report, "final.zero_outside", r[outside], 0.0, x[outside])
    sel = np.zeros_like(x, bool)
    want = np.zeros_like(x)
    for k in range(1, target.M + 1):
        inside = (x >= knots[k - 1] + delta) & (x <= knots[k] - delta)
        sel |= inside
        want = np.where(inside, target.values[k - 1], want)
    _add_value_check(report, "final.interior_values", r[sel], want[sel], x[sel])
    _add_range_check(report, "final.bounded", r, -H, H, x)
    return report


def traced_breakpoints(net: ResNet, target: PiecewiseConstant1D, delta: float) -> ConstructionTrace:
    """A checkpoint-free trace holding the kinks of an arbitrary scalar ``net``, if tractable."""
    notes = {"breakpoints_complete": False}
    bps = ()
    try:
        kinks = trace_network(net, float(target.knots[0]), MAX_TRACE_NODES).kinks()
    except TooManyNodes:
        pass
    else:
        bps = tuple(float(x) for x in kinks)
        notes["breakpoints_complete"] = True
        if kinks.size > 1:
            notes["min_piece_width"] = float(np.min(np.diff(kinks)))
    return ConstructionTrace(delta, target.h_inf, net, {}, bps, notes)


def verify_exact_1d(net: ResNet, target: PiecewiseConstant1D, delta: float,
                    trace: ConstructionTrace | None = None, per_interval: int = 1000) -> VerificationReport:
    """Final properties at probes plus the exact L1 error against ``4 M delta ||h||``.

    Without a compilation ``trace`` the breakpoints are traced from ``net`` itself.
    """
    if trace is None:
        trace = traced_breakpoints(net, target, delta)
    bps = trace.breakpoints
    x = probe_points_1d(target.knots, bps, per_interval)
    report = check_final_1d(net, target, delta, x)
    try:
        l1 = exact_l1_error_1d(net, trace, target)
    except BreakpointError as exc:
        report.add("l1.breakpoints_complete", exc.gap, TOL, where=exc.interval)
        return report
    bound = l1_bound_1d(target, delta)
    report.l1_error, report.l1_bound = l1, bound
    report.add("l1.within_bound", l1, bound)
    return report


# --- d-dimensional checks --------------------------------------------------

def _interior_probes(axis_knots, idx, delta, rng, n_random: int) -> np.ndarray:
    """Center, corners and random points of a cell's delta-interior.

    Corners are pulled in by a few ulps: ``kn + delta`` rounds, and a probe one
    ulp onto a ramp of slope ``~M H / delta`` is off the plateau by that much.
    """
    lo = np.array([kn[i] + delta for kn, i in zip(axis_knots, idx)])
    hi = np.array([kn[i + 1] - delta for kn, i in zip(axis_knots, idx)])
    pull = 8.0 * np.finfo(np.float64).eps * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    lo, hi = lo + pull, hi - pull
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)], indexing="ij")).reshape(len(lo), -1).T
    pts = [0.5 * (lo + hi)[None, :], corners]
    if n_random:
        pts.append(rng.uniform(lo, hi, size=(n_random, lo.size)))
    return np.concatenate(pts)


def exterior_probes(axis_knots, n: int, seed: int = 0) -> np.ndarray:
    """Points outside the grid support: random ones in a padded box plus just-outside face points."""
    rng = np.random.default_rng(seed)
    lo = np.array([kn[0] for kn in axis_knots])
    hi = np.array([kn[-1] for kn in axis_knots])
    span = hi - lo
    x = rng.uniform(lo - span, hi + span, size=(4 * n, lo.size))
    outside = np.any((x < lo) | (x > hi), axis=1)
    x = x[outside][:n]
    faces = []
    eps = 1e-9 * np.maximum(1.0, np.abs(np.concatenate([lo, hi])).max())
    for j in range(lo.size):
        for side, val in ((0, lo[j] - eps), (1, hi[j] + eps)):
            f = rng.uniform(lo, hi, size=(max(1, n // (4 * lo.size)), lo.size))
            f[:, j] = val
            faces.append(f)
    return np.concatenate([x] + faces)


def check_grid_indicator(net: ResNet, spec: GridIndicatorSpec, axis_knots, n_random: int = 8,
                         n_exterior: int = 2000, seed: int = 0) -> VerificationReport:
    """Plateau values, distinctness, zero off the grid, and threshold separation."""
    report = VerificationReport()
    rng = np.random.default_rng(seed)
    axis_knots = [np.asarray(kn, dtype=np.float64) for kn in axis_knots]
    d, H, delta = len(axis_knots), spec.h_inf, spec.delta
    cells = list(np.ndindex(tuple(kn.size - 1 for kn in axis_knots)))
    probes = [_interior_probes(axis_knots, c, delta, rng, n_random) for c in cells]
    x_in = np.concatenate(probes)
    want = np.concatenate([np.full(len(p), spec.level_values[c]) for p, c in zip(probes, cells)])
    x_out = exterior_probes(axis_knots, n_exterior, seed)

    coupled = spec.stages.get("coupled")
    counts = [len(net.blocks)] + ([coupled] if coupled is not None else [])
    v_in = eval_prefixes(net, x_in, counts)
    v_out = eval_prefixes(net, x_out, counts)
    _add_value_check(report, "indicator.cell_values", v_in[0], want, x_in)
    levels = np.sort(np.array(list(spec.level_values.values())))
    gap = float(np.min(np.diff(levels))) if levels.size > 1 else math.inf
    report.add("indicator.distinct", gap, 0.0, ">")
    _add_value_check(report, "indicator.zero_outside", v_out[0], 0.0, x_out)
    if coupled is not None:
        t = spec.threshold
        _add_range_check(report, "indicator.below_threshold_outside", v_out[1], -math.inf, t, x_out)
        m1 = axis_knots[0].size - 1
        margin = v_in[1] - t
        i = int(np.argmin(margin))
        need = H * min(1.0 / (m1 + 1), 1.0)
        report.add("indicator.separation_margin", float(margin[i]), need * (1 - TOL), ">=", x_in[i])
    return report


def check_compiled_nd(net: ResNet, target: PiecewiseConstantND, delta: float, n_random: int = 8,
                      n_exterior: int = 2000, seed: int = 0) -> VerificationReport:
    """End-to-end checks at probes: cell values on delta-interiors, zero outside, boundedness.

    The bound allows an overshoot of ``ADJUST_MARGIN`` times the top plateau,
    the width of the sliver each adjustment leaves between neighbouring levels.
    """
    report = VerificationReport()
    rng = np.random.default_rng(seed)
    axis_knots = target.axis_knots
    cells = list(np.ndindex(target.shape))
    centers = target.cell_centers()
    _add_value_check(report, "compiled.cell_centers", np.atleast_1d(eval_network(net, centers)),
                     target.cell_values.reshape(-1), centers)
    probes = [_interior_probes(axis_knots, c, delta, rng, n_random) for c in cells]
    x_in = np.concatenate(probes)
    want = np.concatenate([np.full(len(p), target.cell_values[c]) for p, c in zip(probes, cells)])
    _add_value_check(report, "compiled.interior_values", eval_network(net, x_in), want, x_in)
    x_out = exterior_probes(axis_knots, n_exterior, seed)
    _add_value_check(report, "compiled.zero_outside", eval_network(net, x_out), 0.0, x_out)
    support = target.support
    x_any = rng.uniform(support[:, 0], support[:, 1], size=(max(n_exterior, 1), target.dims))
    H = target.h_inf
    top = (int(np.prod(target.shape[1:])) + 1) * H if target.dims > 1 else 0.0
    slack = TOL + ADJUST_MARGIN * top / max(H, 1.0)
    _add_range_check(report, "compiled.bounded", eval_network(net, x_any), -H, H, x_any, tol=slack)
    return report


# --- Lipschitz -------------------------------------------------------------

def lipschitz_bound(net: ResNet) -> float:
    """``prod_blocks (1 + |v| |u|) * |w|``, an upper bound on the Lipschitz constant."""
    bound = float(np.linalg.norm(net.out_weights))
    for blk in net.blocks:
        bound *= 1.0 + float(np.linalg.norm(blk.v_col) * np.linalg.norm(blk.u_row))
    return bound
