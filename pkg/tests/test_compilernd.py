import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import indicator_level, random_nd_target
from resnet_synth.compiler1d import DeltaError, PiecewiseConstant1D, compile_1d
from resnet_synth.compilernd import (
    BUILTIN_FUNCTIONS,
    GridIndicatorSpec,
    PiecewiseConstantND,
    adjust_cells,
    compile_grid_indicator,
    compile_nd,
    discretize,
    modulus_of_continuity,
)
from resnet_synth.core import eval_network
from resnet_synth.verify import check_compiled_nd, check_grid_indicator, exterior_probes

UNIT_SQUARE = PiecewiseConstantND(([0.0, 1.0], [0.0, 1.0]), [[1.0]])


def _interior_centers_and_corners(target, delta):
    """Cell centers plus the corners of each delta-interior, with their cell values."""
    pts, vals = [], []
    for idx in np.ndindex(target.shape):
        lo = [kn[i] + delta for kn, i in zip(target.axis_knots, idx)]
        hi = [kn[i + 1] - delta for kn, i in zip(target.axis_knots, idx)]
        pts.append([0.5 * (a + b) for a, b in zip(lo, hi)])
        pts.extend(itertools.product(*zip(lo, hi)))
        vals.extend([target.cell_values[idx]] * (1 + 2 ** target.dims))
    return np.array(pts), np.array(vals)


# --- grid indicator --------------------------------------------------------------

def test_indicator_example_cell_value():
    net, spec = compile_grid_indicator([[0.0, 1.0, 2.0], [0.0, 1.0]], 1.0, 0.1)
    # first cell on both axes (indices are 0-based): (1 + 1/3) h
    assert spec.level_values[(0, 0)] == pytest.approx(4.0 / 3.0)
    assert eval_network(net, [0.5, 0.5]) == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert eval_network(net, [1.5, 0.5]) == pytest.approx(5.0 / 3.0, abs=1e-9)
    assert eval_network(net, [3.0, 0.5]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("dims", [2, 3])
@pytest.mark.parametrize("seed", range(4))
def test_indicator_levels_follow_the_closed_form(dims, seed):
    t = random_nd_target(np.random.default_rng(seed), dims)
    net, spec = compile_grid_indicator(t.axis_knots, t.h_inf, 0.1 * t.min_width)
    for idx in np.ndindex(t.shape):
        assert spec.level_values[idx] == pytest.approx(indicator_level(idx, t.shape, t.h_inf), rel=1e-15)
    report = check_grid_indicator(net, spec, t.axis_knots)
    assert report.passed, report.table()


@pytest.mark.parametrize("dims", [2, 3])
def test_indicator_levels_are_separated_by_the_axis_gap(dims):
    t = random_nd_target(np.random.default_rng(7), dims)
    _, spec = compile_grid_indicator(t.axis_knots, t.h_inf, 0.1 * t.min_width)
    vals = list(spec.level_values.values())
    gap = min(abs(a - b) for a, b in itertools.combinations(vals, 2)) if len(vals) > 1 else np.inf
    assert gap >= t.h_inf / (t.shape[0] + 1) * (1 - 1e-12)


def test_indicator_rejects_bad_inputs():
    with pytest.raises(DeltaError):
        compile_grid_indicator([[0.0, 1.0], [0.0, 0.1]], 1.0, 0.1)
    with pytest.raises(ValueError):
        compile_grid_indicator([[0.0, 1.0], [0.0, 1.0]], 0.0, 0.1)


# --- adjustment --------------------------------------------------------------------

def test_adjustment_appends_one_block_per_cell():
    t = PiecewiseConstantND(([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 2.0]), np.arange(6.0).reshape(3, 2) - 2.5)
    ind, spec = compile_grid_indicator(t.axis_knots, t.h_inf, 0.1)
    net = adjust_cells(ind, spec, t)
    assert len(net.blocks) - len(ind.blocks) == 6
    assert eval_network(net, t.cell_centers()) == pytest.approx(t.cell_values.reshape(-1), abs=1e-9)
    assert eval_network(net, [10.0, -10.0]) == pytest.approx(0.0, abs=1e-12)


def test_adjustment_rejects_tied_levels():
    t = PiecewiseConstantND(([0.0, 1.0, 2.0], [0.0, 1.0]), [[1.0], [2.0]])
    ind, spec = compile_grid_indicator(t.axis_knots, t.h_inf, 0.1)
    tied = GridIndicatorSpec(spec.delta, spec.h_inf, {c: 3.0 for c in spec.level_values}, spec.threshold)
    with pytest.raises(ValueError, match="distinct"):
        adjust_cells(ind, tied, t)


# --- end to end ----------------------------------------------------------------------

def test_unit_square_examples():
    net, trace = compile_nd(UNIT_SQUARE, 0.1)
    assert eval_network(net, [0.5, 0.5]) == pytest.approx(1.0, abs=1e-9)
    assert eval_network(net, [2.0, 2.0]) == pytest.approx(0.0, abs=1e-12)
    assert trace.checkpoints["adjusted"] == len(net.blocks)


@pytest.mark.parametrize("dims", [2, 3])
@settings(max_examples=6)
@given(seed=st.integers(0, 2**31 - 1))
def test_compiled_values_on_interiors_and_zero_outside(dims, seed):
    t = random_nd_target(np.random.default_rng(seed), dims, max_cells=3)
    delta = 0.1 * t.min_width
    net, _ = compile_nd(t, delta)
    x, want = _interior_centers_and_corners(t, delta)
    assert np.max(np.abs(eval_network(net, x) - want)) <= 1e-9
    out = exterior_probes(t.axis_knots, 500, seed % 1000)
    assert np.max(np.abs(eval_network(net, out))) <= 1e-9
    assert check_compiled_nd(net, t, delta).passed


def test_one_dimensional_path_matches_compile_1d(rng):
    t1 = PiecewiseConstant1D([0.0, 0.4, 1.0, 1.7], [0.5, -1.0, 0.25])
    a, _ = compile_nd(PiecewiseConstantND.from_1d(t1), 0.05)
    b, _ = compile_1d(t1, 0.05)
    x = rng.uniform(-1, 3, size=(5000, 1))
    assert np.max(np.abs(eval_network(a, x) - eval_network(b, x))) <= 1e-9


def test_output_is_invariant_along_a_single_cell_axis(rng):
    t = PiecewiseConstantND(([0.0, 1.0, 2.5], [0.0, 2.0]), [[0.3], [-0.8]])
    delta = 0.1
    net, _ = compile_nd(t, delta)
    x1 = np.repeat([0.5, 1.7], 200)
    x2 = rng.uniform(delta, 2.0 - delta, size=400)
    got = eval_network(net, np.column_stack([x1, x2]))
    assert np.max(np.abs(got - np.where(x1 < 1.0, 0.3, -0.8))) <= 1e-9


def test_zero_target_compiles_to_zero():
    t = PiecewiseConstantND(([0.0, 1.0], [0.0, 1.0]), [[0.0]])
    net, _ = compile_nd(t, 0.1)
    assert len(net.blocks) == 0 and eval_network(net, [0.5, 0.5]) == 0.0


# --- target type ------------------------------------------------------------------------

@pytest.mark.parametrize("axes, values", [
    (([0.0, 1.0],), [1.0, 2.0]),
    (([0.0, 0.0, 1.0],), [1.0, 2.0]),
    ((), []),
    (([0.0, 1.0], [0.0, 1.0]), [[np.inf]]),
])
def test_nd_target_validation(axes, values):
    with pytest.raises(ValueError):
        PiecewiseConstantND(axes, values)


def test_nd_target_json_round_trip_and_lookup():
    t = PiecewiseConstantND(([0.0, 1.0, 2.0], [0.0, 0.5]), [[1.0], [-2.0]])
    again = PiecewiseConstantND.from_json(t.to_json())
    assert again.shape == (2, 1) and np.array_equal(again.cell_values, t.cell_values)
    assert list(t([[0.5, 0.25], [1.5, 0.25], [2.0, 0.25], [0.5, -1.0]])) == [1.0, -2.0, 0.0, 0.0]
    one = PiecewiseConstantND.from_json(PiecewiseConstant1D([0.0, 1.0], [3.0]).to_json())
    assert one.dims == 1 and one.to_1d().values[0] == 3.0


# --- discretization -------------------------------------------------------------------

def test_discretize_constant_and_linear_examples():
    t = discretize(lambda p: np.full(len(p), 3.0), [[0.0, 1.0], [0.0, 2.0]], 0.3)
    assert np.all(t.cell_values == 3.0)
    assert t.shape == (4, 7)
    lin = discretize(lambda p: p[:, 0], [[0.0, 1.0]], 0.5)
    assert list(lin.cell_values) == [0.25, 0.75]


@given(st.floats(0.01, 1.0), st.floats(0.5, 3.0))
def test_discretize_cell_side_and_count(r, side):
    t = discretize(lambda p: p[:, 0], [[0.0, side]], r)
    assert np.max(np.diff(t.axis_knots[0])) <= r * (1 + 1e-9)
    assert t.n_cells == int(np.ceil(side / r - 1e-9))


def test_discretize_single_cell_fallback_warns():
    with pytest.warns(UserWarning):
        t = discretize(lambda p: p[:, 0], [[0.0, 1.0]], 2.0)
    assert t.n_cells == 1


def test_discretize_rejects_bad_box_and_resolution():
    with pytest.raises(ValueError):
        discretize(lambda p: p[:, 0], [[1.0, 0.0]], 0.1)
    with pytest.raises(ValueError):
        discretize(lambda p: p[:, 0], [[0.0, 1.0]], 0.0)


def test_sampled_modulus_respects_lipschitz_constant():
    L, r = 2.5, 0.1
    f = lambda p: L * np.linalg.norm(p, axis=1)
    w = modulus_of_continuity(f, [[-1.0, 1.0], [-1.0, 1.0]], r, n_pairs=10_000)
    assert 0.0 < w <= L * r


def test_builtin_functions():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert list(BUILTIN_FUNCTIONS["unit-ball"](pts)) == [1.0, 0.0]
    assert BUILTIN_FUNCTIONS["gaussian"](pts)[0] == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        disk = discretize(BUILTIN_FUNCTIONS["unit-ball"], [[-1.5, 1.5]] * 2, 0.05)
    assert disk.shape == (60, 60) and disk.cell_values.sum() > 0


@pytest.mark.parametrize("delta", [1e-7, 0.005])
def test_large_grid_passes_the_end_to_end_checks(delta):
    # 3600 cells: plateau rounding is amplified by the adjustment slopes, so
    # each adjustment is calibrated on the indicator's actual plateau
    disk = discretize(BUILTIN_FUNCTIONS["unit-ball"], [[-1.5, 1.5]] * 2, 0.05)
    net, _ = compile_nd(disk, delta)
    report = check_compiled_nd(net, disk, delta, n_random=2)
    assert report.passed, report.table()
