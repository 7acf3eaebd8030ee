import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import micro_trace, random_target
from resnet_synth.compiler1d import (
    MAX_TRACE_NODES,
    DeltaError,
    PiecewiseConstant1D,
    adjustment_step,
    compile_1d,
    increasing_trapezoid,
    induction_step,
    init_blocks,
    tail_removal,
)
from resnet_synth.core import ResNet, eval_network
from resnet_synth.verify import check_conditions_1d


def _run(blocks, x):
    return eval_network(ResNet(1, tuple(blocks)), np.atleast_1d(np.asarray(x, float))[:, None])


# --- stage examples -----------------------------------------------------------

def test_init_blocks_examples():
    blocks = init_blocks(0.0, 1.0, 0.25)
    assert len(blocks) == 3
    assert _run(blocks, -5.0)[0] == 0.0
    assert _run(blocks, 0.5)[0] == pytest.approx(-2.0, abs=1e-12)


def test_induction_step_examples():
    blocks = init_blocks(0.0, 1.0, 0.25) + induction_step(0, 0.0, 1.0, 1.0, 0.25)
    assert len(blocks) == 6
    got = _run(blocks, [0.5, 0.125, 1.25])
    assert got == pytest.approx([2.0, 1.0, -2.0], abs=1e-12)


def test_induction_step_rejects_narrow_interval():
    with pytest.raises(DeltaError) as info:
        induction_step(3, 0.0, 0.4, 1.0, 0.25)
    assert info.value.interval == 4


def test_tail_removal_examples():
    blocks, _ = increasing_trapezoid([0.0, 1.0, 2.0], 1.0, 0.25)
    assert len(tail_removal()) == 1
    got = _run(blocks, [3.0, 0.5, 1.5])
    assert got == pytest.approx([0.0, 2.0, 3.0], abs=1e-12)


def test_adjustment_step_examples():
    base, _ = increasing_trapezoid([0.0, 1.0], 1.0, 0.25)
    net = base + adjustment_step(1, 1.0, 1.0)
    # the ramp point where the trapezoid is 1.5
    assert _run(base, 0.1875)[0] == pytest.approx(1.5, abs=1e-12)
    assert _run(net, [0.1875, 0.5, -1.0]) == pytest.approx([1.0, 1.0, 0.0], abs=1e-12)
    with pytest.raises(ValueError):
        adjustment_step(1, 1.0, 0.0)


def test_adjustment_at_top_cell_sets_target_value():
    t = PiecewiseConstant1D([0.0, 1.0, 2.0, 3.0], [0.3, -0.7, 0.2])
    base, _ = increasing_trapezoid(t.knots, t.h_inf, 0.1)
    blocks = base + adjustment_step(3, 0.2, t.h_inf)
    assert _run(blocks, 2.5)[0] == pytest.approx(0.2, abs=1e-12)


# --- worked micro example ----------------------------------------------------------

def test_micro_example(micro_target):
    net, trace = compile_1d(micro_target, 0.25)
    assert len(net.blocks) == 8
    got = eval_network(net, np.array([[0.5], [-1.0], [2.0], [0.0625]]))
    assert got == pytest.approx([1.0, 0.0, 0.0, 0.5], abs=1e-9)
    assert list(trace.checkpoints) == ["R_0", "R_1", "R*_1", "R*_0"]
    assert trace.breakpoints == (0.0, 0.125, 0.875, 1.0)


def test_micro_example_matches_hand_trace(micro_target):
    net, _ = compile_1d(micro_target, 0.25)
    x = np.linspace(-1, 2, 3001)
    assert np.max(np.abs(eval_network(net, x[:, None]) - micro_trace(x))) <= 1e-12


# --- construction-level properties ---------------------------------------------------

@given(st.integers(0, 2**31 - 1))
def test_block_count_is_4m_plus_4(seed):
    t = random_target(np.random.default_rng(seed))
    net, trace = compile_1d(t, 0.1 * t.min_width)
    assert len(net.blocks) == 4 * t.M + 4
    assert trace.checkpoints[f"R*_{t.M}"] == 3 + 3 * t.M + 1
    assert trace.checkpoints["R*_0"] == len(net.blocks)


@given(st.integers(0, 2**31 - 1))
def test_breakpoints_sorted_and_inside_support(seed):
    t = random_target(np.random.default_rng(seed), m_hi=8)
    _, trace = compile_1d(t, 0.1 * t.min_width)
    b = np.array(trace.breakpoints)
    assert np.all(np.diff(b) > 0)
    assert b[0] >= t.knots[0] and b[-1] <= t.knots[-1]


@given(st.integers(0, 2**31 - 1))
def test_all_stage_conditions_hold(seed):
    t = random_target(np.random.default_rng(seed), m_hi=6)
    _, trace = compile_1d(t, 0.1 * t.min_width)
    report = check_conditions_1d(trace, t, probes_per_interval=200)
    assert report.passed, report.table()


def test_stage_nets_are_prefixes(standard_target):
    net, trace = compile_1d(standard_target, 0.05)
    for label, stage in trace.stage_nets.items():
        assert stage.blocks == net.blocks[:trace.checkpoints[label]]


def test_negative_and_zero_values_are_supported():
    t = PiecewiseConstant1D([0.0, 1.0, 2.0, 3.0], [-1.0, 0.0, -0.25])
    net, _ = compile_1d(t, 0.1)
    assert eval_network(net, np.array([[0.5], [1.5], [2.5]])) == pytest.approx([-1.0, 0.0, -0.25], abs=1e-9)


def test_halving_delta_never_increases_the_bound(micro_target):
    from resnet_synth.verify import l1_bound_1d
    bounds = [l1_bound_1d(micro_target, 0.25 / 2**k) for k in range(6)]
    assert all(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:]))


def test_large_m_marks_breakpoints_incomplete():
    rng = np.random.default_rng(3)
    t = PiecewiseConstant1D(np.arange(41.0), rng.uniform(-1, 1, 40))
    _, trace = compile_1d(t, 0.1)
    # adjustments fold higher ramps, so exact tracing overflows the node cap
    assert trace.notes["breakpoints_complete"] is False
    assert 0 < len(trace.breakpoints) <= MAX_TRACE_NODES


# --- errors ----------------------------------------------------------------------------

@pytest.mark.parametrize("delta", [0.0, -0.1, 0.5, 0.6])
def test_delta_precondition_is_enforced(micro_target, delta):
    with pytest.raises(DeltaError):
        compile_1d(micro_target, delta)


def test_delta_error_names_the_offending_interval():
    t = PiecewiseConstant1D([0.0, 1.0, 1.1, 3.0], [1.0, 1.0, 1.0])
    with pytest.raises(DeltaError) as info:
        compile_1d(t, 0.06)
    assert info.value.interval == 2
    assert "interval 2" in str(info.value)


def test_degenerate_target_gives_empty_zero_network():
    t = PiecewiseConstant1D([0.0, 1.0, 2.0], [0.0, 0.0])
    net, trace = compile_1d(t, 0.1)
    assert len(net.blocks) == 0
    assert eval_network(net, np.array([[0.5], [7.0]])) == pytest.approx([0.0, 0.0])
    assert trace.h_inf == 0.0 and not trace.checkpoints


@pytest.mark.parametrize("knots, values", [
    ([0.0], []),
    ([0.0, 1.0], [1.0, 2.0]),
    ([1.0, 0.0], [1.0]),
    ([0.0, np.nan], [1.0]),
])
def test_target_validation(knots, values):
    with pytest.raises(ValueError):
        PiecewiseConstant1D(knots, values)


def test_target_json_round_trip():
    t = PiecewiseConstant1D([0.1, 0.7, 2.0], [1.0 / 3.0, -2.5])
    again = PiecewiseConstant1D.from_json(t.to_json())
    assert np.array_equal(again.knots, t.knots) and np.array_equal(again.values, t.values)
    with pytest.raises(ValueError):
        PiecewiseConstant1D.from_json(json.dumps({"knots": [0, 1]}))


def test_target_evaluation_uses_half_open_cells():
    t = PiecewiseConstant1D([0.0, 1.0, 2.0], [3.0, 4.0])
    assert list(t([-0.5, 0.0, 1.0, 1.999, 2.0])) == [0.0, 3.0, 4.0, 4.0, 0.0]
