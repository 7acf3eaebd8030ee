import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import naive_forward
from resnet_synth.core import (
    DimensionError,
    ParseError,
    ResidualBlock,
    ResNet,
    compose,
    deserialize,
    eval_block,
    eval_network,
    eval_prefixes,
    extend_dimension,
    forward_states,
    load,
    save,
    serialize,
)
from resnet_synth.verify import lipschitz_bound

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def networks(draw, max_dim=3, max_blocks=6):
    d = draw(st.integers(1, max_dim))
    vec = hnp.arrays(np.float64, d, elements=finite)
    blocks = [ResidualBlock(draw(vec), draw(finite), draw(vec))
              for _ in range(draw(st.integers(0, max_blocks)))]
    return ResNet(d, tuple(blocks), draw(vec), draw(finite))


def test_single_block_example():
    blk = ResidualBlock([1.0], 0.0, [1.0])
    assert eval_block(blk, [2.0])[0] == 4.0
    assert eval_block(blk, [-2.0])[0] == -2.0


def test_block_rejects_mismatched_or_bad_weights():
    with pytest.raises(DimensionError):
        ResidualBlock([1.0, 2.0], 0.0, [1.0])
    with pytest.raises(ValueError):
        ResidualBlock([np.nan], 0.0, [1.0])
    with pytest.raises(ValueError):
        ResidualBlock([1.0], np.inf, [1.0])


def test_network_rejects_dimension_mismatch():
    with pytest.raises(DimensionError):
        ResNet(2, (ResidualBlock([1.0], 0.0, [1.0]),))
    with pytest.raises(DimensionError):
        ResNet(1, (), [1.0, 2.0])
    net = ResNet(2, ())
    with pytest.raises(DimensionError):
        eval_network(net, [1.0, 2.0, 3.0])


def test_empty_network_is_the_readout():
    net = ResNet(3, (), [1.0, -2.0, 0.5], 0.25)
    assert eval_network(net, [1.0, 1.0, 2.0]) == pytest.approx(1.0 - 2.0 + 1.0 + 0.25)


def test_default_readout_is_first_coordinate():
    net = ResNet(2, ())
    assert eval_network(net, [3.0, 7.0]) == 3.0


@given(networks(), st.integers(0, 2**31 - 1))
def test_eval_matches_naive_forward(net, seed):
    x = np.random.default_rng(seed).uniform(-5, 5, size=(16, net.dim))
    blocks = [(b.u_row, b.bias, b.v_col) for b in net.blocks]
    want = naive_forward(blocks, net.out_weights, net.out_bias, x)
    got = eval_network(net, x)
    scale = np.maximum(1.0, np.abs(want))
    # the oracle is plain float64, the package accumulates in extended precision
    assert np.all(np.abs(got - want) <= 1e-9 * scale * (1 + lipschitz_bound(net)))


@given(networks())
def test_single_point_and_batch_agree(net):
    x = np.linspace(-1, 1, 3 * net.dim).reshape(3, net.dim)
    batch = eval_network(net, x)
    assert [eval_network(net, row) for row in x] == list(batch)


@given(networks())
def test_text_format_round_trips_bit_exactly(net):
    again = deserialize(serialize(net))
    assert again == net
    assert serialize(again) == serialize(net)


def test_save_and_load(tmp_path):
    net = ResNet(2, (ResidualBlock([0.1, 0.2], 0.3, [0.4, 0.5]),), [1.0, 0.0], -0.1)
    save(net, tmp_path / "n.net")
    assert load(tmp_path / "n.net") == net


def test_decimal_numbers_are_accepted():
    net = deserialize("resnet v1 dim=1 blocks=1\nblock u=[1.5] b=-0.25 v=[2]\nout w=[1] b=0\n")
    assert net.blocks[0].bias == -0.25
    assert eval_network(net, [1.0]) == 1.0 + 2.0 * 1.25


@pytest.mark.parametrize("text, line, fragment", [
    ("", 1, "dim"),
    ("resnet v1 blocks=0\nout w=[1] b=0\n", 1, "dim"),
    ("resnet v1 dim=1 blocks=2\nblock u=[1] b=0 v=[1]\nout w=[1] b=0\n", 3, "announces 2"),
    ("resnet v1 dim=1 blocks=1\nblock u=[1] v=[1]\nout w=[1] b=0\n", 2, "missing field b"),
    ("resnet v1 dim=1 blocks=1\nblock u=[1] b=x v=[1]\nout w=[1] b=0\n", 2, "bad number"),
    ("resnet v1 dim=2 blocks=1\nblock u=[1] b=0 v=[1]\nout w=[1,0] b=0\n", 2, "2 entries"),
    ("resnet v1 dim=1 blocks=0\nnope w=[1] b=0\n", 2, "out"),
])
def test_parse_errors_name_the_line(text, line, fragment):
    with pytest.raises(ParseError) as info:
        deserialize(text)
    assert info.value.line == line
    assert fragment in str(info.value)


@given(networks(max_blocks=8), st.integers(0, 2**31 - 1))
def test_prefix_evaluation_matches_truncated_networks(net, seed):
    x = np.random.default_rng(seed).uniform(-3, 3, size=(5, net.dim))
    counts = list(range(len(net.blocks) + 1))
    got = eval_prefixes(net, x, counts)
    for c in counts:
        assert np.array_equal(got[c], eval_network(net.prefix(c), x))


def test_prefix_rejects_out_of_range():
    with pytest.raises(ValueError):
        eval_prefixes(ResNet(1, ()), np.zeros((1, 1)), [1])


@given(networks(max_dim=2), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_extend_dimension_preserves_function_and_passes_other_coordinates(net, extra, seed):
    big = net.dim + extra
    offset = extra // 2
    wide = extend_dimension(net, big, offset)
    x = np.random.default_rng(seed).uniform(-2, 2, size=(6, big))
    inner = x[:, offset:offset + net.dim]
    assert np.array_equal(eval_network(wide, x), eval_network(net, inner))
    states = forward_states(wide, x)
    untouched = [j for j in range(big) if not offset <= j < offset + net.dim]
    assert np.array_equal(states[:, untouched], x[:, untouched])


def test_compose_appends_blocks_and_keeps_readout():
    a = ResNet(1, (ResidualBlock([1.0], 0.0, [1.0]),), [2.0], 1.0)
    b = compose(a, [ResidualBlock([-1.0], 0.0, [1.0])])
    assert len(b) == 2 and b.out_bias == 1.0
    with pytest.raises(DimensionError):
        compose(a, [ResidualBlock([1.0, 0.0], 0.0, [1.0, 0.0])])


@given(networks(max_blocks=4), st.integers(0, 2**31 - 1))
def test_network_is_lipschitz_within_the_product_bound(net, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, size=(200, net.dim))
    y = x + rng.normal(scale=0.1, size=x.shape)
    num = np.abs(eval_network(net, x) - eval_network(net, y))
    den = np.linalg.norm(x - y, axis=1)
    bound = lipschitz_bound(net)
    assert np.all(num <= bound * den * (1 + 1e-9) + 1e-9 * (1 + bound))
