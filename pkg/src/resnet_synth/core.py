"""One-neuron residual blocks, ResNets built from them, and their text format.

A block maps a state ``x`` in R^d to ``x + v * relu(u . x + b)``.  A network
folds its blocks over the state and finishes with a linear read-out
``w . x + c``.  Everything here is immutable and evaluation is pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Blocks are accumulated in extended precision where the platform has it; the
# compiled constructions amplify rounding in their plateau values.
ACCUM = np.longdouble


class DimensionError(ValueError):
    pass


class ParseError(ValueError):
    """Malformed network document; ``line`` is 1-based (0 if unknown)."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    u_row: np.ndarray
    bias: float
    v_col: np.ndarray

    def __post_init__(self):
        u = _frozen_vector(self.u_row, "u_row")
        v = _frozen_vector(self.v_col, "v_col")
        if u.size == 0 or u.size != v.size:
            raise DimensionError(f"u_row has {u.size} entries, v_col has {v.size}")
        b = float(self.bias)
        if not np.isfinite(b):
            raise ValueError("bias is not finite")
        object.__setattr__(self, "u_row", u)
        object.__setattr__(self, "v_col", v)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.u_row.size

    def __eq__(self, other):
        if not isinstance(other, ResidualBlock):
            return NotImplemented
        return (
            _same_bits(self.u_row, other.u_row)
            and _same_bits(self.v_col, other.v_col)
            and np.float64(self.bias).tobytes() == np.float64(other.bias).tobytes()
        )

    def __hash__(self):
        return hash((self.u_row.tobytes(), self.bias, self.v_col.tobytes()))

    def __call__(self, x):
        return eval_block(self, x)


@dataclass(frozen=True, eq=False)
class ResNet:
    dim: int
    blocks: tuple = ()
    out_weights: np.ndarray = field(default=None)
    out_bias: float = 0.0

    def __post_init__(self):
        dim = int(self.dim)
        if dim < 1:
            raise ValueError("dim must be positive")
        blocks = tuple(self.blocks)
        for i, blk in enumerate(blocks):
            if not isinstance(blk, ResidualBlock):
                raise TypeError(f"block {i} is not a ResidualBlock")
            if blk.dim != dim:
                raise DimensionError(f"block {i} has dim {blk.dim}, network has dim {dim}")
        w = self.out_weights
        if w is None:
            w = np.zeros(dim)
            w[0] = 1.0
        w = _frozen_vector(w, "out_weights")
        if w.size != dim:
            raise DimensionError(f"out_weights has {w.size} entries, network has dim {dim}")
        b = float(self.out_bias)
        if not np.isfinite(b):
            raise ValueError("out_bias is not finite")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "out_weights", w)
        object.__setattr__(self, "out_bias", b)

    def __len__(self):
        return len(self.blocks)

    def __eq__(self, other):
        if not isinstance(other, ResNet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.blocks == other.blocks
            and _same_bits(self.out_weights, other.out_weights)
            and np.float64(self.out_bias).tobytes() == np.float64(other.out_bias).tobytes()
        )

    def __hash__(self):
        return hash((self.dim, self.blocks, self.out_weights.tobytes(), self.out_bias))

    def __call__(self, x):
        return eval_network(self, x)

    def with_blocks(self, blocks: Iterable[ResidualBlock]) -> "ResNet":
        return ResNet(self.dim, tuple(blocks), self.out_weights, self.out_bias)

    def prefix(self, n_blocks: int) -> "ResNet":
        """The network truncated after its first ``n_blocks`` blocks."""
        return self.with_blocks(self.blocks[:n_blocks])


def projection(dim: int, coord: int = 0) -> np.ndarray:
    w = np.zeros(dim)
    w[coord] = 1.0
    return w


def _as_states(x, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"expected state(s) of dim {dim}, got shape {np.shape(x)}")
    return arr, single


def _apply(block: ResidualBlock, rows: np.ndarray, pre: np.ndarray) -> None:
    """Apply ``block`` in place to ``rows``, the (d, n) transposed states.

    ``pre`` is an (n,) scratch buffer.  Loops over nonzero weights only because
    extended precision has no BLAS path and compiled blocks are sparse.
    """
    dt = rows.dtype.type
    cols = np.flatnonzero(block.u_row)
    if cols.size == 0:
        pre.fill(dt(block.bias))
    else:
        np.multiply(rows[cols[0]], dt(block.u_row[cols[0]]), out=pre)
        for j in cols[1:]:
            pre += rows[j] * dt(block.u_row[j])
        pre += dt(block.bias)
    np.maximum(pre, 0, out=pre)
    out = np.flatnonzero(block.v_col)
    if out.size == 1:
        pre *= dt(block.v_col[out[0]])
        rows[out[0]] += pre
    else:
        for j in out:
            rows[j] += pre * dt(block.v_col[j])


def _run(net_blocks, states: np.ndarray, accum=ACCUM) -> np.ndarray:
    """Final states, shape (n, d), in dtype ``accum``; ``states`` is not modified."""
    rows = np.array(states.T, dtype=accum, order="C")  # always a fresh copy
    pre = np.empty(rows.shape[1], dtype=accum)
    for blk in net_blocks:
        _apply(blk, rows, pre)
    return rows.T


def eval_block(block: ResidualBlock, x) -> np.ndarray:
    """``x + v * relu(u . x + b)`` for one state of shape (d,) or a batch (n, d)."""
    states, single = _as_states(x, block.dim)
    out = _run((block,), states).astype(np.float64)
    return out[0] if single else out


def forward_states(net: ResNet, x, accum=ACCUM) -> np.ndarray:
    """Final hidden state(s) before the linear read-out."""
    states, single = _as_states(x, net.dim)
    states = _run(net.blocks, states, accum).astype(np.float64)
    return states[0] if single else states


def eval_network(net: ResNet, x, accum=ACCUM):
    """Evaluate ``net`` at one state (returns float) or a batch (returns (n,) array).

    ``accum`` is the accumulation dtype; outputs are always float64.
    """
    states, single = _as_states(x, net.dim)
    rows = _run(net.blocks, states, accum).T
    out = (net.out_weights.astype(accum) @ rows + accum(net.out_bias)).astype(np.float64)
    return float(out[0]) if single else out


def eval_prefixes(net: ResNet, x, counts: Sequence[int], accum=ACCUM) -> np.ndarray:
    """Read-out of ``net.prefix(n)`` for every ``n`` in ``counts``, in one forward pass.

    Returns shape ``(len(counts), n_points)``; ``x`` must be a batch.
    """
    states, _ = _as_states(x, net.dim)
    if any(not 0 <= c <= len(net.blocks) for c in counts):
        raise ValueError("prefix length out of range")
    w = net.out_weights.astype(accum)
    b = accum(net.out_bias)
    want = sorted(set(int(c) for c in counts))
    found = {}
    rows = np.array(states.T, dtype=accum, order="C")
    pre = np.empty(rows.shape[1], dtype=accum)
    done = 0
    for c in want:
        for blk in net.blocks[done:c]:
            _apply(blk, rows, pre)
        done = c
        found[c] = (w @ rows + b).astype(np.float64)
    return np.stack([found[int(c)] for c in counts]) if counts else np.empty((0, states.shape[0]))


def compose(prefix: ResNet, suffix_blocks: Sequence[ResidualBlock], out_weights=None, out_bias=None) -> ResNet:
    """Stack ``suffix_blocks`` after ``prefix``; the read-out is kept unless given."""
    for blk in suffix_blocks:
        if blk.dim != prefix.dim:
            raise DimensionError(f"block of dim {blk.dim} cannot follow a dim-{prefix.dim} network")
    return ResNet(
        prefix.dim,
        prefix.blocks + tuple(suffix_blocks),
        prefix.out_weights if out_weights is None else out_weights,
        prefix.out_bias if out_bias is None else out_bias,
    )


def extend_block(block: ResidualBlock, dim: int, coord_offset: int) -> ResidualBlock:
    if coord_offset < 0 or coord_offset + block.dim > dim:
        raise ValueError(f"offset {coord_offset} does not fit a dim-{block.dim} block into dim {dim}")
    u = np.zeros(dim)
    v = np.zeros(dim)
    u[coord_offset:coord_offset + block.dim] = block.u_row
    v[coord_offset:coord_offset + block.dim] = block.v_col
    return ResidualBlock(u, block.bias, v)


def extend_dimension(net: ResNet, dim: int, coord_offset: int) -> ResNet:
    """Embed ``net`` into a ``dim``-dimensional state.

    The original coordinates occupy ``coord_offset .. coord_offset + net.dim - 1``
    (0-based); every other coordinate gets zero weights and is carried along by
    the identity path unchanged.
    """
    if coord_offset < 0 or coord_offset + net.dim > dim:
        raise ValueError(f"offset {coord_offset} does not fit a dim-{net.dim} network into dim {dim}")
    w = np.zeros(dim)
    w[coord_offset:coord_offset + net.dim] = net.out_weights
    blocks = tuple(extend_block(b, dim, coord_offset) for b in net.blocks)
    return ResNet(dim, blocks, w, net.out_bias)


# --- text format -----------------------------------------------------------

def _hex(x: float) -> str:
    return float(x).hex()


def _hex_list(values) -> str:
    return "[" + ",".join(_hex(v) for v in values) + "]"


def serialize(net: ResNet) -> str:
    lines = [f"resnet v1 dim={net.dim} blocks={len(net.blocks)}"]
    for blk in net.blocks:
        lines.append(f"block u={_hex_list(blk.u_row)} b={_hex(blk.bias)} v={_hex_list(blk.v_col)}")
    lines.append(f"out w={_hex_list(net.out_weights)} b={_hex(net.out_bias)}")
    return "\n".join(lines) + "\n"


def _fields(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            continue
        key, _, val = tok.partition("=")
        out[key] = val
    return out


def _require(fields: dict, key: str, lineno: int) -> str:
    if key not in fields:
        raise ParseError(f"missing field {key}", lineno)
    return fields[key]


def parse_number(text: str) -> float:
    """Hex float (``0x1.8p+0``, as written by :func:`serialize`) or decimal."""
    t = text.strip()
    # fromhex also accepts "1.5" and reads it as hex, so dispatch on the prefix
    return float.fromhex(t) if "0x" in t.lower() else float(t)


def _parse_float(text: str, lineno: int) -> float:
    try:
        return parse_number(text)
    except ValueError:
        raise ParseError(f"bad number {text!r}", lineno) from None


def _parse_list(text: str, lineno: int) -> list[float]:
    if not (text.startswith("[") and text.endswith("]")):
        raise ParseError(f"expected [..] list, got {text!r}", lineno)
    body = text[1:-1].strip()
    if not body:
        return []
    return [_parse_float(t.strip(), lineno) for t in body.split(",")]


def deserialize(text: str) -> ResNet:
    lines = [ln.strip() for ln in text.splitlines()]
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not numbered:
        raise ParseError("empty document; missing field dim", 1)
    lineno, header = numbered[0]
    tokens = header.split()
    fields = _fields(tokens, lineno)
    dim_text = _require(fields, "dim", lineno)
    count_text = _require(fields, "blocks", lineno)
    if tokens[:2] != ["resnet", "v1"]:
        raise ParseError("header must start with 'resnet v1'", lineno)
    try:
        dim, count = int(dim_text), int(count_text)
    except ValueError:
        raise ParseError("dim and blocks must be integers", lineno) from None
    body = numbered[1:]
    if len(body) != count + 1:
        raise ParseError(f"header announces {count} blocks but found {len(body) - 1} block lines",
                         body[-1][0] if body else lineno)
    blocks = []
    for lineno, ln in body[:-1]:
        tokens = ln.split()
        if not tokens or tokens[0] != "block":
            raise ParseError("expected a 'block' record", lineno)
        f = _fields(tokens, lineno)
        u = _parse_list(_require(f, "u", lineno), lineno)
        b = _parse_float(_require(f, "b", lineno), lineno)
        v = _parse_list(_require(f, "v", lineno), lineno)
        if len(u) != dim or len(v) != dim:
            raise ParseError(f"block weights must have {dim} entries", lineno)
        try:
            blocks.append(ResidualBlock(u, b, v))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    lineno, footer = body[-1]
    tokens = footer.split()
    if not tokens or tokens[0] != "out":
        raise ParseError("expected the 'out' record", lineno)
    f = _fields(tokens, lineno)
    w = _parse_list(_require(f, "w", lineno), lineno)
    b = _parse_float(_require(f, "b", lineno), lineno)
    if len(w) != dim:
        raise ParseError(f"out weights must have {dim} entries", lineno)
    try:
        return ResNet(dim, tuple(blocks), w, b)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def save(net: ResNet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net))


def load(path) -> ResNet:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())
