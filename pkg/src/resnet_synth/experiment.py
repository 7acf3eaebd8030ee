"""Unit-ball classification at desk scale.

Positives are uniform in the unit disk and negatives uniform in the annulus
``2 <= |z| <= 3``.  Two tiny architectures are trained on them with hand-written
backpropagation and SGD with momentum:

* a fully connected net with ``depth`` hidden ReLU layers of width 2;
* a ResNet of ``depth`` one-neuron residual blocks on the 2-dim state.

Also here: the clamp ``relu(f) - relu(f - 1)`` appended to either kind of
network, decision-boundary sampling with CSV and PPM export, the shell
positivity probe, and a compiled (not trained) unit-ball classifier.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .compilernd import BUILTIN_FUNCTIONS, compile_nd, discretize
from .core import ParseError, ResidualBlock, ResNet, deserialize, eval_network, parse_number, serialize

POS_RADIUS = 1.0
NEG_RADII = (2.0, 3.0)
EVAL_CHUNK = 1 << 16


# --- data ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    """``points`` is (n, 2); ``labels`` are +1 (inside the unit disk) or -1 (annulus)."""

    points: np.ndarray
    labels: np.ndarray
    seed: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        lab = np.array(self.labels, dtype=np.float64).reshape(-1)
        if pts.shape[0] != lab.size:
            raise ValueError(f"{pts.shape[0]} points but {lab.size} labels")
        if not np.all(np.isin(lab, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "seed", int(self.seed))

    def __len__(self):
        return self.labels.size

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.seed == other.seed and np.array_equal(self.points, other.points)
                and np.array_equal(self.labels, other.labels))

    def to_json(self) -> str:
        # repr round-trips float64 exactly
        return json.dumps({"seed": self.seed, "points": self.points.tolist(),
                           "labels": self.labels.astype(int).tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        doc = json.loads(text)
        try:
            return cls(np.array(doc["points"], dtype=np.float64).reshape(-1, 2), doc["labels"], doc["seed"])
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]}") from None


def _annulus_points(rng: np.random.Generator, n: int, r_lo: float, r_hi: float) -> np.ndarray:
    """Area-uniform points with ``r_lo <= |z| <= r_hi`` (as computed by ``np.linalg.norm``).

    The radius is drawn by inverting ``F(r) = (r^2 - r_lo^2) / (r_hi^2 - r_lo^2)``;
    the rare draw that rounding pushes across a bound is redrawn.
    """
    out = np.empty((0, 2))
    while out.shape[0] < n:
        m = n - out.shape[0]
        r = np.sqrt(r_lo * r_lo + (r_hi * r_hi - r_lo * r_lo) * rng.uniform(size=m))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=m)
        z = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        norm = np.linalg.norm(z, axis=1)
        out = np.concatenate([out, z[(norm >= r_lo) & (norm <= r_hi)]])
    return out


def gen_dataset(n_pos: int = 100, n_neg: int = 200, seed: int = 0) -> Dataset:
    if n_pos < 1 or n_neg < 1:
        raise ValueError("need at least one point per class")
    rng = np.random.default_rng(seed)
    pos = _annulus_points(rng, n_pos, 0.0, POS_RADIUS)
    neg = _annulus_points(rng, n_neg, *NEG_RADII)
    labels = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
    return Dataset(np.concatenate([pos, neg]), labels, seed)


def logistic_loss(preds, labels) -> float:
    """Mean of ``log(1 + exp(-y p))``, stable for large ``|p|``."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.size != y.size:
        raise ValueError(f"{p.size} predictions but {y.size} labels")
    z = -y * p
    # log1p(e^z) = z + log1p(e^-z) for z > 0, so the exponent is never positive
    per = np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(-np.abs(z))))
    return float(np.mean(per))


def _loss_slope(preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean loss)/d(pred): ``-y sigmoid(-y p) / n``."""
    z = -labels * preds
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return -labels * sig / preds.size


# --- fully connected networks ------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dense:
    """``act(W x + b)``, with ``act`` ReLU or the identity."""

    W: np.ndarray
    b: np.ndarray
    relu: bool = True

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError("W must be a matrix")
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if b.size != W.shape[0]:
            raise ValueError(f"W has {W.shape[0]} rows but b has {b.size} entries")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("weights must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "relu", bool(self.relu))

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.W.T + self.b
        return np.maximum(y, 0.0) if self.relu else y

    def __eq__(self, other):
        if not isinstance(other, Dense):
            return NotImplemented
        return (self.relu == other.relu and np.array_equal(self.W, other.W)
                and np.array_equal(self.b, other.b))

    def __hash__(self):
        return hash((self.W.tobytes(), self.b.tobytes(), self.relu))


@dataclass(frozen=True)
class FullyConnectedNet:
    """A chain of :class:`Dense` layers ending in one output unit."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("need at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise ValueError(f"layer {i} expects {layers[i].n_in} inputs, gets {layers[i - 1].n_out}")
        if layers[-1].n_out != 1:
            raise ValueError("the last layer must have one output")
        object.__setattr__(self, "layers", layers)

    @property
    def dim(self) -> int:
        return self.layers[0].n_in

    def __call__(self, x):
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        h = arr[None, :] if single else arr
        if h.ndim != 2 or h.shape[1] != self.dim:
            raise ValueError(f"expected input(s) of dim {self.dim}, got shape {arr.shape}")
        for layer in self.layers:
            h = layer(h)
        out = h[:, 0]
        return float(out[0]) if single else out


def _fc_lines(net: FullyConnectedNet) -> list[str]:
    lines = [f"fc v1 layers={len(net.layers)}"]
    for layer in net.layers:
        w = ",".join(float(x).hex() for x in layer.W.reshape(-1))
        b = ",".join(float(x).hex() for x in layer.b)
        lines.append(f"dense in={layer.n_in} out={layer.n_out} relu={int(layer.relu)} W=[{w}] b=[{b}]")
    return lines


def serialize_fc(net: FullyConnectedNet) -> str:
    return "\n".join(_fc_lines(net)) + "\n"


def deserialize_fc(text: str) -> FullyConnectedNet:
    numbered = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())
                if ln.strip() and not ln.strip().startswith("#")]
    if not numbered or numbered[0][1].split()[:2] != ["fc", "v1"]:
        raise ParseError("header must start with 'fc v1'", numbered[0][0] if numbered else 1)
    head = dict(t.partition("=")[::2] for t in numbered[0][1].split()[2:])
    try:
        count = int(head["layers"])
    except (KeyError, ValueError):
        raise ParseError("header needs an integer layers=", numbered[0][0]) from None
    body = numbered[1:]
    if len(body) != count:
        raise ParseError(f"header announces {count} layers but found {len(body)}",
                         body[-1][0] if body else numbered[0][0])
    layers = []
    for lineno, ln in body:
        tokens = ln.split()
        if tokens[0] != "dense":
            raise ParseError("expected a 'dense' record", lineno)
        f = dict(t.partition("=")[::2] for t in tokens[1:])
        try:
            n_in, n_out, relu = int(f["in"]), int(f["out"]), bool(int(f["relu"]))
            W = [parse_number(x) for x in f["W"].strip("[]").split(",") if x]
            b = [parse_number(x) for x in f["b"].strip("[]").split(",") if x]
            layers.append(Dense(np.array(W).reshape(n_out, n_in), b, relu))
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]}", lineno) from None
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    try:
        return FullyConnectedNet(tuple(layers))
    except ValueError as exc:
        raise ParseError(str(exc), body[-1][0] if body else 1) from None


def save_any(net, path) -> None:
    """Write a :class:`ResNet` or :class:`FullyConnectedNet` in its text format."""
    text = serialize_fc(net) if isinstance(net, FullyConnectedNet) else serialize(net)
    Path(path).write_text(text, encoding="utf-8")


def load_any(path):
    """Read either network format, dispatching on the header."""
    text = Path(path).read_text(encoding="utf-8")
    first = next((ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")), "")
    return deserialize_fc(text) if first.startswith("fc ") else deserialize(text)


def evaluate(net, points) -> np.ndarray:
    """Scalar outputs of either network kind on an (n, d) batch, in chunks."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] <= EVAL_CHUNK:
        return _eval_chunk(net, pts)
    chunks = [pts[i:i + EVAL_CHUNK] for i in range(0, pts.shape[0], EVAL_CHUNK)]
    return np.concatenate(ordered_map(lambda c: _eval_chunk(net, c), chunks))


def _eval_chunk(net, pts: np.ndarray) -> np.ndarray:
    if isinstance(net, ResNet):
        return np.asarray(eval_network(net, pts), dtype=np.float64)
    return np.asarray(net(pts), dtype=np.float64)


# --- training ----------------------------------------------------------------

class Arch(enum.Enum):
    FULLY_CONNECTED = "fc"
    RESNET = "resnet"


INPUT_DIM = 2
INIT_SCALE = 0.7


@dataclass(frozen=True)
class TrainConfig:
    arch: Arch = Arch.RESNET
    depth: int = 5
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["arch"] = self.arch.value
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite in epoch {epoch}")


def init_params(arch: Arch, depth: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform(-0.7, 0.7) / sqrt(fan_in) for every weight and bias.

    FC layout: ``W_1, b_1, ..., W_depth, b_depth, w_out, c``.
    ResNet layout: ``u_1, b_1, v_1, ..., u_depth, b_depth, v_depth, w_out, c``.
    """
    def draw(shape, fan_in):
        return np.array(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape) / math.sqrt(fan_in))

    d = INPUT_DIM
    params = []
    for _ in range(depth):
        if Arch(arch) is Arch.FULLY_CONNECTED:
            params += [draw((d, d), d), draw((d,), d)]
        else:
            params += [draw((d,), d), draw((), d), draw((d,), 1)]
    return params + [draw((d,), d), draw((), d)]


def forward(arch: Arch, params: Sequence[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list]:
    """Outputs on the batch ``x`` plus the per-layer cache :func:`backward` needs."""
    h = np.asarray(x, dtype=np.float64)
    cache = []
    if Arch(arch) is Arch.FULLY_CONNECTED:
        for W, b in zip(params[0:-2:2], params[1:-2:2]):
            pre = h @ W.T + b
            cache.append((h, pre))
            h = np.maximum(pre, 0.0)
    else:
        for u, b, v in zip(params[0:-2:3], params[1:-2:3], params[2:-2:3]):
            pre = h @ u + b
            cache.append((h, pre))
            h = h + np.maximum(pre, 0.0)[:, None] * v
    cache.append(h)
    return h @ params[-2] + params[-1], cache


def backward(arch: Arch, params: Sequence[np.ndarray], cache: list, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``sum(d_out * output)`` with respect to every parameter."""
    h_last = cache[-1]
    grads = [None] * len(params)
    grads[-2] = d_out @ h_last
    grads[-1] = np.sum(d_out)
    g = d_out[:, None] * params[-2][None, :]  # d/d(state) after the last layer
    if Arch(arch) is Arch.FULLY_CONNECTED:
        for layer in range(len(cache) - 2, -1, -1):
            h_in, pre = cache[layer]
            W = params[2 * layer]
            d_pre = g * (pre > 0.0)
            grads[2 * layer] = d_pre.T @ h_in
            grads[2 * layer + 1] = np.sum(d_pre, axis=0)
            g = d_pre @ W
    else:
        for layer in range(len(cache) - 2, -1, -1):
            h_in, pre = cache[layer]
            u, v = params[3 * layer], params[3 * layer + 2]
            act = np.maximum(pre, 0.0)
            grads[3 * layer + 2] = act @ g
            d_pre = (g @ v) * (pre > 0.0)
            grads[3 * layer] = d_pre @ h_in
            grads[3 * layer + 1] = np.sum(d_pre)
            g = g + d_pre[:, None] * u[None, :]
    return [np.asarray(gr, dtype=np.float64).reshape(np.shape(p)) for gr, p in zip(grads, params)]


def loss_and_grad(arch: Arch, params: Sequence[np.ndarray], x: np.ndarray,
                  y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    out, cache = forward(arch, params, x)
    return logistic_loss(out, y), backward(arch, params, cache, _loss_slope(out, np.asarray(y, float)))


def params_to_network(arch: Arch, params: Sequence[np.ndarray]):
    """The :class:`ResNet` or :class:`FullyConnectedNet` realized by ``params``."""
    if Arch(arch) is Arch.FULLY_CONNECTED:
        layers = [Dense(W, b, True) for W, b in zip(params[0:-2:2], params[1:-2:2])]
        layers.append(Dense(params[-2][None, :], np.atleast_1d(params[-1]), False))
        return FullyConnectedNet(tuple(layers))
    blocks = [ResidualBlock(u, float(b), v)
              for u, b, v in zip(params[0:-2:3], params[1:-2:3], params[2:-2:3])]
    return ResNet(INPUT_DIM, tuple(blocks), params[-2], float(params[-1]))


@dataclass(frozen=True)
class TrainResult:
    """``history[0]`` is the loss at initialization, ``history[e]`` after epoch ``e``."""

    net: object
    params: list = field(repr=False)
    history: list


def train(cfg: TrainConfig, data: Dataset) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.arch, cfg.depth, rng)
    velocity = [np.zeros_like(p) for p in params]
    x, y = data.points, data.labels
    history = [logistic_loss(forward(cfg.arch, params, x)[0], y)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = loss_and_grad(cfg.arch, params, x[idx], y[idx])
            for p, vel, g in zip(params, velocity, grads):
                vel *= cfg.momentum
                vel -= cfg.lr * g
                p += vel
        loss = logistic_loss(forward(cfg.arch, params, x)[0], y)
        if not math.isfinite(loss):
            raise TrainingDivergence(epoch)
        history.append(loss)
    return TrainResult(params_to_network(cfg.arch, params), params, history)


# --- clamp -------------------------------------------------------------------

def clamp_network(net):
    """Append ``relu(f) - relu(f - 1)`` so the output is ``min(max(f, 0), 1)``.

    Fully connected nets gain one 2-unit ReLU layer and a linear combiner,
    which is exact in float64 for ``|f| < 2^52``.  ResNets gain two blocks
    acting along a coordinate ``j`` with ``w_j != 0``: ``f <- max(f, 0)`` then
    ``f <- min(f, 1)``.  That is exact when ``w_j = 1``; otherwise ``w_j (1 / w_j)``
    rounds, which costs about one ulp.
    """
    if isinstance(net, FullyConnectedNet):
        split = Dense(np.array([[1.0], [1.0]]), np.array([0.0, -1.0]), True)
        combine = Dense(np.array([[1.0, -1.0]]), np.array([0.0]), False)
        return FullyConnectedNet(net.layers + (split, combine))
    if not isinstance(net, ResNet):
        raise TypeError(f"cannot clamp a {type(net).__name__}")
    w, c = net.out_weights, net.out_bias
    if not np.any(w):
        return ResNet(net.dim, net.blocks, w, min(max(c, 0.0), 1.0))
    j = int(np.argmax(np.abs(w)))
    e = np.zeros(net.dim)
    e[j] = 1.0 / w[j]
    lift = ResidualBlock(-w, -c, e)           # f + relu(-f)
    cap = ResidualBlock(w, c - 1.0, -e)       # f - relu(f - 1)
    return ResNet(net.dim, net.blocks + (lift, cap), w, c)


# --- decision boundary -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundarySample:
    points: np.ndarray
    positive: np.ndarray
    radius: float
    seed: int

    def write_csv(self, path) -> None:
        lines = ["x,y,pred"]
        for (px, py), pos in zip(self.points, self.positive):
            lines.append(f"{float(px)!r},{float(py)!r},{1 if pos else -1}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def uniform_ball(rng: np.random.Generator, n: int, radius: float, dim: int = 2) -> np.ndarray:
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / dim)
    return direction * r[:, None]


def sample_decision_boundary(net, n: int, radius: float, seed: int) -> BoundarySample:
    """``n`` uniform points in ``B(0, radius)``, tagged with ``net(z) > 0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = uniform_ball(rng, n, radius, net.dim)
    return BoundarySample(pts, evaluate(net, pts) > 0.0, float(radius), int(seed))


PPM_SIZE = 256
RED = (255, 0, 0)
BLUE = (0, 0, 255)


def raster(net, radius: float, size: int = PPM_SIZE) -> np.ndarray:
    """(size, size) booleans of ``net > 0`` over ``[-radius, radius]^2``; row 0 is the top."""
    centers = (np.arange(size) + 0.5) / size * 2.0 * radius - radius
    xx, yy = np.meshgrid(centers, centers[::-1])
    pts = np.column_stack([xx.reshape(-1), yy.reshape(-1)])
    return (evaluate(net, pts) > 0.0).reshape(size, size)


def write_ppm(net, path, radius: float, size: int = PPM_SIZE) -> None:
    """Binary P6 image: red where ``net > 0``, blue elsewhere."""
    mask = raster(net, radius, size)
    img = np.where(mask[:, :, None], np.array(RED, np.uint8), np.array(BLUE, np.uint8)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{size} {size}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    """(h, w, 3) uint8 pixels of a binary P6 file written by :func:`write_ppm`."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit P6 image")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], np.uint8).reshape(h, w, 3)


def positivity_probe(net, radii: Sequence[float], samples_per_shell: int, seed: int) -> np.ndarray:
    """Fraction of uniform points on each sphere ``|z| = r`` where ``net > 0``."""
    if samples_per_shell < 1:
        raise ValueError("samples_per_shell must be >= 1")
    rng = np.random.default_rng(seed)
    fractions = []
    for r in radii:
        direction = rng.normal(size=(samples_per_shell, net.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        fractions.append(float(np.mean(evaluate(net, float(r) * direction) > 0.0)))
    return np.array(fractions)


# --- compiled classifier -----------------------------------------------------

def compile_unit_ball_classifier(resolution: float = 0.05, half_width: float = 1.5,
                                 delta: float = 1e-7, threshold: float = 0.5) -> ResNet:
    """Disk indicator on a grid over ``[-half_width, half_width]^2``, compiled, minus ``threshold``.

    The result is positive exactly where the compiled indicator exceeds
    ``threshold``.  ``delta`` is tiny so that almost every point is deep inside
    its cell; the compiled value there is the cell-center indicator.
    """
    box = [[-half_width, half_width]] * 2
    target = discretize(BUILTIN_FUNCTIONS["unit-ball"], box, resolution)
    net, _ = compile_nd(target, delta)
    return ResNet(net.dim, net.blocks, net.out_weights, net.out_bias - threshold)
