"""Command-line front-end: ``python3 -m resnet_synth <command> ...``.

Exit status is 0 on success, 1 when a verification fails and 2 on usage or
input errors.  Numbers are printed with 12 significant digits.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .compiler1d import DeltaError, compile_1d
from .compilernd import BUILTIN_FUNCTIONS, PiecewiseConstantND, compile_nd, discretize
from .core import ParseError, ResNet, save
from .verify import (
    VerificationReport,
    check_compiled_nd,
    mc_l1_error,
    tolerant_volume_bound,
    verify_exact_1d,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_MC_SAMPLES = 100_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def fmt(x: float) -> str:
    """12 significant digits, always readable back as a float (``1.0``, not ``1``)."""
    return repr(float(f"{float(x):.12g}"))


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _box(text: str) -> list[list[float]]:
    """``"lo..hi,lo..hi"`` to ``[[lo, hi], ...]``."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition("..")
        if not sep:
            raise UsageError(f"box side {part!r} is not of the form lo..hi")
        try:
            out.append([float(lo), float(hi)])
        except ValueError:
            raise UsageError(f"box side {part!r} is not numeric") from None
    return out


def load_target(path) -> PiecewiseConstantND:
    return PiecewiseConstantND.from_json(Path(path).read_text(encoding="utf-8"))


def save_target(target: PiecewiseConstantND, path) -> None:
    text = target.to_1d().to_json() if target.dims == 1 else target.to_json()
    Path(path).write_text(text + "\n", encoding="utf-8")


def infer_delta_1d(net: ResNet, h_inf: float) -> float:
    """delta of a 1-D compilation, read off its third block ``v = -(H + delta) / delta``."""
    if net.dim != 1 or len(net.blocks) < 3:
        raise UsageError("cannot infer delta from this network; pass --delta")
    v = -float(net.blocks[2].v_col[0])
    if not v > 1.0:
        raise UsageError("cannot infer delta from this network; pass --delta")
    return h_inf / (v - 1.0)


def _stage_filename(label: str) -> str:
    return label.replace("*", "star") + ".net"


def cmd_compile(args) -> int:
    target = load_target(args.target)
    if target.dims == 1:
        net, trace = compile_1d(target.to_1d(), args.delta)
    else:
        net, trace = compile_nd(target, args.delta)
    save(net, args.out)
    if args.trace:
        out = Path(args.trace)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        for label, n in trace.checkpoints.items():
            files[label] = _stage_filename(label)
            save(net.prefix(n), out / files[label])
        notes = {k: v for k, v in trace.notes.items() if isinstance(v, (bool, int, float, str))}
        doc = {"delta": trace.delta, "h_inf": trace.h_inf, "checkpoints": files,
               "breakpoints": list(trace.breakpoints), "notes": notes}
        (out / "trace.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"blocks={len(net.blocks)} dim={net.dim}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = ex.load_any(args.net)
    x = np.array(_floats(args.point))
    if x.size != net.dim:
        raise UsageError(f"point has {x.size} coordinates, network expects {net.dim}")
    print(fmt(ex.evaluate(net, x[None, :])[0]))
    return EXIT_OK


def cmd_verify(args) -> int:
    net = ex.load_any(args.net)
    if not isinstance(net, ResNet):
        raise UsageError("verify needs a ResNet")
    target = load_target(args.target)
    if net.dim != target.dims:
        raise UsageError(f"network has dim {net.dim}, target has {target.dims}")
    exact = args.exact or (args.mc is None and target.dims == 1)
    if exact and target.dims != 1:
        raise UsageError("--exact needs a 1-D target; use --mc N")
    if exact:
        t1 = target.to_1d()
        delta = args.delta if args.delta is not None else infer_delta_1d(net, t1.h_inf)
        report = verify_exact_1d(net, t1, delta)
        l1 = report.l1_error if report.l1_error is not None else float("nan")
        bound = report.l1_bound if report.l1_bound is not None else float("nan")
        line = f"l1={fmt(l1)} bound={fmt(bound)}"
    else:
        if args.delta is not None:
            delta = args.delta
        elif target.dims == 1:
            delta = infer_delta_1d(net, target.h_inf)
        else:
            raise UsageError("--mc on a d-dimensional target needs --delta")
        report = VerificationReport()
        if target.dims > 1:
            report.extend(check_compiled_nd(net, target, delta))
        box = target.support
        pad = 0.5 * (box[:, 1] - box[:, 0])
        box = np.column_stack([box[:, 0] - pad, box[:, 1] + pad])
        n = args.mc if args.mc is not None else DEFAULT_MC_SAMPLES
        est, err = mc_l1_error(net, target, box, n, args.seed)
        bound = tolerant_volume_bound(target, delta)
        report.l1_error, report.l1_bound, report.mc_stderr = est, bound, err
        report.add("l1.mc_within_bound", est, bound + 3.0 * err)
        line = f"l1={fmt(est)} stderr={fmt(err)} bound={fmt(bound)}"
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.table:
        print(report.table())
    print(f"{line} {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_discretize(args) -> int:
    if args.fn not in BUILTIN_FUNCTIONS:
        raise UsageError(f"unknown function {args.fn!r}; choose from {', '.join(sorted(BUILTIN_FUNCTIONS))}")
    target = discretize(BUILTIN_FUNCTIONS[args.fn], _box(args.box), args.res)
    save_target(target, args.out)
    print(f"cells={target.n_cells} shape={'x'.join(str(s) for s in target.shape)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ex.TrainConfig(ex.Arch(args.arch), args.depth, args.lr, args.momentum, args.epochs,
                         args.batch_size, args.seed)
    data = ex.gen_dataset(seed=args.seed)
    result = ex.train(cfg, data)
    ex.save_any(result.net, args.out)
    for epoch, loss in enumerate(result.history):
        print(f"epoch={epoch} loss={fmt(loss)}")
    if args.history:
        Path(args.history).write_text(json.dumps({"config": json.loads(cfg.to_json()),
                                                  "history": result.history}) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_boundary(args) -> int:
    net = ex.load_any(args.net)
    sample = ex.sample_decision_boundary(net, args.n, args.radius, args.seed)
    sample.write_csv(args.csv)
    if args.ppm:
        ex.write_ppm(net, args.ppm, args.radius)
    print(f"positive={int(np.sum(sample.positive))} total={args.n}")
    return EXIT_OK


def cmd_probe(args) -> int:
    net = ex.load_any(args.net)
    radii = _floats(args.radii)
    for r, frac in zip(radii, ex.positivity_probe(net, radii, args.n, args.seed)):
        print(f"radius={fmt(r)} positive_fraction={fmt(frac)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resnet_synth", description="Compile piecewise-constant targets into one-neuron ResNets.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("compile", help="compile a target JSON into a network")
    c.add_argument("--target", required=True)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--trace", help="directory for per-stage networks and trace.json")
    c.set_defaults(handler=cmd_compile)

    e = sub.add_parser("eval", help="evaluate a network at one point")
    e.add_argument("--net", required=True)
    e.add_argument("--point", required=True, help='"x1,x2,..."')
    e.set_defaults(handler=cmd_eval)

    v = sub.add_parser("verify", help="check a network against a target")
    v.add_argument("--net", required=True)
    v.add_argument("--target", required=True)
    mode = v.add_mutually_exclusive_group()
    mode.add_argument("--exact", action="store_true", help="exact L1 (1-D targets)")
    mode.add_argument("--mc", type=int, metavar="N", help="Monte-Carlo L1 with N samples")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--delta", type=float, help="construction delta (inferred for 1-D compilations)")
    v.add_argument("--report", help="write the JSON report here")
    v.add_argument("--table", action="store_true", help="also print the check table")
    v.set_defaults(handler=cmd_verify)

    d = sub.add_parser("discretize", help="grid a builtin function into a target JSON")
    d.add_argument("--fn", required=True)
    d.add_argument("--box", required=True, help='"lo..hi,lo..hi"')
    d.add_argument("--res", type=float, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(handler=cmd_discretize)

    t = sub.add_parser("train", help="train a tiny classifier on the unit-ball data")
    t.add_argument("--arch", choices=[a.value for a in ex.Arch], required=True)
    t.add_argument("--depth", type=int, required=True)
    t.add_argument("--lr", type=float, default=ex.TrainConfig.lr)
    t.add_argument("--momentum", type=float, default=ex.TrainConfig.momentum)
    t.add_argument("--epochs", type=int, default=ex.TrainConfig.epochs)
    t.add_argument("--batch-size", type=int, default=ex.TrainConfig.batch_size)
    t.add_argument("--seed", type=int, default=ex.TrainConfig.seed)
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="write config and loss history JSON here")
    t.set_defaults(handler=cmd_train)

    b = sub.add_parser("boundary", help="sample the decision boundary")
    b.add_argument("--net", required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--radius", type=float, required=True)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--csv", required=True)
    b.add_argument("--ppm")
    b.set_defaults(handler=cmd_boundary)

    r = sub.add_parser("probe", help="positive fraction on spheres of given radii")
    r.add_argument("--net", required=True)
    r.add_argument("--radii", required=True, help='"r1,r2,..."')
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--seed", type=int, required=True)
    r.set_defaults(handler=cmd_probe)
    return p


# values of these flags may start with "-", which argparse would read as an option
_VALUE_FLAGS = ("--box", "--point", "--radii")


def _join_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_join_values(argv))
        return args.handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DeltaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
