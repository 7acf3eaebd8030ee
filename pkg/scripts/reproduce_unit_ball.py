"""Train the width-2 fully connected baseline and one-neuron ResNets on the
unit-ball data, and export loss histories, boundary samples and rasters.

Usage: python3 scripts/reproduce_unit_ball.py [--out DIR] [--seed S]

Writes, per run, ``<name>.net``, ``<name>.history.json``, ``<name>.csv`` and
``<name>.ppm``, plus ``summary.json`` with final losses and shell positivity.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from resnet_synth import experiment as ex

RUNS = [(ex.Arch.FULLY_CONNECTED, 2)] + [(ex.Arch.RESNET, k) for k in (1, 2, 3, 5)]
BOUNDARY_SAMPLES = 2000
BOUNDARY_RADIUS = 5.0
PROBE_RADII = [1.0, 5.0, 10.0, 50.0]


def reproduce(out: Path, seed: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = ex.gen_dataset(seed=seed)
    summary = {}
    for arch, depth in RUNS:
        name = f"{arch.value}_depth{depth}"
        cfg = ex.TrainConfig(arch, depth, seed=seed)
        result = ex.train(cfg, data)
        ex.save_any(result.net, out / f"{name}.net")
        (out / f"{name}.history.json").write_text(
            json.dumps({"config": json.loads(cfg.to_json()), "history": result.history}) + "\n")
        ex.sample_decision_boundary(result.net, BOUNDARY_SAMPLES, BOUNDARY_RADIUS, seed).write_csv(out / f"{name}.csv")
        ex.write_ppm(result.net, out / f"{name}.ppm", BOUNDARY_RADIUS)
        probe = ex.positivity_probe(result.net, PROBE_RADII, 2000, seed)
        summary[name] = {"initial_loss": result.history[0], "final_loss": result.history[-1],
                         "positive_fraction": dict(zip(map(str, PROBE_RADII), probe.tolist()))}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return summary


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="unit_ball_runs")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    for name, row in reproduce(Path(args.out), args.seed).items():
        frac = " ".join(f"r={r}:{f:.3f}" for r, f in row["positive_fraction"].items())
        print(f"{name:16s} loss {row['initial_loss']:.4f} -> {row['final_loss']:.4f}  positive {frac}")


if __name__ == "__main__":
    main()
