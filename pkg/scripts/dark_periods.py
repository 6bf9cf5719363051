"""Intermittent fluorescence of a three-level atom with one strong and one weak transition.

A single long waiting-time trajectory; gaps between strong-channel jumps longer
than ``--threshold`` times the median gap count as dark periods. Their mean
length is compared with the lifetime 1/gamma_weak of the shelving level.
"""

import argparse

import numpy as np

from qtraj import TimeGrid
from qtraj.jump_engine import run_trajectory
from qtraj.presets import ThreeLevelParams, three_level_model
from qtraj.quantum_core import basis_state


def dark_periods(times: np.ndarray, threshold: float) -> np.ndarray:
    gaps = np.diff(times)
    return gaps[gaps > threshold * np.median(gaps)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma-strong", type=float, default=1.0)
    ap.add_argument("--gamma-weak", type=float, default=0.01)
    ap.add_argument("--rabi-strong", type=float, default=1.0)
    ap.add_argument("--rabi-weak", type=float, default=0.1)
    ap.add_argument("--t-end", type=float, default=3000.0)
    ap.add_argument("--dt", type=float, default=5e-2)
    ap.add_argument("--threshold", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    p = ThreeLevelParams(args.gamma_strong, args.gamma_weak, args.rabi_strong, args.rabi_weak)
    model = three_level_model(p)
    grid = TimeGrid(0.0, args.t_end, args.dt, sample_every=int(round(args.t_end / args.dt)))
    rec = run_trajectory(model, basis_state(3, 0), grid, (), "waiting_time", master_seed=args.seed)
    times = np.array([j.time for j in rec.jumps])
    channels = np.array([j.channel for j in rec.jumps], dtype=int)
    strong = times[channels == 0]
    dark = dark_periods(strong, args.threshold)

    print(f"strong jumps {strong.size}, weak jumps {int(np.sum(channels == 1))}")
    if strong.size > 1:
        print(f"median gap between strong jumps {np.median(np.diff(strong)):.3g}")
    if strong.size > 1:
        gaps = np.diff(strong)
        print(f"gaps > {args.threshold:g}x median: {dark.size} observed, "
              f"{gaps.size * 0.5**args.threshold:.2g} expected for exponential gaps with the median's rate")
    if dark.size:
        print(f"dark periods {dark.size}, mean length {dark.mean():.3g} (1/gamma_weak = {1 / p.gamma_weak:.3g})")
    else:
        print("no dark periods; lengthen --t-end or raise --rabi-weak")


if __name__ == "__main__":
    main()
