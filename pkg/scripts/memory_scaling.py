"""Per-state memory of trajectories versus density matrices for the damped cavity."""

import argparse
import json

from qtraj.validation import scaling_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200], help="photon-number cutoffs")
    ap.add_argument("--json", action="store_true", help="print the raw report")
    args = ap.parse_args()

    rows = scaling_report(tuple(args.sizes))
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'dim':>5} {'psi bytes':>10} {'rho bytes':>10} {'traj peak':>10} {'ME peak':>10}")
    for r in rows:
        print(f"{r['dim']:5d} {r['trajectory_state_bytes']:10d} {r['density_state_bytes']:10d} "
              f"{r['trajectory_peak_bytes']:10d} {r['master_peak_bytes']:10d}")
    for a, b in zip(rows, rows[1:]):
        print(f"{a['dim']}->{b['dim']}: psi x{b['trajectory_state_bytes'] / a['trajectory_state_bytes']:.2f}, "
              f"rho x{b['density_state_bytes'] / a['density_state_bytes']:.2f}")


if __name__ == "__main__":
    main()
