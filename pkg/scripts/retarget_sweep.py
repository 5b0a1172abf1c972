"""Replay consistency of retargeting over sampled viewpoint motions.

Retargets synthetic trajectories of the fixture robot under motions drawn
from a viewpoint range profile and prints one row per motion.

    python3 scripts/retarget_sweep.py [--range sim] [--motions 20] [--trajectories 5] [--frames 100]
"""

import argparse
import json
import sys

import numpy as np

from egoshift.errors import RetargetError
from egoshift.fixtures import dual_arm_model, smooth_trajectory
from egoshift.geometry import VIEWPOINT_RANGES, sample_ego_motion
from egoshift.retarget import replay_consistency_check, retarget_trajectory


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--range", default="sim", choices=sorted(VIEWPOINT_RANGES))
    ap.add_argument("--motions", type=int, default=20)
    ap.add_argument("--trajectories", type=int, default=5)
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1000, help="first motion seed")
    ap.add_argument("--pos-tol", type=float, default=5e-3)
    ap.add_argument("--rot-tol", type=float, default=5e-2)
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)

    model = dual_arm_model()
    trajs = [smooth_trajectory(model, args.frames, seed=s) for s in range(args.trajectories)]
    rows = []
    print(f"{'seed':>5} {'dx':>8} {'dy':>8} {'dth_deg':>8} {'ok':>7} {'filled':>6} {'max_pos':>9}")
    for k in range(args.motions):
        m = sample_ego_motion(VIEWPOINT_RANGES[args.range], args.seed + k)
        fractions, filled, max_pos = [], 0, 0.0
        for traj in trajs:
            try:
                out, rep = retarget_trajectory(model, traj, m)
            except RetargetError:
                fractions.append(0.0)
                continue
            check = replay_consistency_check(model, traj, out, m)
            fractions.append(check.fraction_under(args.pos_tol, args.rot_tol))
            filled += sum(rep.filled.values())
            max_pos = max(max_pos, float(check.pos_err.max()))
        ok = float(np.mean(fractions))
        rows.append({"seed": args.seed + k, "motion": m.to_dict(), "fraction_ok": ok, "filled": filled, "max_pos_err": max_pos})
        print(f"{args.seed + k:5d} {m.dx:8.4f} {m.dy:8.4f} {m.dtheta_deg:8.3f} {ok:7.2%} {filled:6d} {max_pos:9.2e}")
    pooled = float(np.mean([r["fraction_ok"] for r in rows])) if rows else 0.0
    print(f"pooled: {pooled:.2%} of frames within ({args.pos_tol:g} m, {args.rot_tol:g} rad)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"range": args.range, "rows": rows, "pooled": pooled}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
