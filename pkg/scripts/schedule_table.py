"""Print the rewind-step schedule for a grid of rewards.

    python scripts/schedule_table.py --s-max 6 --s-min 2 --t-max 5 --t-min 0.4
"""

from __future__ import annotations

import argparse

import numpy as np

from dbgfn.backtrack import BacktrackConfig, dynamic_steps, regret_probability


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--s-max", type=int, default=5)
    ap.add_argument("--s-min", type=int, default=2)
    ap.add_argument("--t-max", type=float, default=5.0)
    ap.add_argument("--t-min", type=float, default=0.4)
    ap.add_argument("--tg", type=float, default=20.0)
    ap.add_argument("--points", type=int, default=13)
    args = ap.parse_args()

    cfg = BacktrackConfig(tg=args.tg, s_max=args.s_max, s_min=args.s_min, t_max=args.t_max, t_min=args.t_min)
    cfg.validate()
    print(f"gate probability at tg={args.tg}: {regret_probability(args.tg):.6f}")
    for r in np.linspace(cfg.t_min - 0.5, cfg.t_max + 0.5, args.points):
        print(f"R = {r:7.3f}  steps = {dynamic_steps(cfg, r)}")


if __name__ == "__main__":
    main()
