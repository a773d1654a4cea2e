"""Compare the three choose rules (reward, pearson, mh) under one config.

    python scripts/choose_rules.py --config configs/motif_l8.ini --seeds 0 --out runs/choose
"""

from __future__ import annotations

import argparse
from pathlib import Path

from dbgfn.backtrack import CHOOSE_RULES
from dbgfn.config import apply_overrides, load_config
from dbgfn.harness import run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/motif_l8.ini")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--out", default="runs/choose")
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args()

    base = apply_overrides(load_config(args.config), ["train.search=dbgfn", *args.overrides])
    print(f"{'rule':8s} {'seed':>4s} {'modes':>6s} {'accepted':>9s} {'acc_exact':>9s} {'l1':>7s} {'corr':>7s}")
    for rule in CHOOSE_RULES:
        for seed in (int(s) for s in args.seeds.split(",")):
            cfg = apply_overrides(base, [f"backtrack.choose={rule}", f"run.seed={seed}"])
            s = run_experiment(cfg, Path(args.out) / rule / f"seed_{seed}").summary
            rev = s["revision"]
            frac = rev["accepted"] / max(rev["gated"], 1)
            print(f"{rule:8s} {seed:4d} {s['modes']:6d} {frac:9.3f} {s.get('accuracy_exact', float('nan')):9.4f} "
                  f"{s.get('l1_to_target', float('nan')):7.3f} {s.get('pearson_logp_reward_exact', float('nan')):7.3f}",
                  flush=True)


if __name__ == "__main__":
    main()
