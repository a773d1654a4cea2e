"""Equal-budget comparison of plain TB, DB-GFN revision and fixed-step local search.

    python scripts/compare_search.py --config configs/motif_l8.ini --seeds 0,1,2 --out runs/compare

Every mode shares ``train.reward_budget``; revision calls count against it.
Prints one row per mode with the mean and sample std over seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from dbgfn.config import apply_overrides, load_config
from dbgfn.harness import run_experiment

MODES = ("none", "dbgfn", "ls")
COLUMNS = ("modes", "accuracy", "accuracy_exact", "l1_to_target", "pearson_logp_reward_exact", "rounds_completed")


def run_mode(base, mode: str, seeds: list[int], out: Path, extra: list[str]) -> dict[str, list[float]]:
    cfg = base if mode == "dbgfn" else dataclasses.replace(base, backtrack=None)
    cfg = apply_overrides(cfg, [f"train.search={mode}", *extra])
    vals: dict[str, list[float]] = {c: [] for c in COLUMNS}
    for seed in seeds:
        res = run_experiment(apply_overrides(cfg, [f"run.seed={seed}"]), out / mode / f"seed_{seed}")
        s = dict(res.summary)
        s["accuracy"] = res.rows[-1].accuracy if res.rows else float("nan")
        for c in COLUMNS:
            vals[c].append(float(s.get(c, float("nan"))))
        print(f"  {mode:5s} seed {seed}: modes {s['modes']}, calls {s['reward_calls']}", flush=True)
    return vals


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/motif_l8.ini")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args()

    base = load_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    table = {}
    for mode in args.modes.split(","):
        table[mode] = run_mode(base, mode, seeds, out, args.overrides)

    print("mode   " + "  ".join(f"{c:>24s}" for c in COLUMNS))
    for mode, vals in table.items():
        cells = []
        for c in COLUMNS:
            v = np.array(vals[c])
            sd = v.std(ddof=1) if len(v) > 1 else 0.0
            cells.append(f"{v.mean():>15.4f} ± {sd:<6.4f}")
        print(f"{mode:6s} " + "  ".join(cells))
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(json.dumps(table, indent=2))


if __name__ == "__main__":
    main()
