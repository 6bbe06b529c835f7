"""Pilot for the desk-scale directional experiment; tunes task defaults."""

import json
import sys
import time

import torch

torch.set_num_threads(1)

from accr.cli import ExperimentPlan, run_plan  # noqa: E402

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 1024
batch = int(sys.argv[2]) if len(sys.argv) > 2 else 16
out = sys.argv[3] if len(sys.argv) > 3 else "/tmp/pilot"

plan = ExperimentPlan(
    task="digits",
    task_params={"n_train": n_train, "n_val": 256, "size": 16, "n_classifier": 3000},
    base={"batch_size": batch},
    variants=[{"variant": "baseline"}, {"variant": "cr"}, {"variant": "accr"}],
    seeds=[0, 1, 2, 3, 4],
    data_seed=99,
    output_dir=out,
)
t0 = time.time()
summary = run_plan(plan)
print(f"total {time.time() - t0:.0f}s")
for rep in summary["reports"]:
    print(json.dumps(rep))
by_var = {}
for cell in summary["cells"]:
    by_var.setdefault(cell["variant"], {})[cell["seed"]] = cell
for v in ("baseline", "cr", "accr"):
    accs = [by_var[v][s]["accuracy"] for s in sorted(by_var[v])]
    fds = [by_var[v][s]["feature_distance"] for s in sorted(by_var[v])]
    print(v, "acc:", [round(a, 1) for a in accs], "fd:", [round(f, 4) for f in fds])
wins = sum(
    by_var["accr"][s]["accuracy"] >= by_var["baseline"][s]["accuracy"] for s in range(5)
)
fd_wins = sum(
    by_var["accr"][s]["feature_distance"] <= by_var["baseline"][s]["feature_distance"]
    for s in range(5)
)
import numpy as np

print(
    f"acc wins accr>=base: {wins}/5 | mean accr {np.mean([by_var['accr'][s]['accuracy'] for s in range(5)]):.2f} "
    f"vs cr {np.mean([by_var['cr'][s]['accuracy'] for s in range(5)]):.2f} "
    f"vs base {np.mean([by_var['baseline'][s]['accuracy'] for s in range(5)]):.2f} | fd wins: {fd_wins}/5"
)
