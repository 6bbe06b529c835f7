"""Pilot: does the desk task learn a usable translation, and how fast?"""

import sys
import time

import torch

torch.set_num_threads(1)

import numpy as np  # noqa: E402

from accr.data import build_digit_task, synth_digits  # noqa: E402
from accr.training import (  # noqa: E402
    ClassifierTrainConfig,
    TrainConfig,
    init_state,
    lambda_schedule,
    lr_schedule,
    train_classifier,
    train_step,
)
from accr.evaluation import fake_accuracy  # noqa: E402
from accr.augment import standard_menu  # noqa: E402
from accr.data import batcher  # noqa: E402
from accr.seeding import derive_seed  # noqa: E402

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 4096
batch = int(sys.argv[2]) if len(sys.argv) > 2 else 16
variant = sys.argv[3] if len(sys.argv) > 3 else "baseline"
seed = int(sys.argv[4]) if len(sys.argv) > 4 else 0

pair, src_val, tgt_val = build_digit_task(n_train, 256, 16, seed=derive_seed(99, 0))
clf_base = synth_digits(3000, 16, derive_seed(99, 7, 0))
clf = train_classifier(clf_base, ClassifierTrainConfig(epochs=4, seed=derive_seed(99, 7, 2)))
print(f"classifier val acc {clf.val_accuracy_:.3f}")

cfg = TrainConfig(
    variant=variant,
    epochs_constant=2,
    epochs_decay=2,
    batch_size=batch,
    g_width=16,
    d_width=16,
    seed=seed,
    data_seed=99,
    transform=standard_menu(1, size=16),
)
state = init_state(cfg, 3)
t0 = time.time()
for epoch in range(cfg.total_epochs):
    state.epoch = epoch
    g_lr, d_lr = lr_schedule(epoch, cfg)
    for group in state.opt_g.param_groups:
        group["lr"] = g_lr
    for group in state.opt_d.param_groups:
        group["lr"] = d_lr
    cycs = []
    for b1, b2 in zip(
        batcher(pair.source, batch, derive_seed(99, epoch, 0), True),
        batcher(pair.target, batch, derive_seed(99, epoch, 1), True),
    ):
        state, rep = train_step(state, b1, b2, cfg)
        cycs.append(rep.cyc)
    acc = fake_accuracy(state.bundle.g2, tgt_val, clf)
    print(
        f"{variant} seed{seed} epoch {epoch}: steps={state.step} cyc={np.mean(cycs):.3f} "
        f"acc={acc:.1f}% ({time.time() - t0:.0f}s)"
    )
