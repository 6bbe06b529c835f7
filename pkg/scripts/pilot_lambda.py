"""Pilot: λ_real choice for the desk task, following the sweep-then-fix protocol."""

import time

import numpy as np
import torch

torch.set_num_threads(1)

from accr.augment import standard_menu  # noqa: E402
from accr.data import batcher, build_digit_task, synth_digits  # noqa: E402
from accr.evaluation import fake_accuracy, feature_distance  # noqa: E402
from accr.losses import LossWeights  # noqa: E402
from accr.seeding import derive_seed  # noqa: E402
from accr.training import (  # noqa: E402
    ClassifierTrainConfig,
    TrainConfig,
    init_state,
    lr_schedule,
    train_classifier,
    train_step,
)

pair, src_val, tgt_val = build_digit_task(8192, 256, 16, seed=derive_seed(99, 0))
clf_base = synth_digits(3000, 16, derive_seed(99, 7, 0))
clf = train_classifier(clf_base, ClassifierTrainConfig(epochs=4, seed=derive_seed(99, 7, 2)))
print(f"clf {clf.val_accuracy_:.3f}", flush=True)


def run(variant, seed, lam):
    w = LossWeights(lambda_real=lam, lambda_fake=lam / 2, lambda_rec=lam / 2)
    cfg = TrainConfig(
        variant=variant,
        epochs_constant=2,
        epochs_decay=2,
        batch_size=16,
        g_width=16,
        d_width=16,
        seed=seed,
        data_seed=99,
        lr_g=1e-3,
        lr_d=5e-4,
        weights=w,
        transform=standard_menu(1, size=16),
    )
    state = init_state(cfg, 3)
    t0 = time.time()
    for epoch in range(cfg.total_epochs):
        state.epoch = epoch
        glr, dlr = lr_schedule(epoch, cfg)
        for gr in state.opt_g.param_groups:
            gr["lr"] = glr
        for gr in state.opt_d.param_groups:
            gr["lr"] = dlr
        for b1, b2 in zip(
            batcher(pair.source, 16, derive_seed(99, epoch, 0), True),
            batcher(pair.target, 16, derive_seed(99, epoch, 1), True),
        ):
            state, rep = train_step(state, b1, b2, cfg)
    acc = fake_accuracy(state.bundle.g2, tgt_val, clf)
    fd = feature_distance(state.bundle.d2, tgt_val, standard_menu(1, size=16), seed=5)
    print(
        f"{variant:9s} lam={lam:<4} s{seed}: acc={acc:5.1f}% fd={fd:.4f} ({time.time() - t0:.0f}s)",
        flush=True,
    )
    return acc, fd


for seed in (0, 1, 2):
    run("baseline", seed, 1.0)
for lam in (1.0, 10.0):
    for variant in ("cr", "accr"):
        for seed in (0, 1, 2):
            run(variant, seed, lam)
