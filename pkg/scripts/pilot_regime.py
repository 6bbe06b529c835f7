"""Pilot: find the desk regime where discriminator overfitting is visible
and consistency regularization pays off within 2 + 2 epochs."""

import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from accr.augment import standard_menu  # noqa: E402
from accr.data import Dataset, DomainPair, batcher, build_digit_task, synth_digits, synthesize_colored_digits  # noqa: E402
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

pair_full, src_val, tgt_val = build_digit_task(8192, 512, 16, seed=derive_seed(99, 0))
aug16 = None
clf_base = synth_digits(3000, 16, derive_seed(99, 7, 0))
clf_src = train_classifier(clf_base, ClassifierTrainConfig(epochs=6, seed=derive_seed(99, 7, 2)))
clf_tgt_base = synthesize_colored_digits(
    synth_digits(3000, 16, derive_seed(99, 7, 3)), seed=derive_seed(99, 7, 4)
)
clf_tgt = train_classifier(clf_tgt_base, ClassifierTrainConfig(epochs=6, seed=derive_seed(99, 7, 5)))
print(f"clf_src {clf_src.val_accuracy_:.3f} clf_tgt {clf_tgt.val_accuracy_:.3f}", flush=True)


def subset_pair(n):
    return DomainPair(
        Dataset("s", "train", pair_full.source.images[:n]),
        Dataset("t", "train", pair_full.target.images[:n]),
    )


def run(variant, seed, n, batch, lr_g, lr_d, lam):
    p = subset_pair(n)
    cfg = TrainConfig(
        variant=variant,
        epochs_constant=2,
        epochs_decay=2,
        batch_size=batch,
        g_width=16,
        d_width=16,
        seed=seed,
        data_seed=99,
        lr_g=lr_g,
        lr_d=lr_d,
        weights=LossWeights(lambda_real=lam, lambda_fake=lam / 2, lambda_rec=lam / 2),
        transform=standard_menu(1, size=16),
    )
    state = init_state(cfg, 3)
    t0 = time.time()
    gan_d_late = []
    for epoch in range(cfg.total_epochs):
        state.epoch = epoch
        glr, dlr = lr_schedule(epoch, cfg)
        for gr in state.opt_g.param_groups:
            gr["lr"] = glr
        for gr in state.opt_d.param_groups:
            gr["lr"] = dlr
        for b1, b2 in zip(
            batcher(p.source, batch, derive_seed(99, epoch, 0), True),
            batcher(p.target, batch, derive_seed(99, epoch, 1), True),
        ):
            state, rep = train_step(state, b1, b2, cfg)
            if epoch >= cfg.total_epochs - 1:
                gan_d_late.append(rep.gan_d1 + rep.gan_d2)
    acc = fake_accuracy(state.bundle.g2, tgt_val, clf_src)
    rev = fake_accuracy(state.bundle.g1, src_val, clf_tgt)
    fd = feature_distance(state.bundle.d2, tgt_val, standard_menu(1, size=16), seed=5)
    print(
        f"{variant:9s} n={n:<5} b={batch:<3} lr={lr_g:.0e}/{lr_d:.0e} lam={lam:<4} s{seed}: "
        f"acc={acc:5.1f} rev={rev:5.1f} fd={fd:.4f} ganD_late={np.mean(gan_d_late):.3f} "
        f"({time.time() - t0:.0f}s)",
        flush=True,
    )


which = sys.argv[1] if len(sys.argv) > 1 else "A"
if which == "A":
    # Small-data regime, equal lr, lambda 1.
    for seed in (0, 1, 2):
        for variant in ("baseline", "cr", "accr"):
            run(variant, seed, n=2048, batch=8, lr_g=1e-3, lr_d=1e-3, lam=1.0)
elif which == "B":
    # Smaller still.
    for seed in (0, 1, 2):
        for variant in ("baseline", "accr"):
            run(variant, seed, n=1024, batch=8, lr_g=1e-3, lr_d=1e-3, lam=1.0)
elif which == "C":
    # Mild regularization at the 8192-image regime.
    for seed in (0, 1, 2):
        for variant in ("cr", "accr"):
            run(variant, seed, n=8192, batch=16, lr_g=1e-3, lr_d=5e-4, lam=0.3)
