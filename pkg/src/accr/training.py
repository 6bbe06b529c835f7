"""Dual-GAN training loop with schedules, variants, and classifier pretraining.

One step runs a generator update (adversarial + cycle terms) followed by a
discriminator update (adversarial + the regularizers active for the
configured variant), each on its own Adam optimizer. Translated and
reconstructed samples are detached for the discriminator update.

Variants gate which regularizers are active:

    baseline  no regularizer
    cr        consistency on real samples only
    cr_fake   real + translated samples
    cr_rec    real + reconstructed samples
    accr      real + translated + reconstructed
    gp        gradient penalty instead of consistency terms

The learning rate holds for ``epochs_constant`` epochs and then decays
linearly to zero over ``epochs_decay`` more. The fake and reconstructed
consistency weights ramp linearly from zero at epoch 0 to their configured
values at the final scheduled epoch.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .augment import TransformSpec, apply as apply_transform, draw, standard_menu
from .data import Dataset, DomainPair, batcher
from .errors import NonFiniteLossError, ValidationError
from .models import (
    ClassifierConfig,
    DigitClassifier,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    ModelBundle,
    PatchDiscriminator,
    config_hash,
    init_weights,
    load_net_arrays,
    net_arrays,
    read_archive,
    write_archive,
)
from .seeding import derive_seed, spawn_seeds

VARIANTS = ("baseline", "cr", "cr_fake", "cr_rec", "accr", "gp")


@dataclass
class TrainConfig:
    variant: str = "accr"
    epochs_constant: int = 10
    epochs_decay: int = 20
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 64
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    transform: TransformSpec = field(default_factory=lambda: standard_menu(1))
    seed: int = 0
    data_seed: int = 0
    g_width: int = 64
    d_width: int = 64
    n_res_blocks: int = 2
    gp_weight: float = 10.0
    update_order: str = "g_first"
    halve_adv_d: bool = False
    strict_deterministic: bool = False
    device: str = "cpu"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.update_order not in ("g_first", "d_first"):
            raise ValidationError("update_order must be 'g_first' or 'd_first'")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if isinstance(self.transform, dict):
            self.transform = TransformSpec.from_config(self.transform)

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        d["transform"] = self.transform.to_config()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ClassifierTrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    width: int = 32
    hidden: int = 128
    val_fraction: float = 0.1
    augment: TransformSpec | None = None
    device: str = "cpu"

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = TransformSpec.from_config(self.augment)


def lr_schedule(epoch: int, cfg: TrainConfig) -> tuple[float, float]:
    """Learning rates at a given epoch: constant, then linear decay to zero."""
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    if epoch < cfg.epochs_constant:
        factor = 1.0
    elif cfg.epochs_decay > 0 and epoch < cfg.total_epochs:
        factor = 1.0 - (epoch - cfg.epochs_constant) / cfg.epochs_decay
    else:
        factor = 0.0
    return cfg.lr_g * factor, cfg.lr_d * factor


def lambda_schedule(epoch: int, cfg: TrainConfig) -> L.LossWeights:
    """Active loss weights at a given epoch.

    The real-sample weight is constant; fake and reconstructed weights ramp
    linearly from zero to their configured values at the final scheduled
    epoch. The variant then masks inactive terms.
    """
    if epoch < 0:
        raise ValidationError("epoch must be >= 0")
    w = cfg.weights
    total = max(cfg.total_epochs, 1)
    ramp = min(epoch / total, 1.0)
    lam_real, lam_fake, lam_rec = w.lambda_real, w.lambda_fake * ramp, w.lambda_rec * ramp
    if cfg.variant in ("baseline", "gp"):
        lam_real = lam_fake = lam_rec = 0.0
    elif cfg.variant == "cr":
        lam_fake = lam_rec = 0.0
    elif cfg.variant == "cr_fake":
        lam_rec = 0.0
    elif cfg.variant == "cr_rec":
        lam_fake = 0.0
    return L.LossWeights(
        lambda_real=lam_real,
        lambda_fake=lam_fake,
        lambda_rec=lam_rec,
        lambda_cyc_1=w.lambda_cyc_1,
        lambda_cyc_2=w.lambda_cyc_2,
    )


@dataclass
class TrainState:
    bundle: ModelBundle
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    epoch: int = 0
    step: int = 0
    rng: torch.Generator | None = None
    history: list = field(default_factory=list)
    last_step_seconds: dict = field(default_factory=dict)


def init_state(cfg: TrainConfig, in_channels: int = 3) -> TrainState:
    """Build networks, optimizers, and the step RNG from the config seed."""
    s = spawn_seeds(cfg.seed, 5)
    gcfg = GeneratorConfig(
        in_channels=in_channels, base_width=cfg.g_width, n_res_blocks=cfg.n_res_blocks
    )
    dcfg = DiscriminatorConfig(in_channels=in_channels, base_width=cfg.d_width)
    bundle = ModelBundle(
        g1=init_weights(Generator(gcfg), s[0]),
        g2=init_weights(Generator(gcfg), s[1]),
        d1=init_weights(PatchDiscriminator(dcfg), s[2]),
        d2=init_weights(PatchDiscriminator(dcfg), s[3]),
    )
    device = torch.device(cfg.device)
    for net in bundle.nets().values():
        net.to(device)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(
        list(bundle.g1.parameters()) + list(bundle.g2.parameters()), lr=cfg.lr_g, betas=betas
    )
    opt_d = torch.optim.Adam(
        list(bundle.d1.parameters()) + list(bundle.d2.parameters()), lr=cfg.lr_d, betas=betas
    )
    rng = torch.Generator().manual_seed(s[4])
    return TrainState(bundle=bundle, opt_g=opt_g, opt_d=opt_d, rng=rng)


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _next_seed(rng: torch.Generator) -> int:
    return int(torch.randint(0, 2**31 - 1, (1,), generator=rng).item())


def train_step(
    state: TrainState, batch1: torch.Tensor, batch2: torch.Tensor, cfg: TrainConfig
) -> tuple[TrainState, L.LossReport]:
    """Run one generator update and one discriminator update.

    Raises NonFiniteLossError with the diagnostic report attached when any
    term becomes non-finite.
    """
    g1, g2, d1, d2 = state.bundle.g1, state.bundle.g2, state.bundle.d1, state.bundle.d2
    w = lambda_schedule(state.epoch, cfg)
    x1, x2 = batch1, batch2

    def generator_substep():
        fake2 = g1(x1)
        rec1 = g2(fake2)
        fake1 = g2(x2)
        rec2 = g1(fake1)
        gan_g1 = L.adv_loss_g(d2(fake2))
        gan_g2 = L.adv_loss_g(d1(fake1))
        cyc = L.cycle_loss(x1, rec1, x2, rec2, w)
        total_g = L.total_g_value(gan_g1, gan_g2, cyc)
        state.opt_g.zero_grad(set_to_none=True)
        total_g.backward()
        state.opt_g.step()
        return fake2, fake1, rec1, rec2, gan_g1, gan_g2, cyc

    def discriminator_substep(f2, f1, r1, r2):
        crr = crf = crc = gp = None
        if cfg.variant == "gp":
            gan_d1 = L.adv_loss_d(d1(x1), d1(f1))
            gan_d2 = L.adv_loss_d(d2(x2), d2(f2))
            gp = L.gradient_penalty(d1, x1, f1, generator=state.rng) + L.gradient_penalty(
                d2, x2, f2, generator=state.rng
            )
        else:
            # One fresh draw per active term per step; zero-weight terms are
            # skipped entirely so inactive variants consume no extra
            # randomness and pay no extra cost. All inputs for one
            # discriminator go through a single batched forward (per-sample
            # results are unaffected: convolutions and instance norm act per
            # instance), so each active term adds only its own batch rows.
            b = x1.shape[0]
            parts1, parts2 = [x1, f1], [x2, f2]
            if w.lambda_real > 0:
                t = draw(cfg.transform, _next_seed(state.rng), n=b)
                parts1.append(apply_transform(t, x1))
                parts2.append(apply_transform(t, x2))
            if w.lambda_fake > 0:
                t = draw(cfg.transform, _next_seed(state.rng), n=b)
                parts1.append(apply_transform(t, f1))
                parts2.append(apply_transform(t, f2))
            if w.lambda_rec > 0:
                t = draw(cfg.transform, _next_seed(state.rng), n=b)
                parts1.extend([r1, apply_transform(t, r1)])
                parts2.extend([r2, apply_transform(t, r2)])
            s1 = list(torch.split(d1(torch.cat(parts1)), b))
            s2 = list(torch.split(d2(torch.cat(parts2)), b))
            gan_d1 = L.adv_loss_d(s1[0], s1[1])
            gan_d2 = L.adv_loss_d(s2[0], s2[1])
            cursor = 2
            if w.lambda_real > 0:
                crr = L.consistency_gap(s1[0], s1[cursor]) + L.consistency_gap(s2[0], s2[cursor])
                cursor += 1
            if w.lambda_fake > 0:
                crf = L.consistency_gap(s2[1], s2[cursor]) + L.consistency_gap(s1[1], s1[cursor])
                cursor += 1
            if w.lambda_rec > 0:
                crc = L.consistency_gap(s1[cursor], s1[cursor + 1]) + L.consistency_gap(
                    s2[cursor], s2[cursor + 1]
                )
        if cfg.halve_adv_d:
            gan_d1 = 0.5 * gan_d1
            gan_d2 = 0.5 * gan_d2
        total_d = L.total_d_value(
            gan_d1,
            gan_d2,
            crr if crr is not None else 0.0,
            crf if crf is not None else 0.0,
            crc if crc is not None else 0.0,
            gp if gp is not None else 0.0,
            w=w,
            gp_weight=cfg.gp_weight if cfg.variant == "gp" else 0.0,
        )
        state.opt_d.zero_grad(set_to_none=True)
        total_d.backward()
        state.opt_d.step()
        return gan_d1, gan_d2, crr, crf, crc, gp

    if cfg.update_order == "g_first":
        t0 = time.perf_counter()
        fake2, fake1, rec1, rec2, gan_g1, gan_g2, cyc = generator_substep()
        t1 = time.perf_counter()
        gan_d1, gan_d2, crr, crf, crc, gp = discriminator_substep(
            fake2.detach(), fake1.detach(), rec1.detach(), rec2.detach()
        )
        t2 = time.perf_counter()
        g_time, d_time = t1 - t0, t2 - t1
    else:
        t0 = time.perf_counter()
        with torch.no_grad():
            f2 = g1(x1)
            f1 = g2(x2)
            r1 = g2(f2)
            r2 = g1(f1)
        gan_d1, gan_d2, crr, crf, crc, gp = discriminator_substep(f2, f1, r1, r2)
        t1 = time.perf_counter()
        _, _, _, _, gan_g1, gan_g2, cyc = generator_substep()
        t2 = time.perf_counter()
        d_time, g_time = t1 - t0, t2 - t1

    report = L.assemble_objective(
        gan_g1=gan_g1.item(),
        gan_g2=gan_g2.item(),
        gan_d1=gan_d1.item(),
        gan_d2=gan_d2.item(),
        cyc=cyc.item(),
        cr_real=crr.item() if crr is not None else 0.0,
        cr_fake=crf.item() if crf is not None else 0.0,
        cr_rec=crc.item() if crc is not None else 0.0,
        gp=gp.item() if gp is not None else 0.0,
        w=w,
        gp_weight=cfg.gp_weight if cfg.variant == "gp" else 0.0,
    )
    state.last_step_seconds = {"g": g_time, "d": d_time}
    if not report.is_finite():
        raise NonFiniteLossError(f"non-finite loss at step {state.step}", report=report)
    state.step += 1
    return state, report


def metrics_record(report: L.LossReport, step: int, epoch: int, w: L.LossWeights) -> dict:
    """One JSON-lines record of a step's loss terms and active weights."""
    rec = {"step": step, "epoch": epoch}
    rec.update(report.to_dict())
    rec["weights"] = w.to_dict()
    return rec


def train(cfg: TrainConfig, pair: DomainPair, out_dir=None) -> TrainState:
    """Run the full epoch schedule over a domain pair.

    When ``out_dir`` is given, writes ``metrics.jsonl`` (one record per
    step) and one checkpoint per epoch under ``checkpoints/``; otherwise
    records are kept on ``state.history``.
    """
    if cfg.strict_deterministic:
        torch.set_num_threads(1)
    in_channels = pair.source.image_shape[0]
    state = init_state(cfg, in_channels=in_channels)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out_dir / "metrics.jsonl", "w")
    try:
        for epoch in range(cfg.total_epochs):
            state.epoch = epoch
            g_lr, d_lr = lr_schedule(epoch, cfg)
            _set_lr(state.opt_g, g_lr)
            _set_lr(state.opt_d, d_lr)
            stream1 = batcher(
                pair.source, cfg.batch_size, derive_seed(cfg.data_seed, epoch, 0), drop_last=True
            )
            stream2 = batcher(
                pair.target, cfg.batch_size, derive_seed(cfg.data_seed, epoch, 1), drop_last=True
            )
            w = lambda_schedule(epoch, cfg)
            for b1, b2 in zip(stream1, stream2):
                state, report = train_step(state, b1, b2, cfg)
                rec = metrics_record(report, state.step - 1, epoch, w)
                if metrics_file is not None:
                    metrics_file.write(json.dumps(rec) + "\n")
                else:
                    state.history.append(rec)
            if out_dir is not None:
                save_train_state(out_dir / "checkpoints" / f"epoch_{epoch:04d}.ckpt", state, cfg)
        if metrics_file is not None:
            metrics_file.flush()
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return state


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def _optimizer_arrays(opt: torch.optim.Optimizer, prefix: str) -> tuple[dict, list]:
    arrays = {}
    sd = opt.state_dict()
    for pid, entry in sd["state"].items():
        for key, val in entry.items():
            t = val if isinstance(val, torch.Tensor) else torch.tensor(float(val))
            arrays[f"{prefix}/state/{pid}/{key}"] = t.detach().cpu().numpy()
    return arrays, sd["param_groups"]


def _optimizer_from_arrays(
    opt: torch.optim.Optimizer, arrays: dict, prefix: str, param_groups: list
) -> None:
    state: dict = {}
    head = prefix + "/state/"
    for key, arr in arrays.items():
        if not key.startswith(head):
            continue
        pid_str, field_name = key[len(head) :].split("/", 1)
        state.setdefault(int(pid_str), {})[field_name] = torch.from_numpy(arr.copy())
    opt.load_state_dict({"state": state, "param_groups": param_groups})


def save_train_state(path, state: TrainState, cfg: TrainConfig) -> None:
    """Checkpoint networks, optimizer moments, RNG state, and progress.

    A save/load round trip reproduces subsequent steps bit-identically at a
    fixed seed under single-threaded execution.
    """
    arrays = {}
    for name, net in state.bundle.nets().items():
        arrays.update(net_arrays(net, name))
    og_arrays, og_groups = _optimizer_arrays(state.opt_g, "opt_g")
    od_arrays, od_groups = _optimizer_arrays(state.opt_d, "opt_d")
    arrays.update(og_arrays)
    arrays.update(od_arrays)
    arrays["rng/torch"] = state.rng.get_state().numpy()
    manifest = {
        "format": "accr-train-state-v1",
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "epoch": state.epoch,
        "step": state.step,
        "seed": cfg.seed,
        "generator_config": asdict(state.bundle.g1.config),
        "discriminator_config": asdict(state.bundle.d1.config),
        "opt_g_param_groups": og_groups,
        "opt_d_param_groups": od_groups,
    }
    write_archive(path, arrays, manifest)


def load_train_state(path) -> tuple[TrainState, TrainConfig]:
    """Restore a training checkpoint; returns (state, config)."""
    arrays, manifest = read_archive(path)
    cfg = TrainConfig.from_dict(manifest["config"])
    gcfg = GeneratorConfig(**manifest["generator_config"])
    dcfg = DiscriminatorConfig(**manifest["discriminator_config"])
    bundle = ModelBundle(
        g1=Generator(gcfg),
        g2=Generator(gcfg),
        d1=PatchDiscriminator(dcfg),
        d2=PatchDiscriminator(dcfg),
    )
    for name, net in bundle.nets().items():
        load_net_arrays(net, arrays, name)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_g = torch.optim.Adam(
        list(bundle.g1.parameters()) + list(bundle.g2.parameters()), lr=cfg.lr_g, betas=betas
    )
    opt_d = torch.optim.Adam(
        list(bundle.d1.parameters()) + list(bundle.d2.parameters()), lr=cfg.lr_d, betas=betas
    )
    _optimizer_from_arrays(opt_g, arrays, "opt_g", manifest["opt_g_param_groups"])
    _optimizer_from_arrays(opt_d, arrays, "opt_d", manifest["opt_d_param_groups"])
    rng = torch.Generator()
    rng.set_state(torch.from_numpy(arrays["rng/torch"].copy()))
    state = TrainState(
        bundle=bundle,
        opt_g=opt_g,
        opt_d=opt_d,
        epoch=int(manifest["epoch"]),
        step=int(manifest["step"]),
        rng=rng,
    )
    return state, cfg


# ---------------------------------------------------------------------------
# Classifier pretraining
# ---------------------------------------------------------------------------


def train_classifier(
    dataset: Dataset, cfg: ClassifierTrainConfig | None = None
) -> DigitClassifier:
    """Train the fixed evaluation classifier on a labeled dataset.

    A deterministic validation fraction is held out; the final validation
    accuracy is stored on the returned net as ``val_accuracy_``. The net is
    frozen (requires_grad False) before returning.
    """
    cfg = cfg or ClassifierTrainConfig()
    if dataset.labels is None:
        raise ValidationError("classifier training requires a labeled dataset")
    n = len(dataset)
    n_val = max(1, int(round(n * cfg.val_fraction))) if n > 1 else 1
    order = np.random.default_rng(derive_seed(cfg.seed, 0xC1A55)).permutation(n)
    val_idx = order[:n_val]
    train_idx = order[n_val:] if n > 1 else order
    train_set = Dataset(
        dataset.name, "train", dataset.images[train_idx], labels=dataset.labels[train_idx]
    )
    val_images = torch.from_numpy(dataset.images[val_idx])
    val_labels = torch.from_numpy(dataset.labels[val_idx])

    size = dataset.image_shape[1]
    net = DigitClassifier(
        ClassifierConfig(
            in_channels=dataset.image_shape[0],
            input_size=size,
            base_width=cfg.width,
            hidden=cfg.hidden,
        )
    )
    init_weights(net, derive_seed(cfg.seed, 0x1217), scheme="default")
    net.to(torch.device(cfg.device))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    for epoch in range(cfg.epochs):
        stream = batcher(
            train_set,
            min(cfg.batch_size, len(train_set)),
            derive_seed(cfg.seed, 1 + epoch),
            drop_last=False,
            with_labels=True,
        )
        for step, (images, labels) in enumerate(stream):
            if cfg.augment is not None:
                t = draw(cfg.augment, derive_seed(cfg.seed, 2, epoch, step), n=images.shape[0])
                images = apply_transform(t, images)
            opt.zero_grad(set_to_none=True)
            loss = F.cross_entropy(net(images), labels)
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        preds = net(val_images).argmax(dim=1)
        accuracy = (preds == val_labels).float().mean().item()
    for p in net.parameters():
        p.requires_grad_(False)
    net.val_accuracy_ = accuracy
    return net
