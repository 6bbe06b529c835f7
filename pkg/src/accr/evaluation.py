"""Quantitative evaluation: classifier accuracy on translated samples,
paired MSE, discriminator feature distance, paired t-tests, and
discriminator-update throughput."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy import stats as sp_stats

from .augment import TransformSpec, apply, draw
from .data import Dataset, DomainPair
from .errors import ShapeError, ValidationError
from .seeding import derive_seed


@dataclass
class TTestResult:
    """Two-sided paired t-test keyed by seed.

    ``degenerate`` marks a zero-variance difference vector, where the
    p-value is undefined and the comparison is never reported significant.
    """

    statistic: float
    p_value: float | None
    significant: bool
    degenerate: bool
    n: int
    alpha: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    """Aggregated metrics for one (task, variant) across seeds.

    Std fields are present only when at least two seeds contributed.
    """

    task: str
    variant: str
    seeds: list = field(default_factory=list)
    accuracy_mean: float | None = None
    accuracy_std: float | None = None
    mse_mean: float | None = None
    feature_distance_mean: float | None = None
    feature_distance_std: float | None = None
    steps_per_sec_mean: float | None = None
    steps_per_sec_std: float | None = None
    t_test: dict | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def _batched(images: np.ndarray, batch_size: int = 256):
    for start in range(0, images.shape[0], batch_size):
        yield torch.from_numpy(images[start : start + batch_size])


def fake_accuracy(g, source: Dataset, classifier) -> float:
    """Accuracy (%) of a frozen target-domain classifier on translated samples.

    Translates every source image through ``g`` and scores the classifier
    argmax against the source labels.
    """
    if source.labels is None:
        raise ValidationError("fake_accuracy requires a labeled source dataset")
    correct = 0
    with torch.no_grad():
        for start in range(0, len(source), 256):
            x = torch.from_numpy(source.images[start : start + 256])
            labels = torch.from_numpy(source.labels[start : start + 256])
            preds = classifier(g(x)).argmax(dim=1)
            correct += int((preds == labels).sum().item())
    return 100.0 * correct / len(source)


def paired_mse(g, pair: DomainPair) -> float:
    """Mean squared error between translations and aligned ground truth.

    Computed in [0, 1] pixel space so magnitudes are comparable across
    runs. Requires an aligned pair.
    """
    if not pair.paired:
        raise ValidationError("paired_mse requires a paired domain pair")
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(pair.source), 256):
            src = torch.from_numpy(pair.source.images[start : start + 256])
            tgt = torch.from_numpy(pair.target.images[start : start + 256])
            out01 = (g(src) + 1.0) / 2.0
            tgt01 = (tgt + 1.0) / 2.0
            total += float(((out01 - tgt01) ** 2).double().sum().item())
            count += src.numel()
    return total / count


def feature_distance(
    d, testset: Dataset, t: TransformSpec, n_draws: int = 1, seed: int = 0
) -> float:
    """Mean squared penultimate-feature difference under augmentation.

    For each image and each of ``n_draws`` independent draws, compares the
    discriminator's penultimate activations on x and T(x); accumulates in
    float64 for an order-independent reduction.
    """
    if n_draws < 1:
        raise ValidationError("n_draws must be >= 1")
    total = 0.0
    count = 0
    with torch.no_grad():
        for batch_idx, x in enumerate(_batched(testset.images)):
            _, f_clean = d(x, want_features=True)
            for k in range(n_draws):
                t_draw = draw(t, derive_seed(seed, batch_idx, k), n=x.shape[0])
                xt = apply(t_draw, x)
                if xt.shape != x.shape:
                    raise ShapeError("feature_distance requires a shape-preserving transform")
                _, f_aug = d(xt, want_features=True)
                diff = (f_clean.double() - f_aug.double()) ** 2
                total += float(diff.sum().item())
                count += diff.numel()
    return total / count


def paired_t_test(a, b, alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test of two equal-length runs of scalars.

    Values are paired by position (seed index). A zero-variance difference
    vector is flagged degenerate rather than assigned a p-value.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("paired_t_test requires two equal-length 1-d sequences")
    n = a.shape[0]
    if n < 2:
        raise ValidationError("paired_t_test requires at least 2 pairs")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        statistic = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return TTestResult(
            statistic=statistic,
            p_value=None,
            significant=False,
            degenerate=True,
            n=n,
            alpha=alpha,
        )
    statistic = mean / (sd / math.sqrt(n))
    p_value = 2.0 * float(sp_stats.t.sf(abs(statistic), df=n - 1))
    return TTestResult(
        statistic=statistic,
        p_value=p_value,
        significant=p_value < alpha,
        degenerate=False,
        n=n,
        alpha=alpha,
    )


@dataclass
class SpeedResult:
    """Discriminator-update throughput over repeated measurements."""

    steps_per_sec_mean: float
    steps_per_sec_std: float
    per_repeat: list

    def to_dict(self) -> dict:
        return asdict(self)


def speed_benchmark(
    cfg, pair: DomainPair, n_steps: int, warmup: int = 5, repeats: int = 3
) -> SpeedResult:
    """Measure discriminator-update throughput for a config.

    Runs ``n_steps`` training steps per repeat and times only the
    discriminator sub-step, excluding the first ``warmup`` steps.
    """
    from .training import init_state, train_step

    if n_steps < warmup + 10:
        raise ValidationError(f"n_steps must be >= warmup + 10 = {warmup + 10}")
    per_repeat = []
    for r in range(repeats):
        run_cfg = type(cfg)(**{**cfg.to_dict(), "seed": derive_seed(cfg.seed, r)})
        state = init_state(run_cfg, in_channels=pair.source.image_shape[0])
        # Measure the steady-state cost: at the final scheduled epoch every
        # configured regularizer runs at full strength.
        state.epoch = run_cfg.total_epochs
        streams = _endless_batches(pair, run_cfg)
        measured = 0
        elapsed = 0.0
        for i in range(n_steps):
            b1, b2 = next(streams)
            state, _ = train_step(state, b1, b2, run_cfg)
            if i >= warmup:
                elapsed += state.last_step_seconds["d"]
                measured += 1
        per_repeat.append(measured / elapsed)
    mean = float(np.mean(per_repeat))
    std = float(np.std(per_repeat, ddof=1)) if repeats > 1 else 0.0
    return SpeedResult(steps_per_sec_mean=mean, steps_per_sec_std=std, per_repeat=per_repeat)


def _endless_batches(pair: DomainPair, cfg):
    from .data import batcher

    epoch = 0
    while True:
        s1 = batcher(pair.source, cfg.batch_size, derive_seed(cfg.data_seed, epoch, 0), True)
        s2 = batcher(pair.target, cfg.batch_size, derive_seed(cfg.data_seed, epoch, 1), True)
        yield from zip(s1, s2)
        epoch += 1


def aggregate_reports(task: str, variant: str, cells: list[dict]) -> EvalReport:
    """Fold per-cell metric dicts (one per seed) into one report."""
    report = EvalReport(task=task, variant=variant, seeds=[c["seed"] for c in cells])
    multi = len(cells) >= 2

    def fold(key, mean_field, std_field=None):
        vals = [c[key] for c in cells if c.get(key) is not None]
        if not vals:
            return
        setattr(report, mean_field, float(np.mean(vals)))
        if std_field and multi and len(vals) >= 2:
            setattr(report, std_field, float(np.std(vals, ddof=1)))

    fold("accuracy", "accuracy_mean", "accuracy_std")
    fold("mse", "mse_mean")
    fold("feature_distance", "feature_distance_mean", "feature_distance_std")
    fold("steps_per_sec", "steps_per_sec_mean", "steps_per_sec_std")
    return report
