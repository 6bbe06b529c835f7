"""Experiment runner CLI.

Verbs: prepare-data, train, evaluate, benchmark-speed, run-plan, report.
Flags mirror the training-config and plan fields; ``--config`` loads a JSON
config file and explicit flags override its values. The environment
variables ACCR_OUTPUT_DIR and ACCR_DEVICE override the output directory
and compute device.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .augment import standard_menu
from .data import (
    DomainPair,
    build_digit_task,
    load_dataset,
    make_paired_surrogate,
    save_dataset,
)
from .errors import ValidationError
from .evaluation import (
    EvalReport,
    aggregate_reports,
    fake_accuracy,
    feature_distance,
    paired_mse,
    paired_t_test,
    speed_benchmark,
)
from .models import config_hash, load_classifier, save_classifier
from .report import render_bar_chart, render_table, write_cells_csv
from .seeding import derive_seed
from .training import (
    ClassifierTrainConfig,
    TrainConfig,
    load_train_state,
    train,
    train_classifier,
)

_DEFAULT_TASK_PARAMS = {
    "digits": {"size": 16, "n_train": 2048, "n_val": 512, "n_classifier": 3000},
    "paired": {"size": 16, "n_train": 256, "n_val": 64},
}


def desk_default_config() -> dict:
    """Base config of the desk-scale default task: 16x16 digits, width-16 nets.

    Learning rates and symmetric cycle weights are desk-scale choices: at the
    short 2 + 2 epoch schedule the full-scale rates leave translations at
    chance, and the tight symmetric cycle keeps the short runs' outcomes
    stable enough for paired seed comparisons.
    """
    return {
        "epochs_constant": 2,
        "epochs_decay": 2,
        "batch_size": 8,
        "g_width": 16,
        "d_width": 16,
        "lr_g": 1e-3,
        "lr_d": 1e-3,
        "weights": {"lambda_cyc_1": 10.0, "lambda_cyc_2": 10.0},
        "transform": standard_menu(1, size=16).to_config(),
    }


@dataclass
class ExperimentPlan:
    """A matrix of training cells: variants (or sweep values) by seeds.

    Every cell shares ``data_seed`` so batching order is identical across
    variants; ``seeds`` control model init and augmentation draws, which is
    what the paired t-tests pair on.
    """

    task: str = "digits"
    task_params: dict = field(default_factory=dict)
    base: dict = field(default_factory=dict)
    variants: list = field(default_factory=lambda: [{"variant": "baseline"}, {"variant": "cr"}, {"variant": "accr"}])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    data_seed: int = 99
    sweep: dict | None = None
    output_dir: str = "runs/plan"

    def __post_init__(self):
        if self.task not in _DEFAULT_TASK_PARAMS:
            raise ValidationError(f"unknown task {self.task!r}")
        params = dict(_DEFAULT_TASK_PARAMS[self.task])
        params.update(self.task_params)
        self.task_params = params
        merged = desk_default_config()
        merged.update(self.base)
        self.base = merged
        if self.sweep is not None:
            if "parameter" not in self.sweep or "values" not in self.sweep:
                raise ValidationError("sweep needs 'parameter' and 'values'")

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path) as f:
            return cls(**json.load(f))

    def to_dict(self) -> dict:
        return asdict(self)


def _set_by_path(cfg_dict: dict, dotted: str, value) -> None:
    node = cfg_dict
    parts = dotted.split(".")
    for key in parts[:-1]:
        node = node.setdefault(key, {})
    node[parts[-1]] = value


def _build_task_data(plan: ExperimentPlan):
    """Materialize the task datasets; pure function of (task params, data_seed)."""
    p = plan.task_params
    if plan.task == "digits":
        pair, src_val, tgt_val = build_digit_task(
            p["n_train"], p["n_val"], p["size"], derive_seed(plan.data_seed, 0)
        )
        return {"pair": pair, "src_val": src_val, "tgt_val": tgt_val}
    pair = make_paired_surrogate(p["n_train"], p["size"], derive_seed(plan.data_seed, 0))
    val_pair = make_paired_surrogate(p["n_val"], p["size"], derive_seed(plan.data_seed, 1))
    return {"pair": pair, "val_pair": val_pair}


def _plan_classifiers(plan: ExperimentPlan, out_dir: Path, resume: bool):
    """Train (or reload) the fixed evaluation classifiers for a digits plan."""
    from .data import synth_digits, synthesize_colored_digits

    p = plan.task_params
    clf_dir = out_dir / "classifiers"
    clf_dir.mkdir(parents=True, exist_ok=True)
    key = config_hash({"task_params": p, "data_seed": plan.data_seed})
    paths = {"source": clf_dir / "source.ckpt", "target": clf_dir / "target.ckpt"}
    classifiers = {}
    for domain, path in paths.items():
        if resume and path.exists():
            net, manifest = load_classifier(path)
            if manifest.get("key") == key:
                net.val_accuracy_ = manifest.get("val_accuracy")
                classifiers[domain] = net
                continue
        base = synth_digits(p["n_classifier"], p["size"], derive_seed(plan.data_seed, 7, 0))
        if domain == "target":
            base = synthesize_colored_digits(base, seed=derive_seed(plan.data_seed, 7, 1))
        net = train_classifier(
            base,
            ClassifierTrainConfig(epochs=6, seed=derive_seed(plan.data_seed, 7, 2)),
        )
        save_classifier(path, net, {"key": key, "val_accuracy": net.val_accuracy_})
        classifiers[domain] = net
    return classifiers


def _evaluate_cell(state, plan: ExperimentPlan, data, classifiers) -> dict:
    metrics = {}
    if plan.task == "digits":
        # Primary direction: source -> target (gray digits rendered into the
        # colored domain), judged by the fixed target-domain classifier. The
        # reverse direction is recorded alongside.
        metrics["accuracy"] = fake_accuracy(state.bundle.g1, data["src_val"], classifiers["target"])
        metrics["accuracy_rev"] = fake_accuracy(
            state.bundle.g2, data["tgt_val"], classifiers["source"]
        )
        size = data["tgt_val"].image_shape[1]
        metrics["feature_distance"] = feature_distance(
            state.bundle.d2,
            data["tgt_val"],
            standard_menu(1, size=size),
            seed=derive_seed(plan.data_seed, 5),
        )
    else:
        metrics["mse"] = paired_mse(state.bundle.g1, data["val_pair"])
    return metrics


def _cell_dir_name(variant_label: str, sweep_value, seed: int) -> str:
    parts = [variant_label]
    if sweep_value is not None:
        parts.append(f"sweep{sweep_value}")
    parts.append(f"seed{seed}")
    return "__".join(str(p).replace("/", "-") for p in parts)


def _cells_of(plan: ExperimentPlan):
    sweep_values = plan.sweep["values"] if plan.sweep else [None]
    for delta in plan.variants:
        for sv in sweep_values:
            for seed in plan.seeds:
                yield delta, sv, seed


def run_plan(plan: ExperimentPlan, resume: bool = False) -> dict:
    """Execute every cell of a plan and aggregate a summary.

    A failing cell is recorded and does not stop the others. With
    ``resume``, completed cells (matching config hash) are not recomputed.
    Returns the summary dict, also written to ``summary.json``.
    """
    out_dir = Path(os.environ.get("ACCR_OUTPUT_DIR", plan.output_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "plan.json", "w") as f:
        json.dump(plan.to_dict(), f, indent=2)
    data = _build_task_data(plan)
    classifiers = _plan_classifiers(plan, out_dir, resume) if plan.task == "digits" else {}

    cells = []
    failed = []
    for delta, sweep_value, seed in _cells_of(plan):
        variant_label = delta.get("variant", plan.base.get("variant", "accr"))
        cell_name = _cell_dir_name(variant_label, sweep_value, seed)
        try:
            cfg_dict = copy.deepcopy(plan.base)
            cfg_dict.update(copy.deepcopy(delta))
            if sweep_value is not None:
                _set_by_path(cfg_dict, plan.sweep["parameter"], sweep_value)
            cfg_dict["seed"] = seed
            cfg_dict["data_seed"] = plan.data_seed
            if "ACCR_DEVICE" in os.environ:
                cfg_dict["device"] = os.environ["ACCR_DEVICE"]
            cfg = TrainConfig.from_dict(cfg_dict)
            cell_dir = out_dir / "runs" / cell_name
            done_marker = cell_dir / "DONE"
            cell_hash = config_hash(cfg.to_dict())
            if resume and done_marker.exists() and done_marker.read_text().strip() == cell_hash:
                with open(cell_dir / "eval_report.json") as f:
                    metrics = json.load(f)
            else:
                cell_dir.mkdir(parents=True, exist_ok=True)
                with open(cell_dir / "config.json", "w") as f:
                    json.dump(cfg.to_dict(), f, indent=2)
                state = train(cfg, data["pair"], out_dir=cell_dir)
                metrics = _evaluate_cell(state, plan, data, classifiers)
                metrics.update({"variant": variant_label, "seed": seed, "sweep_value": sweep_value})
                with open(cell_dir / "eval_report.json", "w") as f:
                    json.dump(metrics, f, indent=2)
                done_marker.write_text(cell_hash)
            cells.append(metrics)
        except Exception as e:  # cell isolation: other cells continue
            traceback.print_exc()
            failed.append(f"{cell_name}: {type(e).__name__}: {e}")
    summary = summarize_cells(plan, cells, failed)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    write_report_files(summary, out_dir)
    return summary


def summarize_cells(plan: ExperimentPlan, cells: list[dict], failed: list[str]) -> dict:
    """Aggregate per-cell metrics into per-group reports with t-tests."""
    groups: dict[str, list[dict]] = {}
    for cell in cells:
        label = cell["variant"]
        if cell.get("sweep_value") is not None:
            label = f"{cell['variant']};{plan.sweep['parameter']}={cell['sweep_value']}"
        groups.setdefault(label, []).append(cell)
    reports = []
    baseline_label = None
    baseline_cells = None
    for label, group in groups.items():
        if group[0]["variant"] == "baseline" and group[0].get("sweep_value") is None:
            baseline_label = label
            baseline_cells = sorted(group, key=lambda c: c["seed"])
    metric_key = "accuracy" if plan.task == "digits" else "mse"
    for label in sorted(groups):
        group = sorted(groups[label], key=lambda c: c["seed"])
        report = aggregate_reports(plan.task, label, group)
        if (
            baseline_cells is not None
            and label != baseline_label
            and len(group) >= 2
            and len(group) == len(baseline_cells)
            and all(a["seed"] == b["seed"] for a, b in zip(group, baseline_cells))
        ):
            t = paired_t_test(
                [c[metric_key] for c in group], [c[metric_key] for c in baseline_cells]
            )
            report.t_test = t.to_dict()
        reports.append(report)
    return {
        "task": plan.task,
        "metric": metric_key,
        "reports": [r.to_dict() for r in reports],
        "cells": cells,
        "failed": failed,
    }


def write_report_files(summary: dict, out_dir: Path) -> None:
    """Emit report.txt, report.csv, and bar-chart figures for a summary."""
    out_dir = Path(out_dir)
    reports = [EvalReport.from_dict(d) for d in summary["reports"]]
    text = render_table(reports, failed=summary.get("failed"))
    (out_dir / "report.txt").write_text(text)
    write_cells_csv(summary["cells"], out_dir / "report.csv")
    metric = "accuracy" if summary.get("metric") == "accuracy" else "mse"
    render_bar_chart(reports, out_dir / "figures" / f"{metric}_by_variant", metric=metric)
    if any(r.feature_distance_mean is not None for r in reports):
        render_bar_chart(
            reports, out_dir / "figures" / "feature_distance", metric="feature_distance"
        )


# ---------------------------------------------------------------------------
# Data directory helpers (prepare-data / train / evaluate verbs)
# ---------------------------------------------------------------------------


def _write_task_dir(out: Path, task: str, params: dict, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if task == "digits":
        pair, src_val, tgt_val = build_digit_task(
            params["n_train"], params["n_val"], params["size"], derive_seed(seed, 0)
        )
        save_dataset(pair.source, out / "source_train.ds")
        save_dataset(pair.target, out / "target_train.ds")
        save_dataset(src_val, out / "source_val.ds")
        save_dataset(tgt_val, out / "target_val.ds")
        paired = False
    else:
        pair = make_paired_surrogate(params["n_train"], params["size"], derive_seed(seed, 0))
        val = make_paired_surrogate(params["n_val"], params["size"], derive_seed(seed, 1))
        save_dataset(pair.source, out / "source_train.ds")
        save_dataset(pair.target, out / "target_train.ds")
        save_dataset(val.source, out / "source_val.ds")
        save_dataset(val.target, out / "target_val.ds")
        paired = True
    with open(out / "task.json", "w") as f:
        json.dump({"task": task, "params": params, "seed": seed, "paired": paired}, f, indent=2)


def _load_task_dir(path: Path):
    with open(path / "task.json") as f:
        meta = json.load(f)
    source = load_dataset(path / "source_train.ds")
    target = load_dataset(path / "target_train.ds")
    src_val = load_dataset(path / "source_val.ds")
    tgt_val = load_dataset(path / "target_val.ds")
    pair = DomainPair(source=source, target=target, paired=meta["paired"])
    return meta, pair, src_val, tgt_val


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_config_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, help="JSON config file of training fields")
    p.add_argument("--variant", type=str, choices=["baseline", "cr", "cr_fake", "cr_rec", "accr", "gp"])
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--epochs-constant", type=int)
    p.add_argument("--epochs-decay", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--g-width", type=int)
    p.add_argument("--d-width", type=int)
    p.add_argument("--menu", type=int, help="augmentation menu entry 1..7")


def _config_from_args(args, image_size: int) -> TrainConfig:
    cfg_dict = desk_default_config()
    if args.config:
        with open(args.config) as f:
            cfg_dict.update(json.load(f))
    overrides = {
        "variant": args.variant,
        "seed": args.seed,
        "data_seed": args.data_seed,
        "epochs_constant": args.epochs_constant,
        "epochs_decay": args.epochs_decay,
        "batch_size": args.batch_size,
        "lr_g": args.lr_g,
        "lr_d": args.lr_d,
        "g_width": args.g_width,
        "d_width": args.d_width,
    }
    cfg_dict.update({k: v for k, v in overrides.items() if v is not None})
    if args.menu is not None:
        cfg_dict["transform"] = standard_menu(args.menu, size=image_size).to_config()
    if "ACCR_DEVICE" in os.environ:
        cfg_dict["device"] = os.environ["ACCR_DEVICE"]
    return TrainConfig.from_dict(cfg_dict)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accr", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare-data", help="build and cache task datasets")
    p.add_argument("--task", choices=["digits", "paired"], default="digits")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--data", required=True, help="directory from prepare-data")
    p.add_argument("--out", required=True)
    _add_config_overrides(p)

    p = sub.add_parser("evaluate", help="evaluate a training checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the metrics JSON here")
    p.add_argument("--classifier", help="classifier checkpoint (trained if omitted)")

    p = sub.add_parser("benchmark-speed", help="discriminator update throughput per variant")
    p.add_argument("--variants", default="baseline,cr,accr,gp")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--out", help="write results JSON here")
    _add_config_overrides(p)

    p = sub.add_parser("run-plan", help="run a variant/seed experiment matrix")
    p.add_argument("--plan", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out", help="override the plan output_dir")

    p = sub.add_parser("report", help="re-render summary tables and figures")
    p.add_argument("--run-dir", required=True)
    return parser


def _cmd_prepare_data(args) -> int:
    params = dict(_DEFAULT_TASK_PARAMS[args.task])
    for key, val in (("size", args.size), ("n_train", args.n_train), ("n_val", args.n_val)):
        if val is not None:
            params[key] = val
    out = Path(os.environ.get("ACCR_OUTPUT_DIR", args.out))
    _write_task_dir(out, args.task, params, args.seed)
    print(f"wrote {args.task} task data to {out}")
    return 0


def _cmd_train(args) -> int:
    meta, pair, _, _ = _load_task_dir(Path(args.data))
    cfg = _config_from_args(args, image_size=meta["params"]["size"])
    out = Path(os.environ.get("ACCR_OUTPUT_DIR", args.out))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    train(cfg, pair, out_dir=out)
    print(f"training complete; metrics and checkpoints in {out}")
    return 0


def _cmd_evaluate(args) -> int:
    meta, pair, src_val, tgt_val = _load_task_dir(Path(args.data))
    state, _cfg = load_train_state(args.checkpoint)
    metrics: dict = {}
    if meta["paired"]:
        metrics["mse"] = paired_mse(state.bundle.g1, DomainPair(src_val, tgt_val, paired=True))
    else:
        # Same conventions as run-plan cells: 'accuracy' judges the
        # source -> target translation with a target-domain classifier.
        if args.classifier:
            clf_tgt, _ = load_classifier(args.classifier)
        else:
            clf_tgt = train_classifier(tgt_val, ClassifierTrainConfig(epochs=6, seed=0))
        clf_src = train_classifier(src_val, ClassifierTrainConfig(epochs=6, seed=0))
        metrics["accuracy"] = fake_accuracy(state.bundle.g1, src_val, clf_tgt)
        metrics["accuracy_rev"] = fake_accuracy(state.bundle.g2, tgt_val, clf_src)
        metrics["feature_distance"] = feature_distance(
            state.bundle.d2, tgt_val, standard_menu(1, size=meta["params"]["size"])
        )
    print(json.dumps(metrics, indent=2))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(metrics, f, indent=2)
    return 0


def _cmd_benchmark_speed(args) -> int:
    pair, _, _ = build_digit_task(args.n, max(8, args.n // 8), args.size, seed=0)
    results = {}
    for variant in args.variants.split(","):
        variant = variant.strip()
        cfg = _config_from_args(args, image_size=args.size)
        cfg_dict = cfg.to_dict()
        cfg_dict["variant"] = variant
        if variant in ("cr", "cr_fake", "cr_rec", "accr"):
            # Benchmark the regularizers at full strength from step one.
            cfg_dict["epochs_constant"] = 0
            cfg_dict["epochs_decay"] = 0
        cfg = TrainConfig.from_dict(cfg_dict)
        res = speed_benchmark(cfg, pair, n_steps=args.steps, repeats=args.repeats)
        results[variant] = res.to_dict()
        print(
            f"{variant:10s} {res.steps_per_sec_mean:8.1f} +/- {res.steps_per_sec_std:.1f} steps/s"
        )
    if args.out:
        with open(args.out, "w") as f:
            json.dump(results, f, indent=2)
    return 0


def _cmd_run_plan(args) -> int:
    plan = ExperimentPlan.from_json(args.plan)
    if args.out:
        plan.output_dir = args.out
    summary = run_plan(plan, resume=args.resume)
    out_dir = Path(os.environ.get("ACCR_OUTPUT_DIR", plan.output_dir))
    print((out_dir / "report.txt").read_text())
    return 1 if summary["failed"] else 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    with open(run_dir / "summary.json") as f:
        summary = json.load(f)
    write_report_files(summary, run_dir)
    print((run_dir / "report.txt").read_text())
    return 0


_COMMANDS = {
    "prepare-data": _cmd_prepare_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "benchmark-speed": _cmd_benchmark_speed,
    "run-plan": _cmd_run_plan,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
