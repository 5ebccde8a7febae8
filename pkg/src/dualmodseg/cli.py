"""Command line entry point: phantom generation, training, evaluation, ablation.

Every command is driven by one JSON config (see config.DEFAULT_CONFIG)
plus dotted ``--set key=value`` overrides.  Exit codes: 0 ok, 2 usage or
configuration error, 3 numerical failure during training.
"""

import argparse
import json
import sys
from pathlib import Path

from . import report
from .config import ConfigError, load_run_config
from .data import load_volumes, make_split, write_split_manifest
from .errors import DualModSegError, NonFiniteLoss
from .evaluation import evaluate, format_ablation_table, format_metric_table, predict_patient, run_ablation
from .phantom import write_phantom_dataset
from .trainer import fit, load_checkpoint


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualmodseg",
        description="Semi-supervised dual-modality segmentation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON run config (defaults target the phantom benchmark)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted-path config override, e.g. train.max_steps=100",
        )

    p_phantom = sub.add_parser("phantom", help="generate the synthetic phantom dataset")
    add_common(p_phantom)
    p_phantom.set_defaults(func=cmd_phantom)

    p_train = sub.add_parser("train", help="build the split and train the model")
    add_common(p_train)
    p_train.add_argument("--label-fraction", type=float, help="labeled patient fraction in (0, 1]")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint path (default: <work_dir>/best.ckpt)")
    p_eval.add_argument("--export-masks", action="store_true", help="write per-slice PGM masks")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run the four-component ablation")
    add_common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


def _build_split(config):
    volumes = load_volumes(config.data_dir)
    return make_split(volumes, config.label_fraction, config.train.seed, crop=tuple(config.net.crop))


def cmd_phantom(config, args) -> int:
    if config.phantom is None:
        print("error: config has no phantom section", file=sys.stderr)
        return 2
    manifest = write_phantom_dataset(config.phantom, config.data_dir)
    print(f"wrote {config.phantom.n_patients} phantom patients to {config.data_dir} ({manifest.name})")
    return 0


def cmd_train(config, args) -> int:
    work_dir = Path(config.work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    split = _build_split(config)
    write_split_manifest(split, work_dir / "split.json")
    print(
        f"split: {len(split.labeled)} labeled / {len(split.unlabeled)} unlabeled / "
        f"{len(split.test)} test slices"
    )
    state, _ = fit(split, config.net, config.train, work_dir=work_dir)
    metrics = evaluate(state, split.test)
    report.plot_training_curves(work_dir / "train_log.jsonl", work_dir / "training_curves.png")
    print(f"final test DSC {metrics.mean_dice:.4f}  Sens {metrics.mean_sens:.4f}")
    return 0


def cmd_eval(config, args) -> int:
    work_dir = Path(config.work_dir)
    ckpt = Path(args.checkpoint) if args.checkpoint else work_dir / "best.ckpt"
    state = load_checkpoint(ckpt)
    if state.net_config.to_dict() != config.net.to_dict():
        print(
            f"error: checkpoint network config {state.net_config.to_dict()} "
            f"does not match run config {config.net.to_dict()}",
            file=sys.stderr,
        )
        return 2

    manifest_path = work_dir / "split.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        label_fraction, seed = manifest["label_fraction"], manifest["seed"]
    else:
        label_fraction, seed = config.label_fraction, config.train.seed
    volumes = load_volumes(config.data_dir)
    split = make_split(volumes, label_fraction, seed, crop=tuple(config.net.crop))

    metrics = evaluate(state, split.test)
    work_dir.mkdir(parents=True, exist_ok=True)
    (work_dir / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    table = format_metric_table(metrics)
    (work_dir / "metrics.txt").write_text(table)
    report.write_metrics_csv(metrics, work_dir / "metrics.csv")
    report.plot_per_patient(metrics, work_dir / "per_patient_metrics.png")
    if args.export_masks:
        by_patient = {}
        for rec in split.test:
            by_patient.setdefault(rec.patient_id, []).append(rec)
        for pid, records in by_patient.items():
            predict_patient(state, records, work_dir / "masks")
    print(table, end="")
    print(f"test DSC {metrics.mean_dice:.4f}  Sens {metrics.mean_sens:.4f}")
    return 0


def cmd_ablate(config, args) -> int:
    work_dir = Path(config.work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    split = _build_split(config)
    result = run_ablation(split, config.net, config.train)
    (work_dir / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    table = format_ablation_table(result)
    (work_dir / "ablation.txt").write_text(table)
    report.write_ablation_csv(result, work_dir / "ablation.csv")
    report.plot_ablation(result, work_dir / "ablation.png")
    print(table, end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config, args.set, getattr(args, "label_fraction", None))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(config, args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DualModSegError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
