"""Command-line entry point: dataset generation, pretraining, evaluation.

Every subcommand takes --config (an INI run configuration), an optional
--seed override that pins generation, training, and evaluation streams,
and writes machine-readable results under --out when given. Exit codes:
0 success, 2 bad usage or configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config
from .data import load_dataset
from .diagnostics import diagnose_collapse, export_embeddings, sweep_aug
from .errors import CheckpointError, ConfigError, DatasetError, TrainingDivergedError
from .evaluate import linear_eval, semi_supervised_eval, shots_sweep, transfer_eval
from .synth import gen_dataset
from .train import pretrain


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csissl",
        description="Self-supervised pretraining and evaluation for WiFi CSI encoders.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text, out_required=False):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="run configuration (INI)")
        sub.add_argument("--seed", type=int, default=None, help="override every seed")
        sub.add_argument("--out", required=out_required, default=None, help="output directory")
        return sub

    command("synth", "generate a synthetic paired CSI dataset", out_required=True)

    sub = command("pretrain", "run self-supervised pretraining", out_required=True)
    sub.add_argument("--data", required=True, help="dataset directory")
    sub.add_argument("--resume", default=None, help="checkpoint directory to resume from")

    for name, help_text in (
        ("eval-linear", "linear probe on frozen embeddings"),
        ("eval-semi", "semi-supervised fine-tune and probe"),
    ):
        sub = command(name, help_text)
        sub.add_argument("--checkpoint", required=True, help="checkpoint directory")
        sub.add_argument("--data", required=True, help="labelled dataset directory")
        sub.add_argument("--shots", type=int, default=None, help="labelled samples per class")

    sub = command("transfer", "frozen-encoder probe on a different dataset")
    sub.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sub.add_argument("--target", required=True, help="target dataset directory")
    sub.add_argument("--shots", type=int, default=None, help="labelled samples per class")

    sub = command("sweep-shots", "probe accuracy over the shots/seed grid")
    sub.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sub.add_argument("--data", required=True, help="labelled dataset directory")
    sub.add_argument("--mode", choices=("linear", "semi"), default="linear")

    sub = command("sweep-aug", "pretrain and probe every augmentation pair")
    sub.add_argument("--data", required=True, help="paired dataset directory")
    sub.add_argument("--jobs", type=int, default=None, help="parallel worker processes")

    sub = command("diagnose-collapse", "embedding covariance spectrum")
    sub.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sub.add_argument("--data", required=True, help="dataset directory")

    sub = command("export-embeddings", "write frozen embeddings and labels", out_required=True)
    sub.add_argument("--checkpoint", required=True, help="checkpoint directory")
    sub.add_argument("--data", required=True, help="dataset directory")

    return parser


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {args.seed}")
        config = config.with_seed(args.seed)
    return config


def _existing_dir(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{flag} directory not found: {p}")
    return p


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_result_csv(out: Path | None, name: str, lines: list[str]) -> None:
    if out is None:
        return
    path = out / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _single_eval_lines(method, mode, shots, seed, accuracy) -> list[str]:
    return [
        "method,mode,shots,seed,accuracy",
        f"{method},{mode},{shots},{seed},{accuracy:.6f}",
    ]


def _cmd_synth(args, config: RunConfig) -> int:
    out = _out_dir(args)
    path = gen_dataset(config.synth.build(), out)
    total = config.synth.classes * config.synth.samples_per_class
    print(f"wrote {total} paired samples to {path}")
    return 0


def _cmd_pretrain(args, config: RunConfig) -> int:
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    resume = args.resume
    if resume is not None:
        resume = _existing_dir(resume, "--resume")
    result = pretrain(config.train, dataset, _out_dir(args), resume_from=resume)
    final = result.epoch_means[-1] if result.epoch_means else float("nan")
    print(f"pretrained {config.train.method} for {config.train.epochs} epochs; "
          f"final epoch mean loss {final:.6g}")
    if result.checkpoint_dir is not None:
        print(f"checkpoint at {result.checkpoint_dir}")
    return 0


def _cmd_eval(args, config: RunConfig, mode: str) -> int:
    bundle = load_checkpoint(_existing_dir(args.checkpoint, "--checkpoint"))
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    eval_config = replace(config.eval, mode=mode)
    shots = args.shots if args.shots is not None else eval_config.shots[0]
    seed = eval_config.seeds[0]
    if mode == "linear":
        accuracy = linear_eval(bundle, dataset, eval_config, shots, seed)
    else:
        accuracy = semi_supervised_eval(bundle, dataset, eval_config, shots, seed)
    print(f"{mode} accuracy: {accuracy:.4f} (shots={shots}, seed={seed})")
    lines = _single_eval_lines(bundle.method, mode, shots, seed, accuracy)
    _write_result_csv(_out_dir(args), f"eval-{mode}.csv", lines)
    return 0


def _cmd_transfer(args, config: RunConfig) -> int:
    bundle = load_checkpoint(_existing_dir(args.checkpoint, "--checkpoint"))
    target = load_dataset(_existing_dir(args.target, "--target"))
    eval_config = replace(config.eval, mode="linear")
    shots = args.shots if args.shots is not None else eval_config.shots[0]
    seed = eval_config.seeds[0]
    accuracy = transfer_eval(bundle, target, shots, eval_config, seed)
    print(f"transfer accuracy: {accuracy:.4f} (shots={shots}, seed={seed})")
    lines = _single_eval_lines(bundle.method, "linear", shots, seed, accuracy)
    _write_result_csv(_out_dir(args), "transfer.csv", lines)
    return 0


def _cmd_sweep_shots(args, config: RunConfig) -> int:
    bundle = load_checkpoint(_existing_dir(args.checkpoint, "--checkpoint"))
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    eval_config = replace(config.eval, mode=args.mode)
    result = shots_sweep(
        bundle, dataset, list(eval_config.shots), list(eval_config.seeds), eval_config
    )
    print(result.summary())
    _write_result_csv(_out_dir(args), "shots-sweep.csv", result.to_csv_lines())
    return 0


def _cmd_sweep_aug(args, config: RunConfig) -> int:
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    jobs = args.jobs if args.jobs is not None else config.diagnose.jobs
    grid = sweep_aug(
        dataset,
        list(config.diagnose.augmentations),
        config.train,
        config.eval,
        shots=config.diagnose.shots,
        eval_seed=config.eval.seeds[0],
        jobs=jobs,
    )
    print(grid.summary())
    _write_result_csv(_out_dir(args), "aug-grid.csv", grid.to_csv_lines())
    return 0


def _cmd_diagnose(args, config: RunConfig) -> int:
    bundle = load_checkpoint(_existing_dir(args.checkpoint, "--checkpoint"))
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    out = _out_dir(args)
    spectrum_path = None if out is None else out / "spectrum.csv"
    values = diagnose_collapse(
        bundle, dataset, out=spectrum_path, max_windows=config.diagnose.max_windows
    )
    ratio = values[-1] / values[0] if values[0] > 0 else 0.0
    print(f"spectrum: max {values[0]:.6g}, min {values[-1]:.6g}, min/max {ratio:.3e}")
    if spectrum_path is not None:
        print(f"wrote {spectrum_path}")
    return 0


def _cmd_export(args, config: RunConfig) -> int:
    bundle = load_checkpoint(_existing_dir(args.checkpoint, "--checkpoint"))
    dataset = load_dataset(_existing_dir(args.data, "--data"))
    out = export_embeddings(bundle, dataset, _out_dir(args))
    print(f"wrote embeddings for {len(dataset)} samples to {out}")
    return 0


def _dispatch(args) -> int:
    config = _load_config(args)
    if args.command == "synth":
        return _cmd_synth(args, config)
    if args.command == "pretrain":
        return _cmd_pretrain(args, config)
    if args.command == "eval-linear":
        return _cmd_eval(args, config, "linear")
    if args.command == "eval-semi":
        return _cmd_eval(args, config, "semi")
    if args.command == "transfer":
        return _cmd_transfer(args, config)
    if args.command == "sweep-shots":
        return _cmd_sweep_shots(args, config)
    if args.command == "sweep-aug":
        return _cmd_sweep_aug(args, config)
    if args.command == "diagnose-collapse":
        return _cmd_diagnose(args, config)
    if args.command == "export-embeddings":
        return _cmd_export(args, config)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, DatasetError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
