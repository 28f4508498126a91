"""Command-line entry point: generate, train, eval, ablate, gradcheck.

Every failure prints one line ``ERR_<KIND>: message`` to stderr and exits
with 2 (validation) or 3 (runtime, divergence, failed gradient checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import generate, split
from .gradcheck import format_report, run_suite
from .metrics import format_table
from .storage import FormatError, read_dataset, write_dataset
from .training import (ABLATION_ROWS, TrainConfig, TrainingDiverged, evaluate, load_checkpoint, row_slug,
                       run_ablation, save_checkpoint, train)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("ERR_USAGE", message, EXIT_VALIDATION)


def _shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like DxHxW, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"shape must be three positive extents, got {text!r}")
    return dims


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_config(path: str | None, full_scale: bool = False, seed: int | None = None,
                volume_shape: tuple[int, ...] | None = None) -> TrainConfig:
    """Build a TrainConfig from an optional strict JSON file.

    The backbone input shape follows the dataset unless the file sets it.
    """
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise CliError("ERR_VALIDATION", f"config not found: {path}", EXIT_VALIDATION) from None
        except json.JSONDecodeError as exc:
            raise CliError("ERR_VALIDATION", f"config is not valid JSON: {exc}", EXIT_VALIDATION) from None
        if not isinstance(doc, dict):
            raise CliError("ERR_VALIDATION", "config must be a JSON object", EXIT_VALIDATION)
    base = TrainConfig.full_scale().to_dict() if full_scale else TrainConfig().to_dict()
    merged = {**base, **doc}
    if "model" in doc:
        merged["model"] = {**base["model"], **doc["model"]}
        if "backbone" in doc["model"]:
            merged["model"]["backbone"] = {**base["model"]["backbone"], **doc["model"]["backbone"]}
    shape_given = "input_shape" in doc.get("model", {}).get("backbone", {})
    if volume_shape is not None and not shape_given and not full_scale:
        merged["model"]["backbone"]["input_shape"] = list(volume_shape)
    if seed is not None:
        merged["seed"] = seed
    backbone = merged["model"]["backbone"]
    backbone["input_shape"] = tuple(backbone["input_shape"])
    backbone["stage_channels"] = list(backbone["stage_channels"])
    config = TrainConfig.from_dict(merged)
    config.model.backbone.validate()
    if volume_shape is not None and tuple(config.model.backbone.input_shape) != tuple(volume_shape):
        raise CliError("ERR_VALIDATION", f"dataset volumes are {tuple(volume_shape)} but the model expects "
                       f"{tuple(config.model.backbone.input_shape)}", EXIT_VALIDATION)
    return config


def _load_data(path: str):
    dataset = read_dataset(path)
    if not dataset.cases:
        raise CliError("ERR_VALIDATION", f"{path}: manifest has no cases", EXIT_VALIDATION)
    return dataset, dataset.cases[0].t0_volume.shape[1:]


def _eval_split(dataset) -> str:
    return "test" if dataset.split_indices("test") else "val"


def cmd_generate(args) -> int:
    cases = generate(args.cases, seed=args.seed, shape=args.shape)
    splits = split(cases, SPLIT_FRACTIONS, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(cases, out / "manifest.json", out / "volumes", splits=splits, seed=args.seed)
    n_mal = sum(c.label for c in cases)
    print(f"seed {args.seed}: wrote {len(cases)} cases ({n_mal} malignant, {len(cases) - n_mal} benign) "
          f"to {out / 'manifest.json'}")
    for name in ("train", "val", "test"):
        ids = set(splits[name])
        mal = sum(c.label for c in cases if c.case_id in ids)
        print(f"  {name:<5} {len(ids):>4} cases, {mal} malignant")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset, shape = _load_data(args.data)
    config = load_config(args.config, args.full_scale, args.seed, shape)
    result = train(config, dataset)
    split_name = _eval_split(dataset)
    report = evaluate(result.model, dataset, split_name, config.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.model, config, {"split": split_name, **report.to_dict()})
    _write_json(out / "metrics.json", {
        "seed": config.seed,
        "split": split_name,
        "metrics": report.to_dict(),
        "loss_curve": result.loss_curve,
        "initial_loss": result.initial_loss,
        "val_auc": result.val_auc,
        "best_epoch": result.best_epoch,
    })
    table = format_table({"CSF-Net" if config.flags == ABLATION_ROWS["CSF-Net (full)"] else "model": report})
    (out / "metrics.txt").write_text(f"seed {config.seed}, split {split_name}\n{table}\n")
    print(table)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint or args.out)
    if not (ckpt / "checkpoint.json").exists() and not ckpt.is_file():
        raise CliError("ERR_VALIDATION", f"no checkpoint.json in {ckpt}", EXIT_VALIDATION)
    model, config, saved = load_checkpoint(ckpt)
    dataset, shape = _load_data(args.data)
    if tuple(shape) != tuple(config.model.backbone.input_shape):
        raise CliError("ERR_VALIDATION", f"dataset volumes are {tuple(shape)} but the checkpoint expects "
                       f"{tuple(config.model.backbone.input_shape)}", EXIT_VALIDATION)
    split_name = saved.get("split", _eval_split(dataset))
    report = evaluate(model, dataset, split_name, config.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_metrics.json", {"seed": config.seed, "split": split_name, "metrics": report.to_dict()})
    print(format_table({"model": report}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset, shape = _load_data(args.data)
    config = load_config(args.config, args.full_scale, args.seed, shape)
    reports = run_ablation(config, dataset, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        _write_json(out / f"{row_slug(name)}.json", {"row": name, "seed": config.seed, "metrics": report.to_dict()})
    _write_json(out / "ablation.json", {"seed": config.seed, "config": config.to_dict(),
                                        "rows": {n: r.to_dict() for n, r in reports.items()}})
    table = format_table(reports)
    (out / "ablation.txt").write_text(f"seed {config.seed}\n{table}\n")
    print(table)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.module, seed=args.seed, n_seeds=args.seeds)
    print(format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("ERR_GRADCHECK", f"failing checks: {', '.join(failed)}", EXIT_RUNTIME)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csfnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic follow-up dataset")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", type=_shape, default=(8, 16, 16), help="volume extents DxHxW")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    for name, func, help_text in (("train", cmd_train, "train one model and save a checkpoint"),
                                  ("eval", cmd_eval, "evaluate a saved checkpoint"),
                                  ("ablate", cmd_ablate, "train and evaluate the seven ablation rows")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True, help="dataset manifest.json")
        p.add_argument("--out", required=True)
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint directory (default: --out)")
        else:
            p.add_argument("--config", help="JSON file with TrainConfig fields")
            p.add_argument("--seed", type=int)
            p.add_argument("--paper-scale", dest="full_scale", action="store_true",
                           help="200 epochs on 16x64x64 volumes")
        if name == "ablate":
            p.add_argument("--jobs", type=int, default=1, help="rows trained in parallel processes")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks in float64")
    p.add_argument("--module", choices=("all", "conv", "cbam", "trf", "cmaf"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="random seeds per check")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        status, line = exc.status, f"{exc.code}: {exc}"
    except TrainingDiverged as exc:
        status, line = EXIT_RUNTIME, f"ERR_DIVERGED: {exc}"
    except FormatError as exc:
        status, line = EXIT_VALIDATION, f"ERR_FORMAT: {exc}"
    except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        status, line = EXIT_VALIDATION, f"ERR_VALIDATION: {exc}"
    except (RuntimeError, OSError, MemoryError) as exc:
        status, line = EXIT_RUNTIME, f"ERR_RUNTIME: {exc}"
    print(" ".join(line.split()), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
