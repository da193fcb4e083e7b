"""Command-line entry point: ``jointdiff <subcommand>``.

Configs and manifests are JSON. Flags given on the command line override the
corresponding config-file values. Every command that draws random numbers
requires ``--seed``.

Exit codes: 0 success, 2 config error, 3 data or format error, 4 training
divergence. ``JOINTDIFF_LOG`` sets the log level (default WARNING).
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .balance import balancing_factor_from_manifest
from .denoiser import Denoiser
from .diffusion_train import DiffTrainConfig, train_diffusion
from .errors import (
    DegenerateSignalError,
    DimensionError,
    FormatError,
    ParameterError,
    TrainingDivergence,
    ValidationError,
)
from .pipeline import StageError, render_samples, run_pipeline
from .sampler import SamplerConfig, synthesize_dataset
from .schedule import NoiseSchedule
from .student import Student, StudentTrainConfig, evaluate, train_student
from .tensorio import DatasetManifest
from .toydata import SceneSpec, generate_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


class ConfigError(ParameterError):
    """Unreadable or invalid configuration file."""


def load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def overrides(args, mapping):
    """Config entries for every flag in ``mapping`` that was given."""
    return {key: getattr(args, attr) for attr, key in mapping.items() if getattr(args, attr) is not None}


def emit(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_gen_data(args):
    cfg = load_config(args.spec)
    cfg.update(overrides(args, {"size": "size", "classes": "num_classes", "looks": "looks"}))
    cfg["seed"] = args.seed
    spec = SceneSpec.from_dict(cfg)
    n_train = args.n_train if args.n_train is not None else int(cfg.get("n_train", 256))
    n_test = args.n_test if args.n_test is not None else int(cfg.get("n_test", 128))
    m = generate_dataset(spec, n_train, n_test, args.out)
    emit({"manifest": str(Path(args.out) / "manifest.json"), "samples": len(m.samples), "checksum": m.checksum()})


def cmd_balance(args):
    m = DatasetManifest.from_file(args.data)
    bf = balancing_factor_from_manifest(m, split=args.split)
    m.balancing = bf.to_dict()
    m.save(args.data)
    emit(bf.to_dict())


def _dataset_b(manifest, split="train"):
    if manifest.balancing and "b" in manifest.balancing:
        return float(manifest.balancing["b"])
    return balancing_factor_from_manifest(manifest, split).b


def cmd_train_diffusion(args):
    cfg = load_config(args.config)
    cfg.update(overrides(args, {"steps": "steps", "batch_size": "batch_size", "lr": "lr", "width": "width",
                                "T_steps": "T_steps"}))
    cfg["seed"] = args.seed
    m = DatasetManifest.from_file(args.data)
    if cfg.get("b") is None:
        cfg["b"] = _dataset_b(m)
    dcfg = DiffTrainConfig.from_dict(cfg)
    images, onehots = m.load_split("train")
    if images is None:
        raise ValidationError(f"{args.data} has no train split")
    _, trace = train_diffusion(dcfg, images, onehots, out_dir=args.out)
    emit({"checkpoint": str(Path(args.out) / "denoiser.ckpt"), "steps": len(trace), "b": dcfg.b,
          "final_loss": trace[-1]["loss"] if trace else None})


def cmd_synthesize(args):
    model, header = Denoiser.load(args.checkpoint)
    if "schedule" not in header or "b" not in header:
        raise FormatError(f"{args.checkpoint} lacks schedule or balancing factor")
    sched = NoiseSchedule.from_dict(header["schedule"])
    size = args.size or int(header.get("image_size", 32))
    scfg = SamplerConfig(ddim_steps=args.ddim_steps, seed=args.seed, num_samples=args.n,
                         b=float(header["b"]), size=size)
    m = synthesize_dataset(model, scfg, sched, args.out)
    emit({"manifest": str(Path(args.out) / "manifest.json"), "samples": len(m.samples), "checksum": m.checksum()})


def cmd_train_student(args):
    cfg = load_config(args.config)
    cfg.update(overrides(args, {"epochs": "epochs", "batch_size": "batch_size", "lr": "lr", "width": "width",
                                "aug_ratio": "aug_ratio", "label_mode": "label_mode",
                                "temperature": "temperature"}))
    cfg["seed"] = args.seed
    m = DatasetManifest.from_file(args.data)
    train_x, train_y = m.load_split("train")
    test_x, test_y = m.load_split("test")
    if train_x is None:
        raise ValidationError(f"{args.data} has no train split")
    gen_x = gen_logits = None
    if args.aug:
        ma = DatasetManifest.from_file(args.aug)
        if ma.kind != "logits":
            raise ValidationError(f"{args.aug} does not hold generated logits")
        gen_x, gen_logits = ma.load_split("train")
    elif "aug_ratio" not in cfg:
        cfg["aug_ratio"] = 0.0
    scfg = StudentTrainConfig.from_dict(cfg)
    model, trace = train_student(scfg, train_x, train_y, test_x, test_y, gen_x, gen_logits, out_dir=args.out)
    out = {"checkpoint": str(Path(args.out) / "student.ckpt"), "epochs": len(trace)}
    if trace and "miou" in trace[-1]:
        out["miou"] = trace[-1]["miou"]
    emit(out)


def cmd_evaluate(args):
    model, _ = Student.load(args.checkpoint)
    m = DatasetManifest.from_file(args.data)
    images, onehots = m.load_split(args.split)
    if images is None:
        raise ValidationError(f"{args.data} has no {args.split} split")
    if m.kind != "onehot":
        raise ValidationError("evaluation needs one-hot ground truth")
    rep = evaluate(model, images, onehots)
    if args.out:
        Path(args.out).write_text(json.dumps(rep, indent=1))
    emit(rep)


def cmd_render(args):
    m = DatasetManifest.from_file(args.data)
    if m.kind != "logits":
        raise ValidationError("render expects a generated manifest with stored logits")
    paths = render_samples(m, args.out, args.limit)
    emit({"files": paths})


def cmd_pipeline(args):
    cfg = load_config(args.config)
    cfg["seed"] = args.seed
    if args.aug_ratio is not None:
        cfg.setdefault("sampler", {})["aug_ratio"] = args.aug_ratio
    manifest = run_pipeline(cfg, args.out)
    emit(manifest["report"])


def build_parser():
    p = argparse.ArgumentParser(prog="jointdiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write a synthetic SAR toy dataset")
    s.add_argument("--spec", help="scene spec JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--classes", type=int)
    s.add_argument("--looks", type=float)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("balance", help="compute and store the balancing factor of a dataset")
    s.add_argument("--data", required=True, help="dataset manifest")
    s.add_argument("--split", default="train")
    s.set_defaults(func=cmd_balance)

    s = sub.add_parser("train-diffusion", help="train the joint image/label denoiser")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--width", type=int)
    s.add_argument("--T-steps", dest="T_steps", type=int)
    s.set_defaults(func=cmd_train_diffusion)

    s = sub.add_parser("synthesize", help="generate image/soft-label pairs with DDIM")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--ddim-steps", type=int, default=50)
    s.add_argument("--size", type=int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("train-student", help="train a segmentation student")
    s.add_argument("--data", required=True)
    s.add_argument("--aug", help="generated manifest")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--width", type=int)
    s.add_argument("--aug-ratio", type=float)
    s.add_argument("--label-mode", choices=("soft", "hard"))
    s.add_argument("--temperature", type=float)
    s.set_defaults(func=cmd_train_student)

    s = sub.add_parser("evaluate", help="score a student checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", help="write PPM strips of generated pairs")
    s.add_argument("--data", required=True, help="generated manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--limit", type=int)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pipeline", help="run every stage and write a comparative report")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--aug-ratio", type=float)
    s.set_defaults(func=cmd_pipeline)
    return p


def exit_code(exc):
    if isinstance(exc, StageError):
        return exit_code(exc.cause)
    if isinstance(exc, TrainingDivergence):
        return EXIT_DIVERGED
    if isinstance(exc, (FormatError, ValidationError, DimensionError, DegenerateSignalError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ParameterError, TypeError)):
        return EXIT_CONFIG
    return None


def main(argv=None):
    logging.basicConfig(level=os.environ.get("JOINTDIFF_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        code = exit_code(exc)
        if code is None:
            raise
        print(f"jointdiff {args.command}: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
