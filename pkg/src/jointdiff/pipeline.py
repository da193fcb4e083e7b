"""Three-stage pipeline: joint diffusion training, synthesis, student distillation.

Every stage writes its artefacts under one run directory and is recorded in
``run_manifest.json`` so the run can be audited and repeated from it.
"""
import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .balance import balancing_factor_from_manifest
from .diffusion_train import DiffTrainConfig, train_diffusion
from .errors import JointDiffError, ParameterError
from .numerics import softmax
from .sampler import SamplerConfig, synthesize_dataset
from .student import StudentTrainConfig, evaluate, train_student
from .tensorio import DatasetManifest, ensure_dir, tensor_read
from .toydata import SceneSpec, colorize, generate_dataset, to_gray8, write_ppm

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "data": {"size": 32, "num_classes": 5, "looks": 4.0, "n_train": 256, "n_test": 128},
    "diffusion": {"steps": 3000, "batch_size": 8, "lr": 1e-3, "T_steps": 200, "width": 16},
    "sampler": {"ddim_steps": 50, "aug_ratio": 1.0, "batch_size": 32},
    "student": {"epochs": 30, "batch_size": 16, "lr": 1e-3, "width": 8, "temperature": 2.0,
                "weights": {"lambda_ce": 1.0, "lambda_kd": 0.1, "lambda_dice": 0.5}},
    "student_seeds": [0, 1, 2],
    "hard_label_ablation": True,
    "render": 4,
}


class StageError(JointDiffError):
    """A pipeline stage failed; carries the stage name and the partial manifest."""

    def __init__(self, stage, cause, manifest):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest


def merge_config(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def load_arrays(manifest, split):
    images, targets = manifest.load_split(split)
    return images, targets


@dataclass
class StudentRun:
    name: str
    seed: int
    report: dict
    trace: list


def render_samples(manifest, out_dir, limit=None):
    """Write one PPM strip per generated sample.

    Panels left to right: image, C class-probability maps (softmax at T=1,
    scaled by C/2 so a uniform distribution is mid-grey), argmax mask.
    """
    out_dir = ensure_dir(out_dir)
    paths = []
    records = manifest.samples if limit is None else manifest.samples[:limit]
    for i, rec in enumerate(records):
        image, logits = manifest.load(rec)
        c = logits.shape[0]
        probs = softmax(logits.astype(np.float64), 1.0, axis=0)
        panels = [np.repeat(to_gray8(image[0])[..., None], 3, axis=2)]
        for k in range(c):
            g = np.round(np.clip(probs[k] * c / 2.0, 0, 1) * 255).astype(np.uint8)
            panels.append(np.repeat(g[..., None], 3, axis=2))
        panels.append(colorize(np.argmax(logits, axis=0)))
        path = Path(out_dir) / f"sample_{i:04d}.ppm"
        write_ppm(path, np.concatenate(panels, axis=1))
        paths.append(str(path))
    return paths


def _summarise(runs):
    if not runs:
        return None
    keys = ("miou", "f1", "precision", "recall", "accuracy")
    row = {k: float(np.mean([r.report[k] for r in runs])) for k in keys}
    row["per_seed_miou"] = [r.report["miou"] for r in runs]
    return row


def run_pipeline(config, out_dir):
    """Run every stage for ``config`` (merged over :data:`DEFAULT_CONFIG`).

    Returns the run manifest dict (also written to ``run_manifest.json``).
    """
    if "seed" not in config:
        raise ParameterError("config must set an explicit seed")
    cfg = merge_config(DEFAULT_CONFIG, config)
    seed = int(cfg["seed"])
    out = ensure_dir(out_dir)
    manifest = {
        "tool_version": __version__,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "stages": [],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }

    def stage(name, fn):
        t0 = time.time()
        log.info("stage %s", name)
        try:
            info = fn()
        except Exception as exc:
            manifest["failed_stage"] = name
            _write(out, manifest)
            raise StageError(name, exc, manifest) from exc
        info = dict(info or {})
        info["stage"] = name
        info["seconds"] = round(time.time() - t0, 3)
        manifest["stages"].append(info)
        _write(out, manifest)
        return info

    data = {}

    def gen_data():
        data_cfg = dict(cfg["data"])
        n_train = int(data_cfg.pop("n_train"))
        n_test = int(data_cfg.pop("n_test"))
        spec = SceneSpec.from_dict({**data_cfg, "seed": seed})
        m = generate_dataset(spec, n_train, n_test, out / "data")
        data.update(D=m, spec=spec)
        return {"manifest": "data/manifest.json", "checksum": m.checksum(), "scene_spec": spec.to_dict()}

    stage("gen-data", gen_data)

    def balance():
        bf = balancing_factor_from_manifest(data["D"])
        data["b"] = bf.b
        (out / "balance.json").write_text(json.dumps(bf.to_dict(), indent=1))
        return {"balancing_factor": bf.to_dict(), "file": "balance.json"}

    stage("balance", balance)

    train_x, train_y = load_arrays(data["D"], "train")
    test_x, test_y = load_arrays(data["D"], "test")
    aug_ratio = float(cfg["sampler"].get("aug_ratio", 1.0))
    n_gen = int(round(aug_ratio * len(train_x)))

    if n_gen > 0:
        def diffusion():
            dcfg = DiffTrainConfig.from_dict({**cfg["diffusion"], "seed": seed, "b": data["b"]})
            model, trace = train_diffusion(dcfg, train_x, train_y, out_dir=out / "diffusion")
            data["denoiser"] = model
            data["sched"] = dcfg.schedule()
            return {
                "checkpoint": "diffusion/denoiser.ckpt",
                "loss_trace": "diffusion/loss.jsonl",
                "config_hash": config_hash(dcfg.to_dict()),
                "first_loss": trace[0]["loss"] if trace else None,
                "final_loss": float(np.mean([r["loss"] for r in trace[-50:]])) if trace else None,
            }

        stage("train-diffusion", diffusion)

        def synthesize():
            scfg = SamplerConfig(
                ddim_steps=int(cfg["sampler"].get("ddim_steps", 50)),
                seed=seed,
                num_samples=n_gen,
                b=data["b"],
                size=data["spec"].size,
                batch_size=int(cfg["sampler"].get("batch_size", 32)),
            )
            m = synthesize_dataset(data["denoiser"], scfg, data["sched"], out / "generated")
            data["Da"] = m
            return {"manifest": "generated/manifest.json", "num_samples": n_gen, "checksum": m.checksum(),
                    "sampler": scfg.to_dict()}

        stage("synthesize", synthesize)

        if cfg.get("render"):
            stage("render", lambda: {"files": [str(Path(p).relative_to(out)) for p in
                                               render_samples(data["Da"], out / "renders", int(cfg["render"]))]})

    gen_x = gen_logits = None
    if "Da" in data:
        gen_x, gen_logits = load_arrays(data["Da"], "train")

    variants = [("baseline", {"aug_ratio": 0.0})]
    if n_gen > 0:
        variants.append(("dakter", {"aug_ratio": aug_ratio, "label_mode": "soft"}))
        if cfg.get("hard_label_ablation"):
            variants.append(("hard_labels", {"aug_ratio": aug_ratio, "label_mode": "hard"}))

    runs = {name: [] for name, _ in variants}
    for name, extra in variants:
        for s in cfg["student_seeds"]:
            def train(name=name, extra=extra, s=s):
                scfg_st = StudentTrainConfig.from_dict({**cfg["student"], **extra, "seed": int(s)})
                sub = out / "students" / f"{name}_seed{s}"
                model, trace = train_student(scfg_st, train_x, train_y, test_x, test_y,
                                             gen_x, gen_logits, out_dir=sub)
                rep = evaluate(model, test_x, test_y)
                (sub / "report.json").write_text(json.dumps(rep, indent=1))
                runs[name].append(StudentRun(name, int(s), rep, trace))
                return {"variant": name, "seed": int(s), "checkpoint": str((sub / "student.ckpt").relative_to(out)),
                        "report": rep, "config_hash": config_hash(scfg_st.to_dict())}

            stage(f"train-student:{name}:seed{s}", train)

    report = {name: _summarise(r) for name, r in runs.items()}
    (out / "report.json").write_text(json.dumps(report, indent=1))
    manifest["report"] = report
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write(out, manifest)
    return manifest


def _write(out, manifest):
    (Path(out) / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))


def strip_volatile(manifest):
    """Copy of a run manifest without wall-clock fields, for comparisons."""
    m = copy.deepcopy(manifest)
    for k in ("started", "finished"):
        m.pop(k, None)
    for st in m.get("stages", []):
        st.pop("seconds", None)
    return m


def read_generated(path):
    m = DatasetManifest.from_file(path)
    return m, [tensor_read(m.root / r.target) for r in m.samples]
