import json

import numpy as np
import pytest

from jointdiff.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, exit_code, main
from jointdiff.errors import TrainingDivergence
from jointdiff.pipeline import StageError, render_samples, run_pipeline, strip_volatile
from jointdiff.tensorio import DatasetManifest, SampleRecord, tensor_write
from jointdiff.toydata import read_pnm

MICRO = {
    "data": {"size": 16, "num_classes": 3, "n_train": 24, "n_test": 12},
    "diffusion": {"steps": 300, "batch_size": 8, "width": 8, "T_steps": 100},
    "sampler": {"ddim_steps": 10, "aug_ratio": 0.5},
    "student": {"epochs": 2, "width": 4, "batch_size": 8},
    "student_seeds": [0],
    "render": 2,
}


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("micro")
    return out, run_pipeline({**MICRO, "seed": 0}, out)


def test_micro_pipeline_completes(micro_run):
    out, manifest = micro_run
    names = [s["stage"] for s in manifest["stages"]]
    assert names[:5] == ["gen-data", "balance", "train-diffusion", "synthesize", "render"]
    assert set(manifest["report"]) == {"baseline", "dakter", "hard_labels"}
    for row in manifest["report"].values():
        assert 0.0 <= row["miou"] <= 1.0
    assert json.loads((out / "run_manifest.json").read_text())["report"] == manifest["report"]
    # every artefact named in the manifest exists
    for st in manifest["stages"]:
        for key in ("manifest", "checkpoint", "loss_trace", "file"):
            if key in st:
                assert (out / st[key]).is_file(), st[key]
        for f in st.get("files", []):
            assert (out / f).is_file()
    b = manifest["stages"][1]["balancing_factor"]["b"]
    assert 0 < b < 1


def test_same_seed_same_manifest(micro_run, tmp_path):
    _, first = micro_run
    second = run_pipeline({**MICRO, "seed": 0}, tmp_path)
    assert strip_volatile(first) == strip_volatile(second)


def test_renders_are_byte_stable(micro_run, tmp_path):
    out, _ = micro_run
    m = DatasetManifest.from_file(out / "generated" / "manifest.json")
    paths = render_samples(m, tmp_path, 2)
    for p in paths:
        name = p.rsplit("/", 1)[-1]
        assert (out / "renders" / name).read_bytes() == open(p, "rb").read()


def test_baseline_only_without_augmentation(tmp_path):
    cfg = {**MICRO, "seed": 1, "sampler": {"aug_ratio": 0.0}}
    manifest = run_pipeline(cfg, tmp_path)
    assert list(manifest["report"]) == ["baseline"]
    assert "train-diffusion" not in [s["stage"] for s in manifest["stages"]]


def test_render_panels(tmp_path):
    c, size = 4, 6
    tensor_write(tmp_path / "img.dktn", np.zeros((1, size, size), np.float32))
    tensor_write(tmp_path / "log.dktn", np.zeros((c, size, size), np.float32))
    m = DatasetManifest(c, [SampleRecord("img.dktn", "log.dktn", "logits")], role="generated")
    m.save(tmp_path / "manifest.json")
    (path,) = render_samples(m, tmp_path / "r")
    strip = read_pnm(path)
    assert strip.shape == (size, (2 + c) * size, 3)
    probs = strip[:, size:(1 + c) * size]
    assert np.all(probs == 128)


def test_seed_is_mandatory(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_cli_stages(tmp_path, capsys):
    d = tmp_path / "d"
    assert main(["gen-data", "--out", str(d), "--seed", "0", "--n-train", "8", "--n-test", "4",
                 "--size", "8", "--classes", "3"]) == 0
    assert main(["balance", "--data", str(d / "manifest.json")]) == 0
    assert DatasetManifest.from_file(d / "manifest.json").balancing["b"] > 0
    cfg = tmp_path / "diff.json"
    cfg.write_text(json.dumps({"steps": 50, "batch_size": 2, "width": 4, "T_steps": 20}))
    assert main(["train-diffusion", "--data", str(d / "manifest.json"), "--config", str(cfg),
                 "--steps", "3", "--out", str(tmp_path / "m"), "--seed", "0"]) == 0
    assert len((tmp_path / "m" / "loss.jsonl").read_text().splitlines()) == 3
    assert main(["synthesize", "--checkpoint", str(tmp_path / "m" / "denoiser.ckpt"), "--n", "4",
                 "--ddim-steps", "4", "--out", str(tmp_path / "g"), "--seed", "1"]) == 0
    assert main(["render", "--data", str(tmp_path / "g" / "manifest.json"), "--out", str(tmp_path / "r")]) == 0
    assert len(list((tmp_path / "r").iterdir())) == 4
    assert main(["train-student", "--data", str(d / "manifest.json"), "--aug", str(tmp_path / "g" / "manifest.json"),
                 "--aug-ratio", "0.5", "--epochs", "1", "--width", "4", "--out", str(tmp_path / "s"),
                 "--seed", "0"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--checkpoint", str(tmp_path / "s" / "student.ckpt"),
                 "--data", str(d / "manifest.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0 <= rep["miou"] <= 1


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o"), "--seed", "0"]) == EXIT_CONFIG
    (tmp_path / "m.json").write_text('{"version": 99}')
    assert main(["balance", "--data", str(tmp_path / "m.json")]) == EXIT_DATA
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--data", str(tmp_path / "m.json")]) == EXIT_DATA
    neg = tmp_path / "neg.json"
    neg.write_text(json.dumps({"steps": -1}))
    main(["gen-data", "--out", str(tmp_path / "d"), "--seed", "0", "--n-train", "2", "--n-test", "1",
          "--size", "8", "--classes", "2"])
    assert main(["train-diffusion", "--data", str(tmp_path / "d" / "manifest.json"), "--config", str(neg),
                 "--out", str(tmp_path / "x"), "--seed", "0"]) == EXIT_CONFIG
    assert exit_code(StageError("train-diffusion", TrainingDivergence("nan"), {})) == EXIT_DIVERGED


def test_stage_failure_reports_stage(tmp_path):
    cfg = {**MICRO, "seed": 0, "diffusion": {"steps": 1, "batch_size": 0}}
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, tmp_path)
    assert info.value.stage in ("train-diffusion",)
    written = json.loads((tmp_path / "run_manifest.json").read_text())
    assert written["failed_stage"] == info.value.stage
    assert [s["stage"] for s in written["stages"]] == ["gen-data", "balance"]
