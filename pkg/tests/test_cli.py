import json

import numpy as np
import pytest

from psmlab import cli
from psmlab.config import PRESETS, RunConfig
from psmlab.data_io import TrajectoryDataset, read_npz, read_sidecar, write_npz
from psmlab.errors import ConfigError
from psmlab.net import load_checkpoint
from psmlab.potential import LennardJonesCluster

TINY = {
    "mala": {"n_samples": 300},
    "net": {"hidden_dims": [16, 16], "time_embed_dim": 8},
    "train": {"epochs": 4, "checkpoint_every": 1},
    "sampler": {"n_samples": 100, "n_steps": 20},
    "split": {"k": 100},
}


def write_config(tmp_path, overlay=None, name="cfg.json"):
    doc = json.loads(json.dumps(TINY))
    for k, v in (overlay or {}).items():
        doc[k] = {**doc.get(k, {}), **v} if isinstance(v, dict) and k != "system" else v
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return cli.main(list(argv))


def test_presets_build_and_mirror_defaults():
    for name in PRESETS:
        cfg = RunConfig.build(name)
        assert cfg.doc["schedule"]["sigma_min"] == 0.1 and cfg.doc["schedule"]["sigma_max"] == 5.0
        assert cfg.doc["train"]["weight_decay"] == 5e-7
        assert cfg.doc["sampler"]["n_steps"] == 1000
        assert cfg.doc["train"]["lr"] == 2e-4 and cfg.doc["train"]["keep"] == "best"
    assert RunConfig.build("lj13").doc["sampler"]["n_samples"] == 500


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"loss": {"variant": "Nope"}}))
    assert run("train", "--preset", "gauss", "--config", str(bad), "--out", str(tmp_path)) == 2
    assert "Nope" in capsys.readouterr().err
    bad.write_text(json.dumps({"colour": 1}))
    assert run("reference", "--preset", "gauss", "--config", str(bad)) == 2
    bad.write_text("{not json")
    assert run("reference", "--config", str(bad)) == 2
    with pytest.raises(ConfigError):
        RunConfig.build(None, {})


def test_full_pipeline_and_manifest_chain(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "nested" / "run"
    for cmd in ("reference", "train", "sample", "eval"):
        assert run(cmd, "--preset", "quartic1d", "--config", cfg, "--out", str(out)) == 0
    for cmd in ("reference", "train", "sample", "eval"):
        doc = json.loads((out / f"manifest_{cmd}.json").read_text())
        assert doc["status"] == "complete"
    ref = read_npz(out / "reference.npz")
    assert ref.positions.shape == (300, 1, 1) and ref.forces.shape == (300, 1, 1)
    # the chain is reconstructable from sidecars: samples -> model -> split -> reference
    samples_side = read_sidecar(out / "samples.csv")
    model_side = read_sidecar(samples_side["model"])
    split_side = read_sidecar(model_side["train_split"]["train_split"])
    assert split_side["source"] == str(out / "reference.npz")
    assert split_side["source_sha256"] == cli.sha256_file(out / "reference.npz")
    train_manifest = json.loads((out / "manifest_train.json").read_text())
    assert train_manifest["t_p"] == 0.05 and train_manifest["loss_variant"] == "Piecewise"
    metrics = json.loads((out / "metrics.json").read_text())
    assert len(metrics["samples_sha256"]) == 64 and len(metrics["reference_sha256"]) == 64
    assert (out / "hist_coord_x_samples.csv").exists()


def test_manifest_written_before_compute(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)

    def boom(*a, **k):
        raise cli.NumericalError("stop")

    monkeypatch.setattr(cli, "mala_sample", boom)
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 4
    assert json.loads((tmp_path / "manifest_reference.json").read_text())["status"] == "started"


def test_dsm_needs_no_forces_but_psm_refuses(tmp_path, capsys):
    ds = TrajectoryDataset(np.random.default_rng(0).normal(size=(120, 1, 1)))
    write_npz(ds, tmp_path / "plain.npz")
    cfg = write_config(tmp_path, {"dataset": {"path": str(tmp_path / "plain.npz")}, "system": None, "loss": {"variant": "DSM"}})
    assert run("train", "--config", cfg, "--out", str(tmp_path / "a")) == 0
    cfg = write_config(tmp_path, {"dataset": {"path": str(tmp_path / "plain.npz")}, "system": None, "loss": {"variant": "Piecewise"}})
    assert run("train", "--config", cfg, "--out", str(tmp_path / "b")) == 2
    assert "force labels" in capsys.readouterr().err


def test_hash_mismatch_refused_unless_forced(tmp_path):
    out = str(tmp_path)
    cfg = write_config(tmp_path)
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", out) == 0
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", out) == 0
    other = write_config(tmp_path, {"loss": {"variant": "DSM"}}, "other.json")
    assert run("sample", "--preset", "quartic1d", "--config", other, "--out", out) == 2
    assert run("sample", "--preset", "quartic1d", "--config", other, "--out", out, "--force") == 0
    assert read_sidecar(tmp_path / "samples.csv")["forced"] is True
    # the sampler section is not part of the model hash
    more = write_config(tmp_path, {"sampler": {"method": "Euler"}}, "more.json")
    assert run("sample", "--preset", "quartic1d", "--config", more, "--out", out) == 0
    assert json.loads((tmp_path / "manifest_sample.json").read_text())["method"] == "Euler"


def test_missing_inputs_exit_3(tmp_path):
    cfg = write_config(tmp_path)
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 3
    assert run("sample", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 3
    (tmp_path / "reference.npz").write_bytes(b"garbage")
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 3


def test_resume_reproduces_uninterrupted_run(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", out) == 0
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", a) == 0

    real_save = cli.save_checkpoint
    calls = []

    def interrupting_save(*args, **kwargs):
        real_save(*args, **kwargs)
        calls.append(1)
        if len(calls) == 2:
            raise KeyboardInterrupt

    monkeypatch.setattr(cli, "save_checkpoint", interrupting_save)
    with pytest.raises(KeyboardInterrupt):
        run("train", "--preset", "quartic1d", "--config", cfg, "--out", b)
    monkeypatch.setattr(cli, "save_checkpoint", real_save)
    assert load_checkpoint(f"{b}/last.ckpt")[3]["epoch"] == 1
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", b, "--resume") == 0
    net_a, state_a, _, _ = load_checkpoint(f"{a}/last.ckpt")
    net_b, state_b, _, _ = load_checkpoint(f"{b}/last.ckpt")
    assert all(np.array_equal(p, q) for p, q in zip(net_a.params, net_b.params))
    assert state_a.step == state_b.step
    assert (tmp_path / "a" / "loss.csv").read_text() == (tmp_path / "b" / "loss.csv").read_text()


def test_same_config_and_seed_give_identical_metrics(tmp_path):
    cfg = write_config(tmp_path)
    docs = []
    for out in ("x", "y"):
        out = str(tmp_path / out)
        for cmd in ("reference", "train", "sample", "eval"):
            assert run(cmd, "--preset", "gauss", "--config", cfg, "--out", out, "--seed", "3") == 0
        docs.append((tmp_path / out / "metrics.json").read_bytes())
    a, b = (json.loads(d) for d in docs)
    a.pop("samples"), b.pop("samples"), a.pop("reference"), b.pop("reference")
    assert a == b


def test_eval_samples_equal_reference(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", str(out)) == 0
    ref = read_npz(out / "reference.npz")
    from psmlab.data_io import write_samples_csv
    from psmlab.metrics import SampleSet

    write_samples_csv(out / "same.csv", SampleSet(ref.flat_positions()))
    assert run("eval", "--preset", "quartic1d", "--config", cfg, "--out", str(out), "--samples", str(out / "same.csv")) == 0
    m = json.loads((out / "metrics.json").read_text())["metrics"]
    assert m["coord_x"]["tvd"] == 0.0 and m["coord_x"]["mae"] == 0.0 and m["w2"] == 0.0
    assert m["energy"]["tvd"] == 0.0


def test_eval_shape_mismatch_is_data_error(tmp_path):
    cfg = write_config(tmp_path)
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 0
    (tmp_path / "two.csv").write_text("p0_x,p0_y\n0.1,0.2\n")
    assert run("eval", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path), "--samples", str(tmp_path / "two.csv")) == 3


def test_lj_reference_shapes_and_eval(tmp_path):
    cfg = write_config(tmp_path, {"mala": {"n_samples": 40}, "sampler": {"n_samples": 30, "n_steps": 10}, "split": {"k": 20}, "train": {"epochs": 1}})
    out = str(tmp_path)
    for cmd in ("reference", "train", "sample", "eval"):
        assert run(cmd, "--preset", "lj13", "--config", cfg, "--out", out) == 0
    ref = read_npz(tmp_path / "reference.npz")
    assert ref.positions.shape == (40, 13, 3) and ref.forces.shape == (40, 13, 3)
    assert np.allclose(ref.positions.mean(axis=1), ref.positions[0].mean(axis=0), atol=1e-9)
    m = json.loads((tmp_path / "metrics.json").read_text())["metrics"]
    assert {"h_r", "w2", "energy", "stable_fraction"} <= set(m)


def test_strict_turns_low_acceptance_into_failure(tmp_path):
    cfg = write_config(tmp_path, {"mala": {"step_size": 5.0, "n_samples": 200}})
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path)) == 0
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", str(tmp_path), "--strict") == 4
    assert json.loads((tmp_path / "manifest_reference.json").read_text())["warnings"]


def test_check_passes_and_reports_times(tmp_path, capsys):
    assert run("check", "--quick", "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "check_report.json").read_text())
    assert report["all_passed"]
    assert all("seconds" in r and r["seconds"] >= 0 for r in report["checks"])
    assert "PASS force_consistency" in capsys.readouterr().out


def test_check_catches_force_sign_flip(tmp_path, monkeypatch):
    original = LennardJonesCluster.force
    monkeypatch.setattr(LennardJonesCluster, "force", lambda self, x: -original(self, x))
    assert run("check", "--quick", "--out", str(tmp_path)) == 1
    report = json.loads((tmp_path / "check_report.json").read_text())
    failed = [r["check"] for r in report["checks"] if not r["passed"]]
    assert failed == ["force_consistency"]


def test_thread_cap_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PSMLAB_THREADS", "1")
    assert run("check", "--quick", "--out", str(tmp_path)) == 0
    monkeypatch.setenv("PSMLAB_THREADS", "many")
    assert run("check", "--quick", "--out", str(tmp_path)) == 2


def test_keep_final_saves_last_epoch_weights(tmp_path):
    cfg = write_config(tmp_path, {"train": {"keep": "final"}})
    out = str(tmp_path)
    assert run("reference", "--preset", "quartic1d", "--config", cfg, "--out", out) == 0
    assert run("train", "--preset", "quartic1d", "--config", cfg, "--out", out) == 0
    net_model, _, _, meta = load_checkpoint(tmp_path / "model.ckpt")
    net_last, _, _, _ = load_checkpoint(tmp_path / "last.ckpt")
    assert meta["epoch"] == TINY["train"]["epochs"] - 1
    assert all(np.array_equal(p, q) for p, q in zip(net_model.params, net_last.params))
    bad = write_config(tmp_path, {"train": {"keep": "middle"}}, "bad.json")
    assert run("train", "--preset", "quartic1d", "--config", bad, "--out", out) == 2
