import json

import numpy as np
import pytest

from fufi.cli import main


@pytest.fixture
def workdir(tmp_path):
    spec = {"fine_height": 16, "fine_width": 16, "upscale_n": 4, "num_samples": 40,
            "regimes": {"random": {"weather_ids": [0, 1], "seed": 3}}, "seed": 1}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    (tmp_path / "cfg.json").write_text(json.dumps({"max_epochs": 1, "res_blocks": 1, "filters": 8}))
    assert main(["generate", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def test_train_eval_infer_viz(workdir, capsys):
    d = str(workdir)
    assert main(["train", "--model", "urbanfm", "--data", f"{d}/data", "--config", f"{d}/cfg.json",
                 "--out", f"{d}/m.ckpt", "--log", f"{d}/log.json"]) == 0
    assert len(json.load(open(f"{d}/log.json"))["epochs"]) == 1
    capsys.readouterr()
    assert main(["eval", "--ckpt", f"{d}/m.ckpt", "--data", f"{d}/data", "--baselines"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert {"model", "mean", "ha"} <= set(report)
    np.savetxt(f"{d}/c.csv", np.full((4, 4), 16.0), delimiter=",")
    row = {"day_of_week": 1, "hour_of_day": 3, "weather_id": 0, "temperature_c": 10, "wind_speed_mph": 3,
           "is_holiday": 0}
    assert main(["infer", "--ckpt", f"{d}/m.ckpt", "--coarse", f"{d}/c.csv", "--external", json.dumps(row),
                 "--out", f"{d}/f.npy"]) == 0
    fine = np.load(f"{d}/f.npy")
    assert fine.shape == (16, 16) and fine.sum() == pytest.approx(256.0, rel=1e-4)
    assert main(["viz", "--pred", f"{d}/f.npy", "--truth", f"{d}/f.npy", "--out", f"{d}/h.png"]) == 0
    assert (workdir / "h.png").stat().st_size > 0


def test_baselines_without_checkpoint(workdir, capsys):
    assert main(["eval", "--data", f"{workdir}/data", "--baselines"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"mean", "ha"}


def test_validation_errors_exit_2(workdir):
    d = str(workdir)
    (workdir / "bad.json").write_text(json.dumps({"not_a_key": 1}))
    assert main(["train", "--model", "urbanfm", "--data", f"{d}/data", "--config", f"{d}/bad.json",
                 "--out", f"{d}/x.ckpt"]) == 2
    assert main(["eval", "--data", f"{d}/missing"]) == 2
    assert main(["eval", "--data", f"{d}/data"]) == 2


def test_divergence_exit_3(workdir):
    d = str(workdir)
    (workdir / "hot.json").write_text(json.dumps({"max_epochs": 2, "res_blocks": 1, "filters": 8, "lr": 1e30}))
    assert main(["train", "--model", "urbanfm", "--data", f"{d}/data", "--config", f"{d}/hot.json",
                 "--out", f"{d}/x.ckpt"]) == 3
