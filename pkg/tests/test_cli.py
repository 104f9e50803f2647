import csv
import subprocess
import sys

import pytest
import torch
import yaml
from PIL import Image

from conftest import make_toy_corpus
from nerco.cli import build_parser, main
from nerco.errors import CompatibilityError


@pytest.fixture
def trained(tmp_path):
    data = make_toy_corpus(tmp_path / "data", n_low=2, n_high=2, size=24)
    config = tmp_path / "config.yaml"
    config.write_text(yaml.safe_dump({
        "patch": 16, "epochs": 4, "decay_epochs": 2, "ngf": 8, "n_blocks": 1,
        "nrn_features": 16, "nrn_hidden": 32, "me_width": 8, "d_ndf": 8, "d_layers": 2,
        "prompts.low": "dark", "prompts.high": "bright",
    }))
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(out), "--max-steps", "3"]) == 0
    return tmp_path, config, data, out


def test_train_writes_checkpoint_and_log(trained):
    _, _, _, out = trained
    assert (out / "latest.pt").is_file()
    assert len((out / "losses.jsonl").read_text().splitlines()) == 3
    blob = torch.load(out / "latest.pt", weights_only=False)
    assert blob["config"]["prompt_low"] == "dark" and blob["step"] == 3


def test_infer_writes_same_sized_images(trained):
    tmp_path, _, data, out = trained
    src = tmp_path / "eval"
    src.mkdir()
    Image.new("RGB", (37, 21), (30, 20, 10)).save(src / "odd.png")
    Image.open(data / "low" / "0.png").save(src / "crop.jpg")
    dst = tmp_path / "enhanced"
    main(["infer", "--ckpt", str(out / "latest.pt"), "--in", str(src), "--out", str(dst)])
    assert sorted(p.name for p in dst.iterdir()) == ["crop.png", "odd.png"]
    assert Image.open(dst / "odd.png").size == (37, 21)


def test_eval_writes_report_with_mean_row(trained):
    tmp_path, _, data, out = trained
    report = tmp_path / "report.csv"
    main(["eval", "--ckpt", str(out / "latest.pt"), "--low", str(data / "low"), "--ref", str(data / "high"), "--report", str(report)])
    rows = list(csv.DictReader(open(report)))
    assert [r["name"] for r in rows] == ["0.png", "1.png", "mean"]
    for r in rows:
        assert 0 < float(r["semantic_score"]) < 1
        assert float(r["loe"]) >= 0 and float(r["ssim"]) <= 1
        # 24 px images are below the NIQE block size.
        assert r["niqe"] == ""


def test_resume_and_pe_level_override(trained):
    tmp_path, config, data, out = trained
    main(["train", "--config", str(config), "--data", str(data), "--out", str(out),
          "--resume", str(out / "latest.pt"), "--max-steps", "5"])
    assert torch.load(out / "latest.pt", weights_only=False)["step"] == 5
    with pytest.raises(CompatibilityError):
        main(["train", "--config", str(config), "--data", str(data), "--out", str(tmp_path / "other"),
              "--resume", str(out / "latest.pt"), "--pe-levels", "4"])


def test_parser_requires_subcommand_and_arguments():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args([])
    with pytest.raises(SystemExit):
        parser.parse_args(["infer", "--ckpt", "x"])
    args = parser.parse_args(["train", "--data", "d", "--out", "o", "--pe-levels", "12", "--seed", "3"])
    assert args.pe_levels == 12 and args.seed == 3


def test_module_entry_point_help():
    result = subprocess.run([sys.executable, "-m", "nerco.cli", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    assert "train" in result.stdout and "eval" in result.stdout
