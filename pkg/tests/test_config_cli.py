"""Configuration parsing and the command-line verbs, run in-process."""

import json
import os

import numpy as np
import pytest

from refsr import ConfigError, load_config, parse_config_text, read_png, write_png
from refsr.cli import main
from refsr.imageio import load_tensor
from tests.conftest import natural_image


# ---- config parsing ----

def test_parse_full_file():
    text = """
# matching setup
partition.n_m = 2
partition.n_r = 4          # spatial reference parts
match.patch_size = 5
match.normalize_input = true
synth.tau = 2.0
synth.base_mix = 0.25
extractor.channels = 8, 12, 16
threads = auto
"""
    raw = parse_config_text(text)
    assert raw["partition.n_r"] == "4"
    assert raw["extractor.channels"] == "8, 12, 16"
    cfg = load_config_from_text(text)
    assert cfg.partition.n_m == 2
    assert cfg.match.patch_size == 5
    assert cfg.match.normalize_input is True
    assert cfg.synth.base_mix == 0.25
    assert cfg.extractor.stage_channels == (8, 12, 16)
    assert cfg.threads >= 1


def load_config_from_text(text, overrides=None, tmpdir="/tmp"):
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", dir=tmpdir, delete=False) as fh:
        fh.write(text)
        path = fh.name
    try:
        return load_config(path, overrides)
    finally:
        os.unlink(path)


def test_unknown_key_names_line():
    with pytest.raises(ConfigError) as err:
        parse_config_text("partition.n_m = 1\nmystery.knob = 7\n")
    msg = str(err.value)
    assert "mystery.knob" in msg
    assert "line 2" in msg


def test_missing_equals_and_empty_value():
    with pytest.raises(ConfigError):
        parse_config_text("partition.n_m 1")
    with pytest.raises(ConfigError):
        parse_config_text("partition.n_m =   # nothing")


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError) as err:
        load_config_from_text("partition.n_m = soon")
    assert "partition.n_m" in str(err.value)
    with pytest.raises(ConfigError):
        load_config_from_text("match.normalize_input = perhaps")


def test_validation_rules():
    with pytest.raises(ConfigError):
        load_config_from_text("partition.n_r = 3")       # not a square
    with pytest.raises(ConfigError):
        load_config_from_text("partition.n_c = 7")       # does not divide 256
    with pytest.raises(ConfigError):
        load_config_from_text("match.patch_size = 4")    # even
    with pytest.raises(ConfigError):
        load_config_from_text("synth.base_mix = 1.5")
    with pytest.raises(ConfigError):
        load_config_from_text("synth.upscale = 2")
    with pytest.raises(ConfigError):
        load_config_from_text("threads = 0")
    with pytest.raises(ConfigError):
        load_config_from_text("extractor.channels = 8, 12")


def test_defaults_and_overrides():
    cfg = load_config(None)
    assert cfg.partition.n_m == 1
    assert cfg.match.patch_size == 3
    assert cfg.synth.paste_patch == 12
    assert cfg.synth.base_mix is None
    assert cfg.threads == 1
    over = load_config(None, {"partition.n_m": "4", "threads": "2"})
    assert over.partition.n_m == 4
    assert over.threads == 2
    with pytest.raises(ConfigError):
        load_config(None, {"not.a.key": "1"})


def test_paste_patch_follows_patch_size():
    cfg = load_config_from_text("match.patch_size = 5")
    assert cfg.synth.paste_patch == 20


def test_non_utf8_config(tmp_path):
    path = str(tmp_path / "bad.cfg")
    with open(path, "wb") as fh:
        fh.write(b"partition.n_m = 1\xff\xfe\n")
    with pytest.raises(ConfigError):
        load_config(path)


# ---- CLI ----

SMALL_CFG = """
extractor.channels = 6, 8, 12
extractor.seed = 7
"""


def _write_cfg(tmp_path, text=SMALL_CFG):
    path = str(tmp_path / "run.cfg")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _setup_images(tmp_path, size=64):
    gt = natural_image(41, size=size)
    from refsr import resize_bicubic
    lr = resize_bicubic(gt, size // 4, size // 4)
    paths = {}
    for name, img in [("gt", gt), ("lr", lr), ("ref", gt)]:
        p = str(tmp_path / f"{name}.png")
        write_png(p, img)
        paths[name] = p
    return paths


def test_cli_superres_writes_outputs(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    cfg = _write_cfg(tmp_path)
    out = str(tmp_path / "sr.png")
    code = main(["superres", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--ground-truth", paths["gt"], "--out", out])
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert list(report.keys()) == ["psnr_y", "ssim_y", "peak_bytes", "wall_ms"]
    assert report["psnr_y"] > 20.0
    assert 0.0 < report["ssim_y"] <= 1.0
    assert report["peak_bytes"] > 0
    sr = read_png(out)
    assert sr.shape == (64, 64, 3)
    field = load_tensor(str(tmp_path / "sr.field.tens"))
    assert field.shape == (6, 4, 4)
    weights = load_tensor(str(tmp_path / "sr.weights.tens"))
    assert weights.shape == (4, 4)


def test_cli_superres_beats_bicubic_with_self_reference(tmp_path, capsys):
    from refsr import psnr_y, resize_bicubic
    paths = _setup_images(tmp_path, size=128)
    cfg = _write_cfg(tmp_path)
    out = str(tmp_path / "sr.png")
    code = main(["superres", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--ground-truth", paths["gt"], "--out", out])
    assert code == 0
    report = json.loads(capsys.readouterr().out.strip())
    gt = read_png(paths["gt"])
    lr = read_png(paths["lr"])
    base = psnr_y(resize_bicubic(lr, 128, 128), gt)
    assert report["psnr_y"] >= base + 0.5


def test_cli_match_and_extract(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    cfg = _write_cfg(tmp_path)
    field_path = str(tmp_path / "field.tens")
    assert main(["match", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--out", field_path]) == 0
    assert load_tensor(field_path).shape == (6, 4, 4)

    out_dir = str(tmp_path / "feats")
    assert main(["extract", "--config", cfg, "--input", paths["lr"],
                 "--out-dir", out_dir]) == 0
    assert load_tensor(os.path.join(out_dir, "scale1.tens")).shape == (6, 16, 16)
    assert load_tensor(os.path.join(out_dir, "scale3.tens")).shape == (12, 4, 4)


def test_cli_evaluate_inf_sentinel(tmp_path, capsys):
    img = natural_image(3, size=32)
    a = str(tmp_path / "a.png")
    b = str(tmp_path / "b.png")
    write_png(a, img)
    write_png(b, img)
    assert main(["evaluate", a, b]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert lines[0]["psnr_y"] == "inf"
    assert lines[0]["ssim_y"] == 1.0
    assert lines[-1]["path"] == "aggregate"
    assert lines[-1]["psnr_y"] == "inf"


def test_cli_evaluate_odd_paths_is_config_error(tmp_path, capsys):
    img = natural_image(3, size=32)
    a = str(tmp_path / "a.png")
    write_png(a, img)
    assert main(["evaluate", a]) == 1


def test_cli_bench_csv(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    cfg = _write_cfg(tmp_path)
    csv_path = str(tmp_path / "bench.csv")
    code = main(["bench", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--sweep", "1,4",
                 "--ground-truth", paths["gt"], "--out", csv_path])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "n_r,peak_bytes,wall_ms,psnr_y"
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["1", "4"]
    peaks = [int(r[1]) for r in rows]
    assert peaks[1] <= peaks[0]
    assert float(rows[0][3]) > 20.0
    assert open(csv_path).read().splitlines()[0] == lines[0]


def test_cli_bench_rejects_bad_sweep(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    assert main(["bench", "--input", paths["lr"], "--ref", paths["ref"],
                 "--sweep", "1,3"]) == 1
    assert main(["bench", "--input", paths["lr"], "--ref", paths["ref"],
                 "--sweep", "one"]) == 1


def test_cli_oracle_check_synthetic_exact(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "match.patch_size = 1\noracle.height = 10\n"
                               "oracle.width = 9\noracle.channels = 6\n"
                               "oracle.refs = 2\npartition.n_r = 4\n")
    assert main(["oracle-check", "--config", cfg, "--seed", "5"]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["mode"] == "exact"
    assert report["mismatches"] == 0
    assert report["positions"] == 90


def test_cli_oracle_check_synthetic_bound(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "match.patch_size = 3\noracle.height = 10\n"
                               "oracle.width = 10\noracle.channels = 4\n"
                               "oracle.refs = 2\npartition.n_r = 4\n")
    assert main(["oracle-check", "--config", cfg, "--seed", "5"]) == 0
    report = json.loads(capsys.readouterr().out.strip())
    assert report["mode"] == "bound"
    assert report["mismatches"] == 0


def test_cli_exit_code_config_error(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    bad = _write_cfg(tmp_path, "mystery.knob = 1\n")
    code = main(["superres", "--config", bad, "--input", paths["lr"],
                 "--ref", paths["ref"], "--out", str(tmp_path / "o.png")])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_cli_exit_code_io_errors(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    missing = str(tmp_path / "missing.png")
    assert main(["superres", "--input", missing, "--ref", paths["ref"],
                 "--out", str(tmp_path / "o.png")]) == 2

    fake = str(tmp_path / "fake.png")
    with open(fake, "w") as fh:
        fh.write("not an image")
    assert main(["superres", "--input", fake, "--ref", paths["ref"],
                 "--out", str(tmp_path / "o.png")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_exit_code_computation_error(tmp_path, capsys):
    """All-black input and reference: every feature is zero, every patch
    is excluded, and the pipeline must fail loudly rather than guess."""
    black = str(tmp_path / "black.png")
    write_png(black, np.zeros((16, 16, 3), dtype=np.uint8))
    code = main(["superres", "--input", black, "--ref", black,
                 "--out", str(tmp_path / "o.png")])
    assert code == 3
    assert "pipeline error" in capsys.readouterr().err


def test_cli_threads_flag_matches_single(tmp_path, capsys):
    paths = _setup_images(tmp_path)
    cfg = _write_cfg(tmp_path)
    out1 = str(tmp_path / "sr1.png")
    out8 = str(tmp_path / "sr8.png")
    assert main(["superres", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--out", out1, "--threads", "1"]) == 0
    assert main(["superres", "--config", cfg, "--input", paths["lr"],
                 "--ref", paths["ref"], "--out", out8, "--threads", "8"]) == 0
    capsys.readouterr()
    assert (read_png(out1) == read_png(out8)).all()
    assert (load_tensor(str(tmp_path / "sr1.field.tens"))
            == load_tensor(str(tmp_path / "sr8.field.tens"))).all()
