import os

import numpy as np
import pytest

from deepma import cli
from deepma.checkpoint import save_checkpoint
from deepma.config import ConfigError, parse_config
from deepma.data import read_ppm, synthetic_set
from deepma.detection import GateConfig
from deepma.model import ArchConfig, DmaNet
from deepma.scenarios import detection_trials, reference_banks, run_scenario


def net_of(n, seed=0):
    arch = ArchConfig(height=8, width=8, channels=(4, 4, 4), strides=(1, 2, 2), n_edps=n)
    return DmaNet.init(arch, seed)


def image_groups(n, b=3):
    imgs = synthetic_set(n * b, 8, 8, 1).images
    return [imgs[i * b : (i + 1) * b] for i in range(n)]


# --- scenarios ------------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["awgn", "d2d"])
def test_single_edp_dedicated_equals_multiplex(kind):
    net = net_of(1)
    imgs = image_groups(1)
    a = run_scenario(net, imgs, "multiplex", 7.0, kind, seed=2)
    b = run_scenario(net, imgs, "dedicated", 7.0, kind, seed=2)
    assert a.recovered[0].tobytes() == b.recovered[0].tobytes()
    assert [r.psnr_db for r in a.reports] == [r.psnr_db for r in b.reports]


def test_multiplex_reports_every_edp_and_image():
    res = run_scenario(net_of(2), image_groups(2), "multiplex", 10.0, "d2d", draws=2)
    assert len(res.reports) == 2 * 3 * 2
    assert {(r.edp, r.image, r.draw) for r in res.reports} == {(e, i, d) for e in range(2) for i in range(3) for d in range(2)}
    assert all(r.gate == "accept" and r.psnr_db is not None for r in res.reports)


def test_cross_decodes_without_own_signal():
    res = run_scenario(net_of(2), image_groups(2), "cross", 10.0, "awgn")
    assert len(res.reports) == 6 and all(r.psnr_db is not None for r in res.reports)


def test_gate_abandons_and_skips_decoding():
    net = net_of(2)
    imgs = image_groups(2)
    banks = reference_banks(net, synthetic_set(2, 8, 8, 9).images)
    shut = run_scenario(net, imgs, "multiplex", 10.0, "awgn", banks=banks, gate_cfg=GateConfig(1e9))
    assert all(r.gate == "abandon" and r.psnr_db is None and r.aacd is not None for r in shut.reports)
    assert all(v is None for v in shut.recovered.values())
    opened = run_scenario(net, imgs, "multiplex", 10.0, "awgn", banks=banks, gate_cfg=GateConfig(1e-9))
    assert all(r.gate == "accept" and r.psnr_db is not None for r in opened.reports)


def test_scenario_argument_checks():
    with pytest.raises(ValueError, match="unknown scenario"):
        run_scenario(net_of(2), image_groups(2), "broadcast", 10.0)
    with pytest.raises(ValueError, match="one per EDP"):
        run_scenario(net_of(2), image_groups(1), "multiplex", 10.0)


def test_detection_trials_shapes():
    net = net_of(2)
    imgs = synthetic_set(10, 8, 8, 3).images
    banks = reference_banks(net, imgs[-2:])
    p, u = detection_trials(net, imgs[:-2], 0.0, banks, 7, "awgn", seed=1)
    assert p.shape == (14,) and u.shape == (14,)
    assert np.all(p >= 0) and np.all(u >= 0)
    p2, u2 = detection_trials(net, imgs[:-2], 0.0, banks, 7, "awgn", seed=1)
    assert np.array_equal(p, p2) and np.array_equal(u, u2)
    with pytest.raises(ValueError):
        detection_trials(net_of(1), imgs, 0.0, banks[:1], 3)


# --- config ---------------------------------------------------------------------------------


def test_config_parsing_and_comments():
    cfg = parse_config("# top\n[model]\nn_edps = 3  # three users\nchannels = 8, 8, 8, 16\n[train]\nlr_schedule = 0:5e-4, 100:1e-4\n")
    assert cfg.get("model", "n_edps") == 3
    assert cfg.get("model", "channels") == (8, 8, 8, 16)
    assert cfg.get("train", "lr_schedule") == ((0, 5e-4), (100, 1e-4))
    assert cfg.get("train", "batch_size") == 32 and not cfg.is_set("train", "batch_size")


@pytest.mark.parametrize(
    "text,line,msg",
    [
        ("[model]\nn_edps = 2\nwidth_px = 4\n", 3, "unknown key"),
        ("[modle]\n", 1, "unknown section"),
        ("[model]\nn_edps 2\n", 2, "key = value"),
        ("[model]\nn_edps = two\n", 2, "bad value"),
        ("[model]\nn_edps = 2\nn_edps = 3\n", 3, "duplicate"),
        ("[scenario]\ngate = maybe\n", 2, "on/off"),
    ],
)
def test_config_errors_carry_line_numbers(text, line, msg):
    with pytest.raises(ConfigError, match=msg) as err:
        parse_config(text, "x.cfg")
    assert err.value.line == line
    assert f"x.cfg:{line}:" in str(err.value)


# --- command line ---------------------------------------------------------------------------


TINY_CFG = """\
[run]
seed = 5
channel = awgn
[model]
n_edps = 2
height = 8
width = 8
channels = 4, 4, 4
strides = 1, 2, 2
[data]
train_size = 32
val_size = 4
test_size = 12
[train]
batch_size = 4
max_iterations = 6
validate_every = 1
"""


@pytest.fixture
def trained(tmp_path, monkeypatch):
    monkeypatch.setenv("DEEPMA_LOG", "quiet")
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    out = tmp_path / "run"
    assert cli.main(["--config", str(cfg), "--out", str(out), "train"]) == 0
    return cfg, out


def test_train_writes_history_and_checkpoint(trained):
    _, out = trained
    assert sorted(os.listdir(out)) == ["best.dman", "history.csv"]
    lines = (out / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,iteration,loss,val_psnr_db,lr"
    assert len(lines) == 3


def test_train_rerun_is_byte_identical(trained, tmp_path):
    cfg, out = trained
    again = tmp_path / "again"
    assert cli.main(["--config", str(cfg), "--out", str(again), "train"]) == 0
    assert (out / "history.csv").read_bytes() == (again / "history.csv").read_bytes()
    assert (out / "best.dman").read_bytes() == (again / "best.dman").read_bytes()


def test_eval_csv(trained, tmp_path):
    cfg, out = trained
    dst = tmp_path / "ev"
    args = ["--config", str(cfg), "--out", str(dst), "eval", "--checkpoint", str(out / "best.dman"), "--snrs", "1,4", "--draws", "1"]
    assert cli.main(args) == 0
    lines = (dst / "eval.csv").read_text().splitlines()
    assert lines[0] == "snr_db,edp,psnr_db,avg_psnr_db"
    assert len(lines) == 5
    assert lines[1].startswith("1.0000,0,")
    assert all(len(f.split(".")[1]) == 4 for f in lines[1].split(",")[2:])
    first = (dst / "eval.csv").read_bytes()
    assert cli.main(args) == 0
    assert (dst / "eval.csv").read_bytes() == first


def test_scenario_writes_ppms_per_edp(trained, tmp_path):
    cfg, out = trained
    dst = tmp_path / "sc"
    args = ["--config", str(cfg), "--out", str(dst), "scenario", "multiplex", "--checkpoint", str(out / "best.dman"), "--images", "2", "--no-gate"]
    assert cli.main(args) == 0
    ppms = sorted(f for f in os.listdir(dst) if f.endswith(".ppm"))
    assert len(ppms) == 2 * 2
    assert read_ppm(dst / ppms[0]).shape == (3, 8, 8)
    rows = (dst / "scenario_multiplex.csv").read_text().splitlines()
    assert rows[0] == "scenario,snr_db,edp,draw,image,psnr_db,aacd,gate"
    assert len(rows) == 1 + 4


def test_scenario_with_gate_reports_aacd(trained, tmp_path):
    cfg, out = trained
    dst = tmp_path / "sc"
    args = ["--config", str(cfg), "--out", str(dst), "scenario", "cross", "--checkpoint", str(out / "best.dman"), "--images", "2"]
    assert cli.main(args) == 0
    rows = [r.split(",") for r in (dst / "scenario_cross.csv").read_text().splitlines()[1:]]
    assert all(r[6] != "" for r in rows)
    assert all((r[7] == "accept") == (r[5] != "") for r in rows)


def test_scenario_edp_mismatch_exit_2(trained, tmp_path):
    cfg, out = trained
    bad = tmp_path / "three.cfg"
    bad.write_text(TINY_CFG.replace("n_edps = 2", "n_edps = 3"))
    args = ["--config", str(bad), "--out", str(tmp_path / "x"), "scenario", "--checkpoint", str(out / "best.dman")]
    assert cli.main(args) == 2


def test_detect_report(trained, tmp_path):
    cfg, out = trained
    dst = tmp_path / "det"
    args = ["--config", str(cfg), "--out", str(dst), "detect", "--checkpoint", str(out / "best.dman"), "--snrs", "0", "--trials", "5"]
    assert cli.main(args) == 0
    header, row = (dst / "detect.csv").read_text().splitlines()
    assert header == "snr_db,paired_mean,paired_std,unpaired_mean,unpaired_std,threshold,accuracy"
    assert 0.0 <= float(row.split(",")[-1]) <= 1.0
    assert cli.main(args[:-1] + ["0"]) == 2


def test_usage_errors_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("DEEPMA_LOG", "quiet")
    missing = tmp_path / "m.cfg"
    missing.write_text("[model]\nheight = 8\n")
    assert cli.main(["--config", str(missing), "train"]) == 2
    assert cli.main(["--config", str(tmp_path / "nope.cfg"), "train"]) == 2
    assert cli.main(["fly"]) == 2
    assert cli.main(["eval"]) == 2  # no checkpoint
    monkeypatch.setenv("DEEPMA_LOG", "loud")
    assert cli.main(["eval"]) == 2


def test_empty_eval_set_exit_2(trained, tmp_path):
    cfg, out = trained
    empty = tmp_path / "e.cfg"
    empty.write_text(TINY_CFG.replace("test_size = 12", "test_size = 0"))
    assert cli.main(["--config", str(empty), "--out", str(tmp_path / "o"), "eval", "--checkpoint", str(out / "best.dman")]) == 2


def test_nan_training_exit_3(tmp_path, monkeypatch):
    import deepma.training as tr

    monkeypatch.setenv("DEEPMA_LOG", "quiet")
    monkeypatch.setattr(tr, "train_iteration", lambda *a, **k: float("nan"))
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY_CFG)
    assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "o"), "train"]) == 3


def test_checkpoint_roundtrip_via_cli_loader(tmp_path):
    net = net_of(2)
    save_checkpoint(net, tmp_path / "n.dman")
    cfg = parse_config(f"[eval]\ncheckpoint = {tmp_path / 'n.dman'}\n")
    loaded = cli._checkpoint(cfg, "eval")
    assert loaded.n_edps == 2
