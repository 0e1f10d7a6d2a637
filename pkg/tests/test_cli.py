import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from freqsplat import io
from freqsplat.cli import main

SMALL = """\
fixture = textured-patch
fixture_size = 32
total_iters = 40
warmup_iters = 10
warmup_scale = 2
densify_end = 30
densify_interval = 10
anneal_t0 = 5
anneal_t_end = 25
init_count = 24
tau_pos = 1e-4
snapshot_every = 20
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + f"output_dir = {tmp_path / 'runs'}\n" + extra)
    return path


def run_cli(*args, env_threads=None):
    env = dict(os.environ)
    if env_threads:
        env["NUMBA_NUM_THREADS"] = str(env_threads)
    return subprocess.run([sys.executable, "-m", "freqsplat.cli", *args], capture_output=True,
                          text=True, env=env)


def test_fit_outputs_and_render_reproduces_snapshot(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["fit", "--config", str(cfg)]) == 0
    run_dir = Path(capsys.readouterr().out.strip())
    names = {p.name for p in run_dir.iterdir()}
    assert {"metrics.csv", "checkpoint.freg", "config.txt", "final.png", "snapshot_000020.png",
            "snapshot_000040.png", "final_spectrum.png", "target_spectrum.png"} <= names
    rows = (run_dir / "metrics.csv").read_text().splitlines()
    assert len(rows) == 41
    out = tmp_path / "again.png"
    assert main(["render", "--checkpoint", str(run_dir / "checkpoint.freg"), "--out", str(out)]) == 0
    assert out.read_bytes() == (run_dir / "snapshot_000040.png").read_bytes()
    assert out.read_bytes() == (run_dir / "final.png").read_bytes()
    # rerunning the same config never overwrites
    assert main(["fit", "--config", str(cfg)]) == 1
    assert "refusing" in capsys.readouterr().err


def test_seed_flag_changes_run_directory(tmp_path, capsys):
    cfg = write_config(tmp_path, "total_iters = 12\ndensify_end = 11\nanneal_t_end = 10\n")
    assert main(["--seed", "3", "fit", "--config", str(cfg)]) == 0
    a = capsys.readouterr().out.strip()
    assert main(["--seed", "4", "fit", "--config", str(cfg)]) == 0
    b = capsys.readouterr().out.strip()
    assert a != b
    assert "seed = 3" in (Path(a) / "config.txt").read_text()


def test_fit_deterministic_across_thread_counts(tmp_path):
    outs = []
    for k, threads in enumerate((1, 4)):
        cfg = tmp_path / f"c{k}.cfg"
        cfg.write_text(SMALL + f"output_dir = {tmp_path / f'runs{k}'}\n")
        res = run_cli("--threads", str(threads), "fit", "--config", str(cfg), env_threads=4)
        assert res.returncode == 0, res.stderr
        outs.append(Path(res.stdout.strip()))
    assert outs[0].name == outs[1].name
    for name in ("metrics.csv", "checkpoint.freg", "final.png"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_spectra_command(tmp_path):
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    io.save_image(img, tmp_path / "a.png")
    io.save_image(img[::-1], tmp_path / "b.png")
    assert main(["spectra", "--image", str(tmp_path / "a.png"), "--out", str(tmp_path / "s.png")]) == 0
    assert io.load_image(tmp_path / "s.png").shape == (16, 16, 1)
    assert main(["spectra", "--image", str(tmp_path / "a.png"), "--diff", str(tmp_path / "b.png"),
                 "--out", str(tmp_path / "d.png")]) == 0
    io.save_image(img[:8], tmp_path / "c.png")
    assert main(["spectra", "--image", str(tmp_path / "a.png"), "--diff", str(tmp_path / "c.png"),
                 "--out", str(tmp_path / "e.png")]) == 1


def test_ablate_writes_three_rows(tmp_path, capsys):
    cfg = write_config(tmp_path, "total_iters = 30\ndensify_end = 20\nanneal_t_end = 20\n"
                                 "densify_interval = 5\n")
    assert main(["ablate", "--config", str(cfg)]) == 0
    out_dir = next((tmp_path / "runs").glob("ablate-*"))
    lines = (out_dir / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,psnr,ssim,l1,splats"
    assert [l.split(",")[0] for l in lines[1:]] == ["Base", "Base+FR", "Base+FR+FA"]
    for line in lines[1:]:
        psnr, ssim, l1, splats = line.split(",")[1:]
        float(psnr), float(ssim), float(l1), int(splats)
    assert (out_dir / "calibration.csv").exists()


@pytest.mark.parametrize("argv", [["bogus"], [], ["fit"], ["render", "--out", "x.png"],
                                  ["--threads", "x", "fit", "--config", "c"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["render", "--checkpoint", str(tmp_path / "nope"), "--out", "x.png"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 1\n")
    assert main(["fit", "--config", str(bad)]) == 1
    assert "unknown key" in capsys.readouterr().err
    bad.write_text(f"input = {tmp_path / 'missing.png'}\n")
    assert main(["fit", "--config", str(bad)]) == 1


def test_subprocess_unknown_subcommand():
    res = run_cli("frobnicate")
    assert res.returncode == 2 and "usage" in res.stderr
