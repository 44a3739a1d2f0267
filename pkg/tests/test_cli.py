import json
import subprocess
import sys

import numpy as np
import pytest

from berrycrf import config
from berrycrf.cli import main, match_manual, read_manual
from berrycrf.io import save_png
from berrycrf.synth import SceneSpec, render_scene

SPEC = dict(height=500, width=750, n_disks=12, n_clusters=2, n_round_distractors=1)


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    d = tmp_path_factory.mktemp("imgs")
    paths = {}
    for seed in (0, 1, 3, 7):
        img, _ = render_scene(SceneSpec(seed=seed, **SPEC))
        save_png(d / f"s{seed}.png", img)
        paths[seed] = d / f"s{seed}.png"
    save_png(d / "blank.png", np.zeros((200, 300, 3)))
    paths["blank"] = d / "blank.png"
    return paths


def _cfg(tmp_path, **extra):
    p = tmp_path / "run.cfg"
    config.save(p, {"resize_to": None, **extra})
    return p


def test_config_round_trip():
    d = config.default_config()
    d.update(scale_px=71.25, radius_range_px=(10, 40), w_spatial=1.5)
    assert config.loads(config.dumps(d)) == d


def test_config_rejects_unknown_and_malformed():
    with pytest.raises(config.ConfigError):
        config.loads("bogus = 1\n")
    with pytest.raises(config.ConfigError):
        config.loads("p 0.5\n")
    with pytest.raises(config.ConfigError):
        config.loads("p = zero\n")
    with pytest.raises(config.ConfigError):
        config.loads("p = 0.5\np = 0.6\n")
    assert config.loads("# note\n\np = 0.6\n") == {"p": 0.6}


def test_dump_config(capsys, tmp_path):
    cfg = _cfg(tmp_path, p=0.6)
    assert main(["dump-config", "--config", str(cfg), "--scale-px", "80", "--pairwise", "literal"]) == 0
    out = config.loads(capsys.readouterr().out)
    assert out["p"] == 0.6 and out["scale_px"] == 80 and out["pairwise"] == "literal"
    assert out["resize_to"] is None


def test_analyze_writes_artifacts(tmp_path, images, capsys):
    out = tmp_path / "a"
    code = main(["analyze", str(images[1]), "--scale-px", "65", "--config", str(_cfg(tmp_path)), "--out", str(out)])
    assert code == 0
    for name in ("report.json", "diameters.csv", "histogram.csv", "overlay.png"):
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["image"] == "s1.png"
    assert rep["config"]["scale_px"] == 65.0
    assert "fallback_engaged" in rep["config"]


def test_blank_exit_zero(tmp_path, images):
    out = tmp_path / "b"
    assert main(["analyze", str(images["blank"]), "--scale-px", "65", "--config", str(_cfg(tmp_path)), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["n_candidates"] == 0 and rep["histogram"] == []


def test_no_references_exit_three(tmp_path, images, capsys):
    code = main(["analyze", str(images[0]), "--scale-px", "65", "--config", str(_cfg(tmp_path)), "--out", str(tmp_path / "c")])
    assert code == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ReferenceUnavailableError" and err["exit_code"] == 3


def test_ref_patches_rescue(tmp_path, images):
    from berrycrf.io import load_image

    img = load_image(images[1])
    pdir = tmp_path / "patches"
    pdir.mkdir()
    # crop a few berries from a scene that has references
    from berrycrf.pipeline import BerryPipeline

    res = BerryPipeline(scale_px=65, resize_to=None).analyze(img)
    for k, b in enumerate(res.berries[:3]):
        save_png(pdir / f"p{k}.png", img[b.row - b.radius : b.row + b.radius, b.col - b.radius : b.col + b.radius])
    code = main(["analyze", str(images[0]), "--scale-px", "65", "--config", str(_cfg(tmp_path)),
                 "--ref-patches", str(pdir), "--out", str(tmp_path / "d")])
    assert code == 0


def test_bad_input_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    assert main(["analyze", str(bad), "--scale-px", "65", "--out", str(tmp_path / "e")]) == 2
    assert json.loads(capsys.readouterr().err)["exit_code"] == 2
    assert main(["analyze", str(tmp_path / "missing.png"), "--scale-px", "65", "--out", str(tmp_path / "e")]) == 2
    assert main(["analyze", str(bad), "--out", str(tmp_path / "e")]) == 2  # no scale
    cfg = tmp_path / "x.cfg"
    cfg.write_text("nonsense = 1\n")
    assert main(["dump-config", "--config", str(cfg)]) == 2


def test_manual_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("image,mean_diameter_mm\ns1.png,9.5\ns3,8.0\n")
    from pathlib import Path

    rows = read_manual(p)
    assert match_manual(rows, [Path("x/s3.png"), Path("s1.png"), Path("q.png")]) == [8.0, 9.5, None]
    q = tmp_path / "n.csv"
    q.write_text("mean_diameter_mm\n9\n10\n")
    assert match_manual(read_manual(q), [Path("a.png"), Path("b.png")]) == [9.0, 10.0]
    r = tmp_path / "bad.csv"
    r.write_text("diam\n9\n")
    with pytest.raises(ValueError):
        read_manual(r)


def test_batch(tmp_path, images):
    manual = tmp_path / "manual.csv"
    manual.write_text("image,mean_diameter_mm\ns1.png,17.0\ns3.png,8.5\ns7.png,16.0\n")
    out = tmp_path / "batch"
    args = ["batch", str(images[1]), str(images[3]), str(images[7]), "--scale-px", "65",
            "--config", str(_cfg(tmp_path)), "--manual", str(manual), "--out", str(out)]
    assert main(args) == 0
    for s in ("s1", "s3", "s7"):
        assert (out / s / "report.json").exists()
    batch = json.loads((out / "batch.json").read_text())
    assert batch["n_images"] == 3 and batch["n_compared"] == 3
    assert -1 <= batch["rho_res"] <= 1
    assert batch["mad_mm"] >= abs(batch["md_mm"])
    # parallel run produces identical files
    out2 = tmp_path / "batch2"
    assert main(args[:-1] + [str(out2), "--workers", "2"]) == 0
    assert (out / "batch.json").read_bytes() == (out2 / "batch.json").read_bytes()
    assert (out / "s3" / "diameters.csv").read_bytes() == (out2 / "s3" / "diameters.csv").read_bytes()


def test_batch_partial_failure(tmp_path, images):
    out = tmp_path / "pf"
    code = main(["batch", str(images[0]), str(images[1]), "--scale-px", "65",
                 "--config", str(_cfg(tmp_path)), "--out", str(out)])
    assert code == 3
    batch = json.loads((out / "batch.json").read_text())
    assert [im["exit_code"] for im in batch["images"]] == [3, 0]


def test_synth_and_eval(tmp_path, capsys):
    out = tmp_path / "syn"
    assert main(["synth", "--out", str(out), "--seed", "1", "--n-disks", "12", "--n-clusters", "2",
                 "--size", "500,750", "--round-distractors", "1"]) == 0
    assert (out / "scene.png").exists() and (out / "truth.json").exists()
    capsys.readouterr()
    assert main(["eval", str(out / "scene.png"), str(out / "truth.json")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["candidates"]["recall"] >= 0.8
    assert abs(res["mean_error_mm"]) <= 1.0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "berrycrf", "dump-config"], capture_output=True, text=True)
    assert r.returncode == 0 and "w_gist = 1.0" in r.stdout
