import json

import numpy as np
import pytest

from berrycrf.crf import BERRY
from berrycrf.exceptions import ReferenceUnavailableError
from berrycrf.pipeline import BerryPipeline, draw_overlay, report_dict, write_outputs
from berrycrf.synth import SceneSpec, render_scene

SPEC = dict(height=500, width=750, n_disks=12, n_clusters=2, n_round_distractors=1)


@pytest.fixture(scope="module")
def scene():
    return render_scene(SceneSpec(seed=1, **SPEC))


@pytest.fixture(scope="module")
def result(scene):
    return BerryPipeline(scale_px=65, resize_to=None).analyze(scene[0])


def test_references_subset_of_candidates(result):
    refs = set(result.candidates.references)
    assert refs <= set(result.candidates.candidates)
    assert len(result.labels) == len(result.candidates)


def test_mean_diameter_close(scene, result):
    _, gt = scene
    true_mean = np.mean([2 * c.radius * 0.2 for c in gt.circles])
    assert result.summary.n == len(result.berry_indices) > 0
    assert abs(result.summary.mean - true_mean) <= 1.0


def test_diameters_from_berries(result):
    radii = np.array([c.radius for c in result.berries])
    np.testing.assert_allclose(result.diameters_mm, 2 * radii * (13 / 65))
    assert sum(result.histogram.values()) == len(radii)


def test_config_echo(result):
    cfg = result.config
    assert cfg["w_spatial"] == 2.0
    assert cfg["p_used"] == result.p_used
    assert cfg["fallback_engaged"] is result.fallback_engaged
    assert cfg["scale_px"] == 65


def test_fallback_echoed():
    # this scene's median thresholds admit no berry; the rerun at 0.7 does
    img, _ = render_scene(SceneSpec(seed=5, **SPEC))
    res = BerryPipeline(scale_px=65, resize_to=None).analyze(img)
    assert res.fallback_engaged and res.config["p_used"] == 0.7
    assert report_dict(res)["config"]["fallback_engaged"] is True
    assert len(res.berry_indices) > 0


def test_blank_image_is_a_result():
    res = BerryPipeline(scale_px=65, resize_to=None).analyze(np.zeros((200, 300, 3)))
    assert len(res.candidates) == 0
    assert res.histogram == {}
    assert not res.summary.sizing_available


def test_missing_references_raise():
    img, _ = render_scene(SceneSpec(seed=0, **SPEC))
    with pytest.raises(ReferenceUnavailableError):
        BerryPipeline(scale_px=65, resize_to=None).analyze(img)


def test_external_reference_patches(scene, result):
    img, _ = render_scene(SceneSpec(seed=0, **SPEC))
    patches = [
        scene[0][int(c.row) - c.radius : int(c.row) + c.radius, int(c.col) - c.radius : int(c.col) + c.radius]
        for c in result.berries[:4]
    ]
    res = BerryPipeline(scale_px=65, resize_to=None).analyze(img, reference_patches=patches)
    assert len(res.candidates) > 0
    assert res.crf is not None


def test_requires_scale_or_range():
    with pytest.raises(ValueError):
        BerryPipeline(resize_to=None).analyze(np.zeros((50, 50, 3)))


def test_radius_range_without_scale(scene):
    res = BerryPipeline(radius_range_px=(12, 50), resize_to=None).analyze(scene[0])
    assert res.diameters_mm is None
    assert res.summary.n == 0
    assert all(12 <= c.radius <= 50 for c in res.candidates.candidates)


def test_resize_rescales_measurements(scene, result):
    img = scene[0]
    half = BerryPipeline(scale_px=32.5, resize_to=(500, 750)).analyze(img[::2, ::2])
    assert half.resized_from == (250, 375)
    assert half.scale_mm_per_px == pytest.approx(0.2)


def test_overlay_colors(result):
    over = draw_overlay(result)
    assert over.shape == result.image.shape and over.dtype == np.uint8
    red = np.all(over == (230, 30, 30), axis=-1).any()
    assert red == any(result.labels == BERRY)


def test_outputs_written(tmp_path, result):
    report = write_outputs(result, tmp_path, "scene.png", manual_mean=9.0, debug=True)
    for name in ("report.json", "diameters.csv", "histogram.csv", "overlay.png", "accumulator.pgm", "energy.txt"):
        assert (tmp_path / name).exists()
    data = json.loads((tmp_path / "report.json").read_text())
    assert data == json.loads(json.dumps(report))
    assert data["stats"]["md_mm"] == pytest.approx(data["stats"]["mean_diameter_mm"] - 9.0)
    rows = (tmp_path / "diameters.csv").read_text().splitlines()
    assert rows[0] == "candidate_id,center_row,center_col,radius_px,diameter_mm,label"
    assert len(rows) == 1 + len(result.candidates)


def test_outputs_deterministic(tmp_path, scene):
    outs = []
    for k in range(2):
        res = BerryPipeline(scale_px=65, resize_to=None).analyze(scene[0])
        write_outputs(res, tmp_path / str(k), "scene.png")
        outs.append({n: (tmp_path / str(k) / n).read_bytes() for n in ("report.json", "diameters.csv", "histogram.csv", "overlay.png")})
    assert outs[0] == outs[1]


def test_get_params_is_config():
    p = BerryPipeline(scale_px=80, p=0.6)
    assert BerryPipeline(**p.get_params()).get_params() == p.get_params()
    assert p.resolved_config()["w_spatial"] == 2.0
