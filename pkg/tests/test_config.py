import math

import pytest

from densecount.config import GT_COUNTS, PipelineConfig, degraded_profile
from densecount.errors import InvalidParameter


def test_defaults_describe_nominal_dense_run():
    cfg = PipelineConfig()
    assert (cfg.preset, cfg.count, cfg.views) == ("dense", 745, 60)
    assert cfg.voxel_size == pytest.approx(0.25 * 0.04)
    assert (cfg.eps, cfg.min_pts, cfg.knn, cfg.percentile) == (0.015, 5, 10, 90.0)
    assert cfg.target_recall is None


def test_ini_round_trip():
    cfg = PipelineConfig(seed=42, preset="separated", count=152, target_recall=0.44,
                         size_multiplier=2.5, sfm_mode=True)
    text = cfg.to_ini()
    assert "[clustering]" in text and "# DBSCAN radius" in text
    assert PipelineConfig.from_ini(text) == cfg
    assert PipelineConfig.from_ini(PipelineConfig().to_ini()) == PipelineConfig()


def test_ini_keeps_infinite_multiplier_and_empty_recall():
    cfg = PipelineConfig(size_multiplier=math.inf)
    back = PipelineConfig.from_ini(cfg.to_ini())
    assert math.isinf(back.size_multiplier) and back.target_recall is None


def test_partial_ini_and_overrides():
    cfg = PipelineConfig.from_ini("[scene]\nseed = 3\n[clustering]\neps = 0.02\n", seed=9, count=None)
    assert cfg.seed == 9 and cfg.eps == 0.02 and cfg.count == 745


def test_save_and_load(tmp_path):
    cfg = PipelineConfig(views=12, out_dir=str(tmp_path))
    cfg.save(tmp_path / "c.ini")
    assert PipelineConfig.load(tmp_path / "c.ini") == cfg


@pytest.mark.parametrize("text", [
    "[scene]\nwhatever = 1\n",
    "[extraction]\nsfm_mode = maybe\n",
    "[scene]\npreset = jungle\n",
    "[degrade]\ntarget_recall = 1.5\n",
    "[clustering]\neps = 0\n",
])
def test_bad_ini_values(text):
    with pytest.raises(InvalidParameter):
        PipelineConfig.from_ini(text)


def test_degraded_profile():
    cfg = degraded_profile(PipelineConfig())
    assert (cfg.eps, cfg.volume_multiplier, cfg.target_recall) == (0.030, 5.0, 0.44)
    assert math.isinf(cfg.size_multiplier)


def test_ground_truth_counts():
    assert GT_COUNTS == {"separated": 152, "moderate": 283, "dense": 745}
