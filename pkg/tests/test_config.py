import json

import pytest

from artifact.config import ConfigError, RunConfig


def test_defaults():
    c = RunConfig()
    assert c.scales == 4 and c.scale_weights == (0.25,) * 4
    assert (c.w_ph, c.w_st, c.min_mode, c.sigma) == (0.15, 0.85, "separate", 0.1)
    assert c.min_kernels == (3, 5, 7, 9, 11) and c.max_kernels == (13, 15)


def test_roundtrip(tmp_path):
    c = RunConfig(scales=2, scale_weights=[0.7, 0.3], min_mode="joint", seed=5)
    c.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == c


@pytest.mark.parametrize("kw", [
    {"scales": 0}, {"scales": 7}, {"scales": 2.5}, {"scale_weights": [1.0]}, {"scale_weights": [-1, 1, 1, 1]},
    {"w_ph": -0.1}, {"min_mode": "both"}, {"sigma": 0}, {"min_kernels": [4]}, {"seed": -1},
])
def test_rejects(kw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(kw)


def test_unknown_key(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"scales": 2, "colour": "red"}))
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")
