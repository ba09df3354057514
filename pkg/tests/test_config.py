import pytest

from hsfuse.config import OPTIONS, SECTIONS, RunConfig, load_ini, parse_value
from hsfuse.errors import ValidationError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.rows, cfg.cols, cfg.bands, cfg.factor, cfg.sensor) == (128, 128, 100, 4, "pan")
    assert (cfg.snr_h, cfg.snr_m, cfg.ls, cfg.max_iters) == (30.0, 40.0, 10, 200)
    assert (cfg.lambda_r, cfg.lambda_b, cfg.lambda_m, cfg.mu) == (10.0, 10.0, 1.0, 5e-2)
    assert cfg.lambda_phi is None and cfg.keep is None and cfg.window == 32 and cfg.stride == 1
    assert set(SECTIONS) == {"simulate", "preprocess", "calibrate", "solver", "evaluate"}
    assert len({o.name for o in OPTIONS}) == len(OPTIONS)


def test_parse_values():
    assert parse_value("keep", "0-3, 7,9-10") == (0, 1, 2, 3, 7, 9, 10)
    assert parse_value("no_noise", "yes") is True and parse_value("no_noise", "off") is False
    assert parse_value("snr_h", "inf") == float("inf")
    assert parse_value("project", "true") == "yes" and parse_value("project", "AUTO") == "auto"
    for name, text in (("rows", "1.5"), ("snr_h", "nan"), ("no_noise", "maybe"), ("keep", "a-b")):
        with pytest.raises(ValidationError):
            parse_value(name, text)


def test_ini_inline_comments_and_dashes(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[preprocess]\nkeep = 0-4  ; first five\n[solver]\nmax-iters = 50 # cap\n")
    assert load_ini(path) == {"keep": (0, 1, 2, 3, 4), "max_iters": 50}


def test_ini_key_must_be_in_its_section(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[solver]\nrows = 32\n")
    with pytest.raises(ValidationError, match="unknown key"):
        load_ini(path)
    path.write_text("no section header\n")
    with pytest.raises(ValidationError):
        load_ini(path)


def test_override_order_and_validation():
    cfg = RunConfig({"rows": 64, "mu": 0.1}, {"rows": 32})
    assert cfg.rows == 32 and cfg.mu == 0.1
    assert RunConfig({"rows": 64}, {"rows": None}).rows == 64
    for bad in ({"rows": 0}, {"mu": 0.0}, {"sensor": "rgb"}, {"kernel": "sinc"}, {"trim": 1.5},
                {"lambda_phi": -1.0}, {"ratio": 0.0}, {"bogus": 1}):
        with pytest.raises(ValidationError):
            RunConfig({}, bad)
    with pytest.raises(AttributeError):
        RunConfig().bogus


def test_as_dict_by_section():
    d = RunConfig().as_dict("calibrate")
    assert set(d) == {"lambda_r", "lambda_b", "cal_support", "strong_blur_support", "refine_iters"}
