import copy

import pytest
import yaml

from modalspdc.config import (ENV_VAR, ConfigError, RunConfig, default_config_path, dump_config,
                              parse_config, parse_label, validate, write_config)


@pytest.fixture
def data(config):
    return copy.deepcopy(config.data)


def _write(tmp_path, data, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return p


def test_default_parses(config):
    assert config["geometry"]["width_um"] == pytest.approx(2.0)
    assert config["pump"]["center_nm"] == pytest.approx(399.9)
    assert validate(config.data) == []


def test_negative_period_names_key(tmp_path, data):
    data["geometry"]["poling_period_um"] = -1
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, data))
    assert any(e.startswith("geometry.poling_period_um:") for e in exc.value.errors)


def test_round_trip(tmp_path, config):
    p = tmp_path / "copy.yaml"
    write_config(config, p)
    assert parse_config(p) == config
    assert yaml.safe_load(dump_config(config)) == config.data


def test_unknown_and_missing_keys(tmp_path, data):
    data["geometry"]["widht_um"] = 2.0
    del data["pump"]["fwhm_nm"]
    with pytest.raises(ConfigError) as exc:
        parse_config(_write(tmp_path, data))
    assert "geometry.widht_um: unknown key" in exc.value.errors
    assert "pump.fwhm_nm: missing key" in exc.value.errors


def test_all_errors_collected(data):
    data["geometry"]["poling_period_um"] = 0
    data["grids"]["beam_points"] = 1000
    data["modes"]["signal_min_nm"] = 900.0
    data["filters"]["herald"]["shape"] = "lorentzian"
    errors = validate(data)
    keys = {e.split(":")[0] for e in errors}
    assert {"geometry.poling_period_um", "grids.beam_points", "modes.signal_max_nm",
            "filters.herald.shape"} <= keys


def test_coefficient_count_checked(data):
    data["material"]["z"]["coefficients"] = data["material"]["z"]["coefficients"][:-1]
    errors = validate(data)
    assert any(e.startswith("material.z.coefficients:") for e in errors)


def test_valid_range_ordered(data):
    data["material"]["y"]["valid_min_um"] = 5.0
    assert any(e.startswith("material.y.valid_max_um:") for e in validate(data))


def test_excitation_rules(data):
    data["pump"]["excitation"] = [{"label": "00", "amplitude": 0.0}, {"label": "00", "amplitude": 0.0}]
    errors = validate(data)
    assert "pump.excitation: repeated mode labels" in errors
    assert "pump.excitation: all amplitudes are zero" in errors


def test_non_mapping_rejected():
    assert validate([1, 2]) == ["<root>: configuration must be a mapping"]


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config(bad)


def test_env_var_selects_file(tmp_path, monkeypatch, data):
    data["pump"]["fwhm_nm"] = 2.5
    p = _write(tmp_path, data)
    monkeypatch.setenv(ENV_VAR, str(p))
    cfg = parse_config()
    assert cfg["pump"]["fwhm_nm"] == 2.5
    assert cfg.source == str(p)


def test_default_used_without_env(monkeypatch):
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert parse_config().source == str(default_config_path())


def test_updated_revalidates(config):
    cfg = config.updated("geometry", poling_period_um=6.5)
    assert cfg["geometry"]["poling_period_um"] == 6.5
    assert config["geometry"]["poling_period_um"] != 6.5
    with pytest.raises(ConfigError):
        config.updated("geometry", poling_period_um=-2.0)


def test_model_objects(config):
    g = config.geometry()
    assert g.poling_period_um == config["geometry"]["poling_period_um"]
    kw = config.modeset_kwargs()
    assert kw["max_label"] == config["modes"]["max_label"]
    w = config.excitation_weights()
    assert w == {(0, 0): pytest.approx(1.0)}


def test_phase_enters_weight(data):
    import cmath
    data["pump"]["excitation"] = [{"label": "00", "amplitude": 1.0},
                                  {"label": "01", "amplitude": 0.5, "phase_rad": 1.0}]
    w = RunConfig(data).excitation_weights()
    assert w[(0, 1)] == pytest.approx(0.5 * cmath.exp(1j))


def test_parse_label():
    assert parse_label("12") == (1, 2)
