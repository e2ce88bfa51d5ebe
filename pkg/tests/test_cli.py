import copy
import hashlib
import json

import numpy as np
import pytest
import yaml

from modalspdc.cli import main
from modalspdc.config import parse_config


def run(tmp_path, *args, config=None):
    argv = ["--out", str(tmp_path)]
    if config is not None:
        argv += ["--config", str(config)]
    return main(argv + list(args))


def write_cfg(tmp_path, config, name="run.yaml", **changes):
    data = copy.deepcopy(config.data)
    for block, values in changes.items():
        data[block].update(values)
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return p


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def read_pgm(path):
    blob = path.read_bytes()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    return magic, w, h, int(maxval), np.frombuffer(rest, dtype=">u2").reshape(h, w)


@pytest.fixture(scope="module")
def bands_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bands")
    assert main(["--out", str(out), "bands"]) == 0
    return out / "bands"


def test_bands_center(bands_dir):
    s = json.loads((bands_dir / "band_summary.json").read_text())
    assert s["fundamental"]["lambda_H_nm"] == pytest.approx(799.8, abs=0.05)
    assert s["nearest_separation_nm"] >= 5.0


def test_manifest_lists_every_file(bands_dir):
    doc = manifest(bands_dir)
    listed = {e["path"] for e in doc["files"]}
    present = {p.name for p in bands_dir.iterdir() if p.name != "manifest.json"}
    assert listed == present
    for e in doc["files"]:
        blob = (bands_dir / e["path"]).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == e["sha256"]
        assert len(blob) == e["bytes"]
    assert doc["command"] == "bands"


def test_pgm_and_sidecar(bands_dir):
    magic, w, h, maxval, img = read_pgm(bands_dir / "band_map.pgm")
    assert magic == b"P5"
    assert maxval == 65535
    assert img.max() == 65535
    side = json.loads((bands_dir / "band_map.json").read_text())
    assert len(side["rows"]["values"]) == h
    assert len(side["columns"]["values"]) == w


def test_csv_has_one_header(bands_dir):
    f = sorted(bands_dir.glob("band_*.csv"))[0]
    lines = f.read_text().splitlines()
    assert not lines[0][0].isdigit()
    data = np.loadtxt(f, delimiter=",", skiprows=1)
    assert data.ndim == 2 and np.all(np.isfinite(data))


def test_m2_hg_noiseless(tmp_path):
    assert run(tmp_path, "m2", "--source", "hg", "--label", "00", "--noiseless") == 0
    fit = json.loads((tmp_path / "m2" / "m2_fit.json").read_text())["fit"]
    for ax in ("x", "y"):
        assert fit[ax]["M2"] == pytest.approx(1.0, abs=1e-3)
        assert fit[ax]["iso_satisfied"]


def test_m2_runs_are_byte_identical(tmp_path):
    args = ("--seed", "7", "m2", "--source", "hg", "--label", "10", "--budget", "1e5")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "--threads", "1", *args) == 0
    assert run(b, "--threads", "2", *args) == 0
    assert manifest(a / "m2") == manifest(b / "m2")
    rows = (a / "m2" / "caustic.csv").read_text().splitlines()
    assert rows[0] == "z_mm,axis,w_um,sigma_w_um"
    assert {r.split(",")[1] for r in rows[1:]} == {"x", "y"}
    fit = json.loads((a / "m2" / "m2_fit.json").read_text())["fit"]
    assert fit["x"]["M2"] == pytest.approx(3.0, abs=0.3)


def test_modes_command(tmp_path):
    assert run(tmp_path, "modes") == 0
    rows = (tmp_path / "modes" / "modes.csv").read_text().splitlines()
    assert rows[0] == "pol,i,j,lambda_um,n_eff"
    assert any(r.startswith("P,") for r in rows[1:])


def test_bad_config_exit_2(tmp_path, config, capsys):
    p = write_cfg(tmp_path, config, geometry={"poling_period_um": -1})
    assert run(tmp_path, "bands", config=p) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2
    assert any(d.startswith("geometry.poling_period_um") for d in err["details"])


def test_missing_config_exit_2(tmp_path):
    assert run(tmp_path, "bands", config=tmp_path / "nowhere.yaml") == 2


def test_numeric_failure_exit_3(tmp_path, capsys):
    code = run(tmp_path, "herald", "--center-nm", "700", "--fwhm-nm", "1")
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 3
    assert (tmp_path / "herald" / "error.json").exists()
    assert "error.json" in {e["path"] for e in manifest(tmp_path / "herald")["files"]}


def test_infeasible_calibration_exit_4(tmp_path, config):
    p = write_cfg(tmp_path, config, calibration={"prescan": 0, "max_evaluations": 1,
                                                 "min_separation_nm": 1000.0})
    before = p.read_bytes()
    assert run(tmp_path, "calibrate", config=p) == 4
    assert p.read_bytes() == before
    report = json.loads((tmp_path / "calibrate" / "calibration.json").read_text())
    assert report["success"] is False


def test_calibrate_updates_user_config(tmp_path, config):
    p = write_cfg(tmp_path, config, calibration={"prescan": 0, "max_evaluations": 3})
    assert run(tmp_path, "calibrate", config=p) == 0
    updated = parse_config(p)
    g0, g1 = config["geometry"], updated["geometry"]
    assert g1["poling_period_um"] == pytest.approx(g0["poling_period_um"], rel=1e-3)
    assert set(updated.data) == set(config.data)


def test_calibrate_never_rewrites_packaged_default(tmp_path, config, monkeypatch):
    monkeypatch.delenv("MODALSPDC_CONFIG", raising=False)
    data = copy.deepcopy(config.data)
    data["calibration"].update(prescan=0, max_evaluations=2)
    # the packaged default is only read; a copy with the result lands in the output folder
    from modalspdc import config as cfgmod
    monkeypatch.setattr(cfgmod, "load_yaml", lambda path: copy.deepcopy(data))
    before = cfgmod.default_config_path().read_bytes()
    assert run(tmp_path, "calibrate") == 0
    assert (tmp_path / "calibrate" / "config.yaml").exists()
    assert cfgmod.default_config_path().read_bytes() == before


def test_herald_report(tmp_path):
    assert run(tmp_path, "herald") == 0
    rep = json.loads((tmp_path / "herald" / "herald.json").read_text())
    assert rep["counting"]["pair_rate_hz"] > 0
    assert rep["filter"]["arm"] == "V"
    assert rep["heralded"]["purity"] > 0.99
