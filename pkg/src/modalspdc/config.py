"""
Run configuration: YAML file, schema validation, conversion to model objects.

Every key carries its unit as a suffix (``_nm``, ``_um``, ``_mm``, ``_hz``,
``_ns``); unknown keys are rejected. Validation collects every problem and
reports each against a dotted key address such as
``geometry.poling_period_um``.
"""
from __future__ import annotations

import cmath
import copy
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .material import FORMULAS, SellmeierSet, _NCOEF
from .modesolver import WaveguideGeometry

ENV_VAR = "MODALSPDC_CONFIG"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM = {"type": "number"}
_INT_POS = {"type": "integer", "minimum": 1}
_LABEL = {"type": "string", "pattern": "^[0-9][0-9]$"}


def _block(props, required=None):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(props) if required is None else required}


_SELLMEIER = _block({
    "formula": {"enum": list(FORMULAS)},
    "coefficients": {"type": "array", "items": _NUM, "minItems": 1},
    "valid_min_um": _POS,
    "valid_max_um": _POS,
    "citation": {"type": "string"},
})

SCHEMA = _block({
    "material": _block({"x": _SELLMEIER, "y": _SELLMEIER, "z": _SELLMEIER}),
    "geometry": _block({
        "width_um": _POS, "depth_um": _POS,
        "delta_n_h": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "delta_n_v": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "length_mm": _POS, "poling_period_um": _POS,
        "lateral_shape": {"enum": ["step", "graded"]},
        "lateral_diffusion_um": _POS,
        "cover_index": {"type": "number", "minimum": 1},
        "axis_h": {"enum": ["x", "y", "z"]},
        "axis_v": {"enum": ["x", "y", "z"]},
        "axis_p": {"enum": ["x", "y", "z"]},
    }),
    "modes": _block({
        "signal_min_nm": _POS, "signal_max_nm": _POS,
        "pump_min_nm": _POS, "pump_max_nm": _POS,
        "knots": {"type": "integer", "minimum": 4},
        "max_label": {"type": "integer", "minimum": 0, "maximum": 9},
        "window_points": {"type": "integer", "minimum": 32},
        "profiles": {"type": "boolean"},
    }),
    "pump": _block({
        "center_nm": _POS, "fwhm_nm": _POS,
        "excitation": {"type": "array", "minItems": 1,
                       "items": _block({"label": _LABEL, "amplitude": _NUM,
                                        "phase_rad": _NUM}, required=["label", "amplitude"])},
    }),
    "grids": _block({
        "spectral_min_nm": _POS, "spectral_max_nm": _POS,
        "spectral_points": {"type": "integer", "minimum": 8},
        "band_points": {"type": "integer", "minimum": 8},
        "beam_points": {"type": "integer", "minimum": 64},
        "beam_pitch_um": _POS,
    }),
    "filters": _block({
        "herald": _block({
            "arm": {"enum": ["H", "V"]},
            "center_nm": {"anyOf": [_POS, {"type": "null"}]},
            "fwhm_nm": _POS,
            "shape": {"enum": ["top-hat", "gaussian"]},
        }),
    }),
    "sfg": _block({
        "triplet": {"type": "array", "items": _LABEL, "minItems": 3, "maxItems": 3},
        "filter_fwhm_nm": _NONNEG,
        "min_nm": _POS, "max_nm": _POS,
        "points": {"type": "integer", "minimum": 2},
    }),
    "islands": _block({"threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    "calibration": _block({
        "center_nm": _POS, "center_tolerance_nm": _POS,
        "min_separation_nm": _NONNEG,
        "fwhm_nm": _POS, "fwhm_tolerance_nm": _POS, "fwhm_weight": _NONNEG,
        "period_min_um": _POS, "period_max_um": _POS,
        "delta_n_min": _POS, "delta_n_max": _POS,
        "max_evaluations": _INT_POS,
        "prescan": {"type": "integer", "minimum": 0},
    }),
    "measurement": _block({
        "source": {"enum": ["heralded", "mode", "hg"]},
        "label": _LABEL,
        "hg_w0_um": _POS, "wavelength_nm": _POS, "target_w_um": _POS,
        "na": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "inside": {"type": "integer", "minimum": 5},
        "outside": {"type": "integer", "minimum": 5},
        "budget": _POS,
        "noiseless": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "positions": {"type": "integer", "minimum": 5},
        "span_w": _POS,
        "floor": _NONNEG,
        "efficiency": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "resamples": {"type": "integer", "minimum": 0},
        "width_method": {"enum": ["derivative", "aperture"]},
    }),
    "counting": _block({
        "coincidences_hz": _POS,
        "ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "window_ns": _POS, "dark_hz": _NONNEG,
    }),
    "output": _block({
        "directory": {"type": "string", "minLength": 1},
        "csv_stride": _INT_POS,
        "pgm": {"type": "boolean"},
    }),
})


def _address(path, key=None):
    parts = [str(p) for p in path]
    if key is not None:
        parts.append(str(key))
    return ".".join(parts) or "<root>"


def _schema_errors(data):
    out = []
    validator = jsonschema.Draft7Validator(SCHEMA)
    for err in validator.iter_errors(data):
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            out.extend(f"{_address(err.absolute_path, k)}: unknown key" for k in extra)
        elif err.validator == "required":
            missing = [k for k in err.validator_value if k not in err.instance]
            out.extend(f"{_address(err.absolute_path, k)}: missing key" for k in missing)
        else:
            out.append(f"{_address(err.absolute_path)}: {err.message}")
    return out


def _ordered(data, block, lo, hi, errors, prefix=""):
    b = data.get(block)
    if isinstance(b, dict) and isinstance(b.get(lo), (int, float)) and isinstance(b.get(hi), (int, float)):
        if not b[lo] < b[hi]:
            at = prefix + block
            errors.append(f"{at}.{hi}: must exceed {at}.{lo} ({b[hi]} <= {b[lo]})")


def _semantic_errors(data):
    """Cross-key rules the schema cannot express. Runs on partially valid data."""
    errors = []
    mat = data.get("material")
    if isinstance(mat, dict):
        for ax, blk in mat.items():
            if not isinstance(blk, dict):
                continue
            f, c = blk.get("formula"), blk.get("coefficients")
            if f in _NCOEF and isinstance(c, list) and len(c) != _NCOEF[f]:
                errors.append(f"material.{ax}.coefficients: formula {f!r} takes "
                              f"{_NCOEF[f]} coefficients, got {len(c)}")
            _ordered(mat, ax, "valid_min_um", "valid_max_um", errors, "material.")
    for block, lo, hi in (("modes", "signal_min_nm", "signal_max_nm"),
                          ("modes", "pump_min_nm", "pump_max_nm"),
                          ("grids", "spectral_min_nm", "spectral_max_nm"),
                          ("sfg", "min_nm", "max_nm"),
                          ("calibration", "period_min_um", "period_max_um"),
                          ("calibration", "delta_n_min", "delta_n_max")):
        _ordered(data, block, lo, hi, errors)
    pump = data.get("pump")
    if isinstance(pump, dict) and isinstance(pump.get("excitation"), list):
        labels = [e.get("label") for e in pump["excitation"] if isinstance(e, dict)]
        if len(set(labels)) != len(labels):
            errors.append("pump.excitation: repeated mode labels")
        amps = [e.get("amplitude") for e in pump["excitation"] if isinstance(e, dict)]
        if amps and all(isinstance(a, (int, float)) for a in amps) and not any(amps):
            errors.append("pump.excitation: all amplitudes are zero")
    grids = data.get("grids")
    if isinstance(grids, dict) and isinstance(grids.get("beam_points"), int):
        n = grids["beam_points"]
        if n & (n - 1):
            errors.append(f"grids.beam_points: must be a power of two, got {n}")
    return errors


def validate(data) -> list:
    """All problems in a configuration mapping; empty when valid."""
    if not isinstance(data, dict):
        return ["<root>: configuration must be a mapping"]
    return _schema_errors(data) + _semantic_errors(data)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration. ``data`` holds the plain mapping, ``source`` its file."""

    data: dict
    source: str = None

    def __post_init__(self):
        errors = validate(self.data)
        if errors:
            raise ConfigError(errors)

    def __getitem__(self, block):
        return self.data[block]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    def updated(self, block, **values) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data[block].update(values)
        return RunConfig(data, self.source)

    def sellmeier_sets(self):
        return {ax: SellmeierSet(ax, tuple(b["coefficients"]), b["formula"], b["valid_min_um"],
                                 b["valid_max_um"], b["citation"])
                for ax, b in self.data["material"].items()}

    def geometry(self) -> WaveguideGeometry:
        mats = self.sellmeier_sets()
        return WaveguideGeometry(material=tuple(mats[a] for a in ("x", "y", "z")),
                                 **self.data["geometry"])

    def modeset_kwargs(self):
        m = self.data["modes"]
        return {"signal_range_nm": (m["signal_min_nm"], m["signal_max_nm"]),
                "pump_range_nm": (m["pump_min_nm"], m["pump_max_nm"]),
                "knots": m["knots"], "max_label": m["max_label"], "points": m["window_points"]}

    def excitation_weights(self):
        return {parse_label(e["label"]): e["amplitude"] * cmath.exp(1j * e.get("phase_rad", 0.0))
                for e in self.data["pump"]["excitation"]}


def parse_label(text):
    return (int(text[0]), int(text[1]))


def default_config_path() -> Path:
    return Path(str(resources.files("modalspdc") / "data" / "default.yaml"))


def load_yaml(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"<file>: not valid YAML: {exc}"]) from exc


def parse_config(path=None) -> RunConfig:
    """Read and validate a configuration file.

    ``path`` falls back to the ``MODALSPDC_CONFIG`` environment variable and
    then to the packaged default. Raises ``ConfigError`` listing every problem.
    """
    if path is None:
        path = os.environ.get(ENV_VAR) or default_config_path()
    return RunConfig(load_yaml(path), str(path))


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.data, sort_keys=False, default_flow_style=False)


def write_config(config: RunConfig, path):
    Path(path).write_text(dump_config(config), encoding="utf-8")
